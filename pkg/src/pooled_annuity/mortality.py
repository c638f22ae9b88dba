"""Period life table ingestion and per-cohort death probabilities.

A loaded table maps integer age to the probability of dying within the year.
Cohorts are read off the table from a starting age s; the horizon is always
k = TERMINAL_AGE - s steps, with death certain on the last step so the
backward recursion terminates exactly rather than approximately.
"""

from __future__ import annotations

import hashlib
import io
import os
from dataclasses import dataclass, field

import numpy as np

# Age at which death is treated as certain. Source tables that stop earlier
# are padded with rate 1 up to this age.
TERMINAL_AGE = 120


class LifeTableError(ValueError):
    """Malformed or inconsistent life table input."""


@dataclass(frozen=True)
class MortalityTable:
    """Per-age death probabilities with a terminal age at which death is certain."""

    min_age: int
    death_rate: np.ndarray  # rate[j] applies to age min_age + j

    def __post_init__(self) -> None:
        rates = np.asarray(self.death_rate, dtype=float)
        object.__setattr__(self, "death_rate", rates)
        if rates.ndim != 1 or rates.size == 0:
            raise LifeTableError("death rates must be a nonempty 1-d sequence")
        if np.any((rates < 0) | (rates > 1)):
            raise LifeTableError("death rates must lie in [0, 1]")
        if rates[-1] != 1.0:
            raise LifeTableError("death must be certain at the terminal age")

    @property
    def max_age(self) -> int:
        return self.min_age + self.death_rate.size - 1

    def rate_at(self, age: int) -> float:
        if age < self.min_age or age > self.max_age:
            raise LifeTableError(f"age {age} outside table range "
                                 f"[{self.min_age}, {self.max_age}]")
        return float(self.death_rate[age - self.min_age])


@dataclass(frozen=True)
class CohortMortality:
    """Per-step death probabilities for a cohort starting at age s.

    d[i] is the probability that a member aged s + i dies before the next
    step. d[k-1] must be 1 so every member is dead by the horizon.
    """

    s: int
    d: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        d = np.asarray(self.d, dtype=float)
        object.__setattr__(self, "d", d)
        if d.ndim != 1 or d.size == 0:
            raise ValueError("per-step death probabilities must be nonempty")
        if np.any((d < 0) | (d > 1)):
            raise ValueError("death probabilities must lie in [0, 1]")
        if d[-1] != 1.0:
            raise ValueError("death must be certain on the final step")

    @property
    def k(self) -> int:
        """Number of steps in the horizon."""
        return self.d.size

    def content_hash(self) -> str:
        """Stable digest of (s, d) used for artifact provenance checks."""
        h = hashlib.sha256()
        h.update(str(self.s).encode())
        h.update(self.d.tobytes())
        return h.hexdigest()[:16]


def load_life_table(source) -> MortalityTable:
    """Parse a delimited (age, death rate) text table.

    Accepts a path, file object, or string content. Lines starting with '#'
    are comments; an optional header row is skipped. Columns may be separated
    by commas or whitespace. Ages must be contiguous integers. Rows beyond
    TERMINAL_AGE are discarded and missing trailing ages are padded with
    rate 1.
    """
    if hasattr(source, "read"):
        text = source.read()
    elif isinstance(source, str) and ("\n" in source or "," in source) and not os.path.exists(source):
        text = source
    else:
        with open(source, "r", encoding="utf-8") as fh:
            text = fh.read()

    ages: list[int] = []
    rates: list[float] = []
    for lineno, raw in enumerate(io.StringIO(text), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p for p in line.replace(",", " ").split() if p]
        if len(parts) < 2:
            raise LifeTableError(f"line {lineno}: expected 'age, rate', got {line!r}")
        try:
            age = int(parts[0])
            rate = float(parts[1])
        except ValueError:
            if not ages:  # tolerate a single header row
                continue
            raise LifeTableError(f"line {lineno}: cannot parse {line!r}") from None
        if not 0.0 <= rate <= 1.0:
            raise LifeTableError(f"line {lineno}: death rate {rate} outside [0, 1]")
        if age > TERMINAL_AGE:
            continue
        ages.append(age)
        rates.append(rate)

    if not ages:
        raise LifeTableError("no data rows found")
    for prev, nxt, lineno in zip(ages, ages[1:], range(2, len(ages) + 1)):
        if nxt != prev + 1:
            raise LifeTableError(f"ages must be contiguous; {prev} followed by {nxt}")

    # Pad to the terminal age with certain death and force the final rate.
    n_pad = TERMINAL_AGE - ages[-1]
    rates = rates + [1.0] * n_pad
    rates[-1] = 1.0
    return MortalityTable(min_age=ages[0], death_rate=np.asarray(rates))


def default_life_table_path() -> str:
    """Path of the life table shipped with the package (ages 60-119)."""
    return os.path.join(os.path.dirname(__file__), "data",
                        "life_table_female_2017.csv")


def load_default_life_table() -> MortalityTable:
    """Load the shipped desk-scale female period life table."""
    return load_life_table(default_life_table_path())


def cohort(table: MortalityTable, s: int) -> CohortMortality:
    """Per-step death probabilities for starting age s; horizon k = 120 - s.

    The final step's probability is forced to 1 even if the table value at
    age 119 is below 1.
    """
    if s >= TERMINAL_AGE:
        raise ValueError(f"starting age must be below {TERMINAL_AGE}, got {s}")
    if s < table.min_age:
        raise LifeTableError(f"table starts at age {table.min_age}, cannot "
                             f"build cohort from age {s}")
    k = TERMINAL_AGE - s
    d = np.array([table.rate_at(s + i) for i in range(k)], dtype=float)
    d[-1] = 1.0
    return CohortMortality(s=s, d=d)


def sample_deaths(d: float, alive: int, rng: np.random.Generator) -> int:
    """Binomial(alive, d) draw of deaths among `alive` members."""
    if not 0.0 <= d <= 1.0:
        raise ValueError("death probability must lie in [0, 1]")
    if alive < 0:
        raise ValueError("alive count must be nonnegative")
    return int(rng.binomial(alive, d))
