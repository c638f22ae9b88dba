"""Annual market series ingestion and real-return computation.

Input is a delimited text file with columns year, I, D, C: the average
monthly close of a stock index for the year, the dividend per share paid
over the year, and the January consumer price index. The gross real total
return for year t is (I[t+1] + D[t]) / I[t] * C[t] / C[t+1], i.e. price
appreciation plus dividend, deflated by realized inflation.
"""

from __future__ import annotations

import io
import os
from dataclasses import dataclass, field

import numpy as np

from .market import ReturnModel


class MarketDataError(ValueError):
    """Malformed or inconsistent market series input."""


@dataclass(frozen=True)
class MarketSeries:
    """Annual (year, index level, dividend, January CPI) rows."""

    years: np.ndarray = field(repr=False)
    index_level: np.ndarray = field(repr=False)
    dividend: np.ndarray = field(repr=False)
    cpi: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        years = np.asarray(self.years, dtype=int)
        object.__setattr__(self, "years", years)
        for name in ("index_level", "dividend", "cpi"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if not (years.size == self.index_level.size == self.dividend.size == self.cpi.size):
            raise MarketDataError("columns must have equal length")
        if years.size and np.any(np.diff(years) != 1):
            raise MarketDataError("years must increase by exactly 1")
        for name, col, strict in (("index level", self.index_level, True),
                                  ("CPI", self.cpi, True),
                                  ("dividend", self.dividend, False)):
            bad = col <= 0 if strict else col < 0
            if np.any(bad):
                year = years[np.nonzero(bad)[0][0]]
                raise MarketDataError(f"nonpositive {name} in year {year}")

    def __len__(self) -> int:
        return self.years.size


def load_market_csv(source) -> MarketSeries:
    """Parse a year,I,D,C file. '#' lines are comments; a header is expected
    but tolerated missing when the first row parses as numbers."""
    if hasattr(source, "read"):
        text = source.read()
    elif isinstance(source, str) and "\n" in source and not os.path.exists(source):
        text = source
    else:
        with open(source, "r", encoding="utf-8") as fh:
            text = fh.read()

    rows = []
    for lineno, raw in enumerate(io.StringIO(text), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) < 4:
            raise MarketDataError(f"line {lineno}: expected year,I,D,C, got {line!r}")
        try:
            rows.append((int(float(parts[0])), float(parts[1]),
                         float(parts[2]), float(parts[3])))
        except ValueError:
            if not rows:  # header row
                continue
            raise MarketDataError(f"line {lineno}: cannot parse {line!r}") from None
    if len(rows) < 2:
        raise MarketDataError("need at least two data rows")
    years, level, div, cpi = map(np.asarray, zip(*rows))
    return MarketSeries(years=years, index_level=level, dividend=div, cpi=cpi)


def real_returns(series: MarketSeries) -> np.ndarray:
    """Gross real total returns, one per year transition in the series."""
    if len(series) < 2:
        raise MarketDataError("need at least two rows to form a return")
    level = series.index_level
    div = series.dividend
    cpi = series.cpi
    return (level[1:] + div[:-1]) / level[:-1] * cpi[:-1] / cpi[1:]


def fit_return_model(returns, r: float = 0.0) -> ReturnModel:
    """Moment fit: sample mean and sample (n-1) standard deviation."""
    returns = np.asarray(returns, dtype=float)
    if returns.size < 2:
        raise MarketDataError("need at least two returns to fit a model")
    sigma = float(np.std(returns, ddof=1))
    if sigma == 0.0:
        raise MarketDataError("degenerate return series (zero variance)")
    return ReturnModel(mu=float(np.mean(returns)), sigma=sigma, r=r)
