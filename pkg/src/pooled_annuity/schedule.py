"""Withdrawal plans and the riskless wealth floors they imply.

The floor m[a, i] is the pool wealth at stage i above which a survivors can
certainly fund the rest of the schedule with the bond alone. Floors define
every wealth grid used by the solver, so they are computed once per plan and
shared.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class WithdrawalPlan:
    """A fixed schedule: per-annuitant contribution P, pool size A0, bond
    rate r, and per-step withdrawals w[0..k-1] (w[i] is paid at step i+1).

    The last withdrawal must be positive; otherwise the horizon would end on
    a vacuous step.
    """

    P: float
    A0: int
    w: np.ndarray = field(repr=False)
    r: float = 0.0
    s: int | None = None  # starting age, informational

    def __post_init__(self) -> None:
        w = np.asarray(self.w, dtype=float)
        object.__setattr__(self, "w", w)
        if self.P <= 0:
            raise ValueError("per-annuitant contribution must be positive")
        if int(self.A0) != self.A0 or self.A0 < 1:
            raise ValueError("initial pool size must be an integer >= 1")
        object.__setattr__(self, "A0", int(self.A0))
        if w.ndim != 1 or w.size == 0:
            raise ValueError("withdrawal schedule must be a nonempty sequence")
        if np.any(w < 0):
            raise ValueError("withdrawals must be nonnegative")
        if w[-1] <= 0:
            raise ValueError("the final withdrawal must be positive")
        if self.r < 0:
            raise ValueError("bond rate must be nonnegative")

    @property
    def k(self) -> int:
        return self.w.size

    def as_dict(self) -> dict:
        return {
            "P": float(self.P),
            "A0": int(self.A0),
            "r": float(self.r),
            "s": self.s,
            "w": [float(x) for x in self.w],
        }


def constant_plan(P: float, A0: int, k: int, withdrawal: float = 1.0,
                  r: float = 0.0, s: int | None = None) -> WithdrawalPlan:
    """Plan with the same withdrawal every step (the common case)."""
    return WithdrawalPlan(P=P, A0=A0, w=np.full(k, float(withdrawal)), r=r, s=s)


@dataclass(frozen=True)
class FloorMatrix:
    """Riskless floors m[a, i] for pool sizes 0..a_max and stages 0..k."""

    m: np.ndarray = field(repr=False)  # shape (a_max + 1, k + 1)
    r: float = 0.0

    @property
    def a_max(self) -> int:
        return self.m.shape[0] - 1

    @property
    def k(self) -> int:
        return self.m.shape[1] - 1

    def at(self, a: int, i: int) -> float:
        return float(self.m[a, i])


def compute_floors(plan: WithdrawalPlan, a_max: int | None = None) -> FloorMatrix:
    """Backward recursion m[a, k] = 0, m[a, i] = (m[a, i+1] + a*w[i]) / (1+r).

    Equivalently m[a, i] is the present value at stage i of the remaining
    withdrawals of a survivors. m scales linearly in a because every survivor
    withdraws the same amount.
    """
    if a_max is None:
        a_max = plan.A0
    k = plan.k
    m = np.zeros((a_max + 1, k + 1))
    growth = 1.0 + plan.r
    a = np.arange(a_max + 1)
    for i in range(k - 1, -1, -1):
        m[:, i] = (m[:, i + 1] + a * plan.w[i]) / growth
    return FloorMatrix(m=m, r=plan.r)


def present_value_individual(plan: WithdrawalPlan, path) -> np.ndarray:
    """Wealth of a solo investor following gross portfolio returns `path`.

    Starts at the per-annuitant contribution and withdraws the scheduled
    amount each step: W[i] = path[i-1] * W[i-1] - w[i]. Used by the
    simulator's liquidity-bound check.
    """
    path = np.asarray(path, dtype=float)
    if path.size != plan.k:
        raise ValueError(f"return path must have length {plan.k}")
    wealth = np.empty(plan.k + 1)
    wealth[0] = plan.P
    for i in range(plan.k):
        wealth[i + 1] = path[i] * wealth[i] - plan.w[i]
    return wealth
