"""Backward-induction solver for withdrawal-success probabilities.

Computes, for every stage i, pool size a and wealth x on a per-stage grid,
the maximum probability that a pool member completes the withdrawal schedule
until death, together with the maximizing stock weight. Wealth is discretized
on grids D[a, i] = {j * m[a, i] / M : j = 1..M-1}, where m[a, i] is the
riskless floor: above it the value is exactly 1, below 0 it is exactly 0, so
only the open band between needs solving.

The per-cell optimization follows a coarse-then-fine grid search over the
stock weight, compared against an all-bond branch evaluated with a stepwise
lower bound, so stored values never overstate the success probability.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import binom

from .market import ReturnModel
from .mortality import CohortMortality
from .schedule import FloorMatrix, WithdrawalPlan, compute_floors

ARTIFACT_FORMAT = "pooled-annuity-grids"
ARTIFACT_VERSION = 1

# Mixture terms lighter than this cannot move a probability by more than
# a_max * 1e-15 and are skipped; binomial tails at a = 100 would otherwise
# dominate the stage cost.
_WEIGHT_FLOOR = 1e-15

# Snap tolerance (in grid-index units) so that wealth sitting exactly on a
# grid node is never pushed to the node below by floating-point noise.
_INDEX_EPS = 1e-9


class SolverError(RuntimeError):
    """Solver failure carrying (stage, pool) progress context."""


@dataclass(frozen=True)
class SolverConfig:
    """Discretization and search parameters.

    grid_size is the number M of wealth cells per floor; the coarse stock
    weight grid is searched first, then refined in refine_step increments
    nine steps down and ten up around the coarse argmax. Quadrature nodes
    are tied to the value grid (values are only known there), so
    quadrature_points, when given, must equal grid_size - 1.
    """

    grid_size: int = 100
    coarse_grid: tuple[float, ...] = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
    refine_step: float = 0.01
    quadrature_points: int | None = None
    a_max: int | None = None

    def __post_init__(self) -> None:
        if self.grid_size < 2:
            raise ValueError("grid_size must be at least 2")
        if not self.coarse_grid or any(not 0 < q < 1 for q in self.coarse_grid):
            raise ValueError("coarse_grid weights must lie strictly in (0, 1)")
        if tuple(sorted(self.coarse_grid)) != tuple(self.coarse_grid):
            raise ValueError("coarse_grid must be sorted ascending")
        if self.refine_step <= 0:
            raise ValueError("refine_step must be positive")
        if self.quadrature_points is not None and self.quadrature_points != self.grid_size - 1:
            raise ValueError("quadrature nodes are the grid interior; "
                             "quadrature_points must equal grid_size - 1")
        if self.a_max is not None and self.a_max < 1:
            raise ValueError("a_max must be at least 1")

    def as_dict(self) -> dict:
        return {
            "grid_size": self.grid_size,
            "coarse_grid": list(self.coarse_grid),
            "refine_step": self.refine_step,
            "a_max": self.a_max,
        }


def terminal_value(x, a=None):
    """Success indicator at the horizon: 1 where wealth is nonnegative.

    The pool size is irrelevant once the schedule is over; it is accepted
    only for signature symmetry with the stage values.
    """
    return np.where(np.asarray(x, dtype=float) >= 0.0, 1.0, 0.0)


def step_lower_bound(theta, row_cummax, floor, grid_size):
    """Stepwise lower bound of a stored value row at arbitrary wealth theta.

    Returns 0 below the first grid node, 1 at or above the floor, and
    otherwise the largest stored value at a node <= theta. A zero floor
    means no further withdrawals are owed, so the value is the terminal
    indicator.
    """
    theta = np.asarray(theta, dtype=float)
    if floor == 0.0:
        return np.where(theta >= 0.0, 1.0, 0.0)
    j = np.floor(theta * grid_size / floor + _INDEX_EPS).astype(np.int64)
    out = np.zeros(theta.shape)
    out[j >= grid_size] = 1.0
    inner = (j >= 1) & (j < grid_size)
    out[inner] = row_cummax[j[inner] - 1]
    return out


def risky_continuation_value(x, q, *, demand, floor_next, v_next_row, model,
                             grid_size):
    """Discretized expected next-stage value under stock weight q > 0.

    Approximates E[v_next(Y * x - demand)] where Y = q * X + (1 - q) * (1+r)
    and demand is the survivors' total withdrawal. The expectation splits
    into the certainty tail above the next floor plus a density-weighted
    average of the stored next-stage values over the interior grid nodes.

    x and q broadcast together; x must be positive and q nonzero. When the
    next floor is zero the interior band is empty and the result reduces to
    the probability that after-return wealth is nonnegative.
    """
    x = np.asarray(x, dtype=float)
    q = np.asarray(q, dtype=float)
    bond = model.bond_return
    # Risky return that lands after-return wealth exactly at zero:
    b = bond - bond / q + demand / (q * x)
    if floor_next == 0.0:
        return 1.0 - model.cdf(b)
    # Grid spacing mapped into return space; node j sits at b + j * delta.
    delta = floor_next / (grid_size * q * x)
    upper = b + grid_size * delta
    mass = model.cdf(upper) - model.cdf(b)
    j = np.arange(1, grid_size)
    dens = model.pdf(b[..., None] + delta[..., None] * j)
    denom = dens.sum(axis=-1)
    num = dens @ v_next_row
    with np.errstate(invalid="ignore", divide="ignore"):
        avg = np.where(denom > 0.0, num / np.where(denom > 0.0, denom, 1.0), 0.0)
    return mass * avg + 1.0 - model.cdf(upper)


def _mixture_weights(a, death_prob, *, all_annuitants):
    """Survivor counts and probabilities for one stage transition.

    Conditioned on a focal survivor, deaths are binomial over the other
    a - 1 members and the focal's own death carries its own weight; in the
    all-annuitant variant deaths are binomial over all a members and there
    is no separate death term.
    """
    if all_annuitants:
        l = np.arange(a + 1)
        weights = binom.pmf(l, a, death_prob)
        death_weight = 0.0
    else:
        l = np.arange(a)
        weights = (1.0 - death_prob) * binom.pmf(l, a - 1, death_prob)
        death_weight = death_prob
    counts = a - l
    keep = weights > _WEIGHT_FLOOR
    return counts[keep], weights[keep], death_weight


def _mixture_value(x, q, *, counts, weights, death_weight, withdrawal,
                   floors_next, v_next, model, grid_size):
    """Survivor-weighted risky continuation plus the focal-death term."""
    x = np.asarray(x, dtype=float)
    q = np.asarray(q, dtype=float)
    acc = np.zeros(np.broadcast_shapes(x.shape, q.shape))
    acc += death_weight * np.where(x >= 0.0, 1.0, 0.0)
    for count, weight in zip(counts, weights):
        acc = acc + weight * risky_continuation_value(
            x, q,
            demand=count * withdrawal,
            floor_next=floors_next[count],
            v_next_row=v_next[count],
            model=model,
            grid_size=grid_size,
        )
    return acc


def bond_continuation_value(x, *, counts, weights, death_weight, withdrawal,
                            floors_next, v_next_cummax, bond_return,
                            grid_size):
    """All-bond stage value via the stepwise lower bound.

    Deterministic growth makes the after-return wealth exact; each survivor
    term is read off the stored next-stage row conservatively (never above a
    stored value), so the bond branch cannot overstate the probability.
    """
    x = np.asarray(x, dtype=float)
    acc = death_weight * np.where(x >= 0.0, 1.0, 0.0)
    for count, weight in zip(counts, weights):
        theta = bond_return * x - count * withdrawal
        acc = acc + weight * step_lower_bound(
            theta, v_next_cummax[count], floors_next[count], grid_size)
    return acc


def stage_optimum(x, *, counts, weights, death_weight, withdrawal,
                  floors_next, v_next, v_next_cummax, model, cfg):
    """Best stage value and stock weight for every wealth node in x.

    Runs the coarse weight grid, refines around the coarse argmax, then
    compares against the all-bond branch. Ties go to the smaller weight, so
    the bond branch wins exact ties and argmax picks the smallest maximizer
    within each grid.
    """
    x_col = np.asarray(x, dtype=float)[:, None]
    common = dict(counts=counts, weights=weights, death_weight=death_weight,
                  withdrawal=withdrawal, floors_next=floors_next,
                  v_next=v_next, model=model, grid_size=cfg.grid_size)

    bond_value = bond_continuation_value(
        x, counts=counts, weights=weights, death_weight=death_weight,
        withdrawal=withdrawal, floors_next=floors_next,
        v_next_cummax=v_next_cummax, bond_return=model.bond_return,
        grid_size=cfg.grid_size)

    coarse = np.asarray(cfg.coarse_grid)
    values_coarse = _mixture_value(x_col, coarse[None, :], **common)
    q1 = coarse[np.argmax(values_coarse, axis=1)]

    offsets = cfg.refine_step * np.arange(-9, 11)
    fine = q1[:, None] + offsets[None, :]
    valid = fine > 0.0
    fine = np.where(valid, np.minimum(fine, 1.0), 0.5)
    values_fine = _mixture_value(x_col, fine, **common)
    values_fine[~valid] = -np.inf
    pick = np.argmax(values_fine, axis=1)
    rows = np.arange(x_col.shape[0])
    q2 = fine[rows, pick]
    refined = values_fine[rows, pick]

    risky_wins = refined > bond_value
    values = np.where(risky_wins, refined, bond_value)
    q_star = np.where(risky_wins, q2, 0.0)
    return values, q_star


def last_step_success_probability(x, a, q, model: ReturnModel,
                                  floors: FloorMatrix):
    """Closed-form success probability at the final decision stage.

    With one withdrawal left, success only requires after-return wealth to
    be nonnegative: the probability is the risky upper tail beyond
    (1+r) * (1 + (1/q) * (m/x - 1)) with m the final-stage floor. With q = 0
    the outcome is deterministic: success iff x is already at the floor.
    """
    floor = floors.m[a, floors.k - 1]
    x = np.asarray(x, dtype=float)
    q = np.asarray(q, dtype=float)
    threshold = model.bond_return * (1.0 + (floor / x - 1.0) / np.where(q == 0.0, 1.0, q))
    risky = 1.0 - model.cdf(threshold)
    return np.where(q == 0.0, np.where(x >= floor, 1.0, 0.0), risky)


@dataclass(frozen=True)
class ValueGrid:
    """Stage values on the per-floor wealth grids.

    v[i, a, j] is the success probability at stage i, pool size a and wealth
    (j+1) * m[a, i] / grid_size. Off-grid queries use the stepwise lower
    bound, so reported values are conservative.
    """

    v: np.ndarray = field(repr=False)  # (k + 1, a_max + 1, grid_size - 1)
    floors: FloorMatrix
    grid_size: int
    _cummax: np.ndarray = field(repr=False, default=None, compare=False)

    def __post_init__(self) -> None:
        if self._cummax is None:
            object.__setattr__(self, "_cummax",
                               np.maximum.accumulate(self.v, axis=2))

    @property
    def k(self) -> int:
        return self.v.shape[0] - 1

    @property
    def a_max(self) -> int:
        return self.v.shape[1] - 1

    def grid(self, a: int, i: int) -> np.ndarray:
        """Wealth nodes of the stage-(i) grid for pool size a."""
        return self.floors.m[a, i] * np.arange(1, self.grid_size) / self.grid_size

    def value_at(self, x, a: int, i: int):
        """Success probability at arbitrary wealth (stepwise lower bound)."""
        if not 0 <= a <= self.a_max:
            raise IndexError(f"pool size {a} outside solved range 0..{self.a_max}")
        if not 0 <= i <= self.k:
            raise IndexError(f"stage {i} outside 0..{self.k}")
        if a == 0:
            return np.where(np.asarray(x, dtype=float) >= 0.0, 1.0, 0.0)
        return step_lower_bound(x, self._cummax[i, a], self.floors.m[a, i],
                                self.grid_size)


@dataclass(frozen=True)
class PolicyGrid:
    """Optimal stock weights on the same grids as the value table.

    Off-grid weights interpolate linearly between adjacent nodes, anchored
    at weight 1 for nonpositive wealth and weight 0 at the floor.
    """

    q: np.ndarray = field(repr=False)  # (k, a_max + 1, grid_size - 1)
    floors: FloorMatrix
    grid_size: int

    @property
    def k(self) -> int:
        return self.q.shape[0]

    @property
    def a_max(self) -> int:
        return self.q.shape[1] - 1

    def stock_weight(self, x, a: int, i: int):
        """Stock weight at arbitrary wealth; scalar or array x."""
        if not 0 <= a <= self.a_max:
            raise IndexError(f"pool size {a} outside solved range 0..{self.a_max}")
        if not 0 <= i < self.k:
            raise IndexError(f"stage {i} outside 0..{self.k - 1}")
        x = np.asarray(x, dtype=float)
        floor = self.floors.m[a, i]
        if a == 0 or floor == 0.0:
            return np.zeros(x.shape) if x.shape else 0.0
        nodes = np.empty(self.grid_size + 1)
        nodes[0] = 0.0
        nodes[1:self.grid_size] = floor * np.arange(1, self.grid_size) / self.grid_size
        nodes[self.grid_size] = floor
        vals = np.empty(self.grid_size + 1)
        vals[0] = 1.0
        vals[1:self.grid_size] = self.q[i, a]
        vals[self.grid_size] = 0.0
        return np.interp(x, nodes, vals)


@dataclass(frozen=True)
class SolvedGrids:
    """Value and policy tables plus the inputs that produced them."""

    value: ValueGrid
    policy: PolicyGrid
    floors: FloorMatrix
    plan: WithdrawalPlan
    cohort: CohortMortality
    model: ReturnModel
    cfg: SolverConfig
    variant: str = "focal"  # or "all"

    def __iter__(self):
        return iter((self.value, self.policy))

    def success_probability(self, per_capita: float | None = None,
                            a: int | None = None) -> float:
        """Stage-0 value at pool wealth a * per_capita (defaults to the plan)."""
        if a is None:
            a = self.plan.A0
        if per_capita is None:
            per_capita = self.plan.P
        return float(self.value.value_at(a * per_capita, a, 0))


def solve(plan: WithdrawalPlan, cohort: CohortMortality, model: ReturnModel,
          cfg: SolverConfig | None = None, *, all_annuitants: bool = False,
          threads: int = 1, progress=None) -> SolvedGrids:
    """Backward sweep over stages, pool sizes and wealth nodes.

    Returns the value and policy tables for pool sizes 1..a_max. The sweep
    is deterministic: per-(stage, pool) cells are independent, so the
    optional thread pool over pool sizes cannot change results.
    """
    cfg = cfg or SolverConfig()
    a_max = cfg.a_max or plan.A0
    if a_max < plan.A0:
        raise ValueError(f"a_max={a_max} is below the plan's pool size {plan.A0}")
    k = cohort.k
    if plan.k != k:
        raise ValueError(f"plan horizon {plan.k} != cohort horizon {k}")
    M = cfg.grid_size

    floors = compute_floors(plan, a_max=a_max)
    v = np.ones((k + 1, a_max + 1, M - 1))
    q_star = np.zeros((k, a_max + 1, M - 1))

    for i in range(k - 1, -1, -1):
        death_prob = cohort.d[i]
        withdrawal = plan.w[i]
        floors_next = floors.m[:, i + 1]
        v_next = v[i + 1]
        v_next_cummax = np.maximum.accumulate(v_next, axis=1)

        def solve_pool(a, _i=i, _d=death_prob, _w=withdrawal,
                       _fn=floors_next, _vn=v_next, _vc=v_next_cummax):
            counts, weights, death_weight = _mixture_weights(
                a, _d, all_annuitants=all_annuitants)
            x = floors.m[a, _i] * np.arange(1, M) / M
            try:
                vals, qs = stage_optimum(
                    x, counts=counts, weights=weights,
                    death_weight=death_weight, withdrawal=_w,
                    floors_next=_fn, v_next=_vn, v_next_cummax=_vc,
                    model=model, cfg=cfg)
            except MemoryError as exc:
                raise SolverError(
                    f"out of memory at stage {_i}, pool size {a}") from exc
            v[_i, a] = vals
            q_star[_i, a] = qs

        pools = range(1, a_max + 1)
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                list(pool.map(solve_pool, pools))
        else:
            for a in pools:
                solve_pool(a)
        if progress is not None:
            progress(i)

    value = ValueGrid(v=v, floors=floors, grid_size=M)
    policy = PolicyGrid(q=q_star, floors=floors, grid_size=M)
    return SolvedGrids(value=value, policy=policy, floors=floors, plan=plan,
                       cohort=cohort, model=model,
                       cfg=replace(cfg, a_max=a_max),
                       variant="all" if all_annuitants else "focal")


def solve_all_annuitants(plan, cohort, model, cfg=None, *, threads: int = 1,
                         progress=None) -> SolvedGrids:
    """Variant maximizing the probability that every member completes the
    schedule (pool wealth stays nonnegative until the last death)."""
    return solve(plan, cohort, model, cfg, all_annuitants=True,
                 threads=threads, progress=progress)


def required_contribution(solved: SolvedGrids, confidence: float,
                          a: int | None = None) -> float:
    """Smallest per-annuitant contribution reaching the target confidence.

    Scans the solved stage-0 value row for pool size a (values are
    nondecreasing in wealth); resolution is one grid cell. If no grid node
    reaches the confidence the riskless per-capita floor is returned, which
    funds the schedule with certainty.
    """
    if not 0.0 < confidence <= 1.0:
        raise ValueError("confidence must lie in (0, 1]")
    if a is None:
        a = solved.plan.A0
    row = solved.value.v[0, a]
    floor = solved.floors.m[a, 0]
    hits = np.nonzero(row >= confidence)[0]
    if hits.size == 0:
        return floor / a
    return float((hits[0] + 1) * floor / (solved.value.grid_size * a))


def save_grids(path, solved: SolvedGrids) -> str:
    """Serialize solved grids with a provenance header; returns the digest."""
    header = {
        "format": ARTIFACT_FORMAT,
        "version": ARTIFACT_VERSION,
        "variant": solved.variant,
        "plan": solved.plan.as_dict(),
        "model": {"mu": solved.model.mu, "sigma": solved.model.sigma,
                  "r": solved.model.r},
        "cfg": solved.cfg.as_dict(),
        "cohort": {"s": solved.cohort.s, "k": solved.cohort.k,
                   "hash": solved.cohort.content_hash()},
    }
    header_json = json.dumps(header, sort_keys=True)
    with open(path, "wb") as fh:
        np.savez_compressed(
            fh,
            header=np.frombuffer(header_json.encode(), dtype=np.uint8),
            v=solved.value.v,
            q=solved.policy.q,
            floors=solved.floors.m,
            w=solved.plan.w,
            d=solved.cohort.d,
        )
    return hashlib.sha256(header_json.encode()).hexdigest()[:16]


def load_grids(path) -> SolvedGrids:
    """Load grids saved by save_grids, rebuilding the input objects."""
    with np.load(path) as data:
        header = json.loads(bytes(data["header"]).decode())
        if header.get("format") != ARTIFACT_FORMAT:
            raise ValueError(f"{path}: not a solved-grids artifact")
        if header.get("version") != ARTIFACT_VERSION:
            raise ValueError(f"{path}: unsupported artifact version "
                             f"{header.get('version')}")
        v = data["v"]
        q = data["q"]
        floors_m = data["floors"]
        w = data["w"]
        d = data["d"]

    plan_dict = header["plan"]
    plan = WithdrawalPlan(P=plan_dict["P"], A0=plan_dict["A0"], w=w,
                          r=plan_dict["r"], s=plan_dict["s"])
    cohort_obj = CohortMortality(s=header["cohort"]["s"], d=d)
    model = ReturnModel(**header["model"])
    cfg_dict = header["cfg"]
    cfg = SolverConfig(grid_size=cfg_dict["grid_size"],
                       coarse_grid=tuple(cfg_dict["coarse_grid"]),
                       refine_step=cfg_dict["refine_step"],
                       a_max=cfg_dict["a_max"])
    floors = FloorMatrix(m=floors_m, r=plan.r)
    value = ValueGrid(v=v, floors=floors, grid_size=cfg.grid_size)
    policy = PolicyGrid(q=q, floors=floors, grid_size=cfg.grid_size)
    return SolvedGrids(value=value, policy=policy, floors=floors, plan=plan,
                       cohort=cohort_obj, model=model, cfg=cfg,
                       variant=header["variant"])


def grids_digest(path) -> str:
    """Digest of a saved artifact's provenance header."""
    with np.load(path) as data:
        header_json = bytes(data["header"]).decode()
    # Re-canonicalize so the digest matches save_grids output.
    canonical = json.dumps(json.loads(header_json), sort_keys=True)
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]
