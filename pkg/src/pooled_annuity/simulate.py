"""Forward Monte-Carlo of the pooled fund under a given portfolio policy.

Paths follow the pooled wealth recursion: draw the risky return, mix it with
the bond according to the policy weight at the current (wealth, survivors)
state, draw deaths, then withdraw for the survivors. Success for a focal
member means the fund covered every withdrawal up to and including the last
step at which that member was alive; the all-annuitant variant requires the
fund to stay solvent until the last member dies.

Return and mortality draws come from independent substreams of one seed, and
paths are processed in fixed-size blocks with per-block substreams, so
estimates do not depend on how many workers execute the blocks.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .market import ReturnModel
from .mortality import CohortMortality
from .schedule import WithdrawalPlan, compute_floors
from .solver import PolicyGrid


class SimulationError(RuntimeError):
    """Inconsistent simulation inputs or an undefined policy point."""


@dataclass(frozen=True)
class SimConfig:
    """Path count, seeding and execution shape of one simulation run."""

    paths: int = 100_000
    seed: int = 0
    block_size: int = 1 << 14
    threads: int = 1

    def __post_init__(self) -> None:
        if self.paths < 1:
            raise ValueError("paths must be at least 1")
        if self.block_size < 1:
            raise ValueError("block_size must be at least 1")


@dataclass(frozen=True)
class SimResult:
    """Success-probability estimate with its binomial standard error."""

    estimate: float
    standard_error: float
    paths: int

    def __iter__(self):
        return iter((self.estimate, self.standard_error))


def _policy_function(policy, plan: WithdrawalPlan, k: int):
    """Normalize a policy spec into a callable (wealth, a, stage) -> weight.

    Accepts a PolicyGrid (interpolated optimal weights), a constant in
    [0, 1], or any callable with the same signature.
    """
    if isinstance(policy, PolicyGrid):
        if policy.a_max < plan.A0:
            raise SimulationError(
                f"policy grid covers pool sizes up to {policy.a_max}, "
                f"plan starts with {plan.A0}")
        if policy.k < k:
            raise SimulationError(
                f"policy grid covers {policy.k} stages, horizon needs {k}")
        plan_floors = compute_floors(plan, a_max=plan.A0)
        if not np.allclose(plan_floors.m,
                           policy.floors.m[:plan.A0 + 1, :k + 1],
                           rtol=1e-9, atol=1e-12):
            raise SimulationError(
                "policy grid floors do not match the plan; the artifact was "
                "solved for a different schedule")
        return policy.stock_weight
    if callable(policy):
        return policy
    weight = float(policy)
    if not 0.0 <= weight <= 1.0:
        raise SimulationError(f"constant stock weight {weight} outside [0, 1]")
    return lambda x, a, i: np.full(np.shape(x), weight)


def _weights_for(policy_fn, wealth, alive, stage):
    """Evaluate the policy per path, grouping paths by survivor count."""
    q = np.empty(wealth.shape)
    for a in np.unique(alive):
        mask = alive == a
        q[mask] = policy_fn(wealth[mask], int(a), stage)
    if np.any(~np.isfinite(q) | (q < 0.0) | (q > 1.0)):
        bad = np.nonzero(~np.isfinite(q) | (q < 0.0) | (q > 1.0))[0][0]
        raise SimulationError(
            f"policy undefined at stage {stage}, wealth {wealth[bad]!r}, "
            f"pool {alive[bad]}")
    return q


def _block_rngs(cfg: SimConfig):
    """Per-block (sizes, generators); fixed by seed, independent of workers."""
    n_blocks = (cfg.paths + cfg.block_size - 1) // cfg.block_size
    children = np.random.SeedSequence(cfg.seed).spawn(n_blocks)
    sizes = [cfg.block_size] * (n_blocks - 1)
    sizes.append(cfg.paths - cfg.block_size * (n_blocks - 1))
    return [(size, np.random.Generator(np.random.PCG64(child)))
            for size, child in zip(sizes, children)]


def _run_blocks(cfg: SimConfig, run_one):
    blocks = _block_rngs(cfg)
    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            counts = list(pool.map(lambda b: run_one(*b), blocks))
    else:
        counts = [run_one(*b) for b in blocks]
    return sum(counts)


def _estimate(successes: int, n: int) -> SimResult:
    p = successes / n
    return SimResult(estimate=p, standard_error=float(np.sqrt(p * (1.0 - p) / n)),
                     paths=n)


def simulate_success_probability(plan: WithdrawalPlan, cohort: CohortMortality,
                                 model: ReturnModel, policy,
                                 cfg: SimConfig | None = None) -> SimResult:
    """Estimate the probability a focal member completes the schedule.

    Each path starts at pool wealth A0 * P with A0 alive. Per step: the
    policy weight is read at the pre-step state, the return is drawn, the
    focal death and the other members' deaths are drawn independently of it,
    survivors withdraw. A path resolves when the focal member dies (success
    iff wealth was still nonnegative at their last withdrawal) or when
    wealth goes negative (failure is absorbing).
    """
    cfg = cfg or SimConfig()
    k = cohort.k
    if plan.k != k:
        raise SimulationError(f"plan horizon {plan.k} != cohort horizon {k}")
    policy_fn = _policy_function(policy, plan, k)
    bond = model.bond_return

    def run_one(n, rng):
        wealth = np.full(n, float(plan.A0) * plan.P)
        alive = np.full(n, plan.A0, dtype=np.int64)
        successes = 0
        for i in range(k):
            if wealth.size == 0:
                break
            d = cohort.d[i]
            q = _weights_for(policy_fn, wealth, alive, i)
            x1 = model.sample_return(rng, wealth.size)
            growth = q * x1 + (1.0 - q) * bond
            focal_dies = rng.random(wealth.size) < d
            other_deaths = rng.binomial(alive - 1, d)
            # Focal death resolves the path at the pre-return wealth: the
            # last withdrawal the member needed has already been taken.
            successes += int(np.count_nonzero(focal_dies & (wealth >= 0.0)))
            keep = ~focal_dies
            alive = alive[keep] - other_deaths[keep]
            wealth = growth[keep] * wealth[keep] - alive * plan.w[i]
            solvent = wealth >= 0.0  # ruin is absorbing; drop failed paths
            wealth = wealth[solvent]
            alive = alive[solvent]
        # d[k-1] = 1 guarantees focal death by the horizon; anything left
        # here would be a cohort contract violation.
        successes += int(np.count_nonzero(wealth >= 0.0))
        return successes

    return _estimate(_run_blocks(cfg, run_one), cfg.paths)


def simulate_all_annuitants(plan: WithdrawalPlan, cohort: CohortMortality,
                            model: ReturnModel, policy,
                            cfg: SimConfig | None = None) -> SimResult:
    """Estimate the probability the fund covers every member until the last
    death. Success is read after the return of the step on which the pool
    empties, with no further withdrawals owed."""
    cfg = cfg or SimConfig()
    k = cohort.k
    if plan.k != k:
        raise SimulationError(f"plan horizon {plan.k} != cohort horizon {k}")
    policy_fn = _policy_function(policy, plan, k)
    bond = model.bond_return

    def run_one(n, rng):
        wealth = np.full(n, float(plan.A0) * plan.P)
        alive = np.full(n, plan.A0, dtype=np.int64)
        successes = 0
        for i in range(k):
            if wealth.size == 0:
                break
            d = cohort.d[i]
            q = _weights_for(policy_fn, wealth, alive, i)
            x1 = model.sample_return(rng, wealth.size)
            growth = q * x1 + (1.0 - q) * bond
            deaths = rng.binomial(alive, d)
            alive = alive - deaths
            wealth = growth * wealth
            emptied = alive == 0
            successes += int(np.count_nonzero(emptied & (wealth >= 0.0)))
            keep = ~emptied
            alive = alive[keep]
            wealth = wealth[keep] - alive * plan.w[i]
            solvent = wealth >= 0.0
            wealth = wealth[solvent]
            alive = alive[solvent]
        successes += int(np.count_nonzero(wealth >= 0.0))
        return successes

    return _estimate(_run_blocks(cfg, run_one), cfg.paths)


def check_liquidity_bound(alive, pool_wealth, solo_wealth) -> bool:
    """Verify, on one trajectory, that a solvent solo investor implies a
    solvent pool: wherever members remain and solo wealth is nonnegative,
    pool wealth must be nonnegative too."""
    alive = np.asarray(alive)
    pool_wealth = np.asarray(pool_wealth, dtype=float)
    solo_wealth = np.asarray(solo_wealth, dtype=float)
    members = alive >= 1
    return bool(np.all(~(members & (solo_wealth >= 0.0)) | (pool_wealth >= 0.0)))


def simulate_liquidity_bound(plan: WithdrawalPlan, cohort: CohortMortality,
                             model: ReturnModel, policy,
                             cfg: SimConfig | None = None) -> tuple[int, int]:
    """Count paths on which the liquidity bound held at every stage.

    Tracks the full pool recursion alongside a solo investor holding the
    same portfolio weights on the same return path, checking the
    implication at every stage with at least one member left. Returns
    (paths_ok, paths).
    """
    cfg = cfg or SimConfig()
    k = cohort.k
    if plan.k != k:
        raise SimulationError(f"plan horizon {plan.k} != cohort horizon {k}")
    policy_fn = _policy_function(policy, plan, k)
    bond = model.bond_return

    def run_one(n, rng):
        pool = np.full(n, float(plan.A0) * plan.P)
        solo = np.full(n, plan.P)
        alive = np.full(n, plan.A0, dtype=np.int64)
        ok = np.ones(n, dtype=bool)
        ok_total = 0
        for i in range(k):
            if pool.size == 0:
                break
            d = cohort.d[i]
            q = _weights_for(policy_fn, pool, alive, i)
            x1 = model.sample_return(rng, pool.size)
            growth = q * x1 + (1.0 - q) * bond
            deaths = rng.binomial(alive, d)
            alive = alive - deaths
            pool = growth * pool - alive * plan.w[i]
            solo = growth * solo - plan.w[i]
            bad = (alive >= 1) & (solo >= 0.0) & (pool < 0.0)
            ok &= ~bad
            finished = alive == 0  # pool extinct, nothing left to check
            ok_total += int(np.count_nonzero(ok[finished]))
            keep = ~finished
            pool, solo, alive, ok = pool[keep], solo[keep], alive[keep], ok[keep]
        ok_total += int(np.count_nonzero(ok))
        return ok_total

    return _run_blocks(cfg, run_one), cfg.paths


def trace_paths(plan: WithdrawalPlan, cohort: CohortMortality,
                model: ReturnModel, policy, *, paths: int = 10,
                seed: int = 0) -> list[dict]:
    """Simulate a handful of paths recording per-stage state for debugging.

    Returns one row per (path, stage) with the focal flag, survivor count,
    tracked wealth and applied stock weight. Intended for small path counts;
    each path runs individually.
    """
    k = cohort.k
    policy_fn = _policy_function(policy, plan, k)
    bond = model.bond_return
    rows = []
    rngs = [np.random.Generator(np.random.PCG64(c))
            for c in np.random.SeedSequence(seed).spawn(paths)]
    for p, rng in enumerate(rngs):
        wealth = float(plan.A0) * plan.P
        alive = plan.A0
        focal = 1
        rows.append({"path": p, "stage": 0, "focal": focal, "alive": alive,
                     "wealth": wealth, "weight": None})
        for i in range(k):
            if focal == 0 or alive == 0:
                break
            q = float(np.asarray(policy_fn(np.array([wealth]), alive, i))[0])
            x1 = float(model.sample_return(rng))
            growth = q * x1 + (1.0 - q) * bond
            focal_dies = bool(rng.random() < cohort.d[i])
            other_deaths = int(rng.binomial(alive - 1, cohort.d[i]))
            if focal_dies:
                focal = 0
                alive -= 1 + other_deaths
            else:
                alive -= other_deaths
            wealth = growth * wealth - focal * alive * plan.w[i]
            rows.append({"path": p, "stage": i + 1, "focal": focal,
                         "alive": alive, "wealth": wealth, "weight": q})
    return rows
