"""Command-line interface: solve, simulate, frontier, pool-benefit, sensitivity.

Every command writes plain CSV tables with self-describing headers plus a
manifest.json recording the resolved configuration, seed, version and output
digests, so any run can be reproduced from its manifest alone. Data goes to
files and stdout; progress goes to stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .market import ReturnModel
from .market_data import MarketDataError, fit_return_model, load_market_csv, real_returns
from .mortality import (TERMINAL_AGE, LifeTableError, cohort,
                        default_life_table_path, load_life_table)
from .schedule import WithdrawalPlan, compute_floors
from .simulate import (SimConfig, SimulationError, simulate_all_annuitants,
                       simulate_liquidity_bound, simulate_success_probability,
                       trace_paths)
from .solver import (SolverConfig, SolverError, grids_digest, load_grids,
                     required_contribution, save_grids, solve)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_VALIDATION = 3
EXIT_RUNTIME = 4


class CliError(Exception):
    def __init__(self, message, code=EXIT_VALIDATION):
        super().__init__(message)
        self.code = code


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.10g}"
    return str(x)


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out_dir, command, resolved, outputs, started):
    manifest = {
        "command": command,
        "tool": "pooled-annuity",
        "version": __version__,
        "argv": sys.argv[1:],
        "resolved": resolved,
        "started_at": started,
        "finished_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "outputs": [{"path": os.path.basename(p), "sha256": _sha256(p),
                     "bytes": os.path.getsize(p)} for p in outputs],
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _parse_list(text, cast):
    try:
        return [cast(part) for part in str(text).split(",") if part != ""]
    except ValueError:
        raise CliError(f"cannot parse list {text!r}")


def _load_config(path):
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise CliError(f"{path}:{lineno}: expected key = value")
            key, _, val = line.partition("=")
            values[key.strip().replace("-", "_")] = val.strip()
    return values


def _add_common_flags(p):
    p.add_argument("--config", help="key = value file; flags override it")
    p.add_argument("--age", type=int, default=None, help="starting age s (default 65)")
    p.add_argument("--pool", type=int, default=None, help="initial pool size A0 (default 1)")
    p.add_argument("--contribution", type=float, default=None,
                   help="per-annuitant contribution P (default 18)")
    p.add_argument("--withdrawal", default=None,
                   help="per-step withdrawal amount, or a file with one amount per line (default 1)")
    p.add_argument("--rate", type=float, default=None, help="bond real rate r (default 0)")
    p.add_argument("--grid", type=int, default=None, help="wealth grid resolution M (default 100)")
    p.add_argument("--mu", type=float, default=None, help="risky mean gross return (default 1.083)")
    p.add_argument("--sigma", type=float, default=None, help="risky return sd (default 0.1753)")
    p.add_argument("--life-table", default=None, help="age,qx file (default: shipped table)")
    p.add_argument("--market-csv", default=None,
                   help="year,I,D,C file; fits mu/sigma unless given explicitly")
    p.add_argument("--threads", type=int, default=None, help="worker cap (default 1)")
    p.add_argument("--out", required=True, help="output directory")


_DEFAULTS = {"age": 65, "pool": 1, "contribution": 18.0, "withdrawal": "1",
             "rate": 0.0, "grid": 100, "mu": None, "sigma": None,
             "life_table": None, "market_csv": None, "threads": 1,
             "paths": 100_000, "seed": 0, "a_max": None, "constant_q": None}

_CASTS = {"age": int, "pool": int, "contribution": float, "rate": float,
          "grid": int, "mu": float, "sigma": float, "threads": int,
          "paths": int, "seed": int, "a_max": int, "constant_q": float}


def _resolve(args):
    """Merge defaults < config file < explicit flags into one namespace."""
    merged = dict(_DEFAULTS)
    if getattr(args, "config", None):
        for key, val in _load_config(args.config).items():
            if key not in merged and not hasattr(args, key):
                raise CliError(f"unknown config key {key!r}")
            merged[key] = _CASTS.get(key, str)(val)
    for key in vars(args):
        val = getattr(args, key)
        if val is not None:
            merged[key] = val
    return merged


def _build_inputs(cfg, need_pool_plan=True):
    """Life table, cohort, model and plan from a resolved configuration."""
    table_path = cfg.get("life_table") or default_life_table_path()
    table = load_life_table(table_path)
    age = int(cfg["age"])
    coh = cohort(table, age)

    mu, sigma = cfg.get("mu"), cfg.get("sigma")
    fitted = None
    if cfg.get("market_csv"):
        fitted = fit_return_model(real_returns(load_market_csv(cfg["market_csv"])))
    model = ReturnModel(
        mu=mu if mu is not None else (fitted.mu if fitted else ReturnModel().mu),
        sigma=sigma if sigma is not None else (fitted.sigma if fitted else ReturnModel().sigma),
        r=float(cfg["rate"]))

    w_spec = str(cfg["withdrawal"])
    if os.path.exists(w_spec):
        w = np.loadtxt(w_spec, ndmin=1)
        if w.size != coh.k:
            raise CliError(f"withdrawal file has {w.size} entries, horizon "
                           f"needs {coh.k}")
    else:
        try:
            w = np.full(coh.k, float(w_spec))
        except ValueError:
            raise CliError(f"withdrawal {w_spec!r} is neither a number nor a file")
    plan = WithdrawalPlan(P=float(cfg["contribution"]),
                          A0=int(cfg["pool"]) if need_pool_plan else 1,
                          w=w, r=float(cfg["rate"]), s=age)
    return table_path, coh, model, plan


def _solver_config(cfg, a_max):
    return SolverConfig(grid_size=int(cfg["grid"]), a_max=a_max)


def _progress(label):
    def cb(stage):
        print(f"{label}: stage {stage} done", file=sys.stderr)
    return cb


def _resolved_echo(cfg, coh, model, plan, extra=None):
    out = {
        "age": coh.s, "horizon": coh.k, "pool": plan.A0,
        "contribution": plan.P, "rate": plan.r,
        "withdrawal": [float(x) for x in plan.w],
        "mu": model.mu, "sigma": model.sigma,
        "grid": int(cfg["grid"]), "threads": int(cfg["threads"]),
        "life_table": cfg.get("life_table") or default_life_table_path(),
    }
    if extra:
        out.update(extra)
    return out


def cmd_solve(args):
    cfg = _resolve(args)
    table_path, coh, model, plan = _build_inputs(cfg)
    a_max = cfg.get("a_max") or plan.A0
    scfg = _solver_config(cfg, int(a_max))
    os.makedirs(cfg["out"], exist_ok=True)
    started = time.strftime("%Y-%m-%dT%H:%M:%S%z")

    solved = solve(plan, coh, model, scfg,
                   all_annuitants=bool(cfg.get("all_annuitants")),
                   threads=int(cfg["threads"]), progress=_progress("solve"))
    grids_path = os.path.join(cfg["out"], "grids.npz")
    digest = save_grids(grids_path, solved)

    v0 = solved.success_probability()
    summary_path = os.path.join(cfg["out"], "solve_summary.csv")
    _write_csv(summary_path, ["A0", "P", "s", "v0"],
               [(plan.A0, plan.P, coh.s, v0)])
    print(f"A0={plan.A0},P={_fmt(plan.P)},s={coh.s},v0={_fmt(v0)}")

    resolved = _resolved_echo(cfg, coh, model, plan,
                              {"a_max": int(a_max), "artifact_digest": digest,
                               "variant": solved.variant})
    _write_manifest(cfg["out"], "solve", resolved, [grids_path, summary_path],
                    started)
    return EXIT_OK


# Flags that change the solved grids; simulate refuses to override these
# when a policy artifact is supplied.
_SOLVE_BOUND = ("age", "rate", "mu", "sigma", "grid", "withdrawal")


def cmd_simulate(args):
    cfg = _resolve(args)
    os.makedirs(cfg["out"], exist_ok=True)
    started = time.strftime("%Y-%m-%dT%H:%M:%S%z")

    policy_file = cfg.get("policy")
    constant_q = cfg.get("constant_q")
    if (policy_file is None) == (constant_q is None):
        raise CliError("exactly one of --policy or --constant-q is required")

    if policy_file is not None:
        if not os.path.exists(policy_file):
            raise CliError(f"policy artifact {policy_file!r} not found")
        artifact = load_grids(policy_file)
        digest = grids_digest(policy_file)
        for key in _SOLVE_BOUND:
            if getattr(args, key.replace("-", "_"), None) is not None:
                given = cfg[key]
                stored = {"age": artifact.cohort.s, "rate": artifact.plan.r,
                          "mu": artifact.model.mu, "sigma": artifact.model.sigma,
                          "grid": artifact.cfg.grid_size,
                          "withdrawal": None}[key]
                if key == "withdrawal":
                    raise CliError(
                        f"--withdrawal cannot override a policy artifact; "
                        f"{policy_file} (digest {digest}) fixes the schedule")
                if float(given) != float(stored):
                    raise CliError(
                        f"--{key}={given} conflicts with policy artifact "
                        f"{policy_file} (digest {digest}): solved with {stored}")
        coh, model = artifact.cohort, artifact.model
        pool = int(cfg["pool"]) if args.pool is not None else artifact.plan.A0
        if pool > artifact.policy.a_max:
            raise CliError(f"--pool={pool} exceeds artifact a_max="
                           f"{artifact.policy.a_max} (digest {digest})")
        P = float(cfg["contribution"]) if args.contribution is not None else artifact.plan.P
        plan = WithdrawalPlan(P=P, A0=pool, w=artifact.plan.w,
                              r=artifact.plan.r, s=artifact.plan.s)
        policy = artifact.policy
        policy_label = f"optimal:{digest}"
    else:
        _, coh, model, plan = _build_inputs(cfg)
        policy = float(constant_q)
        policy_label = f"constant-q={_fmt(policy)}"
        digest = None

    sim_cfg = SimConfig(paths=int(cfg["paths"]), seed=int(cfg["seed"]),
                        threads=int(cfg["threads"]))
    if cfg.get("all_annuitants"):
        result = simulate_all_annuitants(plan, coh, model, policy, sim_cfg)
    else:
        result = simulate_success_probability(plan, coh, model, policy, sim_cfg)

    rows = [[policy_label, sim_cfg.paths, result.estimate, result.standard_error]]
    header = ["policy", "paths", "estimate", "standard_error"]
    if cfg.get("check_liquidity"):
        ok, total = simulate_liquidity_bound(plan, coh, model, policy, sim_cfg)
        header.append("liquidity_bound_ok")
        rows[0].append("true" if ok == total else f"violated:{total - ok}")

    est_path = os.path.join(cfg["out"], "simulate_estimates.csv")
    _write_csv(est_path, header, rows)
    outputs = [est_path]
    print(",".join(_fmt(v) for v in rows[0]))

    if cfg.get("trace"):
        cap = int(cfg["trace"])
        trace_rows = trace_paths(plan, coh, model, policy,
                                 paths=min(cap, sim_cfg.paths),
                                 seed=sim_cfg.seed)
        trace_path = os.path.join(cfg["out"], "trace.csv")
        _write_csv(trace_path, ["path", "stage", "focal", "alive", "wealth", "weight"],
                   [[r["path"], r["stage"], r["focal"], r["alive"],
                     r["wealth"], "" if r["weight"] is None else r["weight"]]
                    for r in trace_rows])
        outputs.append(trace_path)

    resolved = _resolved_echo(cfg, coh, model, plan,
                              {"paths": sim_cfg.paths, "seed": sim_cfg.seed,
                               "policy": policy_label,
                               "policy_digest": digest,
                               "all_annuitants": bool(cfg.get("all_annuitants"))})
    _write_manifest(cfg["out"], "simulate", resolved, outputs, started)
    return EXIT_OK


def cmd_frontier(args):
    cfg = _resolve(args)
    ages = _parse_list(cfg["ages"], int)
    pools = _parse_list(cfg["pools"], int)
    confidences = _parse_list(cfg["confidence"], float)
    if not all(0.0 < c < 1.0 for c in confidences):
        raise CliError("confidence levels must lie strictly in (0, 1)")
    os.makedirs(cfg["out"], exist_ok=True)
    started = time.strftime("%Y-%m-%dT%H:%M:%S%z")

    rows = []
    echo_model = None
    for age in ages:
        sub = dict(cfg)
        sub["age"] = age
        sub["pool"] = max(pools)
        sub["contribution"] = 1.0  # placeholder; the frontier scans wealth
        _, coh, model, plan = _build_inputs(sub)
        echo_model = model
        solved = solve(plan, coh, model, _solver_config(cfg, max(pools)),
                       threads=int(cfg["threads"]),
                       progress=_progress(f"frontier s={age}"))
        for a in pools:
            for conf in confidences:
                rows.append((age, a, conf, required_contribution(solved, conf, a)))

    path = os.path.join(cfg["out"], "frontier.csv")
    _write_csv(path, ["s", "a", "confidence", "P_star"], rows)
    for row in rows:
        print(",".join(_fmt(v) for v in row))
    resolved = {"ages": ages, "pools": pools, "confidences": confidences,
                "grid": int(cfg["grid"]), "rate": float(cfg["rate"]),
                "mu": echo_model.mu, "sigma": echo_model.sigma,
                "withdrawal": str(cfg["withdrawal"])}
    _write_manifest(cfg["out"], "frontier", resolved, [path], started)
    return EXIT_OK


def cmd_pool_benefit(args):
    cfg = _resolve(args)
    a_top = int(cfg["pool_max"])
    if a_top < 1:
        raise CliError("--pool-max must be at least 1")
    os.makedirs(cfg["out"], exist_ok=True)
    started = time.strftime("%Y-%m-%dT%H:%M:%S%z")

    sub = dict(cfg)
    sub["pool"] = a_top
    _, coh, model, plan = _build_inputs(sub)
    solved = solve(plan, coh, model, _solver_config(cfg, a_top),
                   threads=int(cfg["threads"]), progress=_progress("pool-benefit"))

    # Stage-0 rows align per capita across pool sizes: node j of pool a sits
    # at per-capita wealth j * m[1,0] / M for every a.
    v0 = solved.value.v[0]
    rows = []
    for a in range(1, a_top + 1):
        gap = float(np.max(v0[a] - v0[1]))
        if a == 1:
            rows.append((a, 0.0, "", ""))
            continue
        inc = float(np.max(v0[a] - v0[a - 1]))
        rows.append((a, gap, inc, np.log10(inc) if inc > 0 else ""))

    path = os.path.join(cfg["out"], "pool_benefit.csv")
    _write_csv(path, ["a", "max_gap_vs_1", "increment_vs_prev", "log10_increment"],
               rows)
    for row in rows:
        print(",".join(_fmt(v) for v in row))
    resolved = _resolved_echo(cfg, coh, model, plan, {"pool_max": a_top})
    _write_manifest(cfg["out"], "pool-benefit", resolved, [path], started)
    return EXIT_OK


def cmd_sensitivity(args):
    cfg = _resolve(args)
    mus = _parse_list(cfg["mu_list"], float)
    sigmas = _parse_list(cfg["sigma_list"], float)
    os.makedirs(cfg["out"], exist_ok=True)
    started = time.strftime("%Y-%m-%dT%H:%M:%S%z")

    _, coh, base_model, plan = _build_inputs(cfg)
    scfg = _solver_config(cfg, plan.A0)
    baseline = solve(plan, coh, base_model, scfg, threads=int(cfg["threads"]),
                     progress=_progress("sensitivity baseline"))
    sim_cfg = SimConfig(paths=int(cfg["paths"]), seed=int(cfg["seed"]),
                        threads=int(cfg["threads"]))

    rows = []
    for mu in mus:
        for sigma in sigmas:
            perturbed = ReturnModel(mu=mu, sigma=sigma, r=plan.r)
            solved = solve(plan, coh, perturbed, scfg,
                           threads=int(cfg["threads"]))
            v0 = solved.success_probability()
            est, se = simulate_success_probability(plan, coh, perturbed,
                                                   baseline.policy, sim_cfg)
            rows.append((mu, sigma, v0, est, se, abs(v0 - est)))
            print(",".join(_fmt(v) for v in rows[-1]))

    path = os.path.join(cfg["out"], "sensitivity.csv")
    _write_csv(path, ["mu", "sigma", "v0_solved", "baseline_policy_estimate",
                      "standard_error", "abs_gap"], rows)
    resolved = _resolved_echo(cfg, coh, base_model, plan,
                              {"mu_list": mus, "sigma_list": sigmas,
                               "paths": sim_cfg.paths, "seed": sim_cfg.seed})
    _write_manifest(cfg["out"], "sensitivity", resolved, [path], started)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pooled-annuity",
        description="Withdrawal-success optimization for closed pooled annuity funds")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="backward induction; writes grids and summary")
    _add_common_flags(p)
    p.add_argument("--a-max", type=int, default=None,
                   help="largest pool size to solve (default: --pool)")
    p.add_argument("--all-annuitants", action="store_true",
                   help="maximize the probability that every member completes")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("simulate", help="forward Monte-Carlo under a policy")
    _add_common_flags(p)
    p.add_argument("--policy", default=None, help="grids.npz from solve")
    p.add_argument("--constant-q", type=float, default=None,
                   help="constant stock weight in [0, 1]")
    p.add_argument("--paths", type=int, default=None, help="path count (default 100000)")
    p.add_argument("--seed", type=int, default=None, help="random seed (default 0)")
    p.add_argument("--all-annuitants", action="store_true",
                   help="estimate the all-member success probability")
    p.add_argument("--check-liquidity", action="store_true",
                   help="also verify the solo-vs-pool solvency bound per path")
    p.add_argument("--trace", type=int, default=None,
                   help="write per-stage state for the first N paths")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("frontier",
                       help="required contribution P* per (age, pool, confidence)")
    _add_common_flags(p)
    p.add_argument("--ages", required=True, help="comma-separated starting ages")
    p.add_argument("--pools", required=True, help="comma-separated pool sizes")
    p.add_argument("--confidence", required=True,
                   help="comma-separated confidence levels in (0, 1)")
    p.set_defaults(func=cmd_frontier)

    p = sub.add_parser("pool-benefit",
                       help="value gained by pooling vs investing alone")
    _add_common_flags(p)
    p.add_argument("--pool-max", type=int, required=True,
                   help="largest pool size to tabulate")
    p.set_defaults(func=cmd_pool_benefit)

    p = sub.add_parser("sensitivity",
                       help="solved value and baseline-policy estimate over a mu/sigma grid")
    _add_common_flags(p)
    p.add_argument("--mu-list", required=True, help="comma-separated means")
    p.add_argument("--sigma-list", required=True, help="comma-separated sds")
    p.add_argument("--paths", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_sensitivity)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (LifeTableError, MarketDataError, SimulationError, ValueError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (SolverError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
