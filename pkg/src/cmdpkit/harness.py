"""Config-driven experiment runner with reproducible artifacts.

TOML configs select an experiment kind and its parameters; every run
writes a trail CSV (one row per iteration), a summary JSON, and
plot-ready CSVs into the output directory.  Runs are deterministic per
seed: repeating a command must reproduce the artifacts byte for byte.

The module also carries the two analysis checks used by the release
criteria: an OLS fit of running-average cost against the schedule's
theoretical rate, and the convergence-bound envelope check on exact
small instances.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import core, decomposition as dc, fixtures, inventory as inv
from . import oracle, primal_dual as pd, queueing as qu, sampling

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CHECK = 3

EXPERIMENT_KINDS = ("inventory", "queue", "random-cmdp", "oracle-check",
                    "theorem-check")
SUMMARY_SCHEMA = "run-summary-v1"


class ConfigError(Exception):
    """Invalid or missing experiment configuration."""


# ---------------------------------------------------------------------------
# Rate regression


@dataclass
class RateFit:
    slope: float
    intercept: float
    r_squared: float


def rate_regression(values, regime: str, minimum_length: int = 50) -> RateFit:
    """OLS of running-average cost against the schedule's decay rate.

    values: running averages indexed by iteration (T = index + 1).  The
    regressor is 1/T for the constant regime and 1/sqrt(T) for the
    decreasing one, fitted over the last 80% of the trail so transients
    do not dominate.
    """
    if regime not in ("constant", "inverse_sqrt"):
        raise ValueError(f"unknown regime {regime!r}")
    if len(values) and hasattr(values[0], "running_avg_objective"):
        values = [rec.running_avg_objective for rec in values]
    y = np.asarray(values, dtype=float)
    if y.ndim != 1 or y.size < minimum_length:
        raise ValueError(f"need a trail of at least {minimum_length} iterations")
    horizon = np.arange(1.0, y.size + 1.0)
    start = int(math.floor(0.2 * y.size))
    y = y[start:]
    horizon = horizon[start:]
    x = 1.0 / horizon if regime == "constant" else 1.0 / np.sqrt(horizon)
    design = np.column_stack([np.ones_like(x), x])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ coef
    ss_res = float((resid ** 2).sum())
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return RateFit(slope=float(coef[1]), intercept=float(coef[0]), r_squared=r2)


# ---------------------------------------------------------------------------
# Convergence-bound envelope


@dataclass
class TheoremCheckRow:
    horizon: int
    regime: str
    quantity: str
    measured: float
    bound: float
    ok: bool


@dataclass
class TheoremCheckReport:
    rows: list
    constants: dict

    @property
    def passed(self) -> bool:
        return all(row.ok for row in self.rows)

    def failures(self) -> list:
        return [(r.horizon, r.quantity, r.measured, r.bound)
                for r in self.rows if not r.ok]


def _a_priori_g(cmdp: core.TabularCMDP, ball_radius: float) -> float:
    """Constant dominating every |Q| value and subgradient norm on the ball.

    Normalized values are convex combinations of stage costs, so the
    worst modified cost over admissible pairs bounds |Q|; the subgradient
    norm is bounded by the worst per-pair link deviation.
    """
    mask = cmdp.mask()
    base = float(np.abs(cmdp.cost[mask]).max())
    dev = cmdp.aux_costs - cmdp.thresholds[:, None, None]
    dev_norm = float(np.sqrt((dev ** 2).sum(axis=0))[mask].max())
    return base + ball_radius * dev_norm


def theorem_check(cmdp: core.TabularCMDP, schedule: pd.StepSchedule,
                  horizons=(100, 1000, 10000), *,
                  slater_policy=None, dual_radius=None,
                  tolerance: float = 1e-9) -> TheoremCheckReport:
    """Exact run with prefix snapshots checked against the stated bounds.

    One run at the largest horizon supplies every prefix: the averaged
    policy's violation and optimality gap at each T must respect the
    bound triple (violation, gap upper, gap lower).
    """
    horizons = sorted(int(t) for t in horizons)
    sol = oracle.solve_lp(cmdp)
    if sol.status != "optimal":
        raise ValueError(f"reference solve failed: {sol.status}")
    lambda_star = float(np.linalg.norm(sol.lambda_star))

    config = pd.SolverConfig(
        schedule=schedule, iterations=horizons[-1], evaluator="exact",
        slater_policy=slater_policy, dual_radius=dual_radius,
    )
    result = pd.run(cmdp, config)
    m_ball = result.diagnostics["dual_radius_m"]
    slack = result.diagnostics["dual_slack"]

    phi0 = core.weighted_kl(cmdp, sol.policy, sol.policy,
                            core.uniform_policy(cmdp))
    kappa1, kappa2 = (math.nan, math.nan)
    if schedule.kind == "inverse_sqrt":
        kappa1, kappa2 = pd.schedule_kappas(schedule, horizons)
    constants = pd.TheoremConstants(
        g_bound=_a_priori_g(cmdp, m_ball + slack), phi0=phi0,
        discount=cmdp.discount, kappa1=kappa1, kappa2=kappa2,
        lambda_star_norm=lambda_star, lambda0_norm=0.0,
    )

    rows = []
    for T in horizons:
        record = result.trail[T - 1]
        bounds = pd.theorem1_bounds(constants, schedule, T, slack)
        viol = record.running_violation
        gap = record.running_avg_objective - sol.c_star
        rows.append(TheoremCheckRow(
            T, schedule.kind, "violation", viol, bounds.violation,
            viol <= bounds.violation + tolerance))
        rows.append(TheoremCheckRow(
            T, schedule.kind, "gap_upper", gap, bounds.gap_upper,
            gap <= bounds.gap_upper + tolerance))
        rows.append(TheoremCheckRow(
            T, schedule.kind, "gap_lower", gap, bounds.gap_lower,
            gap >= bounds.gap_lower - tolerance))
    return TheoremCheckReport(rows=rows, constants={
        "g_bound": constants.g_bound, "phi0": phi0,
        "lambda_star_norm": lambda_star, "kappa1": kappa1, "kappa2": kappa2,
        "dual_radius_m": m_ball, "optimal_cost": sol.c_star,
    })


# ---------------------------------------------------------------------------
# Artifact writers


def _fmt(x) -> str:
    return format(float(x), ".17g")


def trail_columns(n_constraints: int) -> list:
    cols = ["m", "eta"]
    cols += [f"lambda_{k + 1}" for k in range(n_constraints)]
    cols += ["objective"]
    cols += [f"D_{k + 1}" for k in range(n_constraints)]
    cols += ["running_avg_objective", "running_violation", "se_objective",
             "running_violation_periter"]
    return cols


def write_trail_csv(path, trail) -> None:
    n_constraints = len(np.atleast_1d(trail[0].lam))
    lines = [",".join(trail_columns(n_constraints))]
    for rec in trail:
        row = [str(rec.m), _fmt(rec.eta)]
        row += [_fmt(v) for v in np.atleast_1d(rec.lam)]
        row.append(_fmt(rec.objective))
        row += [_fmt(v) for v in np.atleast_1d(rec.constraint_vals)]
        row += [_fmt(rec.running_avg_objective), _fmt(rec.running_violation),
                _fmt(rec.se_objective), _fmt(rec.running_violation_periter)]
        lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_rate_csv(path, trail) -> None:
    """Plot-ready decay curves: running averages against 1/T and 1/sqrt(T)."""
    lines = ["T,inv_T,inv_sqrt_T,running_avg_objective,running_violation"]
    for rec in trail:
        t = rec.m + 1
        lines.append(",".join([
            str(t), _fmt(1.0 / t), _fmt(1.0 / math.sqrt(t)),
            _fmt(rec.running_avg_objective), _fmt(rec.running_violation),
        ]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_summary_json(path, payload: dict) -> None:
    payload = dict(payload)
    payload.setdefault("schema", SUMMARY_SCHEMA)
    Path(path).write_text(
        json.dumps(payload, indent=2, sort_keys=True, default=_jsonify) + "\n",
        encoding="utf-8",
    )


def _jsonify(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj)!r}")


# ---------------------------------------------------------------------------
# Experiment configs


@dataclass
class ExperimentConfig:
    kind: str
    seed: int
    params: dict
    name: str = "experiment"

    def __post_init__(self):
        if self.kind not in EXPERIMENT_KINDS:
            raise ConfigError(
                f"unknown experiment kind {self.kind!r}; "
                f"expected one of {', '.join(EXPERIMENT_KINDS)}")
        if self.seed is None:
            raise ConfigError("experiment.seed is required; runs never "
                              "draw seeds from the clock")
        self.seed = int(self.seed)
        if not isinstance(self.params, dict):
            raise ConfigError("experiment parameters must be a table")


def load_config(path, seed_override=None) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
    exp = data.get("experiment")
    if not isinstance(exp, dict) or "kind" not in exp:
        raise ConfigError(f"{path} needs an [experiment] table with a 'kind'")
    seed = seed_override if seed_override is not None else exp.get("seed")
    if seed is None:
        raise ConfigError(f"{path} sets no experiment.seed and no --seed "
                          "was given")
    kind = str(exp["kind"])
    params = data.get(kind.replace("-", "_"), {})
    return ExperimentConfig(kind=kind, seed=seed, params=params,
                            name=path.stem)


def _schedule_from(params: dict, default_kind="constant",
                   default_base=0.2) -> pd.StepSchedule:
    return pd.StepSchedule(
        str(params.get("schedule", default_kind)),
        float(params.get("step", default_base)),
    )


def run_experiment(config: ExperimentConfig, out_dir, workers=None) -> dict:
    """Dispatch a configured experiment and write its artifacts."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    runner = {
        "inventory": _run_inventory,
        "queue": _run_queue,
        "random-cmdp": _run_random_cmdp,
        "oracle-check": _run_oracle_check,
        "theorem-check": _run_theorem_check,
    }[config.kind]
    summary = runner(config, out, workers)
    summary.update({"kind": config.kind, "seed": config.seed,
                    "name": config.name})
    write_summary_json(out / "summary.json", summary)
    return summary


def _run_inventory(config: ExperimentConfig, out: Path, workers) -> dict:
    p = config.params
    variant = p.get("variant", "reference")
    if variant == "reference":
        inv_cfg = inv.reference_config()
    elif variant == "reduced":
        inv_cfg = inv.reduced_config(budget=float(p.get("budget", 10.0)))
    else:
        raise ConfigError(f"unknown inventory variant {variant!r}")
    schedule = _schedule_from(p)
    iterations = int(p.get("iterations", 500))
    mc = sampling.MCConfig(
        replications=int(p.get("replications", 400)),
        horizon=int(p.get("horizon", 40)),
        seed=config.seed,
        chunk_size=int(p.get("chunk_size", 400)),
        workers=workers,
    )
    result, summary = inv.run_reference_experiment(
        schedule=schedule, seed=config.seed, iterations=iterations,
        config=inv_cfg, mc=mc, workers=workers)
    write_trail_csv(out / "trail.csv", result.trail)
    write_rate_csv(out / "rate.csv", result.trail)
    fit = rate_regression(result.trail, schedule.kind)
    summary["rate_fit"] = {"slope": fit.slope, "intercept": fit.intercept,
                           "r_squared": fit.r_squared}
    return summary


def _run_queue(config: ExperimentConfig, out: Path, workers) -> dict:
    p = config.params
    scale = p.get("scale", "scaled")
    regime = p.get("regime", "large")
    if scale == "scaled":
        queue_cfg = qu.scaled_config(regime=regime)
        defaults = dict(iterations=10, eval_replications=200)
    elif scale == "reference":
        queue_cfg = qu.reference_config(
            discount=float(p.get("discount", 0.99)), regime=regime)
        defaults = dict(iterations=30, eval_replications=500)
    else:
        raise ConfigError(f"unknown queue scale {scale!r}")
    exp = qu.QueueExperimentConfig(
        iterations=int(p.get("iterations", defaults["iterations"])),
        step_size=float(p.get("step", 0.1)),
        n_states=int(p.get("n_states", 1000)),
        q_replications=int(p.get("q_replications", 1)),
        load_replications=int(p.get("load_replications", 100)),
        seed=config.seed,
        workers=workers or 1,
    )
    result = qu.run_queue_experiment(queue_cfg, exp)
    write_trail_csv(out / "trail.csv", result.trail)
    write_rate_csv(out / "rate.csv", result.trail)

    reps = int(p.get("eval_replications", defaults["eval_replications"]))
    evals = {}
    pd_eval = qu.evaluate_joint(
        queue_cfg, qu.PolicyActor(queue_cfg, result.policies), reps,
        config.seed, context="eval/primal_dual")
    evals["primal_dual"] = pd_eval
    for kind in ("service_value", "pressure"):
        evals[kind] = qu.evaluate_joint(
            queue_cfg, qu.BenchmarkActor(queue_cfg, kind), reps,
            config.seed, context=f"eval/{kind}")

    scan_rows = ["class,primary_busy,threshold"]
    for cls in range(queue_cfg.n_classes):
        levels = list(range(int(queue_cfg.pool_sizes[cls]) + 1))
        scan = qu.threshold_scan(queue_cfg, result.policies[cls], cls, levels)
        for z, th in zip(levels, scan):
            scan_rows.append(f"{cls},{z},{_fmt(th)}")
    (out / "thresholds.csv").write_text("\n".join(scan_rows) + "\n",
                                        encoding="utf-8")
    return {
        "scale": scale, "regime": regime,
        "iterations": exp.iterations,
        "eval_replications": reps,
        "evaluations": {
            name: {"mean": ev.mean, "se": ev.se,
                   "hard_violations": ev.hard_violations}
            for name, ev in evals.items()
        },
        "final_lambda": result.trail[-1].lam,
    }


def _random_fixture(config: ExperimentConfig):
    p = config.params
    rng = np.random.default_rng(config.seed)
    return fixtures.random_cmdp(
        rng,
        n_states=int(p.get("n_states", 5)),
        n_actions=int(p.get("n_actions", 3)),
        n_constraints=int(p.get("n_constraints", 2)),
        slater_margin=float(p.get("slater_margin", 0.15)),
        discount=p.get("discount"),
    )


def _run_random_cmdp(config: ExperimentConfig, out: Path, workers) -> dict:
    p = config.params
    cmdp = _random_fixture(config)
    schedule = _schedule_from(p)
    iterations = int(p.get("iterations", 200))
    evaluator = p.get("evaluator", "exact")
    mc = None
    if evaluator == "mc":
        mc = sampling.MCConfig(
            replications=int(p.get("replications", 200)),
            horizon=int(p.get("horizon", 60)),
            seed=config.seed, workers=workers)
    solver = pd.SolverConfig(
        schedule=schedule, iterations=iterations, seed=config.seed,
        evaluator=evaluator, mc=mc,
        slater_policy=core.uniform_policy(cmdp))
    result = pd.run(cmdp, solver)
    write_trail_csv(out / "trail.csv", result.trail)
    write_rate_csv(out / "rate.csv", result.trail)
    last = result.trail[-1]
    return {
        "iterations": iterations,
        "schedule": {"kind": schedule.kind, "base": schedule.base},
        "final_running_avg_objective": last.running_avg_objective,
        "final_running_violation": last.running_violation,
        "lambda_bar": result.lambda_bar,
        "diagnostics": result.diagnostics,
    }


def _run_oracle_check(config: ExperimentConfig, out: Path, workers) -> dict:
    p = config.params
    tol = float(p.get("tolerance", 1e-7))
    cmdp = _random_fixture(config)
    sol = oracle.solve_lp(cmdp)
    slack_problems = oracle.check_complementary_slackness(sol, tol)
    run_cfg = pd.SolverConfig(
        schedule=pd.StepSchedule("constant", 0.2),
        iterations=int(p.get("iterations", 4000)), evaluator="exact",
        slater_policy=core.uniform_policy(cmdp))
    result = pd.run(cmdp, run_cfg)
    gap = result.trail[-1].running_avg_objective - sol.c_star
    passed = bool(sol.status == "optimal" and not slack_problems
                  and gap >= -1e-6)
    return {
        "status": sol.status,
        "optimal_cost": sol.c_star,
        "optimal_cost_unnormalized": sol.c_star_unnormalized,
        "lambda_star": sol.lambda_star,
        "slackness_problems": slack_problems,
        "iterative_gap_after_run": gap,
        "passed": passed,
    }


def _run_theorem_check(config: ExperimentConfig, out: Path, workers) -> dict:
    p = config.params
    horizons = [int(t) for t in p.get("horizons", [100, 1000, 10000])]
    regimes = p.get("regimes", ["constant", "inverse_sqrt"])
    base = float(p.get("step", 0.2))
    cmdp = _random_fixture(config)
    rows = []
    constants = {}
    for regime in regimes:
        report = theorem_check(
            cmdp, pd.StepSchedule(regime, base), horizons,
            slater_policy=core.uniform_policy(cmdp))
        rows.extend(report.rows)
        constants[regime] = report.constants
    lines = ["horizon,regime,quantity,measured,bound,ok"]
    lines += [
        f"{r.horizon},{r.regime},{r.quantity},{_fmt(r.measured)},"
        f"{_fmt(r.bound)},{int(r.ok)}"
        for r in rows
    ]
    (out / "bounds.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return {
        "horizons": horizons,
        "constants": constants,
        "failures": [(r.horizon, r.regime, r.quantity, r.measured, r.bound)
                     for r in rows if not r.ok],
        "passed": bool(all(r.ok for r in rows)),
    }


# ---------------------------------------------------------------------------
# Command line


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cmdpkit",
        description="Constrained-MDP primal-dual experiment runner",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute a TOML-configured experiment")
    run_p.add_argument("--config", required=True, help="path to a TOML config")
    run_p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
    run_p.add_argument("--out", default=None,
                       help="artifact directory (default artifacts/<name>)")
    run_p.add_argument("--workers", type=int, default=None,
                       help="worker threads (default CMDP_PD_WORKERS or 1)")

    accept_names = [
        ("accept-lp-reference", "reference LP optimum and runtime"),
        ("accept-inventory-reproduction", "stochastic two-product runs"),
        ("accept-rate-regression", "running-average decay-rate fits"),
        ("accept-theorem-envelope", "convergence bounds on random fixtures"),
        ("accept-invariants", "module invariant property suites"),
        ("accept-queue-scaled", "scaled scheduling protocol"),
        ("accept-decomposition", "decomposed vs joint trail equality"),
    ]
    for name, help_text in accept_names:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--out", default=None)
    all_p = sub.add_parser("accept-all", help="run every release criterion")
    all_p.add_argument("--out", default=None)

    ref_p = sub.add_parser(
        "accept-queue-reference",
        help="full-size scheduling tables (long-running, optional)")
    ref_p.add_argument("--regime", choices=["large", "small"], default="large")
    ref_p.add_argument("--seed", type=int, default=7)
    ref_p.add_argument("--out", default=None)
    return parser


def _cmd_run(args) -> int:
    config = load_config(args.config, seed_override=args.seed)
    out = args.out or Path("artifacts") / config.name
    workers = args.workers if args.workers is not None else sampling.env_workers()
    summary = run_experiment(config, out, workers=workers)
    print(f"wrote artifacts to {out}")
    if summary.get("passed") is False:
        return EXIT_CHECK
    return EXIT_OK


def _report_lines(reports) -> int:
    failed = False
    for report in reports:
        for line in report.lines:
            print(line)
        failed = failed or not report.passed
    return EXIT_CHECK if failed else EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    from . import acceptance

    try:
        if args.command == "run":
            return _cmd_run(args)
        out = Path(args.out) if args.out else None
        if args.command == "accept-all":
            return _report_lines(acceptance.run_all(out_dir=out))
        if args.command == "accept-queue-reference":
            report = acceptance.queue_reference(
                regime=args.regime, seed=args.seed, out_dir=out)
            return _report_lines([report])
        runner = {
            "accept-lp-reference": acceptance.lp_reference,
            "accept-inventory-reproduction": acceptance.inventory_reproduction,
            "accept-rate-regression": acceptance.rate_confirmation,
            "accept-theorem-envelope": acceptance.theorem_envelope,
            "accept-invariants": acceptance.invariant_suites,
            "accept-queue-scaled": acceptance.queue_scaled,
            "accept-decomposition": acceptance.decomposition_equivalence,
        }[args.command]
        return _report_lines([runner(out_dir=out)])
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
