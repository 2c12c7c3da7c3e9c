"""
Command-line entry point: ``skygp bench|control|selfcheck``.

Exit codes are 0 on success, 1 on a numerical failure and 2 on a
configuration or I/O problem.  Errors are reported on standard error as a
single ``error[<kind>]: <message>`` line.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from skygp import _kernels, bench, selfcheck
from skygp.config import ConfigError, RunConfig, resolve
from skygp.control import TRAJECTORY_COLUMNS, LyapunovError, SimulationFailure, monte_carlo
from skygp.expert import NumericalDegeneracyError
from skygp.kernel import Hyperparameters

EXIT_OK = 0
EXIT_NUMERICAL = 1
EXIT_CONFIG = 2


def _fail(kind: str, message: str, code: int) -> int:
    print(f"error[{kind}]: {message}", file=sys.stderr)
    return code


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        json.dump(obj, fh, indent=2, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------


def load_dataset(cfg: RunConfig) -> bench.Dataset:
    ds = cfg.dataset
    if ds.get("path"):
        pretrain = ds["pretrain_count"] if ds["pretrain_count"] is not None else 1000
        return bench.load_csv(ds["path"], ds["target_column"], bool(ds["normalize"]), int(pretrain))
    syn = ds["synthetic"]
    seed = syn["seed"] if syn["seed"] is not None else cfg.seed
    return bench.synthetic_stream(
        syn["kind"], int(syn["n"]), seed=int(seed), noise_dev=float(syn["noise_dev"]),
        dim=syn["dim"], pretrain_count=ds["pretrain_count"],
    )


def default_hyperparameters(data: bench.Dataset) -> Hyperparameters:
    """Used when the config has no kernel section."""
    if "hyperparameters" in data.meta:
        return Hyperparameters.from_dict(data.meta["hyperparameters"])
    sd = float(np.std(data.y[: data.pretrain_count])) or 1.0
    return Hyperparameters(np.ones(data.dim), sd, 0.1 * sd)


def cmd_bench(cfg: RunConfig) -> int:
    data = load_dataset(cfg)
    h = cfg.hyperparameters or default_hyperparameters(data)
    if h.dim != data.dim:
        raise ConfigError(f"kernel has {h.dim} lengthscales but the dataset has {data.dim} features")
    echo = cfg.echo()
    echo["kernel"] = h.to_dict()
    echo["dataset"]["resolved"] = {"name": data.name, "n": data.n, "dim": data.dim,
                                   "pretrain_count": data.pretrain_count}
    out = cfg.output_dir
    per_step = bool(cfg.raw["output"]["per_step"])
    report = bench.run_stream(data, h, cfg.pool, bound=cfg.bound, per_step=per_step, config_echo=echo)
    _write_json(out / "report.json", report.to_dict())
    if per_step:
        bench.write_per_step_csv(report, out / "per_step.csv")
    print(f"{data.name}: smse={report.smse:.6g} msll={report.msll:.6g} "
          f"t_pred={report.mean_pred_time * 1e6:.1f}us t_up={report.mean_update_time * 1e6:.1f}us "
          f"experts={report.n_experts}")
    if cfg.raw["output"]["compare"]:
        rows = bench.compare_modes(data, h, cfg.pool)
        table = bench.format_table(rows)
        (out / "compare.txt").write_text(table + "\n")
        bench.write_table_csv(rows, out / "compare.csv")
        print(table)
    if not report.complete:
        return _fail("numerical", report.error or "stream aborted", EXIT_NUMERICAL)
    return EXIT_OK


# ---------------------------------------------------------------------------
# control
# ---------------------------------------------------------------------------


def _write_trajectory(path: Path, traj: np.ndarray) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRAJECTORY_COLUMNS)
        for row in traj:
            w.writerow([repr(float(v)) if math.isfinite(v) else "nan" for v in row])


def cmd_control(cfg: RunConfig) -> int:
    try:
        cfg.controller.P
    except LyapunovError as exc:
        raise ConfigError(f"Lyapunov failure for gains k_p={cfg.controller.k_p}, k_d={cfg.controller.k_d}: {exc}") from None
    ctl = cfg.control
    h = cfg.hyperparameters
    learning = ctl["learning"]
    n_trials = int(ctl["n_trials"])
    out = cfg.output_dir
    max_experts = None
    if ctl["max_total_points"] is not None:
        max_experts = int(ctl["max_total_points"]) // cfg.pool.capacity
    variants = ctl["variants"] if learning == "gp" else [learning]
    combined = {"config": cfg.echo(), "variants": {}}
    for variant in variants:
        pool_cfg = None
        if learning == "gp":
            pool_cfg = replace(cfg.pool, mode=variant, max_experts=max_experts)
        record = bool(ctl["record"])

        def dump(i, res, variant=variant):
            if record and res.trajectory is not None:
                _write_trajectory(out / f"trials_{variant}" / f"trial_{i:03d}.csv", res.trajectory)

        summary = monte_carlo(n_trials, cfg.seed, cfg.controller, pool_cfg, h, learning,
                              bound=cfg.bound, record=record, duration=ctl["duration"], on_trial=dump)
        d = summary.to_dict()
        d["config"] = cfg.echo()
        d["config"]["pool"] = pool_cfg.to_dict() if pool_cfg is not None else None
        _write_json(out / f"summary_{variant}.json", d)
        combined["variants"][variant] = {
            "median_max_tracking_err": summary.median_tracking,
            "median_max_pred_err": summary.median_prediction,
            "fraction_bounded": summary.fraction_bounded,
            "fraction_within_ultimate_bound": summary.fraction_within_ultimate_bound,
        }
        print(f"{variant}: trials={n_trials} median max|z|={summary.median_tracking:.4g} "
              f"median max|f-mu|={summary.median_prediction:.4g} bounded={summary.fraction_bounded:.0%}")
        if any(r.diverged for r in summary.trials):
            _write_json(out / "control_summary.json", combined)
            return _fail("numerical", f"{variant}: a trial diverged", EXIT_NUMERICAL)
    _write_json(out / "control_summary.json", combined)
    return EXIT_OK


# ---------------------------------------------------------------------------
# selfcheck
# ---------------------------------------------------------------------------


def cmd_selfcheck(seed: int = 0) -> int:
    print(f"backend: {_kernels.BACKEND_NAME}")
    results = selfcheck.run_all(seed)
    print(selfcheck.format_results(results))
    if selfcheck.all_passed(results):
        return EXIT_OK
    failed = ", ".join(r.name for r in results if not r.passed)
    return _fail("selfcheck", f"failed checks: {failed}", EXIT_NUMERICAL)


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="YAML run configuration")
    p.add_argument("--mode", choices=("fast", "dense"))
    p.add_argument("--max-agg", type=int, help="experts aggregated per query")
    p.add_argument("--max-points", type=int, help="per-expert capacity")
    p.add_argument("--window", type=int, help="maximum search half-width")
    p.add_argument("--agg", choices=("moe", "poe", "gpoe", "bcm", "rbcm"))
    p.add_argument("--gamma", type=float, help="recency decay factor")
    p.add_argument("--theta-bar", type=float, help="recency threshold")
    p.add_argument("--rho", type=float, help="window scale")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="skygp", description="Streaming GP expert pool tools")
    sub = parser.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bench", help="sequential regression benchmark")
    _common(b)
    b.add_argument("--dataset", help="CSV file; overrides dataset.path")
    b.add_argument("--per-step", action="store_true", default=None, help="write per-step CSV")
    b.add_argument("--compare", action="store_true", default=None, help="also run the 6-variant table")

    c = sub.add_parser("control", help="closed-loop Monte Carlo simulation")
    _common(c)
    c.add_argument("--n-trials", type=int)
    c.add_argument("--variant", help="comma-separated pool modes, e.g. fast,dense")
    c.add_argument("--learning", choices=("gp", "none", "oracle"))
    c.add_argument("--duration", type=float, help="horizon in seconds")

    s = sub.add_parser("selfcheck", help="fast invariant suite")
    s.add_argument("--seed", type=int, default=0)
    return parser


OVERRIDE_ARGS = ("mode", "max_agg", "max_points", "window", "agg", "gamma", "theta_bar", "rho",
                 "seed", "out", "per_step", "compare", "n_trials", "variant", "learning",
                 "duration", "dataset")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "selfcheck":
        return cmd_selfcheck(args.seed)
    overrides = {k: getattr(args, k) for k in OVERRIDE_ARGS if hasattr(args, k)}
    try:
        cfg = resolve(args.command, args.config, overrides)
        if args.command == "bench":
            return cmd_bench(cfg)
        return cmd_control(cfg)
    except (ConfigError, bench.DataLoadError, bench.DegenerateNormalizerError) as exc:
        return _fail("config", str(exc), EXIT_CONFIG)
    except OSError as exc:
        return _fail("io", str(exc), EXIT_CONFIG)
    except (NumericalDegeneracyError, SimulationFailure, FloatingPointError) as exc:
        return _fail("numerical", str(exc), EXIT_NUMERICAL)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
