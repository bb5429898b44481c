"""Command line front end: ``fnmiss estimate | simulate | bands``.

Options can come from a JSON config file (``--config``); flags given on the
command line override file values. Exit codes: 0 success, 2 bad input or
schema, 3 estimation failure, 4 too many failed simulation replicates.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from fnmiss import __version__
from fnmiss.bands import build_pcb, build_scb, equal_partition
from fnmiss.estimators import estimate_cc, estimate_dr, estimate_or
from fnmiss.exceptions import (
    EstimationError,
    FailureRateExceeded,
    FnmissError,
    ValidationError,
)
from fnmiss.io import (
    read_dataset,
    read_saved_estimate,
    write_curve_table,
    write_dataset,
    write_json,
    write_rows,
    write_saved_estimate,
)
from fnmiss.model import covariate_moments
from fnmiss.nuisance import PropensityModel, fit_logistic, fit_ols
from fnmiss.simulation import (
    BAND_KINDS,
    ERROR_KINDS,
    ESTIMATORS,
    MISSPEC_SCENARIOS,
    MaternParams,
    SimConfig,
    replicate_data,
    run_grid,
)

log = logging.getLogger("fnmiss")

EXIT_INPUT = 2
EXIT_ESTIMATION = 3
EXIT_FAILURE_RATE = 4

# every key a config file may set, with its default
DEFAULTS: Dict[str, Any] = {
    "seed": 20240101,
    "threads": None,
    "out_dir": ".",
    "alpha": 0.05,
    "partition": None,
    "estimators": list(ESTIMATORS),
    "drop_outcome": [],
    "drop_propensity": [],
    "n": [250, 500, 1000, 3000],
    "reps": 1000,
    "T": 50,
    "error_kind": ["gaussian"],
    "misspec": list(MISSPEC_SCENARIOS),
    "calibrate_missingness": False,
    "redraw_q_per_replicate": False,
    "phi": 0.1,
    "nu": 4.0,
    "max_failure_rate": 0.01,
    "export_dataset": None,
    "output": None,
}


class ConfigError(ValidationError):
    pass


def _csv_list(kind):
    def parse(text: str):
        try:
            return [kind(v) for v in text.split(",") if v.strip() != ""]
        except ValueError:
            raise argparse.ArgumentTypeError(f"cannot parse {text!r} as a comma list") from None

    return parse


def _partition_arg(text: str):
    """``"4"`` for four equal intervals, ``"0,0.3,1"`` for explicit edges."""
    parts = [v for v in text.split(",") if v.strip() != ""]
    try:
        if len(parts) == 1:
            return int(parts[0])
        return [float(v) for v in parts]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad partition {text!r}") from None


def _resolve_partition(value) -> Optional[list]:
    if value is None:
        return None
    if isinstance(value, bool):
        raise ConfigError("partition must be an interval count or a list of edges")
    if isinstance(value, int):
        return equal_partition(value)
    edges = [float(v) for v in value]
    if len(edges) < 2:
        raise ConfigError("partition needs at least two edges")
    return [(a, b) for a, b in zip(edges[:-1], edges[1:])]


def load_config(path: Optional[str]) -> Dict[str, Any]:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    unknown = sorted(set(data) - set(DEFAULTS))
    if unknown:
        raise ConfigError(f"{path}: unknown config keys: {', '.join(unknown)}")
    return data


def _check_types(opts: Dict[str, Any]) -> None:
    def expect(key, ok, what):
        if not ok:
            raise ConfigError(f"{key} must be {what}, got {opts[key]!r}")

    def is_int(v):
        return isinstance(v, (int, np.integer)) and not isinstance(v, bool)

    def is_num(v):
        return isinstance(v, (int, float)) and not isinstance(v, bool)

    expect("seed", is_int(opts["seed"]) and opts["seed"] >= 0, "a non-negative integer")
    expect("threads", opts["threads"] is None or (is_int(opts["threads"]) and opts["threads"] >= 1),
           "a positive integer")
    expect("alpha", is_num(opts["alpha"]), "a number")
    for key in ("reps", "T"):
        expect(key, is_int(opts[key]), "an integer")
    for key in ("phi", "nu", "max_failure_rate"):
        expect(key, is_num(opts[key]), "a number")
    for key in ("calibrate_missingness", "redraw_q_per_replicate"):
        expect(key, isinstance(opts[key], bool), "true or false")
    for key in ("n", "drop_outcome", "drop_propensity"):
        expect(key, isinstance(opts[key], list) and all(is_int(v) for v in opts[key]),
               "a list of integers")
    for key, allowed in (("estimators", ESTIMATORS), ("error_kind", ERROR_KINDS),
                         ("misspec", MISSPEC_SCENARIOS)):
        vals = opts[key]
        expect(key, isinstance(vals, list) and vals and all(v in allowed for v in vals),
               f"a non-empty list drawn from {list(allowed)}")


def resolve_options(args: argparse.Namespace) -> Dict[str, Any]:
    """Merge defaults, config file and flags, in increasing priority."""
    opts = dict(DEFAULTS)
    opts.update(load_config(args.config))
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            opts[key] = value
    if opts["threads"] is None:
        env = os.environ.get("FNMISS_THREADS")
        if env:
            try:
                opts["threads"] = int(env)
            except ValueError:
                raise ConfigError(f"FNMISS_THREADS must be an integer, got {env!r}") from None
        else:
            opts["threads"] = 1
    _check_types(opts)
    return opts


def _file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _zero_based(cols: Sequence[int], p: int, key: str) -> List[int]:
    out = []
    for c in cols:
        if not 1 <= c <= p:
            raise ConfigError(f"{key}: covariate x{c} does not exist (p = {p})")
        out.append(c - 1)
    return out


def cmd_estimate(args, opts) -> int:
    path = Path(args.dataset)
    ds = read_dataset(path)
    out = Path(opts["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    partition = _resolve_partition(opts["partition"])
    alpha = opts["alpha"]
    drop_o = _zero_based(opts["drop_outcome"], ds.p, "drop_outcome")
    drop_p = _zero_based(opts["drop_propensity"], ds.p, "drop_propensity")
    selected = [e for e in ESTIMATORS if e in opts["estimators"]]

    cm = covariate_moments(ds)
    manifest: Dict[str, Any] = {
        "tool": "fnmiss estimate",
        "version": __version__,
        "dataset": path.name,
        "dataset_sha256": _file_digest(path),
        "n": ds.n,
        "n_obs": ds.n_obs,
        "p": ds.p,
        "T": ds.T,
        "alpha": alpha,
        "partition": partition,
        "estimators": selected,
        "outcome_model": None,
        "propensity_model": None,
        "outputs": {},
    }
    om = pm = None
    if "OR" in selected or "DR" in selected:
        om = fit_ols(ds, drop_o)
        manifest["outcome_model"] = {
            "dropped_columns": [f"x{j + 1}" for j in om.dropped_columns],
            "n_obs": om.n_obs,
        }
    if "DR" in selected:
        if ds.n_obs == ds.n:
            # no missing rows: the logistic MLE is on the boundary, use tau at the clip
            pm = PropensityModel.fully_observed(ds.p)
        else:
            pm = fit_logistic(ds, drop_p)
        manifest["propensity_model"] = {
            "fully_observed": pm.constant is not None,
            "dropped_columns": [f"x{j + 1}" for j in pm.dropped_columns],
            "converged": pm.converged,
            "iterations": pm.iterations,
            "score_norm": pm.score_norm,
            "gamma_hat": [float(g) for g in pm.gamma_hat],
        }

    for name in selected:
        if name == "OR":
            est = estimate_or(ds, om, cm)
        elif name == "DR":
            est = estimate_dr(ds, om, pm, cm)
            manifest["propensity_model"]["mean_inv_tau"] = est.info["mean_inv_tau"]
        else:
            est = estimate_cc(ds)
        scb = build_scb(est, alpha, partition)
        pcb = build_pcb(est, alpha)
        curve = out / f"{name.lower()}_curve.csv"
        saved = out / f"{name.lower()}_estimate.csv"
        write_curve_table(curve, est, scb, pcb)
        write_saved_estimate(saved, est)
        manifest["outputs"][name] = {"curve": curve.name, "estimate": saved.name}
        log.info("%s: wrote %s and %s", name, curve, saved)
    write_json(out / "manifest.json", manifest)
    return 0


def cmd_bands(args, opts) -> int:
    est = read_saved_estimate(args.estimate)
    partition = _resolve_partition(opts["partition"])
    scb = build_scb(est, opts["alpha"], partition)
    pcb = build_pcb(est, opts["alpha"])
    if opts["output"] is not None:
        target = Path(opts["output"])
    else:
        target = Path(opts["out_dir"]) / f"{Path(args.estimate).stem}_bands.csv"
    target.parent.mkdir(parents=True, exist_ok=True)
    write_curve_table(target, est, scb, pcb)
    log.info("wrote %s", target)
    return 0


def _sim_configs(opts) -> List[SimConfig]:
    partition = _resolve_partition(opts["partition"])
    base = dict(
        n=opts["n"][0],
        T=opts["T"],
        reps=opts["reps"],
        alpha=opts["alpha"],
        seed=opts["seed"],
        partition=partition,
        calibrate_missingness=opts["calibrate_missingness"],
        redraw_q_per_replicate=opts["redraw_q_per_replicate"],
        matern=MaternParams(phi=opts["phi"]),
        nu=opts["nu"],
    )
    return [SimConfig(error_kind=kind, **base) for kind in opts["error_kind"]]


def cmd_simulate(args, opts) -> int:
    out = Path(opts["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    configs = _sim_configs(opts)
    ns, misspecs = opts["n"], opts["misspec"]

    if opts["export_dataset"] is not None:
        first = configs[0].replace(n=ns[0], misspec=misspecs[0])
        write_dataset(opts["export_dataset"], replicate_data(first, 0).dataset)
        log.info("exported replicate 0 of n=%d to %s", ns[0], opts["export_dataset"])

    cov_rows, metric_rows, scenarios = [], [], []
    for base in configs:
        results = run_grid(
            base, ns, misspecs, threads=opts["threads"],
            max_failure_rate=opts["max_failure_rate"],
        )
        for (n, m), res in sorted(results.items(), key=lambda kv: (kv[0][0], misspecs.index(kv[0][1]))):
            scenarios.append(
                {"n": n, "error_kind": base.error_kind, "misspec": m, "failed": res.n_failed,
                 "failures": res.failures, "observed_fraction": res.observed_fraction}
            )
            for est in ESTIMATORS:
                for band in BAND_KINDS:
                    cov_rows.append([n, base.error_kind, est, m, band,
                                     res.coverage[(est, band)], res.reps, res.n_failed])
                for j, t in enumerate(res.grid.points):
                    metric_rows.append([t, n, base.error_kind, m, est, res.bias[est][j],
                                        res.est_variance[est][j], res.mc_variance[est][j],
                                        res.mse[est][j]])

    write_rows(out / "coverage.csv",
               ["n", "error_kind", "estimator", "misspec", "band", "coverage", "reps", "failed"],
               cov_rows)
    write_rows(out / "metrics.csv",
               ["t", "n", "error_kind", "scenario", "estimator", "bias", "est_variance",
                "mc_variance", "mse"],
               metric_rows)
    manifest = {
        "tool": "fnmiss simulate",
        "version": __version__,
        "seed": opts["seed"],
        "config": {k: opts[k] for k in ("n", "reps", "T", "error_kind", "misspec", "alpha",
                                        "partition", "calibrate_missingness",
                                        "redraw_q_per_replicate", "phi", "nu")},
        "scenarios": scenarios,
        "outputs": {"coverage": "coverage.csv", "metrics": "metrics.csv"},
    }
    write_json(out / "manifest.json", manifest)
    return 0


def build_parser() -> argparse.ArgumentParser:
    d = DEFAULTS
    parser = argparse.ArgumentParser(
        prog="fnmiss",
        description="Mean curves of functional outcomes missing at random, with confidence bands.",
        epilog="Exit codes: 0 success, 2 input error, 3 estimation failure, "
        "4 simulation failure rate exceeded. FNMISS_THREADS is used when --threads is absent.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--seed", type=int, help=f"master seed (default {d['seed']})")
    parser.add_argument("--threads", type=int,
                        help="worker processes (default $FNMISS_THREADS, else 1)")
    parser.add_argument("--out-dir", dest="out_dir", help="output directory (default .)")
    parser.add_argument("--config", help="JSON file with option values; flags override it")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def band_opts(p):
        p.add_argument("--alpha", type=float, help=f"two-sided level (default {d['alpha']})")
        p.add_argument("--partition", type=_partition_arg,
                       help="fairness partition: interval count or comma-separated edges "
                       "(default: whole domain)")

    est = sub.add_parser("estimate", help="estimate mean curves with bands from a dataset CSV")
    est.add_argument("dataset", help="wide CSV with a '# grid:' first line")
    band_opts(est)
    est.add_argument("--estimators", type=_csv_list(str),
                     help="comma list from OR,DR,CC (default all)")
    est.add_argument("--drop-outcome", dest="drop_outcome", type=_csv_list(int),
                     help="1-based covariate indices left out of the outcome model")
    est.add_argument("--drop-propensity", dest="drop_propensity", type=_csv_list(int),
                     help="1-based covariate indices left out of the propensity model")

    sim = sub.add_parser("simulate", help="run the coverage study")
    band_opts(sim)
    sim.add_argument("--n", type=_csv_list(int), help="sample sizes (default 250,500,1000,3000)")
    sim.add_argument("--reps", type=int, help=f"replicates per scenario (default {d['reps']})")
    sim.add_argument("--T", type=int, help=f"grid points (default {d['T']})")
    sim.add_argument("--error-kind", dest="error_kind", type=_csv_list(str),
                     help="gaussian and/or t (default gaussian)")
    sim.add_argument("--misspec", type=_csv_list(str),
                     help="scenarios from none,outcome,missingness,both (default all)")
    sim.add_argument("--calibrate-missingness", dest="calibrate_missingness",
                     action="store_const", const=True,
                     help="negate the logistic linear predictor (about 69%% observed)")
    sim.add_argument("--redraw-q", dest="redraw_q_per_replicate", action="store_const", const=True,
                     help="draw a new orthonormal Q for every replicate (t errors)")
    sim.add_argument("--phi", type=float, help=f"Matern range (default {d['phi']})")
    sim.add_argument("--nu", type=float, help=f"t degrees of freedom (default {d['nu']})")
    sim.add_argument("--max-failure-rate", dest="max_failure_rate", type=float,
                     help=f"allowed share of failed replicates (default {d['max_failure_rate']})")
    sim.add_argument("--export-dataset", dest="export_dataset",
                     help="also write replicate 0 of the first sample size as a dataset CSV")

    bands = sub.add_parser("bands", help="recompute bands from a saved estimate")
    bands.add_argument("estimate", help="*_estimate.csv written by 'estimate'")
    band_opts(bands)
    bands.add_argument("-o", "--output", help="output CSV (default <out-dir>/<stem>_bands.csv)")
    return parser


COMMANDS = {"estimate": cmd_estimate, "simulate": cmd_simulate, "bands": cmd_bands}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(name)s: %(message)s",
    )
    try:
        opts = resolve_options(args)
        return COMMANDS[args.command](args, opts)
    except FailureRateExceeded as exc:
        print(f"fnmiss: error: {exc}", file=sys.stderr)
        return EXIT_FAILURE_RATE
    except EstimationError as exc:
        print(f"fnmiss: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    except (ValidationError, OSError) as exc:
        print(f"fnmiss: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except FnmissError as exc:  # pragma: no cover - every subclass is handled above
        print(f"fnmiss: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
