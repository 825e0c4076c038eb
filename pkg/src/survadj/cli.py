"""Command-line front end.

``survadj adjust``    adjusted curves for a CSV dataset
``survadj simulate``  Monte-Carlo comparison study
``survadj truth``     true counterfactual curves of the simulation design

Exit codes: 0 success, 2 input or configuration error, 3 estimation error.
"""

import argparse
import csv
import logging
import math
import sys
import warnings
from pathlib import Path
from typing import List, Optional

import numpy as np

from .config import (StudySettings, parse_floats, parse_list, parse_methods,
                     parse_scenarios, read_config, validate_settings)
from .dataset import integrate_curve, read_csv
from .errors import (ConfigError, DatasetError, EstimationError, MissingCovariateSet,
                     SurvAdjError)
from .estimators import NEEDS_OUTCOME, NEEDS_TREATMENT, MethodId, estimate, make_context
from .simulation import generate_superpopulation, run_study

log = logging.getLogger("survadj")

EXIT_OK, EXIT_INPUT, EXIT_ESTIMATION = 0, 2, 3


def fmt(x) -> str:
    """17 significant digits, enough to round-trip any double."""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    return format(x, ".17g")


def write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else fmt(v) for v in row])


def curve_rows(curve):
    yield 0.0, curve.initial
    yield from zip(curve.times, curve.values)


def _grid(text) -> Optional[np.ndarray]:
    if text is None or text.strip().lower() in ("", "events"):
        return None
    vals = parse_floats(text, "grid")
    if not vals or any(v <= 0 for v in vals) or np.any(np.diff(vals) <= 0):
        raise ConfigError("grid must be positive, strictly increasing times or 'events'")
    return np.asarray(vals)


# --------------------------------------------------------------------------
# adjust

def cmd_adjust(args) -> int:
    data = read_csv(args.input)
    methods = parse_methods(args.methods)
    oc = parse_list(args.outcome_covs) if args.outcome_covs else None
    tc = parse_list(args.treatment_covs) if args.treatment_covs else None
    for labels in (oc or [], tc or []):
        missing = [c for c in labels if c not in data.covariate_names]
        if missing:
            raise ConfigError(f"covariate column(s) not in the input header: "
                              f"{', '.join(missing)}")
    for m in methods:
        if m in NEEDS_OUTCOME and oc is None:
            raise ConfigError(f"{m.value} needs --outcome-covs")
        if m in NEEDS_TREATMENT and tc is None:
            raise ConfigError(f"{m.value} needs --treatment-covs")
    if args.pv_link not in ("identity", "cloglog"):
        raise ConfigError("--pv-link must be identity or cloglog")
    grid = _grid(args.grid)
    ctx = make_context(data, grid=grid, pv_link=args.pv_link)
    results = {}
    for m in methods:
        try:
            results[m] = estimate(m, data, oc, tc, grid, args.correct, caliper=args.caliper,
                                  pv_link=args.pv_link, ctx=ctx)
        except MissingCovariateSet:
            raise
        except (EstimationError, np.linalg.LinAlgError) as exc:
            raise EstimationFailed(f"{m.value}: {exc}") from exc

    out = Path(args.output)
    rows = []
    for m, res in results.items():
        for z in (0, 1):
            for t, s in curve_rows(res.curve(z)):
                rows.append((m.value, z, t, s, res.nm_flag[z], res.oob_flag[z], res.corrected))
    write_rows(out, ["method", "group", "time", "surv", "nm_flag", "oob_flag", "corrected"],
               rows)

    # area between the curves up to the earlier of the two last event times
    last = [data.time[(data.group == z) & (data.status == 1)] for z in (0, 1)]
    horizon = min((float(t.max()) if len(t) else 0.0) for t in last)
    summary = []
    for m, res in results.items():
        area = (integrate_curve(res.curve_z1, 0.0, horizon)
                - integrate_curve(res.curve_z0, 0.0, horizon))
        summary.append((m.value, horizon, area))
    write_rows(_sibling(out, "summary"), ["method", "horizon", "area_z1_minus_z0"], summary)

    if args.plot:
        from .plotting import plot_adjusted_curves
        plot_adjusted_curves({m.value: r for m, r in results.items()},
                             out.with_suffix(".png"), horizon=None)
    return EXIT_OK


def _sibling(path: Path, tag: str) -> Path:
    return path.with_name(f"{path.stem}.{tag}{path.suffix or '.csv'}")


class EstimationFailed(SurvAdjError):
    pass


# --------------------------------------------------------------------------
# simulate / truth

def _settings(args) -> StudySettings:
    st = read_config(args.config) if args.config else StudySettings()
    if args.seed is not None:
        st.seed = args.seed
    if getattr(args, "reps", None) is not None:
        st.reps = args.reps
    if getattr(args, "n", None):
        st.sample_sizes = [int(v) for v in parse_floats(args.n, "--n")]
    if getattr(args, "scenarios", None):
        st.scenarios = parse_scenarios(args.scenarios)
    if getattr(args, "methods", None):
        st.methods = parse_methods(args.methods)
    if getattr(args, "correct", False):
        st.correct = True
    if getattr(args, "caliper", None) is not None:
        st.caliper = args.caliper
    if getattr(args, "pv_link", None):
        st.pv_link = args.pv_link
    if getattr(args, "grid", None) is not None:
        g = _grid(args.grid)
        st.grid = None if g is None else list(g)
    validate_settings(st)
    return st


METRIC_HEADER = ["method", "scenario", "n", "rep", "group", "delta_bias", "delta_mse",
                 "nm", "oob", "tau", "failed"]
AGGREGATE_HEADER = ["method", "scenario", "n", "group", "g_bias", "g_bias_mcse", "g_mse",
                    "g_mse_mcse", "nm_pct", "oob_pct"]


def cmd_simulate(args) -> int:
    st = _settings(args)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    opts = {"caliper": st.caliper, "pv_link": st.pv_link}
    if st.grid is not None:
        opts["grid"] = np.asarray(st.grid)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        result = run_study(st.dgp, st.scenarios, st.methods, st.sample_sizes, st.reps,
                           st.seed, apply_corrections=st.correct, threads=args.threads,
                           estimator_options=opts)

    metric_rows = []
    for r in result.records:
        db, dm = r.reported(st.correct)
        metric_rows.append((r.method, r.scenario, r.n, r.rep, r.group, db, dm,
                            r.nm_flag, r.oob_flag, r.tau, r.failed))
    write_rows(out / "metrics.csv", METRIC_HEADER, metric_rows)

    aggregates = result.aggregate()
    write_rows(out / "aggregate.csv", AGGREGATE_HEADER,
               [(a.method, a.scenario, a.n, a.group, a.g_bias, a.g_bias_mcse, a.g_mse,
                 a.g_mse_mcse, a.nm_pct, a.oob_pct) for a in aggregates])

    profiles = result.oob_by_time()
    bins = result.profile_bins
    prof_rows = []
    for (method, scen, n, z), prof in profiles.items():
        for k, pct in enumerate(prof):
            prof_rows.append((method, scen, n, z, k, k / bins, (k + 1) / bins, pct))
    write_rows(out / "oob_profile.csv",
               ["method", "scenario", "n", "group", "slice", "from_frac", "to_frac",
                "oob_pct"], prof_rows)

    failures = sum(r.failed for r in result.records)
    if failures:
        log.warning("%d metric rows come from failed estimations", failures)
    if args.plot:
        from .plotting import plot_bias, plot_oob_profile
        plot_bias(result.records, out / "bias.png")
        plot_oob_profile(profiles, out / "oob_profile.png")
    return EXIT_OK


def cmd_truth(args) -> int:
    st = _settings(args)
    sp = generate_superpopulation(st.dgp, st.seed)
    rows = [(z, t, s) for z in (0, 1) for t, s in curve_rows(sp.true_curve(z))]
    out = Path(args.output)
    write_rows(out, ["group", "time", "surv"], rows)
    if args.plot:
        from .plotting import plot_truth
        plot_truth((sp.true_curve_z0, sp.true_curve_z1), out.with_suffix(".png"))
    return EXIT_OK


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="survadj",
                                description="Confounder-adjusted survival curves.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, output_help):
        sp.add_argument("--output", required=True, help=output_help)
        sp.add_argument("--plot", action="store_true",
                        help="also write PNG figures next to the CSV output")

    a = sub.add_parser("adjust", help="adjusted survival curves for a CSV dataset")
    a.add_argument("--input", required=True,
                   help="CSV with columns time,status,group,<covariates>")
    common(a, "curve CSV; a .summary.csv with areas between curves is written beside it")
    a.add_argument("--methods", default="all", help="comma-separated method ids or 'all'")
    a.add_argument("--outcome-covs", help="covariates of the outcome model")
    a.add_argument("--treatment-covs", help="covariates of the treatment model")
    a.add_argument("--grid", help="pseudo-value grid: 'events' or comma-separated times")
    a.add_argument("--correct", action="store_true",
                   help="truncate and isotonically correct improper curves")
    a.add_argument("--caliper", type=float, help="matching caliper in SDs of the score")
    a.add_argument("--pv-link", default="identity", help="identity or cloglog")
    a.set_defaults(func=cmd_adjust)

    s = sub.add_parser("simulate", help="run the Monte-Carlo comparison study")
    common(s, "directory for metrics.csv, aggregate.csv and oob_profile.csv")
    s.add_argument("--config", help="INI study configuration")
    s.add_argument("--seed", type=int)
    s.add_argument("--reps", type=int)
    s.add_argument("--n", help="comma-separated sample sizes")
    s.add_argument("--scenarios", help="comma-separated scenario ids or 'all'")
    s.add_argument("--methods", help="comma-separated method ids or 'all'")
    s.add_argument("--grid", help="pseudo-value grid: 'events' or comma-separated times")
    s.add_argument("--correct", action="store_true",
                   help="report metrics of corrected curves")
    s.add_argument("--caliper", type=float)
    s.add_argument("--pv-link")
    s.add_argument("--threads", type=int,
                   help="worker processes (default SURVADJ_THREADS or CPU count)")
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("truth", help="write the true counterfactual curves")
    common(t, "truth CSV")
    t.add_argument("--config", help="INI study configuration ([dgp] and friends)")
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_truth)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except DatasetError as exc:
        for issue in exc.issues:
            print(f"error: {issue}", file=sys.stderr)
        return EXIT_INPUT
    except (ConfigError, MissingCovariateSet, FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except EstimationFailed as exc:
        print(f"estimation error: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    except SurvAdjError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION


if __name__ == "__main__":
    sys.exit(main())
