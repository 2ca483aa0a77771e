"""``insitu`` command-line front end.

Subcommands: ``run``, ``psucc``, ``anum-threshold``, ``cost``, ``perturb``,
``trace``, ``plot``. Exit codes: 0 success, 1 run failure (no successful
optimization, threshold out of range), 2 spec or usage error.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from insitu import harness
from insitu.artifacts import build_metadata, write_csv, write_json
from insitu.spec import ExperimentSpec, SpecError, load_spec

log = logging.getLogger("insitu")

EXIT_OK, EXIT_FAIL, EXIT_SPEC = 0, 1, 2

COST_COLUMNS = ("symbol", "value")
COST_SYMBOLS = (
    "n_meas", "n_prec", "n_fids", "n_upds", "n_runs", "t_init", "t_gate", "t_meas", "t_run", "p_succ", "t_total",
)


class RunFailure(RuntimeError):
    pass


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--spec", type=Path, help="experiment spec (TOML)")
    common.add_argument("--out", type=Path, help="output directory (default: spec 'output')")
    common.add_argument("--seed", type=int, help="master seed (overrides harness.seed)")
    common.add_argument("--workers", type=int, help="worker processes (fallback: INSITU_WORKERS)")
    common.add_argument("--format", choices=("csv", "json"), default="csv", help="tabular artifact format")
    common.add_argument("--no-timestamp", action="store_true", help="write a null timestamp")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="insitu", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="run the experiment named by the spec 'kind'")
    sub.add_parser("psucc", parents=[common], help="success probability of the spec scenario")
    sub.add_parser("anum-threshold", parents=[common], help="a_num where p_succ crosses harness.target_p")
    sub.add_parser("cost", parents=[common], help="run and time cost of finding one gate")
    sub.add_parser("perturb", parents=[common], help="F and F_LE under random perturbations")
    sub.add_parser("trace", parents=[common], help="per-update fidelity trace of one optimization")
    plot = sub.add_parser("plot", parents=[common], help="SVG charts from artifact CSVs")
    plot.add_argument("csv", nargs="*", type=Path, help="CSV files (default: every CSV in --out)")
    return p


def _workers(arg: Optional[int], spec: ExperimentSpec) -> int:
    if arg is not None:
        return arg
    env = os.environ.get("INSITU_WORKERS")
    if env:
        try:
            return int(env)
        except ValueError:
            raise SpecError(f"INSITU_WORKERS: expected an integer, got {env!r}") from None
    return spec.section("harness")["workers"]


def _emit(result: harness.ResultSet, out: Path, fmt: str, meta: dict) -> list[Path]:
    if fmt == "csv":
        table = write_csv(out / f"{result.name}.csv", result.columns, result.rows, meta)
    else:
        table = write_json(out / f"{result.name}.json", {"columns": list(result.columns), "rows": result.rows}, meta)
    summary = write_json(out / f"{result.name}_summary.json", {"summary": result.summary}, meta)
    return [table, summary]


def _cost(spec: ExperimentSpec, workers: int) -> harness.ResultSet:
    c = spec.section("cost")
    o = spec.section("optimizer")
    h = spec.section("harness")
    sc = spec.scenario()
    n_upds, p_succ = c["n_upds"], c["p_succ"]
    measured = {}
    if n_upds is None or p_succ is None:
        est = harness.estimate_psucc(sc, h["trials"], h["seed"], workers)
        if est.successes == 0:
            raise RunFailure("no trial succeeded; p_succ = 0 gives an unbounded cost")
        measured = {"measured_p_succ": est.p, "measured_mean_nupds": est.mean_nupds}
        n_upds = n_upds if n_upds is not None else max(1, math.ceil(est.mean_nupds))
        p_succ = p_succ if p_succ is not None else est.p
    n_fids = 1 if o["gradient_mode"] == "analytic" else 1 + sc.system.n_ctrl * sc.n_ts
    cm = harness.CostModel(
        t_gate=sc.t_gate, n_fids=n_fids, n_upds=n_upds, p_succ=p_succ, a_num=o["a_num"],
        n_meas_mode=c["n_meas_mode"], t_init=c["t_init"], t_meas=c["t_meas"],
    )
    dims = [4] + [2] * (sc.system.n - 2)
    report = harness.cost_report(cm, sc.system.n, dims)
    rows = [{"symbol": k, "value": report[k]} for k in COST_SYMBOLS]
    return harness.ResultSet("cost", COST_COLUMNS, rows, {**report, **measured})


def _no_success(result: harness.ResultSet) -> bool:
    if result.name == "trace":
        return not result.summary["success"]
    if result.name == "psucc":
        return result.summary["successes"] == 0
    if result.name in ("topology", "scaling"):
        return all(r["p_succ"] == 0 for r in result.rows)
    if result.name == "anum":
        return all(math.isnan(r["anum_at_50"]) for r in result.rows)
    return False


def _execute(args, spec: ExperimentSpec) -> list[Path]:
    out = args.out or Path(spec.output)
    workers = _workers(args.workers, spec)
    spec = spec.with_overrides(seed=args.seed, output=str(out))
    h = spec.section("harness")
    seed = h["seed"]
    echoed = spec.effective()
    # neither the worker count nor the destination changes the results, so
    # both stay out of the artifacts and runs into different dirs compare equal
    echoed["harness"].pop("workers", None)
    echoed.pop("output", None)
    meta = build_metadata(args.command, echoed, seed, timestamp=not args.no_timestamp)

    cmd = args.command
    if cmd == "run":
        result = harness.run_experiment(spec.with_overrides(workers=workers))
    elif cmd == "psucc":
        result = harness.psucc_table(harness.estimate_psucc(spec.scenario(), h["trials"], seed, workers))
    elif cmd == "anum-threshold":
        if h["anum_grid"] is None:
            raise SpecError("missing required key 'harness.anum_grid' for anum-threshold")
        n = spec.section("system")["n"]
        result = harness.anum_scaling(spec.scenario(), [n], h["anum_grid"], h["trials"], seed, h["target_p"], workers)
    elif cmd == "cost":
        result = _cost(spec, workers)
    elif cmd == "perturb":
        result = harness.perturbation_table(h["n_values"] or list(range(3, 8)), h["norm"], h["samples"], seed)
    elif cmd == "trace":
        result = harness.fidelity_trace(spec.scenario(), seed)
    else:  # pragma: no cover - argparse restricts the choices
        raise SpecError(f"unknown command {cmd!r}")

    paths = _emit(result, out, args.format, meta)
    if _no_success(result):
        for p in paths:
            log.info("wrote %s", p)
        raise RunFailure(f"{cmd}: no successful optimization")
    return paths


def _plot(args) -> list[Path]:
    from insitu.plotting import plot_csv

    files = list(args.csv)
    if not files:
        if args.out is None:
            raise SpecError("plot needs CSV paths or --out DIR")
        files = sorted(Path(args.out).glob("*.csv"))
    written = []
    for f in files:
        try:
            written.append(plot_csv(f))
        except ValueError as exc:
            log.warning("%s", exc)
    if not written:
        raise RunFailure("nothing to plot")
    return written


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        if args.command == "plot":
            paths = _plot(args)
        else:
            if args.spec is None:
                raise SpecError("--spec is required")
            try:
                spec = load_spec(args.spec)
            except OSError as exc:
                raise SpecError(f"cannot read spec: {exc}") from None
            paths = _execute(args, spec)
    except SpecError as exc:
        print(f"spec error: {exc}", file=sys.stderr)
        return EXIT_SPEC
    except RunFailure as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except harness.ThresholdRangeError as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_FAIL
    for p in paths:
        print(f"wrote {p}", file=sys.stderr)
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
