"""Command-line driver: ``grfkit synth | preprocess | run``.

Diagnostics go to stderr; results only to files. Exit codes: 0 success,
2 configuration error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .dataset import Scenario, load_manifest, load_steps, save_steps
from .errors import ConfigError, DataError, GrfError, InvalidArgumentError, NumericalError
from .harness import METHODS, Grids, Workspace, default_targets, make_tasks, parse_method, run_sweep, write_reports
from .knn import K_GRID, WEIGHTINGS
from .preprocess import preprocess_dataset
from .ser import DEFAULT_RANK, LAMBDA_GRID, S_GRID
from .signal import SensorSet
from .synth import MIN_STEPS, SPEEDS, synth_generate

log = logging.getLogger("grfkit")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4

# synthetic cohort sized for the end-to-end check
BENCHMARK = {"n_athletes": 8, "collections_per_athlete": 3, "speeds": SPEEDS, "steps_per_measurement": MIN_STEPS}
BENCHMARK_TARGETS = 4


@dataclass
class RunConfig:
    """Everything that determines the output of ``run``; embedded in every output file."""

    steps: str
    out: str
    scenarios: list
    sensors: list
    methods: list
    targets: list
    seed: int = 0
    grids: dict = field(default_factory=lambda: Grids().to_dict())

    def to_dict(self) -> dict:
        return asdict(self)


# -- commands ----------------------------------------------------------------


def cmd_synth(out, seed=0, benchmark=False, **sizes):
    """Generate a synthetic dataset; returns its index."""
    kw = dict(BENCHMARK) if benchmark else {}
    kw.update({k: v for k, v in sizes.items() if v is not None})
    index = synth_generate(out, seed=seed, **kw)
    n_coll = len(index.collections)
    print(f"wrote {len(index.body_weights)} athletes, {n_coll} collections, "
          f"{len(index)} measurements to {out}", file=sys.stderr)
    return index


def cmd_preprocess(manifest, out):
    """Preprocess a dataset into a step store; returns the preprocessing result."""
    index = load_manifest(manifest)
    result = preprocess_dataset(index)
    if not result.steps:
        raise DataError("no measurement could be preprocessed")
    save_steps(out, result.steps)
    summary = {"manifest": str(manifest), "counts": result.counts, "failures": result.failures,
               "n_steps": len(result.steps)}
    (Path(out) / "preprocess.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    print(f"{len(result.steps)} steps from {len(result.counts)} measurements, "
          f"{len(result.failures)} skipped", file=sys.stderr)
    return result


def cmd_run(config: RunConfig, jobs: int = 1, ws: Workspace | None = None) -> list:
    """Run every task of ``config``; returns the written paths.

    ``ws`` may carry the already loaded step store named by ``config.steps``.
    """
    if ws is None:
        ws = Workspace(load_steps(config.steps))
    unknown = sorted(set(config.targets) - set(ws.athletes))
    if unknown:
        raise InvalidArgumentError(f"unknown target athletes {unknown}; the step store has {list(ws.athletes)}")
    g = config.grids
    grids = Grids(tuple(g["S"]), tuple(g["lam1"]), tuple(g["lam2"]), tuple(g["k"]), g["rank"],
                  g["knn_weighting"], g["impulse_mode"], g["penalize_intercept"])
    tasks = make_tasks(config.scenarios, config.sensors, config.methods, config.targets, config.seed)
    reports = run_sweep(ws, tasks, grids, config.to_dict(), jobs=jobs)
    written = write_reports(reports, config.out, config.to_dict())
    print(f"{len(reports)} tasks, {len(written)} files written to {config.out}", file=sys.stderr)
    return written


# -- argument parsing --------------------------------------------------------


def _names(text, parse, everything):
    """Comma-separated names in canonical order; ``None`` selects the whole vocabulary."""
    if text is None:
        return list(everything)
    parsed = [parse(t) for t in text.split(",") if t.strip()]
    if not parsed:
        raise InvalidArgumentError(f"empty list {text!r}")
    return [v for v in everything if v in parsed]


def _numbers(text, kind):
    try:
        return tuple(kind(t) for t in text.split(","))
    except ValueError:
        raise InvalidArgumentError(f"cannot parse {text!r} as a list of {kind.__name__}") from None


def _scenario_names(text):
    if text is not None and text.strip().lower() == "all":
        text = None
    return [s.value for s in _names(text, Scenario.parse, list(Scenario))]


def _sensor_names(text):
    # "all" is itself a sensor set, so the whole vocabulary is the default only
    return [s.value for s in _names(text, SensorSet.parse, list(SensorSet))]


def build_run_config(args, ws: Workspace) -> RunConfig:
    targets = [t.strip() for t in args.targets.split(",")] if args.targets else None
    grids = Grids(
        S=_numbers(args.S, int) if args.S else S_GRID,
        lam1=_numbers(args.lam1, float) if args.lam1 else LAMBDA_GRID,
        lam2=_numbers(args.lam2, float) if args.lam2 else LAMBDA_GRID,
        k=_numbers(args.k, int) if args.k else K_GRID,
        rank=args.rank,
        knn_weighting=args.knn_weighting,
        impulse_mode=args.impulse,
    )
    if targets is None:
        targets = default_targets(ws, args.seed, args.n_targets)
    return RunConfig(
        steps=str(args.steps),
        out=str(args.out),
        scenarios=_scenario_names(args.scenario),
        sensors=_sensor_names(args.sensors),
        methods=_names(args.method, parse_method, METHODS),
        targets=sorted(targets),
        seed=args.seed,
        grids=grids.to_dict(),
    )


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="grfkit", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic dataset")
    s.add_argument("out", type=Path)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--benchmark", action="store_true",
                   help="8 athletes x 3 collections x 2 speeds (the end-to-end benchmark)")
    s.add_argument("--athletes", type=int, dest="n_athletes")
    s.add_argument("--collections", type=int, dest="collections_per_athlete")
    s.add_argument("--speeds", type=lambda t: _numbers(t, float))
    s.add_argument("--steps", type=int, dest="steps_per_measurement")
    s.add_argument("--drift-period", type=int, help="period (in steps) of the style drift")

    s = sub.add_parser("preprocess", help="align, filter and segment a dataset into a step store")
    s.add_argument("manifest", type=Path)
    s.add_argument("out", type=Path)

    s = sub.add_parser("run", help="run prediction tasks on a step store")
    s.add_argument("steps", type=Path, help="step store written by 'preprocess'")
    s.add_argument("out", type=Path)
    s.add_argument("--scenario", help="others|personal|everyone, comma-separated or 'all' (default: all)")
    s.add_argument("--sensors", help="all|acc|ang|sacrum|shanks|sac-acc3d|sac-acc, comma-separated "
                                     "(default: every sensor set)")
    s.add_argument("--method", help="ser|knn, comma-separated (default: both)")
    s.add_argument("--targets", help="comma-separated target athletes (default: every eligible athlete)")
    s.add_argument("--n-targets", type=int, help="seeded subset of eligible target athletes")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--knn-weighting", choices=WEIGHTINGS, default="inverse")
    s.add_argument("--impulse", choices=("literal", "corrected"), default="literal",
                   help="net anterior-posterior impulse formula")
    s.add_argument("--S", help="batch sizes to search, comma-separated")
    s.add_argument("--k", help="neighbor counts to search, comma-separated")
    s.add_argument("--lam1", help="L1 penalties to search, comma-separated")
    s.add_argument("--lam2", help="L2 penalties to search, comma-separated")
    s.add_argument("--rank", type=int, default=DEFAULT_RANK)
    s.add_argument("--jobs", type=int, default=1, help="worker processes (outputs do not depend on it)")
    return p


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, NumericalError):
        return EXIT_NUMERICAL
    return EXIT_DATA


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.command == "synth":
            cmd_synth(args.out, args.seed, args.benchmark, n_athletes=args.n_athletes,
                      collections_per_athlete=args.collections_per_athlete, speeds=args.speeds,
                      steps_per_measurement=args.steps_per_measurement, drift_period=args.drift_period)
        elif args.command == "preprocess":
            cmd_preprocess(args.manifest, args.out)
        else:
            ws = Workspace(load_steps(args.steps))
            cmd_run(build_run_config(args, ws), jobs=args.jobs, ws=ws)
    except GrfError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exit_code(exc)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
