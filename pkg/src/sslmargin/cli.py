"""Experiment harness: ``run``, ``sweep``, ``compare`` and ``plot`` subcommands.

Every run writes into ``<root>/<config digest>-seed<seed>/``:

* ``config.toml``   config echo (reads back to the same config)
* ``metrics.csv``   one row per epoch
* ``summary.json``  final error, last-10-epoch mask rate and impurity, config
* ``splits.csv``    id -> labeled / unlabeled / erroneous / test membership
* ``ledger.csv`` and ``decisions.csv`` when requested in the config

``<root>`` is the config's ``output_dir`` unless ``SSLMARGIN_OUTPUT_ROOT`` is set.
Exit codes: 0 success, 2 usage or config error, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import shutil
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from . import __version__
from .config import COMBINES, MEASURES, METHODS, ConfigError, RunSpec, TrainConfig, dump_run_spec, load_run_spec
from .dataflow import SslDataset, iter_split_membership
from .metrics import dump_summary, summarize
from .nncore import ConfigurationError
from .plots import KINDS, PlotInputError, render
from .trainer import TrainingAborted, build_dataset, run

log = logging.getLogger("sslmargin")

OUTPUT_ROOT_ENV = "SSLMARGIN_OUTPUT_ROOT"
SWEEPABLE = {
    "delta": "delta",
    "tau": "tau",
    "q": "q",
    "labels_per_class": "dataset.labels_per_class",
    "dataset.labels_per_class": "dataset.labels_per_class",
    "measure": "measure",
    "combine": "combine",
    "method": "method",
}
AGGREGATE_COLUMNS = ["param", "value", "seed", "run_dir", "final_test_error", "last10_mask_rate", "last10_impurity"]
COMPARE_COLUMNS = ["method", "seed", "epoch", "test_error", "mask_rate", "impurity", "gamma", "included", "presentations"]

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class Job:
    config: TrainConfig
    run_dir: Path
    dump_ledger: bool
    dump_decisions: bool
    overwrite: bool


def output_root(spec: RunSpec) -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV) or spec.output_dir)


def run_dir_for(root: Path, cfg: TrainConfig) -> Path:
    return root / f"{cfg.digest()}-seed{cfg.seed}"


def prepare_dir(path: Path, overwrite: bool) -> None:
    if path.exists() and any(path.iterdir()):
        if not overwrite:
            raise UsageError(f"{path} exists and is not empty; pass --overwrite to replace it")
        log.info("clearing %s", path)
        shutil.rmtree(path)
    path.mkdir(parents=True, exist_ok=True)


def write_membership(ds: SslDataset, path: Path) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "split"])
        w.writerows(iter_split_membership(ds))


def execute(job: Job, dataset: Optional[SslDataset] = None) -> Dict[str, Any]:
    """Train one config into its run directory and return the summary."""
    cfg, out = job.config, job.run_dir
    ds = dataset if dataset is not None else build_dataset(cfg)
    (out / "config.toml").write_text(
        f"# sslmargin {__version__}\n" + dump_run_spec(cfg, [cfg.seed], str(out.parent))
    )
    write_membership(ds, out / "splits.csv")
    sinks: Dict[str, Any] = {}
    try:
        sinks["metrics_sink"] = (out / "metrics.csv").open("w", newline="")
        if job.dump_ledger:
            sinks["ledger_sink"] = (out / "ledger.csv").open("w", newline="")
        if job.dump_decisions:
            sinks["decision_sink"] = (out / "decisions.csv").open("w", newline="")
        result = run(cfg, dataset=ds, **sinks)
    finally:
        for fh in sinks.values():
            fh.close()
    summary = summarize(result.history, cfg.to_flat(), __version__)
    dump_summary(summary, out / "summary.json")
    log.info("%s: final test error %.4f (%.1fs)", out.name, result.final_test_error, result.wall_seconds)
    return summary


def _execute_job(job: Job) -> Dict[str, Any]:
    return execute(job)


def execute_all(jobs: Sequence[Job], n_jobs: int = 1) -> List[Dict[str, Any]]:
    for job in jobs:
        prepare_dir(job.run_dir, job.overwrite)
    if n_jobs > 1 and len(jobs) > 1:
        # each run directory is written by exactly one worker
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            return list(pool.map(_execute_job, jobs))
    return [execute(job) for job in jobs]


def _load(path: str) -> RunSpec:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file {p} not found")
    return load_run_spec(p)


def _check_unique(jobs: Sequence[Job]) -> None:
    dirs = [j.run_dir for j in jobs]
    if len(set(dirs)) != len(dirs):
        raise UsageError("two requested runs map to the same run directory; remove duplicate values")


def cmd_run(args: argparse.Namespace) -> int:
    spec = _load(args.config)
    root = output_root(spec)
    jobs = [
        Job(spec.for_seed(s), run_dir_for(root, spec.for_seed(s)), spec.dump_ledger, spec.dump_decisions, args.overwrite)
        for s in spec.seeds
    ]
    _check_unique(jobs)
    execute_all(jobs, args.jobs)
    for j in jobs:
        print(j.run_dir)
    return EXIT_OK


def parse_sweep_value(key: str, raw: str) -> Any:
    raw = raw.strip()
    if key in ("method", "measure", "combine"):
        allowed = {"method": METHODS, "measure": MEASURES, "combine": COMBINES}[key]
        if raw.lower() not in allowed:
            raise ConfigError(key, f"{raw!r} is not one of {allowed}")
        return raw.lower()
    try:
        return int(raw) if key == "dataset.labels_per_class" else float(raw)
    except ValueError:
        raise ConfigError(key, f"{raw!r} is not a number") from None


def cmd_sweep(args: argparse.Namespace) -> int:
    if args.param not in SWEEPABLE:
        raise ConfigError(args.param, f"not sweepable; choose from {sorted(set(SWEEPABLE))}")
    key = SWEEPABLE[args.param]
    raw_values = [v for v in args.values.split(",") if v.strip()]
    if not raw_values:
        raise UsageError("--values is empty")
    spec = _load(args.config)
    root = output_root(spec)
    variants = [(raw.strip(), spec.config.with_value(key, parse_sweep_value(key, raw))) for raw in raw_values]
    jobs, labels = [], []
    for raw, cfg in variants:
        for s in spec.seeds:
            c = replace(cfg, seed=int(s))
            jobs.append(Job(c, run_dir_for(root, c), spec.dump_ledger, spec.dump_decisions, args.overwrite))
            labels.append((raw, s))
    _check_unique(jobs)
    summaries = execute_all(jobs, args.jobs)
    agg = root / f"sweep-{spec.config.digest()}-{key}.csv"
    with agg.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(AGGREGATE_COLUMNS)
        for (raw, seed), job, summ in zip(labels, jobs, summaries):
            w.writerow([key, raw, seed, job.run_dir.name, _cell(summ["final_test_error"]),
                        _cell(summ["last10_mask_rate"]), _cell(summ["last10_impurity"])])
    print(agg)
    return EXIT_OK


def _cell(v: Optional[float]) -> str:
    return "" if v is None else repr(float(v))


def cmd_compare(args: argparse.Namespace) -> int:
    methods = [m.strip().lower() for m in args.methods.split(",") if m.strip()]
    if len(methods) < 2:
        raise UsageError("compare needs at least two methods")
    if len(set(methods)) != len(methods):
        raise UsageError("duplicate method in --methods")
    spec = _load(args.config)
    root = output_root(spec)
    configs = {m: spec.config.with_value("method", m) for m in methods}
    rows: List[List[Any]] = []
    plan = []
    for s in spec.seeds:
        for m in methods:
            c = replace(configs[m], seed=int(s))
            plan.append(Job(c, run_dir_for(root, c), spec.dump_ledger, spec.dump_decisions, args.overwrite))
    _check_unique(plan)
    for job in plan:
        prepare_dir(job.run_dir, job.overwrite)
    for s in spec.seeds:
        # the split depends only on the dataset section and the seed, so one copy serves every method
        ds = build_dataset(replace(spec.config, seed=int(s)))
        for job in (j for j in plan if j.config.seed == s):
            execute(job, dataset=ds)
    for job in plan:
        with (job.run_dir / "metrics.csv").open(newline="") as fh:
            for r in csv.DictReader(fh):
                rows.append([r[c] for c in COMPARE_COLUMNS])
    out = root / f"compare-{spec.config.digest()}-{'-'.join(methods)}.csv"
    with out.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COMPARE_COLUMNS)
        w.writerows(rows)
    print(out)
    return EXIT_OK


def cmd_plot(args: argparse.Namespace) -> int:
    src = Path(args.input)
    if not src.is_file():
        raise UsageError(f"input {src} not found")
    with src.open(newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        rows = list(reader)
    try:
        svg = render(args.kind, header, rows, args.id)
    except PlotInputError as exc:
        raise UsageError(str(exc)) from None
    Path(args.out).write_text(svg)
    print(args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sslmargin", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", parents=[common], help="train every seed of one config")
    p.add_argument("--config", required=True)
    p.add_argument("--overwrite", action="store_true")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", parents=[common], help="one run per value of a single parameter")
    p.add_argument("--config", required=True)
    p.add_argument("--param", required=True, help=", ".join(sorted(set(SWEEPABLE))))
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--overwrite", action="store_true")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("compare", parents=[common], help="several methods on a shared split")
    p.add_argument("--config", required=True)
    p.add_argument("--methods", required=True, help="comma-separated, at least two")
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("plot", parents=[common], help="render an SVG chart from a CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--kind", required=True, choices=KINDS)
    p.add_argument("--out", required=True)
    p.add_argument("--id", type=int, default=None, help="example id for apm_trace")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (ConfigError, ConfigurationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingAborted, OSError, ValueError, RuntimeError) as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
