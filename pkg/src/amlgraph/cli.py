"""Command line harness: ``amlgraph ingest | train | report``.

On failure every command prints one JSON line ``{"error": <type>, "message": ...}`` to
stderr and exits with status 1 (2 for usage errors).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import elliptic
from .elliptic import DatasetSplit
from .errors import AmlGraphError, ConfigError, ReportError
from .metrics import format_table
from .pipeline import MODEL_KINDS, SCHEMA_VERSION, EnsembleConfig, ExperimentConfig, run_experiment
from .trainer import TrainConfig

log = logging.getLogger("amlgraph")

DATA_ENV = "AMLGRAPH_DATA"


def _seeds(text: str) -> tuple[int, ...]:
    return elliptic.parse_steps(text)


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(",") if x.strip())


def _add_data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data-dir", help=f"directory with the three Elliptic csv files (default: ${DATA_ENV})")
    p.add_argument("--features", help="features csv (overrides --data-dir)")
    p.add_argument("--edges", help="edge list csv (overrides --data-dir)")
    p.add_argument("--labels", help="classes csv (overrides --data-dir)")
    p.add_argument("--train-steps", default="1-29")
    p.add_argument("--val-steps", default="30-34")
    p.add_argument("--test-steps", default="35-49")


def _source_paths(args) -> dict[str, Path]:
    data_dir = args.data_dir or os.environ.get(DATA_ENV)
    paths = {}
    for key in ("features", "edges", "labels"):
        explicit = getattr(args, key, None)
        if explicit:
            paths[key] = Path(explicit)
        elif data_dir:
            paths[key] = Path(data_dir) / elliptic.DEFAULT_FILES[key]
        else:
            raise ConfigError(f"no data location: pass --data-dir, --{key}, or set ${DATA_ENV}")
    for key, p in paths.items():
        if not p.is_file():
            raise FileNotFoundError(f"{key} file not found: {p}")
    return paths


def _split(args) -> DatasetSplit:
    return DatasetSplit.parse(args.train_steps, args.val_steps, args.test_steps)


def cmd_ingest(args) -> dict:
    paths = _source_paths(args)
    split = _split(args)
    sources = {k: elliptic.file_sha256(p) for k, p in paths.items()}
    out = Path(args.bundle)
    manifest_path = out / "manifest.json"
    if manifest_path.is_file():
        manifest = json.loads(manifest_path.read_text())
        if manifest.get("sources") == sources and manifest.get("split") == split.to_dict():
            log.info("cache hit: %s", out)
            manifest["cache_hit"] = True
            return manifest
    raw = elliptic.load_dataset(paths["features"], paths["edges"], paths["labels"])
    graphs = elliptic.build_timestep_graphs(raw, "local_93")
    elliptic.temporal_split(graphs, split)  # validates coverage
    manifest = elliptic.save_bundle(out, raw, graphs, split, sources)
    log.info("wrote %d graphs to %s", len(graphs), out)
    manifest["cache_hit"] = False
    return manifest


def _load_inputs(args):
    if args.bundle and (Path(args.bundle) / "manifest.json").is_file():
        return elliptic.load_bundle(args.bundle)[:2]
    paths = _source_paths(args)
    raw = elliptic.load_dataset(paths["features"], paths["edges"], paths["labels"])
    return raw, elliptic.build_timestep_graphs(raw, "local_93")


def experiment_config(args) -> ExperimentConfig:
    train_cfg = TrainConfig(epochs=args.epochs, lr=args.lr, weight_decay=args.weight_decay, seeds=args.seeds)
    ens = EnsembleConfig(n_estimators=args.n_estimators, lambda_grid=args.lambda_grid)
    if args.rf_max_depth is not None:
        ens = replace(ens, rf_max_depth=args.rf_max_depth)
    if args.gbt_max_depth is not None:
        ens = replace(ens, gbt_max_depth=args.gbt_max_depth)
    return ExperimentConfig(
        kind=args.kind, data_dir=args.data_dir or os.environ.get(DATA_ENV), bundle_dir=args.bundle,
        out_dir=args.out_dir, seeds=args.seeds, train=train_cfg, ensemble=ens, split=_split(args),
        mask_fraction=args.mask_fraction, cp_mode=args.cp_mode)


def cmd_train(args) -> dict:
    cfg = experiment_config(args)
    raw, graphs = _load_inputs(args)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    def progress(seed, run):
        log.info("%s seed %d: test F2 %.4f", cfg.kind, seed, run["test"]["f2"])

    doc = run_experiment(cfg, raw, graphs, progress)
    path = out / f"result_{cfg.kind.replace('+', '_')}.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    log.info("wrote %s", path)
    doc["path"] = str(path)
    return doc


TABLE_COLUMNS = [
    ("kind", "Model"), ("f2", "F2"), ("reference_f2", "F2 (reference)"), ("f1", "F1"),
    ("precision", "Precision"), ("recall", "Recall"), ("n_parameters", "n. parameters"),
    ("n_estimators", "n. estimators"), ("train_time_s", "Train time (s)"), ("inference_time_s", "Inference time (s)"),
]


def load_results(paths) -> list[dict]:
    docs = []
    for p in paths:
        doc = json.loads(Path(p).read_text())
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise ReportError(f"{p}: schema version {doc.get('schema_version')!r}, expected {SCHEMA_VERSION}")
        docs.append(doc)
    if not docs:
        raise ReportError("no result documents given")
    return docs


def report_rows(docs: list[dict]) -> list[dict]:
    rows = []
    for d in docs:
        agg = d["aggregate"]
        row = {"kind": d["kind"], "reference_f2": d.get("reference_f2")}
        for key, _ in TABLE_COLUMNS[1:]:
            if key in agg:
                row[key] = tuple(agg[key])
        rows.append(row)
    rows.sort(key=lambda r: -r["f2"][0])
    return rows


def per_step_series(docs: list[dict]) -> list[tuple[str, str, float, float | None]]:
    series = []
    for d in docs:
        for step, (mean, std) in d["aggregate"]["per_step_f2"].items():
            series.append((d["kind"], step, mean, std))
    return series


def cmd_report(args) -> dict:
    docs = load_results(args.results)
    rows = report_rows(docs)
    table = format_table(rows, TABLE_COLUMNS)
    print(table)
    series = per_step_series(docs)
    if args.series:
        lines = ["kind,step,f2_mean,f2_std"]
        lines += [f"{k},{s},{m!r},{'' if sd is None else repr(sd)}" for k, s, m, sd in series]
        Path(args.series).write_text("\n".join(lines) + "\n")
    return {"table": table, "rows": rows, "series": series}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="amlgraph", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse raw csv files into a cached graph bundle")
    _add_data_args(p)
    p.add_argument("--bundle", default="bundle", help="output directory")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="run one experiment kind over several seeds")
    _add_data_args(p)
    p.add_argument("--bundle", help="graph bundle written by ingest (used when present)")
    p.add_argument("--kind", required=True, choices=MODEL_KINDS)
    p.add_argument("--seeds", type=_seeds, default=(0, 1, 2, 3, 4), help="e.g. 0-4 or 0,3,7")
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--weight-decay", type=float, default=5e-5)
    p.add_argument("--lambda-grid", type=_floats, default=EnsembleConfig().lambda_grid,
                   help="QBoost lambda multiples of S/N^2, comma separated")
    p.add_argument("--mask-fraction", type=float, default=0.0, help="fraction of training labels hidden")
    p.add_argument("--n-estimators", type=int, default=50)
    p.add_argument("--rf-max-depth", type=int)
    p.add_argument("--gbt-max-depth", type=int)
    p.add_argument("--cp-mode", choices=("weighted", "oracle"), default="weighted")
    p.add_argument("--out-dir", default="results")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("report", help="tabulate result documents")
    p.add_argument("results", nargs="+")
    p.add_argument("--series", help="write per-time-step test F2 as csv")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        args.func(args)
    except (AmlGraphError, OSError, ValueError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
