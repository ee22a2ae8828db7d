"""Command line: preprocess, search, eval, report, space-size, build-reference.

Exit codes: 0 success, 1 user error (bad input, usage), 2 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .controllers import STRATEGIES, TOP_N_GRID, SearchReport, top_n_summary
from .engine import predict, to_input
from .engine.checkpoint import load_checkpoint
from .errors import EtcNasError, ShapeMismatch
from .graph import count_params, serialize
from .ingest import LabelTable, preprocess, read_dataset, split, write_dataset
from .ingest.labeling import load_label_map
from .metrics import confusion, scores
from .orchestrator import (SearchJob, SweepRow, epoch_sweep, metrics_csv, run_job, sweep_csv,
                           sweep_row, top_n_csv)
from .space import DEFAULT_OPS, REFERENCES, SpaceConfig, build_reference, space_size

log = logging.getLogger("etcnas")

OUTPUT_ENV = "ETCNAS_OUTPUT"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _output_root(value: str | None) -> Path:
    return Path(value or os.environ.get(OUTPUT_ENV) or "etcnas-out").resolve()


# search options that may also come from the config file; flag wins when given
SEARCH_DEFAULTS = {
    "dataset": None, "test": None, "strategy": "rs", "trials": 100, "epochs": None,
    "partial": False, "continuation_epochs": 30, "validation_fraction": 0.2, "seed": 0,
    "workers": 1, "output": None, "batch_size": 128, "lr": 0.001, "lr_halving_period": 10,
    "nodes": 4, "filters": 64, "dropout": 0.4, "ops": list(DEFAULT_OPS), "sweep": None,
    "dtype": "float64",
}


def merged_config(args: argparse.Namespace) -> dict:
    cfg = dict(SEARCH_DEFAULTS)
    if args.config:
        data = json.loads(Path(args.config).read_text())
        unknown = set(data) - set(cfg)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
        cfg.update(data)
    for key in SEARCH_DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    if isinstance(cfg["ops"], str):
        cfg["ops"] = [op.strip() for op in cfg["ops"].split(",")]
    if isinstance(cfg["sweep"], str):
        cfg["sweep"] = [int(v) for v in cfg["sweep"].split(",")]
    if cfg["strategy"] not in STRATEGIES:
        raise UsageError(f"unknown strategy {cfg['strategy']!r}; choose from {', '.join(STRATEGIES)}")
    if not cfg["dataset"]:
        raise UsageError("search needs --dataset (or 'dataset' in the config file)")
    for key in ("dataset", "test"):
        if cfg[key]:
            cfg[key] = str(Path(cfg[key]).resolve())
    return cfg


def cmd_preprocess(args) -> int:
    table = LabelTable.load(args.labels)
    label_map = load_label_map(args.label_map) if args.label_map else None
    result = preprocess(args.pcaps, table, protocol=args.protocol, salt=args.salt, anchor=args.anchor,
                        idle_timeout=args.idle_timeout, window=args.window, label_map=label_map)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(result.dataset, out)
    c = result.counters
    print(f"labeled {c['labeled']} unlabeled {c['unlabeled']} skipped "
          f"{c['no_handshake'] + c['not_quic'] + c['truncated'] + c['non_ip'] + c['non_tcp_udp']}"
          f" (flows {c['flows']}, packets {c['packets']})")
    if not len(result.dataset):
        print("warning: no samples written", file=sys.stderr)
    return 0


def _job(cfg: dict, feature_len: int, num_classes: int, out: Path) -> SearchJob:
    space = SpaceConfig(nodes_per_cell=cfg["nodes"], op_set=tuple(cfg["ops"]), initial_filters=cfg["filters"],
                        cell_dropout_rate=cfg["dropout"], input_length=feature_len, num_classes=num_classes)
    return SearchJob(space, cfg["strategy"], cfg["trials"], cfg["epochs"], cfg["partial"],
                     cfg["continuation_epochs"], cfg["validation_fraction"], cfg["seed"], cfg["batch_size"],
                     cfg["lr"], cfg["lr_halving_period"], cfg["workers"], str(out), cfg["dtype"])


def cmd_search(args) -> int:
    cfg = merged_config(args)
    out = _output_root(cfg["output"])
    data = read_dataset(cfg["dataset"])
    if cfg["test"]:
        train_ds, test_ds = data, read_dataset(cfg["test"])
    else:
        train_ds, test_ds = split(data, 0.8, cfg["seed"])
    job = _job(cfg, data.feature_len, data.n_classes, out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")
    if cfg["sweep"]:
        rows = epoch_sweep(job, train_ds, cfg["sweep"])
        (out / "epoch_sweep.csv").write_text(sweep_csv(rows))
        print(sweep_csv(rows), end="")
        return 0
    run_job(job, train_ds, test_ds)
    print((out / "summary.txt").read_text(), end="")
    return 0


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    data = read_dataset(args.dataset)
    spec = model.graph.layers[model.graph.input_id]
    if data.feature_len != spec.length:
        raise ShapeMismatch(f"model expects feature length {spec.length}, dataset has {data.feature_len}")
    if data.n_classes != model.graph.num_classes:
        raise ShapeMismatch(f"model has {model.graph.num_classes} classes, dataset has {data.n_classes}")
    if not len(data):
        raise UsageError("dataset is empty")
    y_pred = predict(model, to_input(data.features))
    s = scores(confusion(data.labels, y_pred, data.n_classes))
    text = metrics_csv(s, count_params(model.graph))
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")
    return 0


def cmd_report(args) -> int:
    reports = [SearchReport.load(p) for p in args.reports]
    spaces = {json.dumps(r.space, sort_keys=True) for r in reports}
    if len(spaces) > 1:
        raise UsageError("reports come from different search spaces; compare like with like")
    grid = [int(v) for v in args.grid.split(",")] if args.grid else list(TOP_N_GRID)
    summaries: dict[str, dict[int, float]] = {}
    for path, rep in zip(args.reports, reports):
        label = rep.strategy if rep.strategy not in summaries else f"{rep.strategy}:{Path(path).stem}"
        summaries[label] = top_n_summary(rep, grid)
    top = top_n_csv(summaries)
    rows: dict[int, SweepRow] = {}
    for rep in reports:
        epochs = {r.epochs for r in rep.records}
        if len(epochs) == 1:
            e = epochs.pop()
            rows[e] = sweep_row(rep, e) if e not in rows else rows[e]
    sweep = sweep_csv([rows[e] for e in sorted(rows)])
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "top_n.csv").write_text(top)
        (out / "epoch_sweep.csv").write_text(sweep)
    print(top, end="")
    if len(rows) > 1:
        print()
        print(sweep, end="")
    return 0


def cmd_space_size(args) -> int:
    ops = tuple(args.ops.split(",")) if args.ops else DEFAULT_OPS
    cells = tuple(args.cells.split(","))
    print(space_size(SpaceConfig(nodes_per_cell=args.nodes, op_set=ops, cells=cells)))
    return 0


def cmd_build_reference(args) -> int:
    if args.name not in REFERENCES:
        raise UsageError(f"unknown reference model {args.name!r}; choose from {', '.join(sorted(REFERENCES))}")
    graph = build_reference(args.name, args.input_len, args.num_classes)
    text = serialize(graph)
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text, end="")
    pc = count_params(graph)
    print(f"{args.name}: {pc.total:,} total, {pc.trainable:,} trainable parameters", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="etcnas", description="Architecture search for encrypted traffic classifiers.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    pre = sub.add_parser("preprocess", help="pcap files -> labeled dataset")
    pre.add_argument("pcaps", nargs="+")
    pre.add_argument("--labels", required=True, help="label table, one 'pattern,class' per line")
    pre.add_argument("--out", required=True)
    pre.add_argument("--protocol", choices=("tls", "quic"), default="tls")
    pre.add_argument("--anchor", choices=("tls", "transport", "ip"), default="tls")
    pre.add_argument("--salt", default="")
    pre.add_argument("--label-map", help="flow-hash,class map for QUIC flows")
    pre.add_argument("--idle-timeout", type=float, default=60.0)
    pre.add_argument("--window", type=float, default=1.0)
    pre.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("search", help="run an architecture search")
    s.add_argument("--config", help="JSON file; flags override its values")
    s.add_argument("--dataset")
    s.add_argument("--test", help="held-out dataset; default is a seeded 80/20 split of --dataset")
    s.add_argument("--strategy")
    s.add_argument("--trials", type=int)
    s.add_argument("--epochs", type=int)
    s.add_argument("--partial", action="store_true", default=None)
    s.add_argument("--continuation-epochs", type=int)
    s.add_argument("--validation-fraction", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("--workers", type=int)
    s.add_argument("--output", help=f"output directory (default ${OUTPUT_ENV} or ./etcnas-out)")
    s.add_argument("--batch-size", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--lr-halving-period", type=int)
    s.add_argument("--nodes", type=int)
    s.add_argument("--filters", type=int)
    s.add_argument("--dropout", type=float)
    s.add_argument("--ops", help="comma-separated op set")
    s.add_argument("--sweep", help="comma-separated epoch budgets, e.g. 10,20,30,40,50")
    s.add_argument("--dtype", choices=("float64", "float32"), help="training precision (default float64)")
    s.set_defaults(func=cmd_search)

    e = sub.add_parser("eval", help="score a checkpoint on a dataset")
    e.add_argument("checkpoint")
    e.add_argument("dataset")
    e.add_argument("--out", help="CSV path (also printed)")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("report", help="top-N and epoch-sweep tables from search reports")
    r.add_argument("reports", nargs="+")
    r.add_argument("--grid", help="comma-separated N values (default 1,5,10,20,30)")
    r.add_argument("--out")
    r.set_defaults(func=cmd_report)

    z = sub.add_parser("space-size", help="number of architectures in the cell space")
    z.add_argument("--nodes", type=int, default=4)
    z.add_argument("--ops")
    z.add_argument("--cells", default="normal,reduction")
    z.set_defaults(func=cmd_space_size)

    b = sub.add_parser("build-reference", help="serialize a reference baseline model")
    b.add_argument("name")
    b.add_argument("--input-len", type=int)
    b.add_argument("--num-classes", type=int, default=8)
    b.add_argument("--out")
    b.set_defaults(func=cmd_build_reference)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except (UsageError, EtcNasError, FileNotFoundError, IsADirectoryError, PermissionError,
            json.JSONDecodeError, ValueError) as exc:
        print(f"etcnas: error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        print("etcnas: interrupted", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        print(f"etcnas: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
