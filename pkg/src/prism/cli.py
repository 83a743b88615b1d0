"""
Command-line entry point.

Exit codes: 0 on success, 1 on invalid input or usage (and when
``check-invariance`` finds a failing check), 2 on unexpected errors.
Every output goes to an explicitly given path.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .errors import PrismError, UsageError
from .graphs import SIMILARITY, build_similarity_graph, build_static_graphs
from .invariance import run_invariance_suite
from .io import parse_run_config, parse_structures, write_graphs, write_structures
from .model import ModelConfig, PrismModel, encode_atoms, _as_params
from .synthetic import SYNTHETIC_KINDS, generate_synthetic
from .training import TrainConfig, evaluate, fusion_report, train, write_epoch_log

log = logging.getLogger("prism")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{message}\n{self.format_usage()}")


def _build_parser():
    p = _Parser(prog="prism", description="Periodic multigraph expert models for crystals.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    g = sub.add_parser("build-graphs", help="dump expert graphs as JSON-lines")
    g.add_argument("--input", required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--rc", type=float, required=True, help="atomistic cutoff (Angstrom)")
    g.add_argument("--Rc", type=float, required=True, help="cell-graph cutoff (Angstrom)")
    g.add_argument("--checkpoint", help="add layer-0 similarity graphs using this model")
    g.add_argument("--strict", action="store_true")

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config", help="flat key = value run configuration")
    t.add_argument("--input")
    t.add_argument("--out-dir")
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--record-time", action="store_true",
                   help="fill wall_seconds in the epoch log (breaks byte-reproducibility)")

    e = sub.add_parser("evaluate", help="MAE of a checkpoint on a dataset")
    e.add_argument("--input", required=True)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--out", required=True, help="predictions CSV")

    c = sub.add_parser("check-invariance", help="cell, permutation and rotation checks")
    c.add_argument("--input", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--trials", type=int, default=20)
    c.add_argument("--checkpoint")
    c.add_argument("--seed", type=int, default=0)

    f = sub.add_parser("fusion-report", help="fusion weights per layer across seeds")
    f.add_argument("--checkpoints", nargs="+", required=True)
    f.add_argument("--out", required=True)

    d = sub.add_parser("generate-data", help="synthetic dataset")
    d.add_argument("--kind", choices=SYNTHETIC_KINDS, required=True)
    d.add_argument("--n", type=int, required=True)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--gap-min", type=float, default=4.5)
    d.add_argument("--out", required=True)
    return p


def _cmd_build_graphs(args):
    structures = parse_structures(args.input, strict=args.strict)
    if not args.Rc > args.rc:
        raise UsageError("--Rc must exceed --rc")
    model = PrismModel.load(args.checkpoint) if args.checkpoint else None
    records = []
    for s in structures:
        graphs = build_static_graphs(s, args.rc, args.Rc)
        if model is not None:
            emb = encode_atoms(s.numbers, _as_params(model.params)).data
            graphs[SIMILARITY] = build_similarity_graph(s, emb, model.config.r_f, model.config.max_degree)
        for kind in sorted(graphs):
            records.append(graphs[kind].to_record(s.id))
    write_graphs(args.out, records)


def _cmd_train(args):
    fields, paths = parse_run_config(args.config) if args.config else ({}, {})
    if args.seed is not None:
        fields["seed"] = args.seed
    if args.epochs is not None:
        fields["epochs"] = args.epochs
    data_path = args.input or paths.get("input")
    out_dir = args.out_dir or paths.get("out_dir")
    if not data_path or not out_dir:
        raise UsageError("train needs an input dataset and an output directory")
    config = TrainConfig(**fields)
    dataset = parse_structures(data_path)
    if paths.get("val_input"):
        raise UsageError("val_input is not supported; the split is drawn from input by seed")
    model, rows = train(dataset, config, record_time=args.record_time)
    os.makedirs(out_dir, exist_ok=True)
    model.save(os.path.join(out_dir, "checkpoint.json"))
    write_epoch_log(rows, os.path.join(out_dir, "epochs.csv"))


def _cmd_evaluate(args):
    model = PrismModel.load(args.checkpoint)
    dataset = parse_structures(args.input)
    preds = model.predict(dataset)
    with open(args.out, "w") as fh:
        fh.write("id,prediction,target\n")
        for s, p in zip(dataset, preds):
            fh.write(f"{s.id},{float(p)!r},{'' if s.target is None else repr(float(s.target))}\n")
    if all(s.target is not None for s in dataset):
        print(f"mae {evaluate(model, dataset)!r}")


def _cmd_check_invariance(args):
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    structures = parse_structures(args.input)
    model = PrismModel.load(args.checkpoint) if args.checkpoint else PrismModel(ModelConfig(), seed=args.seed)
    report = run_invariance_suite(model, structures, args.trials, seed=args.seed)
    report.to_csv(args.out)
    return 0 if report.passed else 1


def _cmd_fusion_report(args):
    models = [PrismModel.load(p) for p in args.checkpoints]
    fusion_report(models).to_csv(args.out)


def _cmd_generate_data(args):
    write_structures(args.out, generate_synthetic(args.kind, args.n, args.seed, args.gap_min))


COMMANDS = {
    "build-graphs": _cmd_build_graphs,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "check-invariance": _cmd_check_invariance,
    "fusion-report": _cmd_fusion_report,
    "generate-data": _cmd_generate_data,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args) or 0
    except (PrismError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"prism: error: {exc}", file=sys.stderr)
        if isinstance(exc, UsageError) and "usage:" not in str(exc):
            print(parser.format_usage(), file=sys.stderr, end="")
        return 1
    except Exception as exc:  # noqa: BLE001 - mapped to the internal-error exit code
        log.exception("internal error")
        print(f"prism: internal error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
