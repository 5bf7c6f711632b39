"""Command line entry point: ``mixmatch {synth,tune,eval,compare,sweep,check}``."""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from .data import (STREAM_TRAIN, DatasetError, RunConfig, derive_rng, load_dataset,
                   make_synthetic, write_dataset)
from .embedder import Embedder, NumericError
from .evaluation import (EvaluationError, compare_strategies, evaluate, experiment_svg,
                         sweep_graph_size)
from .graph import TripletError, build_graph
from .metric import DegenerateEmbeddingError
from .sampling import EmptyBatchError
from .tuning import STRATEGIES, draw_batch, tune

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _schedule(text):
    try:
        pairs = [item.split(":") for item in text.split(",") if item]
        return [(int(i), float(r)) for i, r in pairs]
    except ValueError:
        raise argparse.ArgumentTypeError("expected ITER:RATE[,ITER:RATE...]")


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError("expected comma-separated integers")


def _add_config_flags(p, seed_required):
    p.add_argument("--data", required=True, help="directory of image_k.ppm/label_k.pgm pairs")
    p.add_argument("--seed", type=int, required=seed_required, default=None if seed_required else 0)
    p.add_argument("--images-per-batch", type=int, default=16)
    p.add_argument("--patches-per-image", type=int, default=10)
    p.add_argument("--patch-resize", type=int, default=32)
    p.add_argument("--margin", type=float, default=2.1, dest="margin_alpha")
    p.add_argument("--embed-dim", type=int, default=32)
    p.add_argument("--hidden-dim", type=int, default=64)
    p.add_argument("--iterations", type=int, default=400)
    p.add_argument("--lr-schedule", type=_schedule, default=None,
                   help="ITER:RATE pairs, default 0:0.01 then 0.001 from 3/4 of the run")
    p.add_argument("--overlap-iou-max", type=float, default=0.5)
    p.add_argument("--patch-scale", type=float, nargs=2, default=(0.2, 0.6),
                   metavar=("MIN", "MAX"))
    p.add_argument("--variant", choices=("identity", "linear", "two-layer"), default="two-layer")


def _config(args) -> RunConfig:
    try:
        return RunConfig(
            seed=args.seed, images_per_batch=args.images_per_batch,
            patches_per_image=args.patches_per_image, patch_resize=args.patch_resize,
            margin_alpha=args.margin_alpha, embed_dim=args.embed_dim,
            hidden_dim=args.hidden_dim, iterations=args.iterations,
            learning_rate_schedule=args.lr_schedule or [],
            overlap_iou_max=args.overlap_iou_max, patch_scale_range=tuple(args.patch_scale),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mixmatch", description="Mix-and-match triplet tuning at desk scale.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write a synthetic PPM/PGM dataset")
    p.add_argument("--images", type=int, required=True)
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("tune", help="train an embedder, write checkpoint and history CSV")
    _add_config_flags(p, seed_required=True)
    p.add_argument("--strategy", choices=STRATEGIES, default="graph")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--history", help="per-iteration CSV (default: <out>.history.csv)")
    p.add_argument("--dump-graph", help="write the first step's graph as an A|R edge list")

    p = sub.add_parser("eval", help="evaluate a checkpoint on held-out patches")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--patches-per-image", type=int, default=10)
    p.add_argument("--margin", type=float, default=2.1, dest="margin_alpha")
    p.add_argument("--overlap-iou-max", type=float, default=0.5)
    p.add_argument("--patch-scale", type=float, nargs=2, default=(0.2, 0.6),
                   metavar=("MIN", "MAX"))

    p = sub.add_parser("compare", help="graph vs random triplets over several seeds")
    _add_config_flags(p, seed_required=True)
    p.add_argument("--seeds", type=int, default=10, help="number of paired runs")
    p.add_argument("--out", required=True)
    p.add_argument("--svg", help="chart path (default: compare.svg next to --out)")

    p = sub.add_parser("sweep", help="graph-size study")
    _add_config_flags(p, seed_required=True)
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--nodes", type=_int_list, default=[100, 200, 400])
    p.add_argument("--out", required=True)
    p.add_argument("--svg", help="chart path (default: sweep.svg next to --out)")

    p = sub.add_parser("check", help="gradient and graph-invariant self-tests")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--batches", type=int, default=100)
    return parser


def cmd_synth(args):
    images = make_synthetic(args.images, args.classes, (args.size, args.size), args.seed)
    write_dataset(images, args.out)
    print(f"wrote {len(images)} image/label pairs to {args.out}")


def cmd_tune(args):
    cfg = _config(args)
    images = load_dataset(args.data)
    state = tune(images, cfg, args.strategy, args.variant)
    state.embedder.save(args.out)
    history = args.history or f"{args.out}.history.csv"
    with open(history, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["iteration", "loss", "active_fraction"])
        for it, loss, active in state.history:
            w.writerow([it, repr(loss), repr(active)])
    if args.dump_graph:
        batch = draw_batch(images, cfg, 0)
        build_graph(batch, derive_rng(cfg.seed, STREAM_TRAIN, 0, 2)).dump(args.dump_graph)
    last = state.history[-1][1] if state.history else float("nan")
    print(f"{state.iteration} iterations ({len(state.skipped)} skipped), final loss {last:.4f}")
    print(f"checkpoint {args.out}, history {history}")


def cmd_eval(args):
    e = Embedder.load(args.checkpoint)
    images = load_dataset(args.data)
    side = int(round((e.input_dim / images[0].channels) ** 0.5))
    if side * side * images[0].channels != e.input_dim:
        raise DatasetError(f"checkpoint input size {e.input_dim} does not fit "
                           f"{images[0].channels}-channel square patches")
    cfg = RunConfig(seed=args.seed, patch_resize=side, patches_per_image=args.patches_per_image,
                    margin_alpha=args.margin_alpha, overlap_iou_max=args.overlap_iou_max,
                    patch_scale_range=tuple(args.patch_scale), embed_dim=e.embed_dim)
    report = evaluate(e, images, cfg, args.seed)
    for k, v in report.as_dict().items():
        print(f"{k}={v:.6f}")


def _write_experiment(result, args, default_svg):
    result.write_csv(args.out)
    svg = args.svg or str(Path(args.out).with_name(default_svg))
    if result.rows:
        Path(svg).write_text(experiment_svg(result))
    for s in result.summary():
        print(f"{s['arm']}: knn {s['knn_accuracy_mean']:.4f}±{s['knn_accuracy_std']:.4f}  "
              f"satisfaction {s['triplet_satisfaction_mean']:.4f}  "
              f"ratio {s['intra_inter_ratio_mean']:.4f}  {s['wall_ms_mean']:.1f} ms/it")
    for seed, arm, msg in result.failures:
        print(f"failed: seed {seed} arm {arm}: {msg}", file=sys.stderr)
    print(f"results {args.out}, chart {svg}")


def cmd_compare(args):
    cfg = _config(args)
    images = load_dataset(args.data)
    seeds = [args.seed + i for i in range(args.seeds)]
    _write_experiment(compare_strategies(images, cfg, seeds, args.variant), args, "compare.svg")


def cmd_sweep(args):
    cfg = _config(args)
    images = load_dataset(args.data)
    seeds = [args.seed + i for i in range(args.seeds)]
    try:
        result = sweep_graph_size(images, cfg, args.nodes, seeds, args.variant)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    _write_experiment(result, args, "sweep.svg")


def cmd_check(args):
    from .selfcheck import run_all

    rows = run_all(args.seed, args.instances, args.batches)
    for name, ok, detail in rows:
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    if not all(ok for _, ok, _ in rows):
        raise NumericError("self-test failed")


COMMANDS = {"synth": cmd_synth, "tune": cmd_tune, "eval": cmd_eval, "compare": cmd_compare,
            "sweep": cmd_sweep, "check": cmd_check}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"mixmatch {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetError, EmptyBatchError, TripletError, EvaluationError, OSError) as exc:
        print(f"mixmatch {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, DegenerateEmbeddingError, FloatingPointError) as exc:
        print(f"mixmatch {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"mixmatch {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
