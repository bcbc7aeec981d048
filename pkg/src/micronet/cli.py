"""Command-line interface.

Subcommands: analyze, verify, infer, train, bench, sweep. Exit codes:
0 success, 1 verification failure, 2 usage or configuration error,
3 missing input file, 4 malformed archive or dataset. The MICRONET_SEED
environment variable supplies the default seed where --seed is omitted.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import analysis
from .data import DatasetError, load_dataset, save_dataset
from .models import VARIANTS, build_model
from .module import Context
from .tensor import no_grad
from .train import evaluate, make_synthetic, train_model
from .weights_io import ArchiveError, load_model, save_weights

EXIT_OK = 0
EXIT_VERIFY = 1
EXIT_USAGE = 2
EXIT_MISSING = 3
EXIT_FORMAT = 4


def _env_seed() -> int:
    raw = os.environ.get("MICRONET_SEED", "0")
    try:
        return int(raw)
    except ValueError:
        raise ValueError(f"MICRONET_SEED must be an integer, got {raw!r}")


def _seed(args) -> int:
    return args.seed if args.seed is not None else _env_seed()


def _emit(args, payload: dict, text: str) -> None:
    out = analysis.format_json(payload) if args.json else text
    if getattr(args, "output", None):
        with open(args.output, "w") as fh:
            fh.write(out + "\n")
    else:
        print(out)


# ---------------------------------------------------------------------------
# subcommands

def cmd_analyze(args) -> int:
    net = build_model(args.variant, seed=0)
    report = analysis.count_costs(net, args.resolution)
    budget = analysis.check_budget(report)
    lines = [report.format_table()]
    payload = report.to_json()
    if budget:
        payload["budget"] = [
            {"metric": m, "value": v, "target": t, "within": w}
            for m, v, t, w in budget
        ]
        for m, v, t, w in budget:
            verdict = "within" if w else "OUTSIDE"
            lines.append(f"{m}: {v:,} vs target {t:,} ({verdict} "
                         f"{analysis.BUDGET_TOLERANCE:.0%})")
    lines.append(f"dynamic activation share: {report.dynamic_madds:,} madds, "
                 f"{report.dynamic_params:,} params")
    _emit(args, payload, "\n".join(lines))
    return EXIT_OK


def cmd_verify(args) -> int:
    net = build_model(args.variant, seed=_seed(args), dtype=np.float64)
    report = analysis.verify_model(net, args.resolution,
                                   np.random.default_rng(_seed(args)))
    lines = []
    for row in report["budget"]:
        lines.append(f"budget {row['metric']}: {row['value']:,} vs "
                     f"{row['target']:,} -> {'ok' if row['within'] else 'FAIL'}")
    for row in report["rank_law"]:
        lines.append(f"rank law {row['layer']}: worst ratio "
                     f"{row['worst_ratio']:.2e} -> {'ok' if row['ok'] else 'FAIL'}")
    for row in report["connectivity"]:
        lines.append(f"connectivity {row['layer']}: {row['paths_per_output']} "
                     f"paths/output -> {'ok' if row['ok'] else 'FAIL'}")
    for row in report["factorization"]:
        lines.append(f"factorization {row['layer']}: max err "
                     f"{row['max_error']:.2e} -> {'ok' if row['ok'] else 'FAIL'}")
    lines.append("PASS" if report["passed"] else "FAIL")
    _emit(args, report, "\n".join(lines))
    return EXIT_OK if report["passed"] else EXIT_VERIFY


def cmd_infer(args) -> int:
    net = load_model(args.weights)
    images, labels = load_dataset(args.data)
    if images.shape[1] != 3:
        raise DatasetError(f"expected 3-channel images, got {images.shape[1]}")
    preds = []
    with no_grad():
        for start in range(0, len(images), args.batch_size):
            logits = net(images[start:start + args.batch_size],
                         Context(training=False))
            preds.extend(int(i) for i in logits.data.argmax(axis=1))
    preds = np.asarray(preds)
    correct = int((preds == labels).sum())
    acc = correct / len(labels)
    shown = preds[:args.limit].tolist()
    payload = {
        "schema": "micronet.infer/1",
        "variant": net.spec.name,
        "count": len(preds),
        "accuracy": acc,
        "predictions": shown,
    }
    text = (f"{net.spec.name}: {len(preds)} images, accuracy {acc:.4f}\n"
            f"first predictions: {shown}")
    _emit(args, payload, text)
    return EXIT_OK


def cmd_train(args) -> int:
    seed = _seed(args)
    if args.data:
        images, labels = load_dataset(args.data)
    else:
        images, labels = make_synthetic(args.synthetic, seed=seed)
    classes = int(labels.max()) + 1 if len(labels) else 2
    net = build_model(args.variant, num_classes=max(classes, 2),
                      seed=seed, dtype=np.float64)
    history = train_model(
        net, images, labels, epochs=args.epochs, base_lr=args.lr,
        batch_size=args.batch_size, momentum=args.momentum,
        weight_decay=args.weight_decay, seed=seed,
        target_accuracy=args.target_accuracy,
        log=None if args.json else lambda s: print(
            f"epoch {s.epoch:3d}  lr {s.lr:.5f}  loss {s.loss:.4f}  "
            f"acc {s.accuracy:.4f}"))
    eval_loss, eval_acc = evaluate(net, images, labels)
    if args.output:
        save_weights(args.output, net)
    payload = {
        "schema": "micronet.train/1",
        "variant": args.variant,
        "seed": seed,
        "epochs_run": len(history),
        "final": {"loss": history[-1].loss, "accuracy": history[-1].accuracy},
        "eval": {"loss": eval_loss, "accuracy": eval_acc},
        "weights": args.output,
        "history": [
            {"epoch": s.epoch, "lr": s.lr, "loss": s.loss,
             "accuracy": s.accuracy} for s in history
        ],
    }
    text = (f"trained {args.variant} for {len(history)} epochs: "
            f"train acc {history[-1].accuracy:.4f}, eval acc {eval_acc:.4f}"
            + (f"\nsaved weights to {args.output}" if args.output else ""))
    print(analysis.format_json(payload) if args.json else text)
    return EXIT_OK


def cmd_bench(args) -> int:
    if args.threads != 1:
        raise ValueError("only --threads 1 is supported")
    net = build_model(args.variant, seed=_seed(args))
    x = np.random.default_rng(_seed(args)).standard_normal(
        (1, 3, args.resolution, args.resolution)).astype(net.dtype)
    times = []
    with no_grad():
        for i in range(args.warmup + args.repeats):
            t0 = time.perf_counter()
            net(x, Context(training=False))
            dt = time.perf_counter() - t0
            if i >= args.warmup:
                times.append(dt * 1000.0)
    times = np.asarray(times)
    payload = {
        "schema": "micronet.bench/1",
        "variant": args.variant,
        "resolution": args.resolution,
        "warmup": args.warmup,
        "repeats": args.repeats,
        "mean_ms": float(times.mean()),
        "median_ms": float(np.median(times)),
        "p95_ms": float(np.percentile(times, 95)),
        "min_ms": float(times.min()),
        "max_ms": float(times.max()),
    }
    text = (f"{args.variant} @ {args.resolution}: mean {payload['mean_ms']:.2f} ms, "
            f"median {payload['median_ms']:.2f} ms, p95 {payload['p95_ms']:.2f} ms "
            f"({args.repeats} runs, {args.warmup} warmup excluded)")
    _emit(args, payload, text)
    return EXIT_OK


def cmd_sweep(args) -> int:
    sweep = analysis.sweep_tradeoff(args.budget, args.reduction,
                                    args.max_groups)
    _emit(args, sweep, analysis.format_sweep(sweep))
    return EXIT_OK


def cmd_dataset(args) -> int:
    images, labels = make_synthetic(args.count, size=args.size,
                                    seed=_seed(args))
    save_dataset(args.output, images, labels)
    payload = {"schema": "micronet.dataset/1", "count": args.count,
               "size": args.size, "directory": args.output}
    print(analysis.format_json(payload) if args.json else
          f"wrote {args.count} synthetic images to {args.output}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="micronet",
        description="Cost analysis, verification, training and inference "
                    "for micro-factorized networks.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, output=True):
        p.add_argument("--json", action="store_true",
                       help="emit machine-readable JSON")
        if output:
            p.add_argument("--output", help="write the report to a file")

    p = sub.add_parser("analyze", help="per-layer madds/params table")
    p.add_argument("--variant", choices=VARIANTS, required=True)
    p.add_argument("--resolution", type=int, default=224)
    common(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("verify", help="structural checks and budgets")
    p.add_argument("--variant", choices=VARIANTS, required=True)
    p.add_argument("--resolution", type=int, default=224)
    p.add_argument("--seed", type=int, default=None)
    common(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("infer", help="classify a dataset with saved weights")
    p.add_argument("--weights", required=True)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--limit", type=int, default=10,
                   help="number of predictions to print")
    common(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("train", help="train a variant and save weights")
    p.add_argument("--variant", choices=VARIANTS, default="tiny")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--data", help="dataset directory")
    group.add_argument("--synthetic", type=int, default=128, metavar="N",
                       help="train on N generated images")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--weight-decay", type=float, default=3e-5)
    p.add_argument("--target-accuracy", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--output", help="weight archive path")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("bench", help="single-image latency")
    p.add_argument("--variant", choices=VARIANTS, required=True)
    p.add_argument("--resolution", type=int, default=224)
    p.add_argument("--repeats", type=int, default=200)
    p.add_argument("--warmup", type=int, default=50)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--seed", type=int, default=None)
    common(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("sweep", help="connectivity/width trade-off table")
    p.add_argument("--budget", type=float, required=True,
                   help="pointwise madds per position")
    p.add_argument("--reduction", type=int, required=True)
    p.add_argument("--max-groups", type=int, default=None)
    common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("dataset", help="generate a synthetic dataset")
    p.add_argument("--count", type=int, default=128)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--output", required=True, help="target directory")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_dataset)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as e:
        name = getattr(e, "filename", None) or e
        print(f"error: missing file: {name}", file=sys.stderr)
        return EXIT_MISSING
    except (ArchiveError, DatasetError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FORMAT
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
