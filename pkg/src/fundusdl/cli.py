"""Command-line entry point.

Subcommands: prep, train, matrix, eval, gradcheck, summary.  Exit codes:
0 on success, 1 for usage errors (bad flags, unreadable inputs -- nothing is
written), 2 for runtime failures (aborted training, failed matrix cells,
gradient checks over threshold).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path


class UsageError(Exception):
    """Invalid invocation detected before any output is produced."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2; we want 1
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


FILTER_CHOICES = ("rgb", "green", "hc", "high_contrast")


def _add_train_flags(p: argparse.ArgumentParser, with_arch_filter: bool) -> None:
    from .models import ARCHITECTURES, SCALES

    p.add_argument("--csv", required=True, help="manifest CSV (id_code,diagnosis)")
    p.add_argument("--images", required=True, help="directory of <id_code>.png files")
    p.add_argument("--out", required=True, help="output directory")
    if with_arch_filter:
        p.add_argument("--arch", default="densenet-mini", choices=ARCHITECTURES)
        p.add_argument("--filter", default="rgb", choices=FILTER_CHOICES)
    p.add_argument("--scale", default="tiny", choices=SCALES)
    p.add_argument("--epochs", type=int, default=15)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=None, help="drawn and printed when omitted")
    p.add_argument("--size", type=int, default=224, help="square input size in pixels")
    p.add_argument("--loss", default="bce", choices=("bce", "cce"))
    p.add_argument("--label-encoding", default="onehot", choices=("onehot", "ordinal"))
    p.add_argument("--dropout", type=float, default=0.5)
    p.add_argument("--zoom", type=float, default=0.2)
    p.add_argument("--val-fraction", type=float, default=0.2)
    p.add_argument("--stratify", action="store_true", help="split within each grade")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fundusdl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prep", parents=[], help="filter and resize a directory of PNGs")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--filter", default="rgb", choices=FILTER_CHOICES)
    p.add_argument("--size", type=int, default=224)

    p = sub.add_parser("train", help="train one architecture/filter configuration")
    _add_train_flags(p, with_arch_filter=True)

    p = sub.add_parser("matrix", help="run the 2-architecture x 3-filter experiment matrix")
    _add_train_flags(p, with_arch_filter=False)
    p.add_argument("--parallel", action="store_true", help="one worker process per cell")

    p = sub.add_parser("eval", help="evaluate a saved model on a manifest")
    p.add_argument("--model", required=True)
    p.add_argument("--csv", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--filter", default="rgb", choices=FILTER_CHOICES)
    p.add_argument("--loss", default="bce", choices=("bce", "cce"))
    p.add_argument("--label-encoding", default="onehot", choices=("onehot", "ordinal"))

    p = sub.add_parser("gradcheck", help="verify backward rules by finite differences")
    p.add_argument("--preset", default="ops", choices=("ops", "tiny-densenet", "tiny-resnet"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument(
        "--inject-fault",
        action="store_true",
        help="corrupt one backward rule; the check must then fail",
    )

    p = sub.add_parser("summary", help="print a model's layer table")
    from .models import ARCHITECTURES, SCALES

    p.add_argument("--arch", default="densenet-mini", choices=ARCHITECTURES)
    p.add_argument("--scale", default="tiny", choices=SCALES)
    p.add_argument("--size", type=int, default=224)

    return parser


def _draw_seed_if_missing(args) -> int:
    if args.seed is not None:
        return args.seed
    seed = int.from_bytes(os.urandom(4), "little")
    print(f"seed: {seed} (drawn; pass --seed {seed} to reproduce)")
    return seed


def _load_manifest_or_usage(csv_path: str, images: str):
    from .data import load_manifest

    try:
        return load_manifest(csv_path, images)
    except (OSError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


def _config_from_args(args, arch: str, filt: str):
    from .train import RunConfig

    config = RunConfig(
        architecture=arch,
        filter=filt,
        epochs=args.epochs,
        batch_size=args.batch,
        lr=args.lr,
        seed=args.seed,
        scale=args.scale,
        image_size=args.size,
        loss=args.loss,
        label_encoding=args.label_encoding,
        dropout=args.dropout,
        zoom=args.zoom,
        val_fraction=args.val_fraction,
        stratify=args.stratify,
    )
    try:
        config.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    return config


def cmd_prep(args) -> int:
    from .prep import canonical_filter, prep_directory

    if not Path(args.input).is_dir():
        raise UsageError(f"input directory {args.input} does not exist")
    if args.size < 1:
        raise UsageError(f"bad --size {args.size}")
    try:
        kind = canonical_filter(args.filter)
        processed, skipped = prep_directory(
            args.input, args.output, kind, args.size, log=print
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    effective = {
        "input": args.input,
        "output": args.output,
        "filter": kind,
        "size": args.size,
        "processed": processed,
        "skipped": skipped,
    }
    Path(args.output, "prep.json").write_text(json.dumps(effective, indent=2, sort_keys=True) + "\n")
    print(f"processed {processed} file(s), skipped {skipped}")
    return 0


def cmd_train(args) -> int:
    from .train import TrainingAborted, run_training, summarize

    args.seed = _draw_seed_if_missing(args)
    config = _config_from_args(args, args.arch, args.filter)
    manifest = _load_manifest_or_usage(args.csv, args.images)
    try:
        log = run_training(config, manifest, args.out)
    except TrainingAborted as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return 2
    for r in log.rows:
        print(
            f"epoch {r.epoch}/{config.epochs}  "
            f"train_loss {r.train_loss:.6f}  train_acc {r.train_acc:.6f}  "
            f"val_loss {r.val_loss:.6f}  val_acc {r.val_acc:.6f}"
        )
    acc, loss = summarize(log)
    print(f"best_epoch {log.best_epoch}  avg_val_acc {acc:.6f}  avg_val_loss {loss:.6f}")
    return 0


def cmd_matrix(args) -> int:
    from .train import run_matrix

    args.seed = _draw_seed_if_missing(args)
    config = _config_from_args(args, "densenet-mini", "rgb")
    manifest = _load_manifest_or_usage(args.csv, args.images)
    results = run_matrix(config, manifest, args.out, parallel=args.parallel)
    failed = 0
    for r in results:
        if r.status == "ok":
            print(
                f"{r.architecture:<14} {r.filter:<14} avg_val_acc {r.avg_val_acc:.6f}  "
                f"avg_val_loss {r.avg_val_loss:.6f}  best_epoch {r.best_epoch}"
            )
        else:
            failed += 1
            print(f"{r.architecture:<14} {r.filter:<14} FAILED: {r.error}")
    print(f"summary written to {Path(args.out) / 'summary.csv'}")
    return 2 if failed else 0


def cmd_eval(args) -> int:
    from .data import encode_labels, load_arrays
    from .losses import LOSSES, accuracy
    from .models import load_model

    model_path = Path(args.model)
    if not model_path.is_file():
        raise UsageError(f"model file {args.model} does not exist")
    manifest = _load_manifest_or_usage(args.csv, args.images)
    model = load_model(model_path)
    size = model.input_shape[1]
    images, labels = load_arrays(manifest.records, args.filter, size)
    targets = encode_labels(labels, args.label_encoding)
    loss_fn = LOSSES[args.loss]
    p = model.forward(images, training=False)
    out = loss_fn(targets, p)
    acc = accuracy(labels, p)
    print(f"samples {len(labels)}  loss {out.value:.6f}  accuracy {acc:.6f}")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import THRESHOLD, run_preset

    results = run_preset(args.preset, seed=args.seed, inject_fault=args.inject_fault)
    ok = True
    for name, err in results:
        passed = err < THRESHOLD
        ok &= passed
        print(f"{name:<18} max_rel_err {err:.3e}  {'ok' if passed else 'FAIL'}")
    print(f"gradcheck {'passed' if ok else 'FAILED'} (threshold {THRESHOLD:g})")
    return 0 if ok else 2


def cmd_summary(args) -> int:
    from .models import build_model

    try:
        model = build_model(args.arch, scale=args.scale, input_shape=(3, args.size, args.size))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    print(f"{args.arch} ({args.scale}) on 3x{args.size}x{args.size} input")
    print(model.summary())
    return 0


COMMANDS = {
    "prep": cmd_prep,
    "train": cmd_train,
    "matrix": cmd_matrix,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "summary": cmd_summary,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"fundusdl {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 2
    except Exception as exc:
        print(f"fundusdl {args.command}: failed: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
