"""Training loop, per-epoch metrics, and the architecture x filter matrix.

All randomness flows from RunConfig.seed; subsystems draw from streams keyed
as (seed, offset, ...) so results are reproducible bit-for-bit, whether the
matrix cells run serially or in parallel worker processes.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import DatasetManifest, augment, encode_labels, load_arrays, split_indices
from .losses import LOSSES, accuracy
from .models import ARCHITECTURES, SCALES, build_model, save_model
from .optim import AdamState, adam_step
from .plots import emit_plots
from .prep import FILTERS, canonical_filter

# stream offsets hung off the run seed
SEED_SPLIT = 1
SEED_INIT = 2
SEED_SHUFFLE = 3
SEED_AUGMENT = 4
SEED_DROPOUT = 5

METRICS_HEADER = "epoch,train_loss,train_acc,val_loss,val_acc"
SUMMARY_HEADER = "architecture,filter,avg_val_acc,avg_val_loss,best_epoch,status"


class TrainingAborted(RuntimeError):
    def __init__(self, epoch: int, step: int, value: float):
        super().__init__(f"non-finite loss {value} at epoch {epoch}, step {step}")
        self.epoch = epoch
        self.step = step


@dataclass
class RunConfig:
    architecture: str = "densenet-mini"
    filter: str = "rgb"
    epochs: int = 15
    batch_size: int = 32
    lr: float = 1e-4
    seed: int = 0
    scale: str = "tiny"
    image_size: int = 224
    loss: str = "bce"
    label_encoding: str = "onehot"
    dropout: float = 0.5
    zoom: float = 0.2
    val_fraction: float = 0.2
    stratify: bool = False
    bn_momentum: float = 0.9
    bn_eps: float = 1e-5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-7

    def validate(self) -> None:
        if self.architecture not in ARCHITECTURES:
            raise ValueError(
                f"unknown architecture {self.architecture!r}; "
                f"choose from {', '.join(ARCHITECTURES)}"
            )
        if self.scale not in SCALES:
            raise ValueError(f"unknown scale {self.scale!r}; choose from {', '.join(SCALES)}")
        self.filter = canonical_filter(self.filter)
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.label_encoding not in ("onehot", "ordinal"):
            raise ValueError(f"unknown label encoding {self.label_encoding!r}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.image_size < 8:
            raise ValueError(f"image_size must be >= 8, got {self.image_size}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if not 0.0 <= self.zoom < 1.0:
            raise ValueError(f"zoom must be in [0, 1), got {self.zoom}")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError(f"val_fraction must be in [0, 1), got {self.val_fraction}")


@dataclass(frozen=True)
class EpochRow:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float


@dataclass
class MetricsLog:
    rows: list[EpochRow] = field(default_factory=list)

    @property
    def best_epoch(self) -> int:
        """1-based epoch with the highest validation accuracy (earliest on ties)."""
        if not self.rows:
            raise ValueError("empty metrics log")
        accs = [r.val_acc for r in self.rows]
        return int(np.argmax(accs)) + 1


def summarize(log: MetricsLog) -> tuple[float, float]:
    """Mean validation accuracy and loss from the best epoch to the end, inclusive."""
    tail = log.rows[log.best_epoch - 1 :]
    return (
        float(np.mean([r.val_acc for r in tail])),
        float(np.mean([r.val_loss for r in tail])),
    )


@dataclass
class PreparedData:
    """Preprocessed tensors plus the split; images are (n, 3, s, s) in [0, 1]."""

    images: np.ndarray
    labels: np.ndarray
    train_idx: np.ndarray
    val_idx: np.ndarray


def _evaluate(model, images, targets, labels, loss_fn, chunk: int = 64):
    n = len(labels)
    loss_sum = 0.0
    correct = 0.0
    for i in range(0, n, chunk):
        p = model.forward(images[i : i + chunk], training=False)
        out = loss_fn(targets[i : i + chunk], p)
        k = len(labels[i : i + chunk])
        loss_sum += out.value * k
        correct += accuracy(labels[i : i + chunk], p) * k
    return loss_sum / n, correct / n


def train(config: RunConfig, data: PreparedData):
    """Run the full loop; returns (MetricsLog, trained model).

    Each epoch visits every training sample exactly once in a seeded shuffled
    order, in ceil(n_train / batch_size) steps (the last batch may be short).
    Training rows report metrics as seen during the updates (augmented
    batches, dropout active); validation runs in eval mode, unaugmented.
    """
    config.validate()
    n_train = len(data.train_idx)
    if n_train == 0:
        raise ValueError("0 training steps: the training split is empty")
    if len(data.val_idx) == 0:
        raise ValueError("validation split is empty")
    size = data.images.shape[2]
    model = build_model(
        config.architecture,
        scale=config.scale,
        input_shape=(3, size, size),
        dropout_rate=config.dropout,
    )
    from .layers import BatchNorm2D

    for leaf in model.leaves():
        if isinstance(leaf, BatchNorm2D):
            leaf.momentum = config.bn_momentum
            leaf.eps = config.bn_eps
    model.init_params(np.random.default_rng((config.seed, SEED_INIT)))
    state = AdamState(
        lr=config.lr, beta1=config.adam_beta1, beta2=config.adam_beta2, eps=config.adam_eps
    )
    loss_fn = LOSSES[config.loss]
    targets = encode_labels(data.labels, config.label_encoding)
    val_images = data.images[data.val_idx]
    val_targets = targets[data.val_idx]
    val_labels = data.labels[data.val_idx]
    params = model.params()
    log = MetricsLog()
    steps = math.ceil(n_train / config.batch_size)
    for epoch in range(1, config.epochs + 1):
        order = np.random.default_rng((config.seed, SEED_SHUFFLE, epoch)).permutation(
            data.train_idx
        )
        loss_sum = 0.0
        correct = 0.0
        for step in range(steps):
            batch = order[step * config.batch_size : (step + 1) * config.batch_size]
            xb = np.concatenate(
                [
                    augment(
                        data.images[i : i + 1],
                        np.random.default_rng((config.seed, SEED_AUGMENT, epoch, int(i))),
                        zoom=config.zoom,
                    )
                    for i in batch
                ]
            )
            p = model.forward(
                xb,
                training=True,
                rng=np.random.default_rng((config.seed, SEED_DROPOUT, epoch, step)),
            )
            out = loss_fn(targets[batch], p)
            if not np.isfinite(out.value):
                raise TrainingAborted(epoch, step, out.value)
            model.backward(out.gradient)
            adam_step([q.data for q in params], [q.grad for q in params], state)
            loss_sum += out.value * len(batch)
            correct += accuracy(data.labels[batch], p) * len(batch)
        val_loss, val_acc = _evaluate(model, val_images, val_targets, val_labels, loss_fn)
        log.rows.append(
            EpochRow(epoch, loss_sum / n_train, correct / n_train, val_loss, val_acc)
        )
    return log, model


# ---------------------------------------------------------------------------
# run directory artifacts


def write_metrics_csv(log: MetricsLog, path) -> None:
    lines = [METRICS_HEADER]
    for r in log.rows:
        lines.append(
            f"{r.epoch},{r.train_loss:.6f},{r.train_acc:.6f},{r.val_loss:.6f},{r.val_acc:.6f}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def write_config_json(config: RunConfig, path) -> None:
    Path(path).write_text(json.dumps(asdict(config), indent=2, sort_keys=True) + "\n")


def write_split_csv(manifest: DatasetManifest, val_idx: np.ndarray, path) -> None:
    val = set(int(i) for i in val_idx)
    lines = ["id_code,subset"]
    for i, rec in enumerate(manifest.records):
        lines.append(f"{rec.id_code},{'val' if i in val else 'train'}")
    Path(path).write_text("\n".join(lines) + "\n")


def run_training(
    config: RunConfig,
    manifest: DatasetManifest,
    out_dir,
    split: tuple[np.ndarray, np.ndarray] | None = None,
) -> MetricsLog:
    """Train one configuration and write the run directory artifacts."""
    config.validate()
    if split is None:
        split = split_indices(
            manifest.grades, config.val_fraction, (config.seed, SEED_SPLIT), config.stratify
        )
    train_idx, val_idx = split
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_config_json(config, out_dir / "config.json")
    write_split_csv(manifest, val_idx, out_dir / "split.csv")
    images, labels = load_arrays(manifest.records, config.filter, config.image_size)
    data = PreparedData(images, labels, np.asarray(train_idx), np.asarray(val_idx))
    log, model = train(config, data)
    write_metrics_csv(log, out_dir / "metrics.csv")
    save_model(model, out_dir / "model.fdl")
    emit_plots(log, out_dir)
    return log


# ---------------------------------------------------------------------------
# experiment matrix


def matrix_cells() -> list[tuple[str, str]]:
    return [(arch, filt) for arch in ARCHITECTURES for filt in FILTERS]


def worker_count() -> int:
    """Parallelism cap from FDL_THREADS; 0 or unset means one per cpu."""
    raw = os.environ.get("FDL_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n <= 0:
        n = os.cpu_count() or 1
    return n


@dataclass(frozen=True)
class CellResult:
    architecture: str
    filter: str
    status: str  # ok | failed
    avg_val_acc: float | None
    avg_val_loss: float | None
    best_epoch: int | None
    error: str = ""


def _run_cell(args) -> CellResult:
    config, manifest, out_dir, split = args
    try:
        log = run_training(config, manifest, out_dir, split)
        acc, loss = summarize(log)
        return CellResult(config.architecture, config.filter, "ok", acc, loss, log.best_epoch)
    except Exception as exc:
        return CellResult(config.architecture, config.filter, "failed", None, None, None, str(exc))


def write_summary_csv(results: list[CellResult], path) -> None:
    lines = [SUMMARY_HEADER]
    for r in results:
        if r.status == "ok":
            lines.append(
                f"{r.architecture},{r.filter},{r.avg_val_acc:.6f},"
                f"{r.avg_val_loss:.6f},{r.best_epoch},ok"
            )
        else:
            lines.append(f"{r.architecture},{r.filter},,,,failed")
    Path(path).write_text("\n".join(lines) + "\n")


def run_matrix(
    base: RunConfig,
    manifest: DatasetManifest,
    out_root,
    parallel: bool = False,
) -> list[CellResult]:
    """Run every architecture x filter cell over a shared split.

    Cell i trains with seed base.seed + i, so serial and parallel execution
    produce identical artifacts.
    """
    base.validate()
    out_root = Path(out_root)
    split = split_indices(
        manifest.grades, base.val_fraction, (base.seed, SEED_SPLIT), base.stratify
    )
    jobs = []
    for i, (arch, filt) in enumerate(matrix_cells()):
        config = replace(base, architecture=arch, filter=filt, seed=base.seed + i)
        jobs.append((config, manifest, out_root / f"{arch}_{filt}", split))
    if parallel:
        workers = min(worker_count(), len(jobs))
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_cell, jobs))
    else:
        results = [_run_cell(job) for job in jobs]
    out_root.mkdir(parents=True, exist_ok=True)
    write_summary_csv(results, out_root / "summary.csv")
    return results
