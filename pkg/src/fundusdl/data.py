"""Dataset manifest, train/val split, label encodings, and augmentation.

The manifest is a CSV with header `id_code,diagnosis`; each id_code names a
PNG under the image directory and diagnosis is an integer severity grade in
0..4.  Augmentation mirrors the training recipe: random zoom in
[1-zoom, 1+zoom] about the image centre with zero fill, then independent
horizontal/vertical flips with probability 0.5 each.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .prep import apply_filter, read_png, resize, to_tensor

GRADES = (0, 1, 2, 3, 4)
NUM_CLASSES = 5
ENCODINGS = ("onehot", "ordinal")


@dataclass(frozen=True)
class SampleRecord:
    id_code: str
    grade: int
    path: Path


@dataclass
class DatasetManifest:
    records: list[SampleRecord]

    def __len__(self) -> int:
        return len(self.records)

    @property
    def grades(self) -> np.ndarray:
        return np.array([r.grade for r in self.records], dtype=np.int64)


def load_manifest(csv_path, image_dir) -> DatasetManifest:
    """Parse the manifest and verify every referenced image exists."""
    csv_path = Path(csv_path)
    image_dir = Path(image_dir)
    with open(csv_path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{csv_path}: empty manifest") from None
        if header != ["id_code", "diagnosis"]:
            raise ValueError(
                f"{csv_path}: bad header {header!r}, expected ['id_code', 'diagnosis']"
            )
        records = []
        for line_no, row in enumerate(reader, start=2):
            if len(row) != 2:
                raise ValueError(f"{csv_path}: row {line_no}: expected 2 fields, got {len(row)}")
            id_code, raw_grade = row[0].strip(), row[1].strip()
            if not id_code:
                raise ValueError(f"{csv_path}: row {line_no}: empty id_code")
            try:
                grade = int(raw_grade)
            except ValueError:
                raise ValueError(
                    f"{csv_path}: row {line_no}: diagnosis {raw_grade!r} is not an integer"
                ) from None
            if grade not in GRADES:
                raise ValueError(
                    f"{csv_path}: row {line_no}: diagnosis {grade} outside 0..4"
                )
            path = image_dir / f"{id_code}.png"
            if not path.exists():
                raise ValueError(f"{csv_path}: row {line_no}: missing image {path}")
            records.append(SampleRecord(id_code, grade, path))
    if not records:
        raise ValueError(f"{csv_path}: empty manifest")
    return DatasetManifest(records)


def split_indices(
    grades: np.ndarray, val_fraction: float, seed, stratify: bool = False
) -> tuple[np.ndarray, np.ndarray]:
    """Seeded uniform shuffle; the first floor(n * val_fraction) go to val.

    With stratify=True the same rule is applied within each grade.  Returns
    (train_idx, val_idx) in shuffle order.
    """
    n = len(grades)
    if n < 2:
        raise ValueError(f"cannot split {n} records")
    if not 0.0 <= val_fraction < 1.0:
        raise ValueError(f"val_fraction must be in [0, 1), got {val_fraction}")
    rng = np.random.default_rng(seed)
    if not stratify:
        perm = rng.permutation(n)
        n_val = int(n * val_fraction)
        return perm[n_val:], perm[:n_val]
    train_parts, val_parts = [], []
    for g in GRADES:
        idx = np.flatnonzero(grades == g)
        perm = idx[rng.permutation(len(idx))]
        n_val = int(len(idx) * val_fraction)
        val_parts.append(perm[:n_val])
        train_parts.append(perm[n_val:])
    return np.concatenate(train_parts), np.concatenate(val_parts)


def one_hot(grade: int) -> np.ndarray:
    if grade not in GRADES:
        raise ValueError(f"grade {grade} outside 0..4")
    y = np.zeros(NUM_CLASSES)
    y[grade] = 1.0
    return y


def ordinal(grade: int) -> np.ndarray:
    """Cumulative multi-hot: grade g sets positions 0..g."""
    if grade not in GRADES:
        raise ValueError(f"grade {grade} outside 0..4")
    y = np.zeros(NUM_CLASSES)
    y[: grade + 1] = 1.0
    return y


def encode_labels(grades, kind: str) -> np.ndarray:
    if kind not in ENCODINGS:
        raise ValueError(f"unknown label encoding {kind!r}; choose from {ENCODINGS}")
    fn = one_hot if kind == "onehot" else ordinal
    return np.stack([fn(int(g)) for g in grades])


def zoom_image(
    x: np.ndarray, factor: float, bounds: tuple[float, float] = (0.8, 1.2)
) -> np.ndarray:
    """Zoom a (n, 3, h, w) tensor about its centre by `factor`.

    factor > 1 magnifies; factor < 1 shrinks, exposing a zero-filled border.
    Resampling is bilinear; out-of-frame samples contribute zero.  A factor
    of exactly 1 is the identity.  Factors outside `bounds` are rejected.
    """
    lo, hi = bounds
    if not lo <= factor <= hi:
        raise ValueError(f"zoom factor {factor} outside [{lo}, {hi}]")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4:
        raise ValueError(f"expected a rank-4 tensor, got rank {x.ndim}")
    if factor == 1.0:
        return x
    n, c, h, w = x.shape

    def axis(extent: int):
        centre = (extent - 1) / 2.0
        s = centre + (np.arange(extent) - centre) / factor
        i0 = np.floor(s).astype(np.intp)
        frac = s - i0
        i1 = i0 + 1
        w0 = (1.0 - frac) * ((i0 >= 0) & (i0 < extent))
        w1 = frac * ((i1 >= 0) & (i1 < extent))
        return np.clip(i0, 0, extent - 1), np.clip(i1, 0, extent - 1), w0, w1

    y0, y1, wy0, wy1 = axis(h)
    x0, x1, wx0, wx1 = axis(w)
    rows0 = x[:, :, y0] * wy0[None, None, :, None] + x[:, :, y1] * wy1[None, None, :, None]
    out = (
        rows0[:, :, :, x0] * wx0[None, None, None, :]
        + rows0[:, :, :, x1] * wx1[None, None, None, :]
    )
    return out


def flip_h(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(x[:, :, :, ::-1])


def flip_v(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(x[:, :, ::-1, :])


def augment(x: np.ndarray, rng: np.random.Generator, zoom: float = 0.2) -> np.ndarray:
    """Random zoom then independent h/v flips; validation data never sees this."""
    if not 0.0 <= zoom < 1.0:
        raise ValueError(f"zoom range must be in [0, 1), got {zoom}")
    factor = 1.0 + rng.uniform(-zoom, zoom)
    out = zoom_image(x, factor, bounds=(1.0 - zoom, 1.0 + zoom))
    if rng.random() < 0.5:
        out = flip_h(out)
    if rng.random() < 0.5:
        out = flip_v(out)
    return out


def load_arrays(
    records: list[SampleRecord], filter_kind: str, size: int
) -> tuple[np.ndarray, np.ndarray]:
    """Decode, filter, resize, and stack every record into one (n, 3, s, s) tensor."""
    tensors = []
    for rec in records:
        img = resize(apply_filter(read_png(rec.path), filter_kind), size)
        tensors.append(to_tensor(img))
    labels = np.array([r.grade for r in records], dtype=np.int64)
    return np.concatenate(tensors, axis=0), labels
