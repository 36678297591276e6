"""Fundus image preprocessing: channel filters, equalization, resize.

Images are 8-bit RGB held as (h, w, 3) uint8 arrays.  Three filters feed the
experiment matrix: "rgb" passes pixels through, "green" zeroes the red and
blue planes (the green plane carries most vessel/lesion contrast), and
"high_contrast" equalizes each channel's histogram independently.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

FILTERS = ("rgb", "green", "high_contrast")
FILTER_ALIASES = {"hc": "high_contrast"}
DEFAULT_SIZE = 224


def canonical_filter(name: str) -> str:
    name = FILTER_ALIASES.get(name, name)
    if name not in FILTERS:
        raise ValueError(f"unknown filter {name!r}; choose from rgb, green, hc")
    return name


@dataclass
class ImageRGB8:
    """Row-major 8-bit RGB raster."""

    pixels: np.ndarray  # (h, w, 3) uint8

    def __post_init__(self):
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ValueError(f"expected (h, w, 3) pixels, got {self.pixels.shape}")
        if self.pixels.dtype != np.uint8:
            raise ValueError(f"expected uint8 pixels, got {self.pixels.dtype}")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


def read_png(path) -> ImageRGB8:
    """Read an 8-bit RGB or RGBA PNG; the alpha plane is dropped."""
    with Image.open(path) as im:
        if im.format != "PNG":
            raise ValueError(f"{path}: not a PNG file (format {im.format})")
        if im.mode == "RGBA":
            r, g, b, _ = im.split()
            im = Image.merge("RGB", (r, g, b))
        elif im.mode != "RGB":
            raise ValueError(f"{path}: unsupported PNG mode {im.mode} (need RGB or RGBA)")
        return ImageRGB8(np.asarray(im, dtype=np.uint8).copy())


def write_png(img: ImageRGB8, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(img.pixels, mode="RGB").save(path, format="PNG")


def green_filter(img: ImageRGB8) -> ImageRGB8:
    """Keep the green plane, zero red and blue; still a 3-channel image."""
    out = np.zeros_like(img.pixels)
    out[:, :, 1] = img.pixels[:, :, 1]
    return ImageRGB8(out)


def equalize_channel(plane: np.ndarray) -> np.ndarray:
    """Classical histogram equalization of one uint8 plane.

    out(v) = round((cdf(v) - cdf_min) / (N - cdf_min) * 255) where cdf_min is
    the cdf at the lowest occurring value.  A constant plane is returned
    unchanged.
    """
    plane = np.asarray(plane)
    if plane.ndim != 2 or plane.dtype != np.uint8:
        raise ValueError(f"expected a 2-D uint8 plane, got {plane.shape} {plane.dtype}")
    hist = np.bincount(plane.ravel(), minlength=256)
    cdf = hist.cumsum()
    n = plane.size
    cdf_min = int(cdf[np.flatnonzero(hist)[0]])
    if cdf_min == n:  # single grey level
        return plane.copy()
    lut = (cdf - cdf_min) / (n - cdf_min) * 255.0
    lut = np.clip(np.rint(lut), 0, 255).astype(np.uint8)
    return lut[plane]


def high_contrast(img: ImageRGB8) -> ImageRGB8:
    """Equalize each channel independently."""
    out = np.empty_like(img.pixels)
    for c in range(3):
        out[:, :, c] = equalize_channel(img.pixels[:, :, c])
    return ImageRGB8(out)


def apply_filter(img: ImageRGB8, kind: str) -> ImageRGB8:
    kind = canonical_filter(kind)
    if kind == "rgb":
        return img
    if kind == "green":
        return green_filter(img)
    return high_contrast(img)


def _axis_samples(n_src: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # Half-pixel-centred source coordinates, clamped to the source grid.
    s = (np.arange(n_out) + 0.5) * (n_src / n_out) - 0.5
    s = np.clip(s, 0.0, n_src - 1.0)
    i0 = np.floor(s).astype(np.intp)
    frac = s - i0
    i1 = np.minimum(i0 + 1, n_src - 1)
    return i0, i1, frac


def resize(img: ImageRGB8, size: int | tuple[int, int] = DEFAULT_SIZE) -> ImageRGB8:
    """Bilinear resize with half-pixel-centred sampling to (w, h) = size."""
    if isinstance(size, int):
        ow = oh = size
    else:
        ow, oh = size
    if ow < 1 or oh < 1:
        raise ValueError(f"bad target size {size}")
    h, w = img.height, img.width
    if (ow, oh) == (w, h):
        return ImageRGB8(img.pixels.copy())
    src = img.pixels.astype(np.float64)
    y0, y1, fy = _axis_samples(h, oh)
    x0, x1, fx = _axis_samples(w, ow)
    top = src[y0][:, x0] * (1.0 - fx)[None, :, None] + src[y0][:, x1] * fx[None, :, None]
    bot = src[y1][:, x0] * (1.0 - fx)[None, :, None] + src[y1][:, x1] * fx[None, :, None]
    val = top * (1.0 - fy)[:, None, None] + bot * fy[:, None, None]
    return ImageRGB8(np.rint(val).astype(np.uint8))


def to_tensor(img: ImageRGB8) -> np.ndarray:
    """Scale to [0, 1] float64 and lay out as (1, 3, h, w)."""
    return (img.pixels.astype(np.float64) / 255.0).transpose(2, 0, 1)[None]


def from_tensor(t: np.ndarray) -> ImageRGB8:
    """Inverse of to_tensor for values in [0, 1]."""
    t = np.asarray(t, dtype=np.float64)
    if t.ndim != 4 or t.shape[0] != 1 or t.shape[1] != 3:
        raise ValueError(f"expected a (1, 3, h, w) tensor, got {t.shape}")
    pix = np.rint(np.clip(t[0], 0.0, 1.0) * 255.0).astype(np.uint8)
    return ImageRGB8(pix.transpose(1, 2, 0))


def prep_directory(
    input_dir, output_dir, kind: str, size: int = DEFAULT_SIZE, log=None
) -> tuple[int, int]:
    """Filter + resize every .png under input_dir, mirroring the tree.

    Unreadable files are skipped with a warning.  Returns (processed,
    skipped).  Raises ValueError before touching output_dir when the input
    holds no .png files at all.
    """
    kind = canonical_filter(kind)
    input_dir = Path(input_dir)
    output_dir = Path(output_dir)
    files = sorted(p for p in input_dir.rglob("*.png") if p.is_file())
    if not files:
        raise ValueError(f"no .png files under {input_dir}")
    processed = skipped = 0
    for path in files:
        rel = path.relative_to(input_dir)
        try:
            img = read_png(path)
        except Exception as exc:  # unreadable input: warn and continue
            skipped += 1
            if log:
                log(f"skip {rel}: {exc}")
            continue
        out = resize(apply_filter(img, kind), size)
        write_png(out, output_dir / rel)
        processed += 1
        if log:
            log(f"{rel}: {img.width}x{img.height} -> {out.width}x{out.height} [{kind}]")
    return processed, skipped
