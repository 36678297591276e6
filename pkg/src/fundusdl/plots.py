"""Hand-rolled SVG line charts for the per-epoch metric curves.

Output is plain text with fixed float formatting, so identical logs always
serialize to identical bytes.  Each chart carries two polylines (train and
validation) plus axes, ticks, and a legend.
"""

from __future__ import annotations

from pathlib import Path

W, H = 640, 420
L, R, T, B = 62, 618, 24, 370  # plot box edges
TRAIN_COLOR = "#1f77b4"
VAL_COLOR = "#d62728"


def _x(epoch: int, n: int) -> float:
    span = max(n - 1, 1)
    return L + (epoch - 1) / span * (R - L)


def _y(v: float, lo: float, hi: float) -> float:
    return B - (v - lo) / (hi - lo) * (B - T)


def _polyline(values, lo, hi, color) -> str:
    n = len(values)
    pts = " ".join(f"{_x(i + 1, n):.2f},{_y(v, lo, hi):.2f}" for i, v in enumerate(values))
    return f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}" />'


def _ticks_y(lo: float, hi: float) -> list[tuple[float, str]]:
    step = (hi - lo) / 4
    return [(lo + k * step, f"{lo + k * step:.3g}") for k in range(5)]


def _ticks_x(n: int) -> list[int]:
    stride = max(1, (n + 9) // 10)
    ticks = list(range(1, n + 1, stride))
    if ticks[-1] != n:
        ticks.append(n)
    return ticks


def render_chart(
    ylabel: str, train, val, y_range: tuple[float, float]
) -> str:
    lo, hi = y_range
    n = len(train)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
        f'viewBox="0 0 {W} {H}">',
        f'<rect x="0" y="0" width="{W}" height="{H}" fill="white" />',
        f'<rect x="{L}" y="{T}" width="{R - L}" height="{B - T}" fill="none" '
        f'stroke="#333333" stroke-width="1" />',
    ]
    for v, label in _ticks_y(lo, hi):
        y = _y(v, lo, hi)
        parts.append(
            f'<line x1="{L - 4}" y1="{y:.2f}" x2="{L}" y2="{y:.2f}" stroke="#333333" />'
        )
        parts.append(
            f'<text x="{L - 8}" y="{y + 4:.2f}" font-size="11" text-anchor="end" '
            f'font-family="sans-serif">{label}</text>'
        )
    for e in _ticks_x(n):
        x = _x(e, n)
        parts.append(
            f'<line x1="{x:.2f}" y1="{B}" x2="{x:.2f}" y2="{B + 4}" stroke="#333333" />'
        )
        parts.append(
            f'<text x="{x:.2f}" y="{B + 16}" font-size="11" text-anchor="middle" '
            f'font-family="sans-serif">{e}</text>'
        )
    parts.append(
        f'<text x="{(L + R) / 2:.2f}" y="{H - 10}" font-size="12" text-anchor="middle" '
        f'font-family="sans-serif">epoch</text>'
    )
    parts.append(
        f'<text x="16" y="{(T + B) / 2:.2f}" font-size="12" text-anchor="middle" '
        f'font-family="sans-serif" transform="rotate(-90 16 {(T + B) / 2:.2f})">{ylabel}</text>'
    )
    parts.append(_polyline(train, lo, hi, TRAIN_COLOR))
    parts.append(_polyline(val, lo, hi, VAL_COLOR))
    lx = R - 130
    parts.append(
        f'<line x1="{lx}" y1="{T + 12}" x2="{lx + 24}" y2="{T + 12}" '
        f'stroke="{TRAIN_COLOR}" stroke-width="1.5" />'
    )
    parts.append(
        f'<text x="{lx + 30}" y="{T + 16}" font-size="11" font-family="sans-serif">train</text>'
    )
    parts.append(
        f'<line x1="{lx}" y1="{T + 28}" x2="{lx + 24}" y2="{T + 28}" '
        f'stroke="{VAL_COLOR}" stroke-width="1.5" />'
    )
    parts.append(
        f'<text x="{lx + 30}" y="{T + 32}" font-size="11" '
        f'font-family="sans-serif">validation</text>'
    )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_plots(log, out_dir) -> None:
    """Write accuracy.svg (y fixed to [0, 1]) and loss.svg (y from the data)."""
    out_dir = Path(out_dir)
    train_acc = [r.train_acc for r in log.rows]
    val_acc = [r.val_acc for r in log.rows]
    train_loss = [r.train_loss for r in log.rows]
    val_loss = [r.val_loss for r in log.rows]
    acc_svg = render_chart("accuracy", train_acc, val_acc, (0.0, 1.0))
    top = max(train_loss + val_loss)
    top = top * 1.05 if top > 0 else 1.0
    loss_svg = render_chart("loss", train_loss, val_loss, (0.0, top))
    (out_dir / "accuracy.svg").write_text(acc_svg)
    (out_dir / "loss.svg").write_text(loss_svg)
