"""Deterministic report files: CSV tables, SVG plots, PGM images, all written atomically."""

from __future__ import annotations

import csv
import io
import os
import tempfile
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np


def atomic_write(path, data) -> None:
    """Write to a temporary file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    raw = data.encode() if isinstance(data, str) else bytes(data)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(raw)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def fmt(v) -> str:
    """Shortest round-trip text for floats, plain text for everything else."""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return "" if v is None else str(v)


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        if len(row) != len(header):
            raise ValueError(f"row has {len(row)} fields, header has {len(header)}")
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def write_csv(path, header, rows) -> None:
    atomic_write(path, csv_text(header, rows))


# -- SVG -------------------------------------------------------------------------

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")
W, H, M = 480, 320, 48


def _n(v: float) -> str:
    return f"{v:.2f}"


class _Axes:
    def __init__(self, xs, ys):
        xs, ys = np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)
        self.x0, self.x1 = self._span(xs)
        self.y0, self.y1 = self._span(ys)

    @staticmethod
    def _span(v):
        v = v[np.isfinite(v)]
        if v.size == 0:
            return 0.0, 1.0
        lo, hi = float(v.min()), float(v.max())
        if hi == lo:
            lo, hi = lo - 0.5, hi + 0.5
        pad = 0.04 * (hi - lo)
        return lo - pad, hi + pad

    def px(self, x):
        return M + (x - self.x0) / (self.x1 - self.x0) * (W - 2 * M)

    def py(self, y):
        return H - M - (y - self.y0) / (self.y1 - self.y0) * (H - 2 * M)


def _frame(ax: _Axes, title: str, xlabel: str, ylabel: str) -> list[str]:
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
        f'<rect x="{M}" y="{M}" width="{W - 2 * M}" height="{H - 2 * M}" fill="none" stroke="black"/>',
        f'<text x="{W / 2}" y="{M / 2}" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<text x="{W / 2}" y="{H - 10}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>',
        f'<text x="14" y="{H / 2}" text-anchor="middle" font-size="12" transform="rotate(-90 14 {H / 2})">{escape(ylabel)}</text>',
    ]
    for frac in (0.0, 0.5, 1.0):
        x = ax.x0 + frac * (ax.x1 - ax.x0)
        y = ax.y0 + frac * (ax.y1 - ax.y0)
        out.append(f'<text x="{_n(ax.px(x))}" y="{H - M + 14}" text-anchor="middle" font-size="10">{x:.3g}</text>')
        out.append(f'<text x="{M - 4}" y="{_n(ax.py(y) + 3)}" text-anchor="end" font-size="10">{y:.3g}</text>')
    return out


def _legend(names) -> list[str]:
    out = []
    for i, name in enumerate(names):
        y = M + 12 + 14 * i
        out.append(f'<rect x="{W - M - 110}" y="{y - 8}" width="10" height="10" fill="{PALETTE[i % len(PALETTE)]}"/>')
        out.append(f'<text x="{W - M - 96}" y="{y + 1}" font-size="10">{escape(name)}</text>')
    return out


def svg_lines(series: dict, title: str = "", xlabel: str = "", ylabel: str = "", dashed=()) -> str:
    """``series`` maps a name to (xs, ys)."""
    allx = np.concatenate([np.asarray(x, dtype=float) for x, _ in series.values()])
    ally = np.concatenate([np.asarray(y, dtype=float) for _, y in series.values()])
    ax = _Axes(allx, ally)
    out = _frame(ax, title, xlabel, ylabel)
    for i, (name, (xs, ys)) in enumerate(series.items()):
        pts = " ".join(f"{_n(ax.px(x))},{_n(ax.py(y))}" for x, y in zip(xs, ys) if np.isfinite(y))
        dash = ' stroke-dasharray="5,3"' if name in dashed else ""
        out.append(f'<polyline points="{pts}" fill="none" stroke="{PALETTE[i % len(PALETTE)]}" stroke-width="1.5"{dash}/>')
    out += _legend(series)
    return "\n".join(out + ["</svg>"]) + "\n"


def svg_scatter(xs, ys, title: str = "", xlabel: str = "", ylabel: str = "", colors=None) -> str:
    ax = _Axes(xs, ys)
    out = _frame(ax, title, xlabel, ylabel)
    for i, (x, y) in enumerate(zip(xs, ys)):
        c = PALETTE[0] if colors is None else colors[i]
        out.append(f'<circle cx="{_n(ax.px(x))}" cy="{_n(ax.py(y))}" r="2" fill="{c}"/>')
    return "\n".join(out + ["</svg>"]) + "\n"


def svg_histogram(counts, edges, title: str = "", xlabel: str = "", ylabel: str = "count") -> str:
    counts, edges = np.asarray(counts, dtype=float), np.asarray(edges, dtype=float)
    ax = _Axes(edges, np.concatenate([[0.0], counts]))
    out = _frame(ax, title, xlabel, ylabel)
    for c, lo, hi in zip(counts, edges[:-1], edges[1:]):
        x0, x1, y0, y1 = ax.px(lo), ax.px(hi), ax.py(c), ax.py(0.0)
        out.append(f'<rect x="{_n(x0)}" y="{_n(y0)}" width="{_n(x1 - x0)}" height="{_n(y1 - y0)}" fill="{PALETTE[0]}" stroke="white"/>')
    return "\n".join(out + ["</svg>"]) + "\n"


def hue_colors(n: int) -> list[str]:
    """Colors running along a path, so points can be matched to their position."""
    out = []
    for i in range(n):
        t = i / max(1, n - 1)
        r, g, b = (int(255 * v) for v in (t, 0.2 + 0.6 * (1 - abs(2 * t - 1)), 1 - t))
        out.append(f"#{r:02x}{g:02x}{b:02x}")
    return out


# -- PGM -------------------------------------------------------------------------


def pgm_bytes(image: np.ndarray) -> bytes:
    """Binary 8-bit PGM of an image with values in [0, 1]."""
    img = np.asarray(image, dtype=float)
    if img.ndim != 2:
        raise ValueError("PGM images are 2-D")
    if img.size and (img.min() < 0.0 or img.max() > 1.0):
        raise ValueError("image values must lie in [0, 1]")
    pixels = np.rint(img * 255.0).astype(np.uint8)
    return f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode() + pixels.tobytes()


def read_pgm(raw: bytes) -> np.ndarray:
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P5" or len(parts) < 4:
        raise ValueError("not a binary PGM")
    w, h = (int(v) for v in parts[1].split())
    if int(parts[2]) != 255:
        raise ValueError("only 8-bit PGM is supported")
    return np.frombuffer(parts[3], dtype=np.uint8, count=w * h).reshape(h, w)
