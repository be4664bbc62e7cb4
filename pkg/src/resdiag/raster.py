"""Fixed-aesthetic residual plot rasterization and PGM (P5) I/O.

Every residual plot seen by the network goes through :func:`rasterize`, so the
style below is part of the model contract: white background, no axes or
labels, a mid-grey zero line, and black 1-pixel-radius discs for the points.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .errors import EmptyInput, MalformedHeader, NonFinite

MARGIN = 0.05
LINE_INTENSITY = 128 / 255  # mid grey, exact in 8-bit PGM
POINT_RADIUS = 1.0
# positions are snapped to this grid so affine-equivalent inputs rasterize identically
_SNAP = 1e-9


@dataclass
class ResidualPlotImage:
    pixels: np.ndarray  # (h, w), 0 = ink, 1 = background
    x_range: tuple[float, float]
    y_range: tuple[float, float]

    @property
    def h(self) -> int:
        return self.pixels.shape[0]

    @property
    def w(self) -> int:
        return self.pixels.shape[1]


def _unit_positions(v: np.ndarray) -> tuple[np.ndarray, tuple[float, float]]:
    lo, hi = float(v.min()), float(v.max())
    if hi == lo:
        frac = np.full(v.shape, 0.5)
        rng = (lo - 0.5, hi + 0.5)
    else:
        frac = (v - lo) / (hi - lo)
        frac = (MARGIN + frac) / (1.0 + 2.0 * MARGIN)
        pad = MARGIN * (hi - lo)
        rng = (lo - pad, hi + pad)
    return np.round(frac / _SNAP) * _SNAP, rng


def rasterize(residuals, fitted, h: int = 32, w: int = 32) -> ResidualPlotImage:
    """Render residuals (vertical) against fitted values (horizontal)."""
    e = np.asarray(residuals, dtype=float).ravel()
    f = np.asarray(fitted, dtype=float).ravel()
    if e.size == 0 or e.size != f.size:
        raise EmptyInput(f"need equal non-zero lengths, got {e.size} and {f.size}")
    if not (np.all(np.isfinite(e)) and np.all(np.isfinite(f))):
        raise NonFinite("residuals and fitted values must be finite")

    fx, x_range = _unit_positions(f)
    fy, y_range = _unit_positions(e)
    img = np.ones((h, w))

    y_lo, y_hi = y_range
    if y_lo <= 0.0 <= y_hi:
        row = int(np.floor((1.0 - (0.0 - y_lo) / (y_hi - y_lo)) * h))
        img[min(max(row, 0), h - 1), :] = LINE_INTENSITY

    # continuous pixel coordinates; pixel (r, c) has centre (r + 0.5, c + 0.5)
    cx = fx * w
    cy = (1.0 - fy) * h
    pts = np.unique(np.column_stack([cy, cx]), axis=0)
    rad = int(np.ceil(POINT_RADIUS))
    base_r = np.floor(pts[:, 0]).astype(int)
    base_c = np.floor(pts[:, 1]).astype(int)
    for dr in range(-rad, rad + 1):
        for dc in range(-rad, rad + 1):
            r = base_r + dr
            c = base_c + dc
            d2 = (r + 0.5 - pts[:, 0]) ** 2 + (c + 0.5 - pts[:, 1]) ** 2
            keep = (d2 <= POINT_RADIUS**2) & (r >= 0) & (r < h) & (c >= 0) & (c < w)
            img[r[keep], c[keep]] = 0.0
    return ResidualPlotImage(img, x_range, y_range)


def luma_grayscale(r, g, b):
    """Rec. 601 luma: ``0.299 r + 0.587 g + 0.114 b``."""
    return 0.299 * np.asarray(r, dtype=float) + 0.587 * np.asarray(g, dtype=float) + 0.114 * np.asarray(b, dtype=float)


def rgb_to_gray(rgb: np.ndarray) -> np.ndarray:
    rgb = np.asarray(rgb, dtype=float)
    return luma_grayscale(rgb[..., 0], rgb[..., 1], rgb[..., 2])


def write_pgm(image) -> bytes:
    """Binary PGM (P5), maxval 255, intensities quantized by ``round(p * 255)``."""
    pixels = image.pixels if isinstance(image, ResidualPlotImage) else np.asarray(image)
    hgt, wid = pixels.shape
    q = np.clip(np.rint(np.asarray(pixels, dtype=float) * 255.0), 0, 255).astype(np.uint8)
    return f"P5\n{wid} {hgt}\n255\n".encode("ascii") + q.tobytes()


_HEADER = re.compile(rb"\AP5(?:\s+|#[^\n]*\n)+?(\d+)(?:\s+|#[^\n]*\n)+?(\d+)(?:\s+|#[^\n]*\n)+?(\d+)\s")


def read_pgm(data: bytes) -> np.ndarray:
    """Parse a P5 payload into an ``(h, w)`` array of intensities in [0, 1]."""
    m = _HEADER.match(data)
    if m is None:
        raise MalformedHeader("not a binary PGM (P5) header")
    wid, hgt, maxval = (int(g) for g in m.groups())
    if wid <= 0 or hgt <= 0 or not (0 < maxval < 256):
        raise MalformedHeader(f"unsupported dimensions or maxval: {wid}x{hgt}, {maxval}")
    body = data[m.end():]
    if len(body) != wid * hgt:
        raise MalformedHeader(f"payload has {len(body)} bytes, expected {wid * hgt}")
    return np.frombuffer(body, dtype=np.uint8).reshape(hgt, wid).astype(float) / maxval


def contact_sheet(images: list[np.ndarray], rows: int, cols: int, gap: int = 2) -> np.ndarray:
    """Tile equally sized images into a grid separated by mid-grey gutters."""
    hgt, wid = images[0].shape
    sheet = np.full((rows * hgt + (rows + 1) * gap, cols * wid + (cols + 1) * gap), LINE_INTENSITY)
    for idx, im in enumerate(images[: rows * cols]):
        r, c = divmod(idx, cols)
        top = gap + r * (hgt + gap)
        left = gap + c * (wid + gap)
        sheet[top : top + hgt, left : left + wid] = im
    return sheet
