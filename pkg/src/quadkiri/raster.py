"""Geometry-based forward simulator: layout -> binary silhouette mask.

The simulator recenters the decoded geometry by its bounding-box midpoint,
applies an isotropic scale so the larger extent covers 90% of the mask width,
and rasterizes the union of all void quads with a pixel-center fill rule
(top-left half-open ties, so shared edges never double-fill or leave seams).

Masks are exchanged as binary PGM (P5), 0 background / 255 foreground.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._kernels import fill_convex_kernel, fill_quads_kernel
from .geometry import Layout

__all__ = [
    "RasterConfig",
    "Frame",
    "SilhouetteMask",
    "simulate",
    "rasterize_quad",
    "rasterize_polygon",
    "write_pgm",
    "read_pgm",
]


@dataclass(frozen=True)
class RasterConfig:
    width: int = 128
    height: int = 128
    fill_fraction: float = 0.90   # larger bbox extent -> this fraction of width

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ValueError("raster resolution must be positive")
        if not (0.0 < self.fill_fraction <= 1.0):
            raise ValueError("fill fraction must lie in (0, 1]")


@dataclass(frozen=True)
class Frame:
    """Affine model-to-pixel map: u = w/2 + (x-cx)*scale, v = h/2 - (y-cy)*scale."""

    width: int
    height: int
    scale: float
    cx: float
    cy: float

    def to_pixels(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        u = self.width / 2.0 + (pts[..., 0] - self.cx) * self.scale
        v = self.height / 2.0 - (pts[..., 1] - self.cy) * self.scale
        return np.stack([u, v], axis=-1)


@dataclass
class SilhouetteMask:
    """Fixed-resolution binary occupancy raster plus the frame that made it."""

    pixels: np.ndarray
    frame: Frame | None = None

    def __post_init__(self) -> None:
        self.pixels = np.asarray(self.pixels, dtype=bool)
        if self.pixels.ndim != 2:
            raise ValueError("mask must be 2-D")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def foreground_count(self) -> int:
        return int(self.pixels.sum())


def rasterize_quad(quad: np.ndarray, frame: Frame, mask: SilhouetteMask) -> None:
    """Set every pixel of ``mask`` whose center lies in the quad (in place)."""
    q = np.asarray(quad, dtype=float).reshape(4, 2)
    if not np.isfinite(q).all():
        return
    px = frame.to_pixels(q)
    fill_convex_kernel(mask.pixels, np.ascontiguousarray(px[:, 0]),
                       np.ascontiguousarray(px[:, 1]))


def frame_for_points(pts: np.ndarray, cfg: RasterConfig) -> Frame:
    pts = np.asarray(pts, dtype=float)
    finite = np.isfinite(pts).all(axis=1)
    pts = pts[finite]
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    ext = float(max(hi[0] - lo[0], hi[1] - lo[1]))
    if ext <= 0.0:
        ext = 1.0
    scale = cfg.fill_fraction * cfg.width / ext
    cx, cy = (lo + hi) / 2.0
    return Frame(width=cfg.width, height=cfg.height, scale=scale, cx=float(cx), cy=float(cy))


def simulate(layout: Layout, raster: RasterConfig | None = None) -> SilhouetteMask:
    """Rasterize the union of the decoded voids to a binary silhouette.

    Deterministic: identical layout and config give a bitwise-identical mask.
    Raises ValueError on a failed decode; callers must gate on feasibility.
    """
    if layout.feasibility.decode_failed:
        raise ValueError("cannot simulate a failed decode; gate on feasibility first")
    cfg = raster or RasterConfig()
    frame = frame_for_points(layout.vertices(), cfg)
    mask = SilhouetteMask(np.zeros((cfg.height, cfg.width), dtype=bool), frame=frame)
    px = frame.to_pixels(layout.quads.reshape(-1, 4, 2))
    fill_quads_kernel(mask.pixels, np.ascontiguousarray(px))
    return mask


def rasterize_polygon(poly: np.ndarray, cfg: RasterConfig | None = None,
                      frame: Frame | None = None) -> SilhouetteMask:
    """Rasterize a simple polygon (possibly concave) by even-odd crossing counts.

    Used for the built-in solid targets; quads from layouts go through the
    convex fast path instead.
    """
    cfg = cfg or RasterConfig()
    P = np.asarray(poly, dtype=float)
    if frame is None:
        frame = frame_for_points(P, cfg)
    px = frame.to_pixels(P)
    X, Y = px[:, 0], px[:, 1]
    X2, Y2 = np.roll(X, -1), np.roll(Y, -1)
    dy = np.where(Y2 != Y, Y2 - Y, 1.0)
    mask = np.zeros((cfg.height, cfg.width), dtype=bool)
    xs = np.arange(cfg.width) + 0.5
    for r in range(cfg.height):
        yc = r + 0.5
        crossing = (Y <= yc) != (Y2 <= yc)
        if not crossing.any():
            continue
        xi = X + (yc - Y) * (X2 - X) / dy
        cuts = np.sort(xi[crossing])
        mask[r] = np.searchsorted(cuts, xs) % 2 == 1
    return SilhouetteMask(mask, frame=frame)


def write_pgm(mask: SilhouetteMask | np.ndarray, path) -> None:
    """Binary PGM (P5), maxval 255: 0 = background, 255 = foreground."""
    pixels = mask.pixels if isinstance(mask, SilhouetteMask) else np.asarray(mask, bool)
    h, w = pixels.shape
    data = np.where(pixels, 255, 0).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def read_pgm(path) -> SilhouetteMask:
    with open(path, "rb") as f:
        raw = f.read()
    if not raw.startswith(b"P5"):
        raise ValueError(f"{path}: not a binary PGM (P5) file")
    # header: magic, width, height, maxval then one whitespace byte
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    pos += 1  # single whitespace after maxval
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255:
        raise ValueError(f"{path}: expected maxval 255, got {maxval}")
    data = np.frombuffer(raw[pos : pos + w * h], dtype=np.uint8)
    if data.size != w * h:
        raise ValueError(f"{path}: truncated pixel data")
    return SilhouetteMask(data.reshape(h, w) >= 128)


def mask_iou(a: SilhouetteMask | np.ndarray, b: SilhouetteMask | np.ndarray) -> float:
    """Plain (unaligned) intersection over union of two binary masks."""
    pa = a.pixels if isinstance(a, SilhouetteMask) else np.asarray(a, bool)
    pb = b.pixels if isinstance(b, SilhouetteMask) else np.asarray(b, bool)
    union = np.logical_or(pa, pb).sum()
    if union == 0:
        return 0.0
    return float(np.logical_and(pa, pb).sum() / union)
