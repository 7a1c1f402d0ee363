"""Parallelogram quad kirigami parameterization and the marching decoder.

A design is an m x n field of positive side-length ratios. Decoding walks the
void array left to right, top to bottom: each void inherits two seed vertices
(one from its left neighbor, one from its top neighbor, boundary anchors for
the first row and column) and rebuilds the remaining two by rotating and
scaling the seed edge. The construction yields parallelograms by design and
shared vertices are numerically identical because each value is written once
and copied, never recomputed.

Feasibility is checked after decoding, never differentiated through: an
invalid-void count (collapsed or self-intersecting quads) and an overlap
ratio estimated from a rasterized union of all voids.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._kernels import fill_quads_kernel, march_kernel

__all__ = [
    "GridShape",
    "RatioField",
    "BoundaryAnchors",
    "FeasibilityConfig",
    "FeasibilityReport",
    "VoidQuad",
    "Layout",
    "checkerboard_angles",
    "rotate",
    "default_anchors",
    "march_decode",
    "compute_feasibility",
    "check_feasible",
]


def check_phi(phi: float) -> float:
    """Validate the global deployment parameter (degenerate flat states excluded)."""
    phi = float(phi)
    if not (0.0 < phi < math.pi) or not math.isfinite(phi):
        raise ValueError(f"deployment parameter must lie in (0, pi), got {phi}")
    return phi


@dataclass(frozen=True)
class GridShape:
    """Void array dimensions: m rows by n columns."""

    m: int
    n: int

    def __post_init__(self) -> None:
        if int(self.m) != self.m or int(self.n) != self.n or self.m < 1 or self.n < 1:
            raise ValueError(f"grid shape must be positive integers, got {self.m}x{self.n}")
        object.__setattr__(self, "m", int(self.m))
        object.__setattr__(self, "n", int(self.n))

    @property
    def cells(self) -> int:
        return self.m * self.n


@dataclass(frozen=True)
class RatioField:
    """The m x n matrix of per-void side-length ratios, the design variables."""

    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise ValueError(f"ratio field must be 2-D, got shape {v.shape}")
        if not np.all(np.isfinite(v)) or np.any(v <= 0.0):
            raise ValueError("ratio field entries must be finite and strictly positive")
        object.__setattr__(self, "values", v)

    @property
    def shape(self) -> GridShape:
        return GridShape(*self.values.shape)


@dataclass(frozen=True)
class BoundaryAnchors:
    """Seed vertices along the top and left boundaries of the void array.

    top[j] seeds the p3 corner of void (1, j+1); left[i] seeds the p0 corner
    of void (i+1, 1). Spacing is the seed edge length of the uniform layout.
    """

    top: np.ndarray
    left: np.ndarray
    spacing: float = 1.0

    def __post_init__(self) -> None:
        top = np.asarray(self.top, dtype=float).reshape(-1, 2)
        left = np.asarray(self.left, dtype=float).reshape(-1, 2)
        if not (np.all(np.isfinite(top)) and np.all(np.isfinite(left))):
            raise ValueError("anchors must be finite coordinates")
        if self.spacing <= 0:
            raise ValueError("anchor spacing must be positive")
        object.__setattr__(self, "top", top)
        object.__setattr__(self, "left", left)


@dataclass(frozen=True)
class FeasibilityConfig:
    """Thresholds for the post-hoc geometric checks."""

    min_area: float = 1e-8       # collapsed-void area floor, model units^2
    min_side: float = 1e-8       # collapsed-edge length floor
    seed_eps: float = 1e-9       # degenerate seed edge -> decode failure
    union_raster: int = 256      # union mask resolution for the overlap ratio
    bbox_pad: float = 0.02       # bounding-box padding for the union raster
    max_extent: float = 256.0    # frame normalization threshold, anchor spacings


@dataclass(frozen=True)
class FeasibilityReport:
    invalid_count: int
    overlap_ratio: float
    decode_failed: bool
    per_void_area: np.ndarray
    union_area: float


@dataclass(frozen=True)
class VoidQuad:
    """One void with vertices p0..p3 in counterclockwise index order."""

    p0: np.ndarray
    p1: np.ndarray
    p2: np.ndarray
    p3: np.ndarray

    @property
    def a(self) -> float:
        return float(np.hypot(*(self.p1 - self.p0)))

    @property
    def b(self) -> float:
        return float(np.hypot(*(self.p3 - self.p0)))

    @property
    def area(self) -> float:
        e1 = self.p1 - self.p0
        e2 = self.p3 - self.p0
        return float(abs(e1[0] * e2[1] - e1[1] * e2[0]))


@dataclass(frozen=True)
class Layout:
    """Decoded void array: vertices as an (m, n, 4, 2) array plus checks."""

    shape: GridShape
    phi: float
    quads: np.ndarray
    feasibility: FeasibilityReport

    def quad(self, i: int, j: int) -> VoidQuad:
        """1-based void accessor matching the (i, j) convention."""
        q = self.quads[i - 1, j - 1]
        return VoidQuad(q[0], q[1], q[2], q[3])

    def vertices(self) -> np.ndarray:
        return self.quads.reshape(-1, 2)


def checkerboard_angles(shape: GridShape, phi: float) -> np.ndarray:
    """Per-void deployment angles: phi where i+j is even, pi-phi where odd (1-based)."""
    phi = check_phi(phi)
    ii, jj = np.meshgrid(
        np.arange(1, shape.m + 1), np.arange(1, shape.n + 1), indexing="ij"
    )
    return np.where((ii + jj) % 2 == 0, phi, math.pi - phi)


def rotate(theta: float, v: np.ndarray) -> np.ndarray:
    """Counterclockwise planar rotation of a 2-vector."""
    c, s = math.cos(theta), math.sin(theta)
    v = np.asarray(v, dtype=float)
    return np.array([c * v[0] - s * v[1], s * v[0] + c * v[1]])


def default_anchors(shape: GridShape, phi: float, spacing: float = 1.0) -> BoundaryAnchors:
    """Boundary anchors of the uniform (all-ones) layout at deployment phi.

    The uniform field tiles the plane with alternating rhombi; its first-row
    p3 corners and first-column p0 corners give anchors that keep the decode
    seam-free. Row anchors zigzag because void orientation alternates.
    """
    phi = check_phi(phi)
    c, s = math.cos(phi / 2.0), math.sin(phi / 2.0)
    d = float(spacing)
    j = np.arange(shape.n)
    top = np.column_stack([
        (j * (c + s) + c) * d,
        np.where(j % 2 == 0, s, c) * d,
    ])
    i = np.arange(shape.m)
    left = np.column_stack([
        (i % 2) * (c - s) * d,
        -i * (c + s) * d,
    ])
    return BoundaryAnchors(top=top, left=left, spacing=d)


def march_decode(
    x: RatioField | np.ndarray,
    phi: float,
    anchors: BoundaryAnchors | None = None,
    config: FeasibilityConfig | None = None,
) -> Layout:
    """Rebuild a compatible layout from ratios, deployment parameter and anchors.

    Visits voids left to right, top to bottom. Void (i, j) takes p0 from the
    left neighbor's p2 (its shared right corner) and p3 from the top
    neighbor's p1 (its shared bottom corner); the first row and column are
    seeded by the top and left anchor lists. With the seed edge s = p3 - p0:

        p1 = p0 + x_ij * R(-phi_ij) s        p2 = p3 + x_ij * R(-phi_ij) s

    Numerical degeneration (non-finite seeds or |s| below the seed epsilon)
    marks the decode failed instead of raising.
    """
    if not isinstance(x, RatioField):
        x = RatioField(np.asarray(x, dtype=float))
    shape = x.shape
    phi = check_phi(phi)
    cfg = config or FeasibilityConfig()
    if anchors is None:
        anchors = default_anchors(shape, phi)
    if len(anchors.top) < shape.n or len(anchors.left) < shape.m:
        raise ValueError(
            f"anchors seed {len(anchors.left)}x{len(anchors.top)} voids, "
            f"need {shape.m}x{shape.n}"
        )

    m, n = shape.m, shape.n
    ang = checkerboard_angles(shape, phi)
    # R(-a) applied to s: (cos*sx + sin*sy, -sin*sx + cos*sy)
    cos_a = np.cos(ang)
    sin_a = np.sin(ang)
    quads = np.full((m, n, 4, 2), np.nan)
    failed = bool(
        march_kernel(
            np.ascontiguousarray(x.values),
            cos_a,
            sin_a,
            np.ascontiguousarray(anchors.top[:n]),
            np.ascontiguousarray(anchors.left[:m]),
            cfg.seed_eps,
            quads,
        )
    )
    # feasibility floors are stated in anchor-frame model units, so the
    # report is computed before any frame normalization (the overlap ratio
    # itself is scale-free either way)
    report = compute_feasibility(quads, cfg, decode_failed=failed)
    if not failed:
        _normalize_frame(quads, cfg.max_extent * anchors.spacing)
    return Layout(shape=shape, phi=phi, quads=quads, feasibility=report)


def _normalize_frame(quads: np.ndarray, max_extent: float) -> None:
    """Rescale oversized layouts into the working frame, in place.

    Ratio fields with long runs of large or small entries compound void
    sizes multiplicatively, and coordinates can grow past the point where
    float round-off breaks the parallelogram identities. The decode is
    geometrically scale-free and the evaluator is similarity-invariant, so
    the frame is free to choose; scaling by an exact power of two changes
    only the exponent bits and preserves every geometric relation bit for
    bit while shrinking absolute round-off along with the coordinates.
    """
    pts = quads.reshape(-1, 2)
    finite = np.isfinite(pts).all(axis=1)
    if not finite.any():
        return
    lo = pts[finite].min(axis=0)
    hi = pts[finite].max(axis=0)
    extent = float(max(hi[0] - lo[0], hi[1] - lo[1]))
    if extent <= max_extent or not math.isfinite(extent):
        return
    halvings = math.ceil(math.log2(extent / max_extent))
    quads *= 2.0 ** (-halvings)


def _union_area_raster(quads: np.ndarray, cfg: FeasibilityConfig) -> float:
    """Union area of all finite voids from a rasterized mask over the padded bbox."""
    pts = quads.reshape(-1, 2)
    finite = np.isfinite(pts).all(axis=1)
    if not finite.any():
        return 0.0
    lo = pts[finite].min(axis=0)
    hi = pts[finite].max(axis=0)
    ext = float(max(hi[0] - lo[0], hi[1] - lo[1]))
    if ext <= 0.0:
        return 0.0
    ext *= 1.0 + 2.0 * cfg.bbox_pad
    cx, cy = (lo + hi) / 2.0
    res = cfg.union_raster
    scale = res / ext
    mask = np.zeros((res, res), dtype=bool)
    half = res / 2.0
    px = np.empty_like(quads.reshape(-1, 4, 2))
    flat = quads.reshape(-1, 4, 2)
    # model -> pixel (v axis down)
    px[..., 0] = half + (flat[..., 0] - cx) * scale
    px[..., 1] = half - (flat[..., 1] - cy) * scale
    fill_quads_kernel(mask, px)
    return float(mask.sum()) / (scale * scale)


def compute_feasibility(
    quads: np.ndarray,
    config: FeasibilityConfig | None = None,
    decode_failed: bool = False,
) -> FeasibilityReport:
    """Post-hoc checks on a void vertex array of shape (m, n, 4, 2)."""
    cfg = config or FeasibilityConfig()
    q = np.asarray(quads, dtype=float)
    finite = np.isfinite(q).all(axis=(2, 3))
    e01 = q[..., 1, :] - q[..., 0, :]
    e03 = q[..., 3, :] - q[..., 0, :]
    areas = np.abs(e01[..., 0] * e03[..., 1] - e01[..., 1] * e03[..., 0])
    areas = np.where(finite, areas, 0.0)

    sides = np.stack([
        np.hypot(*(q[..., 1, :] - q[..., 0, :]).transpose(2, 0, 1)),
        np.hypot(*(q[..., 2, :] - q[..., 1, :]).transpose(2, 0, 1)),
        np.hypot(*(q[..., 3, :] - q[..., 2, :]).transpose(2, 0, 1)),
        np.hypot(*(q[..., 0, :] - q[..., 3, :]).transpose(2, 0, 1)),
    ])
    # consecutive edge cross products; a sign change flags reflex/self-intersection
    edges = np.stack([
        q[..., 1, :] - q[..., 0, :],
        q[..., 2, :] - q[..., 1, :],
        q[..., 3, :] - q[..., 2, :],
        q[..., 0, :] - q[..., 3, :],
    ])
    crosses = np.stack([
        edges[a, ..., 0] * edges[(a + 1) % 4, ..., 1]
        - edges[a, ..., 1] * edges[(a + 1) % 4, ..., 0]
        for a in range(4)
    ])
    sign_change = (crosses.max(axis=0) > 0) & (crosses.min(axis=0) < 0)

    invalid = (
        ~finite
        | (areas < cfg.min_area)
        | (sides.min(axis=0) < cfg.min_side)
        | sign_change
    )
    n_inv = int(invalid.sum())

    total = float(areas.sum())
    if decode_failed or total <= 0.0:
        union = 0.0
        r_ov = 0.0
    else:
        union = _union_area_raster(q, cfg)
        r_ov = min(max(1.0 - union / total, 0.0), 1.0)
    return FeasibilityReport(
        invalid_count=n_inv,
        overlap_ratio=r_ov,
        decode_failed=bool(decode_failed),
        per_void_area=areas,
        union_area=union,
    )


def check_feasible(layout: Layout, tau_ov: float) -> bool:
    """A decode is feasible when it succeeded, has no invalid voids and the
    overlap ratio does not exceed the threshold."""
    f = layout.feasibility
    return (not f.decode_failed) and f.invalid_count == 0 and f.overlap_ratio <= tau_ov
