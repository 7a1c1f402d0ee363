"""Silhouette scoring: Procrustes-aligned IoU, ratio-field total variation,
penalized rewards and the success rule.

The aligned IoU estimates a similarity transform (translation, rotation,
isotropic scale, no reflection) from prediction to target, refines it with
nearest-neighbor Procrustes steps on boundary points, rasterizes the aligned
prediction back onto the grid and reports plain IoU. Rotation is initialized
from boundary principal axes plus a coarse IoU-scored angle scan; the scan is
needed because near-isotropic silhouettes leave principal axes ill-defined.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from ._kernels import aligned_iou_bilinear, aligned_iou_nearest
from .geometry import FeasibilityReport, RatioField
from .raster import SilhouetteMask

__all__ = [
    "AlignConfig",
    "RewardConfig",
    "EvalResult",
    "MetricError",
    "siou",
    "total_variation",
    "reward",
    "is_success",
]


class MetricError(ValueError):
    """The candidate cannot be scored (e.g. empty foreground)."""


@dataclass(frozen=True)
class AlignConfig:
    """Similarity-alignment settings for the aligned IoU."""

    min_boundary_points: int = 16   # below this, fall back to full-foreground init
    ring_angles: int = 32           # coarse rotation hypotheses scored by IoU
    local_angles: int = 9           # fine scan around the ring winner
    local_span_deg: float = 6.0
    coarse_step: int = 4            # downsample factor for scan scoring
    refine_steps: int = 5           # nearest-neighbor Procrustes refinements
    max_nn_points: int = 512        # subsample cap for the refinement pairs


@dataclass(frozen=True)
class RewardConfig:
    tau_ov: float = 0.02
    tau_siou: float = 0.85
    pen_fail: float = 5.0
    pen_invalid: float = 2.0
    w_overlap: float = 2.0
    lambda_tv: float = 0.0
    mode: str = "accuracy"          # accuracy | regularity_only | hybrid
    tv_ref: float = 1.0             # hybrid-mode TV normalization scale

    def __post_init__(self) -> None:
        if self.mode not in ("accuracy", "regularity_only", "hybrid"):
            raise ValueError(f"unknown reward mode {self.mode!r}")
        if min(self.pen_fail, self.pen_invalid, self.w_overlap, self.lambda_tv) < 0:
            raise ValueError("penalty weights must be nonnegative")


@dataclass(frozen=True)
class EvalResult:
    siou: float | None
    tv: float
    reward: float
    success: bool
    feasibility: FeasibilityReport


def _foreground_pts(mask: np.ndarray) -> np.ndarray:
    r, c = np.nonzero(mask)
    return np.column_stack([c + 0.5, r + 0.5]).astype(float)


def _boundary_pts(mask: np.ndarray) -> np.ndarray:
    pad = np.pad(mask, 1, constant_values=False)
    interior = pad[:-2, 1:-1] & pad[2:, 1:-1] & pad[1:-1, :-2] & pad[1:-1, 2:]
    r, c = np.nonzero(mask & ~interior)
    return np.column_stack([c + 0.5, r + 0.5]).astype(float)


def _principal_angle(pts: np.ndarray) -> float:
    centered = pts - pts.mean(axis=0)
    cov = centered.T @ centered / len(pts)
    _, vecs = np.linalg.eigh(cov)
    ax = vecs[:, -1]
    return math.atan2(ax[1], ax[0])


def _rot(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s], [s, c]])


def _similarity_procrustes(src: np.ndarray, dst: np.ndarray):
    """Closed-form similarity transform src -> dst, reflection excluded."""
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    sc = src - mu_s
    dc = dst - mu_d
    cov = dc.T @ sc / len(src)
    U, S, Vt = np.linalg.svd(cov)
    d = np.sign(np.linalg.det(U @ Vt))
    D = np.diag([1.0, d])
    R = U @ D @ Vt
    var_s = float((sc ** 2).sum()) / len(src)
    if var_s <= 0.0:
        return 1.0, np.eye(2), mu_d - mu_s
    s = float(np.trace(np.diag(S) @ D)) / var_s
    return s, R, mu_d - s * (R @ mu_s)


def _apply(pts: np.ndarray, T) -> np.ndarray:
    s, R, t = T
    return s * (pts @ R.T) + t


def _iou_nearest(pred: np.ndarray, target: np.ndarray, T, step: int = 1) -> float:
    s, R, t = T
    return float(aligned_iou_nearest(pred, target, R[0, 0], R[0, 1], R[1, 0],
                                     R[1, 1], t[0], t[1], s, step))


def _iou_bilinear(pred: np.ndarray, target: np.ndarray, T) -> float:
    s, R, t = T
    return float(aligned_iou_bilinear(pred, target, R[0, 0], R[0, 1], R[1, 0],
                                      R[1, 1], t[0], t[1], s))


def siou(pred: SilhouetteMask | np.ndarray, target: SilhouetteMask | np.ndarray,
         align: AlignConfig | None = None) -> float:
    """Similarity-aligned silhouette IoU of prediction against target.

    Raises MetricError when either mask has an empty foreground.
    """
    cfg = align or AlignConfig()
    p = pred.pixels if isinstance(pred, SilhouetteMask) else np.asarray(pred, bool)
    t = target.pixels if isinstance(target, SilhouetteMask) else np.asarray(target, bool)
    if p.shape != t.shape:
        raise MetricError(f"mask resolutions differ: {p.shape} vs {t.shape}")
    pf = _foreground_pts(p)
    tf = _foreground_pts(t)
    if len(pf) == 0 or len(tf) == 0:
        raise MetricError("empty foreground: candidate is unscorable")

    pb = _boundary_pts(p)
    tb = _boundary_pts(t)
    use_boundary = len(pb) >= cfg.min_boundary_points and len(tb) >= cfg.min_boundary_points
    A, B = (pb, tb) if use_boundary else (pf, tf)

    mu_a = A.mean(axis=0)
    mu_b = B.mean(axis=0)
    r_a = math.sqrt(float(((A - mu_a) ** 2).sum(axis=1).mean()))
    r_b = math.sqrt(float(((B - mu_b) ** 2).sum(axis=1).mean()))
    scale0 = r_b / max(r_a, 1e-12)
    theta = _principal_angle(B) - _principal_angle(A)

    def make(ang: float):
        R = _rot(ang)
        return (scale0, R, mu_b - scale0 * (R @ mu_a))

    def coarse_score(T) -> float:
        return _iou_nearest(p, t, T, step=cfg.coarse_step)

    # principal-axis hypotheses at full resolution (identity stays exact)
    best_v = -1.0
    best_T = None
    for ang in (theta, theta + math.pi):
        T = make(ang)
        v = _iou_bilinear(p, t, T)
        if v > best_v:
            best_v, best_T = v, T
    # coarse ring scan plus a local fine scan around the winner
    ring = max(
        (coarse_score(make(k * 2.0 * math.pi / cfg.ring_angles)), k * 2.0 * math.pi / cfg.ring_angles)
        for k in range(cfg.ring_angles)
    )[1]
    span = math.radians(cfg.local_span_deg)
    fine = max(
        (coarse_score(make(a)), a)
        for a in ring + np.linspace(-span, span, cfg.local_angles)
    )[1]
    T = make(fine)
    v = _iou_bilinear(p, t, T)
    if v > best_v:
        best_v, best_T = v, T

    # nearest-neighbor Procrustes refinement from the best initialization
    src_all, dst_all = (pb, tb) if use_boundary else (pf, tf)
    if len(src_all) > cfg.max_nn_points:
        idx = np.linspace(0, len(src_all) - 1, cfg.max_nn_points).astype(int)
        src = src_all[idx]
    else:
        src = src_all
    tree = cKDTree(dst_all)
    T = best_T
    for _ in range(cfg.refine_steps):
        _, nn = tree.query(_apply(src, T))
        T = _similarity_procrustes(src, dst_all[nn])
        v = _iou_bilinear(p, t, T)
        if v > best_v:
            best_v, best_T = v, T
    return best_v


def total_variation(x: RatioField | np.ndarray) -> float:
    """Sum of absolute neighbor differences over rows and columns."""
    v = x.values if isinstance(x, RatioField) else np.asarray(x, dtype=float)
    return float(np.abs(np.diff(v, axis=0)).sum() + np.abs(np.diff(v, axis=1)).sum())


def reward(
    x: RatioField | np.ndarray,
    feas: FeasibilityReport,
    siou_val: float | None,
    cfg: RewardConfig | None = None,
) -> float:
    """Penalized scalar reward for one candidate, higher is better.

    A failed decode gets the fixed low reward (the simulator is never called
    for it); supplying an aligned IoU for a failed decode is a caller bug.
    """
    cfg = cfg or RewardConfig()
    if feas.decode_failed:
        if siou_val is not None:
            raise ValueError("siou supplied for a failed decode")
        return -cfg.pen_fail
    tv = total_variation(x)
    overlap_pen = cfg.w_overlap * max(feas.overlap_ratio - cfg.tau_ov, 0.0)
    invalid_pen = cfg.pen_invalid * (1.0 if feas.invalid_count > 0 else 0.0)
    if cfg.mode == "accuracy":
        base = siou_val if siou_val is not None else 0.0
        return base - invalid_pen - overlap_pen - cfg.lambda_tv * tv
    if cfg.mode == "regularity_only":
        return -invalid_pen - overlap_pen - cfg.lambda_tv * tv
    # hybrid: equal-weight normalized accuracy and regularity terms
    base = siou_val if siou_val is not None else 0.0
    regularity = math.exp(-tv / cfg.tv_ref)
    return 0.5 * base + 0.5 * regularity - invalid_pen - overlap_pen


def is_success(result: EvalResult, cfg: RewardConfig | None = None) -> bool:
    """Success: aligned IoU meets the threshold with no feasibility violations."""
    cfg = cfg or RewardConfig()
    f = result.feasibility
    feasible = (not f.decode_failed) and f.invalid_count == 0 and f.overlap_ratio <= cfg.tau_ov
    return feasible and result.siou is not None and result.siou >= cfg.tau_siou
