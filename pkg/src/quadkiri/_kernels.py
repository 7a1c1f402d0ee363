"""Compiled inner loops: the marching decode and the convex fill.

Both kernels are exact re-statements of the reference semantics; they exist
only because the per-cell / per-pixel loops dominate the evaluation budget.
"""

from __future__ import annotations

import numba
import numpy as np


@numba.njit(cache=True)
def march_kernel(xv, cos_a, sin_a, top, left, eps, quads):  # pragma: no cover
    """Marching decode inner loop; returns True when a seed degenerates.

    quads is an (m, n, 4, 2) output buffer prefilled with NaN.
    """
    m, n = xv.shape
    for i in range(m):
        for j in range(n):
            if j > 0:
                p0x = quads[i, j - 1, 2, 0]
                p0y = quads[i, j - 1, 2, 1]
            else:
                p0x = left[i, 0]
                p0y = left[i, 1]
            if i > 0:
                p3x = quads[i - 1, j, 1, 0]
                p3y = quads[i - 1, j, 1, 1]
            else:
                p3x = top[j, 0]
                p3y = top[j, 1]
            sx = p3x - p0x
            sy = p3y - p0y
            if not (np.isfinite(sx) and np.isfinite(sy)):
                return True
            if (sx * sx + sy * sy) ** 0.5 < eps:
                return True
            r = xv[i, j]
            ca = cos_a[i, j]
            sa = sin_a[i, j]
            wx = r * (ca * sx + sa * sy)
            wy = r * (-sa * sx + ca * sy)
            quads[i, j, 0, 0] = p0x
            quads[i, j, 0, 1] = p0y
            quads[i, j, 1, 0] = p0x + wx
            quads[i, j, 1, 1] = p0y + wy
            quads[i, j, 2, 0] = p3x + wx
            quads[i, j, 2, 1] = p3y + wy
            quads[i, j, 3, 0] = p3x
            quads[i, j, 3, 1] = p3y
    return False


@numba.njit(cache=True)
def fill_convex_kernel(mask, u, v):  # pragma: no cover
    """OR a convex polygon into ``mask``: pixel centers strictly inside, or on
    the boundary when the edge is a top/left edge (half-open tie rule)."""
    h, w = mask.shape
    umin = u[0]
    umax = u[0]
    vmin = v[0]
    vmax = v[0]
    k = u.shape[0]
    for a in range(1, k):
        umin = min(umin, u[a])
        umax = max(umax, u[a])
        vmin = min(vmin, v[a])
        vmax = max(vmax, v[a])
    j0 = max(int(np.floor(umin - 0.5)), 0)
    j1 = min(int(np.ceil(umax + 0.5)), w)
    i0 = max(int(np.floor(vmin - 0.5)), 0)
    i1 = min(int(np.ceil(vmax + 0.5)), h)
    if j0 >= j1 or i0 >= i1:
        return
    area2 = 0.0
    for a in range(k):
        b = (a + 1) % k
        area2 += u[a] * v[b] - u[b] * v[a]
    # interior on the negative-cross side; flip to that winding if needed
    if area2 > 0.0:
        u = u[::-1].copy()
        v = v[::-1].copy()
    for i in range(i0, i1):
        yc = i + 0.5
        for j in range(j0, j1):
            xc = j + 0.5
            inside = True
            for a in range(k):
                b = (a + 1) % k
                du = u[b] - u[a]
                dv = v[b] - v[a]
                cross = du * (yc - v[a]) - dv * (xc - u[a])
                if cross > 0.0:
                    inside = False
                    break
                if cross == 0.0:
                    if not (du < 0.0 or (du == 0.0 and dv > 0.0)):
                        inside = False
                        break
            if inside:
                mask[i, j] = True


@numba.njit(cache=True)
def fill_quads_kernel(mask, px):  # pragma: no cover
    """OR many convex quads (pixel coords, shape (q, 4, 2)) into ``mask``."""
    for q in range(px.shape[0]):
        finite = True
        for a in range(4):
            if not (np.isfinite(px[q, a, 0]) and np.isfinite(px[q, a, 1])):
                finite = False
                break
        if finite:
            fill_convex_kernel(mask, px[q, :, 0].copy(), px[q, :, 1].copy())


@numba.njit(cache=True)
def aligned_iou_nearest(pred, target, r00, r01, r10, r11, tx, ty, s, step):  # pragma: no cover
    """IoU of target against pred resampled through the inverse similarity
    transform, nearest-pixel lookup, evaluated on a strided grid."""
    h, w = target.shape
    ph, pw = pred.shape
    inter = 0
    union = 0
    for i in range(0, h, step):
        vc = i + 0.5 * step
        for j in range(0, w, step):
            uc = j + 0.5 * step
            du = uc - tx
            dv = vc - ty
            qx = (r00 * du + r10 * dv) / s
            qy = (r01 * du + r11 * dv) / s
            val = False
            qj = int(np.floor(qx))
            qi = int(np.floor(qy))
            if 0 <= qi < ph and 0 <= qj < pw:
                val = pred[qi, qj]
            tv = target[i, j]
            if val and tv:
                inter += 1
            if val or tv:
                union += 1
    if union == 0:
        return 0.0
    return inter / union


@numba.njit(cache=True)
def aligned_iou_bilinear(pred, target, r00, r01, r10, r11, tx, ty, s):  # pragma: no cover
    """Full-resolution IoU with bilinear sampling of the binary prediction,
    thresholded at one half."""
    h, w = target.shape
    ph, pw = pred.shape
    inter = 0
    union = 0
    for i in range(h):
        vc = i + 0.5
        for j in range(w):
            uc = j + 0.5
            du = uc - tx
            dv = vc - ty
            qx = (r00 * du + r10 * dv) / s - 0.5
            qy = (r01 * du + r11 * dv) / s - 0.5
            x0 = int(np.floor(qx))
            y0 = int(np.floor(qy))
            fx = qx - x0
            fy = qy - y0
            acc = 0.0
            if 0 <= y0 < ph and 0 <= x0 < pw and pred[y0, x0]:
                acc += (1 - fx) * (1 - fy)
            if 0 <= y0 < ph and 0 <= x0 + 1 < pw and pred[y0, x0 + 1]:
                acc += fx * (1 - fy)
            if 0 <= y0 + 1 < ph and 0 <= x0 < pw and pred[y0 + 1, x0]:
                acc += (1 - fx) * fy
            if 0 <= y0 + 1 < ph and 0 <= x0 + 1 < pw and pred[y0 + 1, x0 + 1]:
                acc += fx * fy
            val = acc >= 0.5
            tv = target[i, j]
            if val and tv:
                inter += 1
            if val or tv:
                union += 1
    if union == 0:
        return 0.0
    return inter / union
