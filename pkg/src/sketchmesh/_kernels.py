"""Numba-compiled inner loops: soft/hard rasterization and voxelization.

All kernels are serial and accumulate in a fixed order, so results are
bit-deterministic across runs.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

# forward contributions with softplus(t) below exp(-_T_CUT) are dropped;
# the omitted mass is far below float64 resolution of the aggregate
_T_CUT = 28.0
# faces with D < this are skipped in backward
_D_CUT = 1e-7


@njit(cache=True, fastmath=True)
def _softplus(t):
    if t > 0.0:
        return t + math.log1p(math.exp(-t))
    return math.log1p(math.exp(t))


@njit(cache=True, fastmath=True)
def _sigmoid(t):
    if t >= 0.0:
        return 1.0 / (1.0 + math.exp(-t))
    e = math.exp(t)
    return e / (1.0 + e)


@njit(cache=True, fastmath=True)
def _seg_d2(px, py, ax, ay, bx, by):
    """Squared distance from p to segment a-b and the clamped parameter."""
    hx = bx - ax
    hy = by - ay
    hh = hx * hx + hy * hy
    if hh <= 0.0:
        dx = px - ax
        dy = py - ay
        return dx * dx + dy * dy, 0.0
    t = ((px - ax) * hx + (py - ay) * hy) / hh
    if t < 0.0:
        t = 0.0
    elif t > 1.0:
        t = 1.0
    cx = ax + t * hx
    cy = ay + t * hy
    dx = px - cx
    dy = py - cy
    return dx * dx + dy * dy, t


@njit(cache=True, fastmath=True)
def soft_forward(verts2d, faces, h, w, sigma):
    """Soft silhouette: per pixel, 1 - prod_f (1 - sigmoid(s*d^2/sigma)).

    Returns (silhouette, log_survival) where log_survival[i,j] holds
    sum_f log(1 - D_f) for reuse in the backward pass.
    """
    logsum = np.zeros((h, w))
    band = math.sqrt(sigma * _T_CUT)
    inv_sigma = 1.0 / sigma
    for f in range(faces.shape[0]):
        i0v, i1v, i2v = faces[f, 0], faces[f, 1], faces[f, 2]
        ax, ay = verts2d[i0v, 0], verts2d[i0v, 1]
        bx, by = verts2d[i1v, 0], verts2d[i1v, 1]
        cx, cy = verts2d[i2v, 0], verts2d[i2v, 1]
        xmin = min(ax, min(bx, cx)) - band
        xmax = max(ax, max(bx, cx)) + band
        ymin = min(ay, min(by, cy)) - band
        ymax = max(ay, max(by, cy)) + band
        j0 = max(0, int(math.ceil((xmin + 1.0) * 0.5 * w - 0.5)))
        j1 = min(w - 1, int(math.floor((xmax + 1.0) * 0.5 * w - 0.5)))
        i0 = max(0, int(math.ceil((1.0 - ymax) * 0.5 * h - 0.5)))
        i1 = min(h - 1, int(math.floor((1.0 - ymin) * 0.5 * h - 0.5)))
        for i in range(i0, i1 + 1):
            py = 1.0 - (i + 0.5) * 2.0 / h
            for j in range(j0, j1 + 1):
                px = (j + 0.5) * 2.0 / w - 1.0
                d2a, _ = _seg_d2(px, py, ax, ay, bx, by)
                d2b, _ = _seg_d2(px, py, bx, by, cx, cy)
                d2c, _ = _seg_d2(px, py, cx, cy, ax, ay)
                d2 = min(d2a, min(d2b, d2c))
                s1 = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
                s2 = (cx - bx) * (py - by) - (cy - by) * (px - bx)
                s3 = (ax - cx) * (py - cy) - (ay - cy) * (px - cx)
                inside = (s1 >= 0.0 and s2 >= 0.0 and s3 >= 0.0) or \
                         (s1 <= 0.0 and s2 <= 0.0 and s3 <= 0.0)
                t = d2 * inv_sigma if inside else -d2 * inv_sigma
                if t < -_T_CUT:
                    continue
                logsum[i, j] -= _softplus(t)
    sil = -np.expm1(logsum)
    return sil, logsum


@njit(cache=True, fastmath=True)
def soft_backward(grad_out, verts2d, faces, h, w, sigma, logsum):
    """Cotangent of soft_forward w.r.t. the projected vertices."""
    gverts = np.zeros_like(verts2d)
    band = math.sqrt(sigma * _T_CUT)
    inv_sigma = 1.0 / sigma
    for f in range(faces.shape[0]):
        va, vb, vc = faces[f, 0], faces[f, 1], faces[f, 2]
        ax, ay = verts2d[va, 0], verts2d[va, 1]
        bx, by = verts2d[vb, 0], verts2d[vb, 1]
        cx, cy = verts2d[vc, 0], verts2d[vc, 1]
        xmin = min(ax, min(bx, cx)) - band
        xmax = max(ax, max(bx, cx)) + band
        ymin = min(ay, min(by, cy)) - band
        ymax = max(ay, max(by, cy)) + band
        j0 = max(0, int(math.ceil((xmin + 1.0) * 0.5 * w - 0.5)))
        j1 = min(w - 1, int(math.floor((xmax + 1.0) * 0.5 * w - 0.5)))
        i0 = max(0, int(math.ceil((1.0 - ymax) * 0.5 * h - 0.5)))
        i1 = min(h - 1, int(math.floor((1.0 - ymin) * 0.5 * h - 0.5)))
        for i in range(i0, i1 + 1):
            py = 1.0 - (i + 0.5) * 2.0 / h
            for j in range(j0, j1 + 1):
                g = grad_out[i, j]
                if g == 0.0:
                    continue
                px = (j + 0.5) * 2.0 / w - 1.0
                d2a, ta = _seg_d2(px, py, ax, ay, bx, by)
                d2b, tb = _seg_d2(px, py, bx, by, cx, cy)
                d2c, tc = _seg_d2(px, py, cx, cy, ax, ay)
                d2 = d2a
                seg = 0
                tpar = ta
                if d2b < d2:
                    d2, seg, tpar = d2b, 1, tb
                if d2c < d2:
                    d2, seg, tpar = d2c, 2, tc
                s1 = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
                s2 = (cx - bx) * (py - by) - (cy - by) * (px - bx)
                s3 = (ax - cx) * (py - cy) - (ay - cy) * (px - cx)
                inside = (s1 >= 0.0 and s2 >= 0.0 and s3 >= 0.0) or \
                         (s1 <= 0.0 and s2 <= 0.0 and s3 <= 0.0)
                sign = 1.0 if inside else -1.0
                t = sign * d2 * inv_sigma
                d_face = _sigmoid(t)
                if d_face < _D_CUT:
                    continue
                # product of (1 - D) over the other faces, in log space
                rest = math.exp(logsum[i, j] + _softplus(t))
                coef = g * rest * d_face * (1.0 - d_face) * sign * inv_sigma
                if coef == 0.0:
                    continue
                if seg == 0:
                    pax, pay, pbx, pby, ia, ib = ax, ay, bx, by, va, vb
                elif seg == 1:
                    pax, pay, pbx, pby, ia, ib = bx, by, cx, cy, vb, vc
                else:
                    pax, pay, pbx, pby, ia, ib = cx, cy, ax, ay, vc, va
                if tpar <= 0.0:
                    gverts[ia, 0] += coef * 2.0 * (pax - px)
                    gverts[ia, 1] += coef * 2.0 * (pay - py)
                elif tpar >= 1.0:
                    gverts[ib, 0] += coef * 2.0 * (pbx - px)
                    gverts[ib, 1] += coef * 2.0 * (pby - py)
                else:
                    qx = pax + tpar * (pbx - pax)
                    qy = pay + tpar * (pby - pay)
                    wx = 2.0 * (qx - px)
                    wy = 2.0 * (qy - py)
                    gverts[ia, 0] += coef * (1.0 - tpar) * wx
                    gverts[ia, 1] += coef * (1.0 - tpar) * wy
                    gverts[ib, 0] += coef * tpar * wx
                    gverts[ib, 1] += coef * tpar * wy
    return gverts


@njit(cache=True)
def hard_forward(verts2d, faces, h, w):
    """Binary coverage of pixel centers, exact-once fill rule on shared edges."""
    mask = np.zeros((h, w), dtype=np.uint8)
    for f in range(faces.shape[0]):
        va, vb, vc = faces[f, 0], faces[f, 1], faces[f, 2]
        # pixel coordinates, y down, centers at integers
        ax = (verts2d[va, 0] + 1.0) * 0.5 * w - 0.5
        ay = (1.0 - verts2d[va, 1]) * 0.5 * h - 0.5
        bx = (verts2d[vb, 0] + 1.0) * 0.5 * w - 0.5
        by = (1.0 - verts2d[vb, 1]) * 0.5 * h - 0.5
        cx = (verts2d[vc, 0] + 1.0) * 0.5 * w - 0.5
        cy = (1.0 - verts2d[vc, 1]) * 0.5 * h - 0.5
        area2 = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
        if area2 == 0.0:
            continue
        if area2 < 0.0:
            bx, cx = cx, bx
            by, cy = cy, by
        j0 = max(0, int(math.ceil(min(ax, min(bx, cx)))))
        j1 = min(w - 1, int(math.floor(max(ax, max(bx, cx)))))
        i0 = max(0, int(math.ceil(min(ay, min(by, cy)))))
        i1 = min(h - 1, int(math.floor(max(ay, max(by, cy)))))
        for i in range(i0, i1 + 1):
            for j in range(j0, j1 + 1):
                x = float(j)
                y = float(i)
                e0 = (bx - ax) * (y - ay) - (by - ay) * (x - ax)
                e1 = (cx - bx) * (y - by) - (cy - by) * (x - bx)
                e2 = (ax - cx) * (y - cy) - (ay - cy) * (x - cx)
                ok0 = e0 > 0.0 or (e0 == 0.0 and _tie_edge(bx - ax, by - ay))
                ok1 = e1 > 0.0 or (e1 == 0.0 and _tie_edge(cx - bx, cy - by))
                ok2 = e2 > 0.0 or (e2 == 0.0 and _tie_edge(ax - cx, ay - cy))
                if ok0 and ok1 and ok2:
                    mask[i, j] = 1
    return mask


@njit(cache=True)
def _tie_edge(dx, dy):
    # accepts exactly one of each opposite directed-edge pair
    return dy > 0.0 or (dy == 0.0 and dx < 0.0)


# ---------------------------------------------------------------------------
# voxelization

@njit(cache=True)
def _column_crossings(tris, yq, zq, out_x):
    """Ray along +x at (yq, zq): crossing x positions, or a degeneracy flag.

    Edge-on triangles (projected area ~ 0) never produce a transversal
    crossing; they only force a jitter when the ray grazes their projected
    segments. Near-edge tests are done in area units so conditioning does
    not depend on the triangle's tilt.
    """
    graze = 1e-7
    n = 0
    for f in range(tris.shape[0]):
        x1, y1, z1 = tris[f, 0, 0], tris[f, 0, 1], tris[f, 0, 2]
        x2, y2, z2 = tris[f, 1, 0], tris[f, 1, 1], tris[f, 1, 2]
        x3, y3, z3 = tris[f, 2, 0], tris[f, 2, 1], tris[f, 2, 2]
        lo_y = min(y1, min(y2, y3)) - graze
        hi_y = max(y1, max(y2, y3)) + graze
        lo_z = min(z1, min(z2, z3)) - graze
        hi_z = max(z1, max(z2, z3)) + graze
        if yq < lo_y or yq > hi_y or zq < lo_z or zq > hi_z:
            continue
        dy = hi_y - lo_y
        dz = hi_z - lo_z
        diag2 = dy * dy + dz * dz
        det = (y2 - y1) * (z3 - z1) - (y3 - y1) * (z2 - z1)
        if abs(det) < 1e-9 * diag2:
            d2a, _ = _seg_d2(yq, zq, y1, z1, y2, z2)
            d2b, _ = _seg_d2(yq, zq, y2, z2, y3, z3)
            d2c, _ = _seg_d2(yq, zq, y3, z3, y1, z1)
            if min(d2a, min(d2b, d2c)) < graze * graze:
                return n, False  # ray grazes an edge-on face
            continue
        s = 1.0 if det > 0.0 else -1.0
        sub1 = ((y2 - yq) * (z3 - zq) - (y3 - yq) * (z2 - zq)) * s
        sub2 = ((y3 - yq) * (z1 - zq) - (y1 - yq) * (z3 - zq)) * s
        sub3 = ((y1 - yq) * (z2 - zq) - (y2 - yq) * (z1 - zq)) * s
        tol_a = 1e-13 * diag2
        if sub1 > tol_a and sub2 > tol_a and sub3 > tol_a:
            ad = abs(det)
            out_x[n] = (sub1 * x1 + sub2 * x2 + sub3 * x3) / ad
            n += 1
        elif sub1 < -tol_a or sub2 < -tol_a or sub3 < -tol_a:
            continue
        else:
            return n, False  # ray passes within tolerance of an edge
    return n, True


@njit(cache=True)
def voxelize_columns(tris, resolution):
    """Parity occupancy on an R^3 grid over [-1,1]^3; occupancy[i,j,k]
    covers x, y, z in ascending index order."""
    r = resolution
    occ = np.zeros((r, r, r), dtype=np.uint8)
    cell = 2.0 / r
    xs = np.empty(r)
    for i in range(r):
        xs[i] = -1.0 + (i + 0.5) * cell
    crossings = np.empty(tris.shape[0])
    for jy in range(r):
        y0 = -1.0 + (jy + 0.5) * cell
        for kz in range(r):
            z0 = -1.0 + (kz + 0.5) * cell
            n = 0
            good = False
            for attempt in range(16):
                yq = y0 + attempt * (1.3e-7 + attempt * 0.41e-7)
                zq = z0 + attempt * (0.7e-7 + attempt * 0.23e-7)
                n, good = _column_crossings(tris, yq, zq, crossings)
                if good:
                    break
            if not good:
                return occ, False
            for ix in range(r):
                cnt = 0
                for m in range(n):
                    if crossings[m] > xs[ix]:
                        cnt += 1
                if cnt % 2 == 1:
                    occ[ix, jy, kz] = 1
    return occ, True


def warm_up() -> None:
    """Force JIT compilation of every kernel with tiny inputs."""
    v = np.array([[-0.5, -0.5], [0.5, -0.5], [0.0, 0.5]])
    f = np.array([[0, 1, 2]], dtype=np.int64)
    sil, logsum = soft_forward(v, f, 8, 8, 1e-2)
    soft_backward(np.ones((8, 8)), v, f, 8, 8, 1e-2, logsum)
    hard_forward(v, f, 8, 8)
    tris = np.array([[[-0.5, -0.5, -0.5], [0.5, -0.5, -0.5], [0.0, 0.5, -0.5]]])
    voxelize_columns(tris, 2)
