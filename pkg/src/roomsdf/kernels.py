"""Hot numeric kernels with numba and pure-numpy twins.

Every public function here dispatches on :func:`roomsdf.backend.use_numba`.
The two implementations of each kernel perform identical arithmetic in an
identical order, so their outputs are bitwise equal; tests assert this.
Kernels stay serial (no ``prange``) and avoid ``fastmath`` so that training
runs are reproducible bit-for-bit under a fixed seed.
"""

import numpy as np
from numba import njit

from . import backend
from .mc_tables import EDGE_DEF, NTRI, TRI_TABLE

# ---------------------------------------------------------------------------
# Bilinear gather / scatter on a 2D feature plane.
#
# Coordinates (u, v) index plane axes 0 and 1 in node units, already clamped
# by the caller to [0, n-1]. A query on an exact node returns the stored node
# feature (interpolation weights collapse to 1).
# ---------------------------------------------------------------------------


def _gather_corners(n, u, v):
    i0 = np.floor(u).astype(np.int64)
    j0 = np.floor(v).astype(np.int64)
    np.clip(i0, 0, n - 2, out=i0)
    np.clip(j0, 0, n - 2, out=j0)
    fu = u - i0
    fv = v - j0
    return i0, j0, fu, fv


def _plane_gather_numpy(plane, u, v):
    n = plane.shape[0]
    i0, j0, fu, fv = _gather_corners(n, u, v)
    w00 = (1.0 - fu) * (1.0 - fv)
    w01 = (1.0 - fu) * fv
    w10 = fu * (1.0 - fv)
    w11 = fu * fv
    out = w00[:, None] * plane[i0, j0]
    out += w01[:, None] * plane[i0, j0 + 1]
    out += w10[:, None] * plane[i0 + 1, j0]
    out += w11[:, None] * plane[i0 + 1, j0 + 1]
    return out


@njit(cache=True)
def _plane_gather_numba(plane, u, v):
    n = plane.shape[0]
    c = plane.shape[2]
    p = u.shape[0]
    out = np.empty((p, c), dtype=plane.dtype)
    for k in range(p):
        i0 = int(np.floor(u[k]))
        j0 = int(np.floor(v[k]))
        if i0 < 0:
            i0 = 0
        elif i0 > n - 2:
            i0 = n - 2
        if j0 < 0:
            j0 = 0
        elif j0 > n - 2:
            j0 = n - 2
        fu = u[k] - i0
        fv = v[k] - j0
        w00 = (1.0 - fu) * (1.0 - fv)
        w01 = (1.0 - fu) * fv
        w10 = fu * (1.0 - fv)
        w11 = fu * fv
        for ch in range(c):
            acc = w00 * plane[i0, j0, ch]
            acc += w01 * plane[i0, j0 + 1, ch]
            acc += w10 * plane[i0 + 1, j0, ch]
            acc += w11 * plane[i0 + 1, j0 + 1, ch]
            out[k, ch] = acc
    return out


def plane_gather(plane, u, v):
    """Bilinear lookup of (P,) coords on an (N, N, C) plane -> (P, C)."""
    if backend.use_numba():
        return _plane_gather_numba(plane, u, v)
    return _plane_gather_numpy(plane, u, v)


def _plane_scatter_numpy(grad_plane, u, v, grad_out):
    n = grad_plane.shape[0]
    i0, j0, fu, fv = _gather_corners(n, u, v)
    np.add.at(grad_plane, (i0, j0), ((1.0 - fu) * (1.0 - fv))[:, None] * grad_out)
    np.add.at(grad_plane, (i0, j0 + 1), ((1.0 - fu) * fv)[:, None] * grad_out)
    np.add.at(grad_plane, (i0 + 1, j0), (fu * (1.0 - fv))[:, None] * grad_out)
    np.add.at(grad_plane, (i0 + 1, j0 + 1), (fu * fv)[:, None] * grad_out)


@njit(cache=True)
def _plane_scatter_numba(grad_plane, u, v, grad_out):
    # Four separate corner passes, each in point order: the exact accumulation
    # order of the np.add.at fallback, keeping both backends bit-identical.
    n = grad_plane.shape[0]
    c = grad_plane.shape[2]
    p = u.shape[0]
    i0s = np.empty(p, dtype=np.int64)
    j0s = np.empty(p, dtype=np.int64)
    fus = np.empty(p, dtype=grad_plane.dtype)
    fvs = np.empty(p, dtype=grad_plane.dtype)
    for k in range(p):
        i0 = int(np.floor(u[k]))
        j0 = int(np.floor(v[k]))
        if i0 < 0:
            i0 = 0
        elif i0 > n - 2:
            i0 = n - 2
        if j0 < 0:
            j0 = 0
        elif j0 > n - 2:
            j0 = n - 2
        i0s[k] = i0
        j0s[k] = j0
        fus[k] = u[k] - i0
        fvs[k] = v[k] - j0
    for k in range(p):
        w = (1.0 - fus[k]) * (1.0 - fvs[k])
        for ch in range(c):
            grad_plane[i0s[k], j0s[k], ch] += w * grad_out[k, ch]
    for k in range(p):
        w = (1.0 - fus[k]) * fvs[k]
        for ch in range(c):
            grad_plane[i0s[k], j0s[k] + 1, ch] += w * grad_out[k, ch]
    for k in range(p):
        w = fus[k] * (1.0 - fvs[k])
        for ch in range(c):
            grad_plane[i0s[k] + 1, j0s[k], ch] += w * grad_out[k, ch]
    for k in range(p):
        w = fus[k] * fvs[k]
        for ch in range(c):
            grad_plane[i0s[k] + 1, j0s[k] + 1, ch] += w * grad_out[k, ch]


def plane_scatter(grad_plane, u, v, grad_out):
    """Accumulate bilinear-gather gradients back into the plane (in place)."""
    if backend.use_numba():
        _plane_scatter_numba(grad_plane, u, v, grad_out)
    else:
        _plane_scatter_numpy(grad_plane, u, v, grad_out)


# ---------------------------------------------------------------------------
# Marching-cubes triangle emission.
#
# Both paths emit, per triangle vertex, an int64 key identifying the grid
# edge the vertex sits on: ((axis * n + i) * n + j) * n + k with n = nodes
# per side and (i, j, k) the edge's lower node. Vertex positions are
# interpolated once per unique key afterwards (shared numpy code in
# roomsdf.mesh), so welding across cells is exact by construction.
# Cells are visited in C order and triangles in table order in both paths.
# ---------------------------------------------------------------------------


def _corner_masks(values, level):
    inside = values < level
    return (
        inside[:-1, :-1, :-1],
        inside[1:, :-1, :-1],
        inside[1:, 1:, :-1],
        inside[:-1, 1:, :-1],
        inside[:-1, :-1, 1:],
        inside[1:, :-1, 1:],
        inside[1:, 1:, 1:],
        inside[:-1, 1:, 1:],
    )


def _mc_emit_numpy(values, level):
    n = values.shape[0]
    c = _corner_masks(values, level)
    case = np.zeros((n - 1, n - 1, n - 1), dtype=np.int32)
    for bit, mask in enumerate(c):
        case |= mask.astype(np.int32) << bit
    ncase = NTRI[case].ravel()
    cells = np.flatnonzero(ncase)
    if cells.size == 0:
        return np.zeros((0, 3), dtype=np.int64)
    counts = ncase[cells]
    total = int(counts.sum())
    cell_of_tri = np.repeat(cells, counts)
    case_of_tri = case.ravel()[cell_of_tri]
    offsets = np.concatenate(([0], np.cumsum(counts)))[:-1]
    slot = np.arange(total) - np.repeat(offsets, counts)
    edges = TRI_TABLE[case_of_tri[:, None], slot[:, None] * 3 + np.arange(3)]
    m = n - 1
    ci = cell_of_tri // (m * m)
    cj = (cell_of_tri // m) % m
    ck = cell_of_tri % m
    axis = EDGE_DEF[edges, 0].astype(np.int64)
    ei = ci[:, None] + EDGE_DEF[edges, 1]
    ej = cj[:, None] + EDGE_DEF[edges, 2]
    ek = ck[:, None] + EDGE_DEF[edges, 3]
    return ((axis * n + ei) * n + ej) * n + ek


@njit(cache=True)
def _mc_emit_numba(values, level, ntri_table, tri_table, edge_def):
    n = values.shape[0]
    m = n - 1
    total = 0
    for i in range(m):
        for j in range(m):
            for k in range(m):
                case = 0
                if values[i, j, k] < level:
                    case |= 1
                if values[i + 1, j, k] < level:
                    case |= 2
                if values[i + 1, j + 1, k] < level:
                    case |= 4
                if values[i, j + 1, k] < level:
                    case |= 8
                if values[i, j, k + 1] < level:
                    case |= 16
                if values[i + 1, j, k + 1] < level:
                    case |= 32
                if values[i + 1, j + 1, k + 1] < level:
                    case |= 64
                if values[i, j + 1, k + 1] < level:
                    case |= 128
                total += ntri_table[case]
    keys = np.empty((total, 3), dtype=np.int64)
    t = 0
    for i in range(m):
        for j in range(m):
            for k in range(m):
                case = 0
                if values[i, j, k] < level:
                    case |= 1
                if values[i + 1, j, k] < level:
                    case |= 2
                if values[i + 1, j + 1, k] < level:
                    case |= 4
                if values[i, j + 1, k] < level:
                    case |= 8
                if values[i, j, k + 1] < level:
                    case |= 16
                if values[i + 1, j, k + 1] < level:
                    case |= 32
                if values[i + 1, j + 1, k + 1] < level:
                    case |= 64
                if values[i, j + 1, k + 1] < level:
                    case |= 128
                for s in range(ntri_table[case]):
                    for v in range(3):
                        e = tri_table[case, s * 3 + v]
                        axis = edge_def[e, 0]
                        ei = i + edge_def[e, 1]
                        ej = j + edge_def[e, 2]
                        ek = k + edge_def[e, 3]
                        keys[t, v] = ((axis * n + ei) * n + ej) * n + ek
                    t += 1
    return keys


def mc_triangle_keys(values, level):
    """Emit marching-cubes triangles as (T, 3) grid-edge keys."""
    if values.ndim != 3 or values.shape[0] != values.shape[1] != values.shape[2]:
        if values.ndim != 3:
            raise ValueError(f"expected a 3D value grid, got shape {values.shape}")
    if backend.use_numba():
        return _mc_emit_numba(np.ascontiguousarray(values, dtype=np.float64),
                              float(level), NTRI, TRI_TABLE, EDGE_DEF)
    return _mc_emit_numpy(np.asarray(values, dtype=np.float64), float(level))


# ---------------------------------------------------------------------------
# Median filter (single channel, replicate padding).
# ---------------------------------------------------------------------------


def _median_numpy(img, window):
    pad = window // 2
    padded = np.pad(img, pad, mode="edge")
    win = np.lib.stride_tricks.sliding_window_view(padded, (window, window))
    return np.median(win, axis=(2, 3))


@njit(cache=True)
def _median_numba(img, window):
    h, w = img.shape
    pad = window // 2
    out = np.empty_like(img)
    buf = np.empty(window * window, dtype=img.dtype)
    mid = (window * window) // 2
    for y in range(h):
        for x in range(w):
            idx = 0
            for dy in range(-pad, pad + 1):
                yy = y + dy
                if yy < 0:
                    yy = 0
                elif yy >= h:
                    yy = h - 1
                for dx in range(-pad, pad + 1):
                    xx = x + dx
                    if xx < 0:
                        xx = 0
                    elif xx >= w:
                        xx = w - 1
                    buf[idx] = img[yy, xx]
                    idx += 1
            out[y, x] = np.sort(buf)[mid]
    return out


def median_filter2d(img, window):
    """Median of an odd ``window`` x ``window`` neighborhood, replicate-padded."""
    if window % 2 == 0 or window < 3:
        raise ValueError(f"median window must be odd and >= 3, got {window}")
    img = np.asarray(img, dtype=np.float64)
    if backend.use_numba():
        return _median_numba(img, window)
    return _median_numpy(img, window)


def warm_up():
    """Trigger JIT compilation of all numba kernels on tiny inputs."""
    if not backend.use_numba():
        return
    plane = np.zeros((4, 4, 2))
    uv = np.array([1.2, 2.7])
    plane_gather(plane, uv, uv)
    plane_scatter(np.zeros_like(plane), uv, uv, np.ones((2, 2)))
    g = np.ones((3, 3, 3))
    g[1, 1, 1] = -1.0
    mc_triangle_keys(g, 0.0)
    median_filter2d(np.zeros((4, 4)), 3)
