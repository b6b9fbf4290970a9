# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled pooling kernels; hot twin of _search_py with direct summation."""

import numpy as np

cimport numpy as cnp

IMPL = "cython"


cdef inline double _block_mean(double[:, ::1] m, Py_ssize_t xl, Py_ssize_t xh,
                               Py_ssize_t yl, Py_ssize_t yh) nogil:
    cdef double s = 0.0
    cdef Py_ssize_t y, x
    for y in range(yl, yh):
        for x in range(xl, xh):
            s += m[y, x]
    return s / ((yh - yl) * (xh - xl))


def pool_search(double[:, :, :, ::1] maps,
                long[::1] xlo, long[::1] xhi, long[::1] ylo, long[::1] yhi,
                double part_w, double part_h, double lam, long sx, long sy):
    """Brute-force displacement search; see _search_py.pool_search."""
    cdef Py_ssize_t p = maps.shape[0]
    cdef Py_ssize_t c = maps.shape[1]
    cdef Py_ssize_t h = maps.shape[2]
    cdef Py_ssize_t w = maps.shape[3]
    pooled_arr = np.empty((p, c), dtype=np.float64)
    disp_arr = np.zeros((p, c, 2), dtype=np.int64)
    cdef double[:, ::1] pooled = pooled_arr
    cdef long[:, :, ::1] disp = disp_arr
    cdef Py_ssize_t pi, ci, xl, xh, yl, yh, xl0, xh0, yl0, yh0
    cdef long dx, dy
    cdef double pool, ndsq, ndx, ndy, obj, best, best_nd, inf = float("inf")
    cdef long best_dx, best_dy
    cdef double[:, ::1] m

    for pi in range(p):
        xl0 = max(0, xlo[pi]); xh0 = min(w, xhi[pi])
        yl0 = max(0, ylo[pi]); yh0 = min(h, yhi[pi])
        if xh0 <= xl0 or yh0 <= yl0:
            raise ValueError(f"part {pi}: empty zero-displacement cell")
        pooled[pi, 0] = _block_mean(maps[pi, 0], xl0, xh0, yl0, yh0)
        for ci in range(1, c):
            m = maps[pi, ci]
            best = -inf
            best_nd = inf
            best_dx = 0
            best_dy = 0
            with nogil:
                for dy in range(-sy, sy + 1):
                    yl = max(0, ylo[pi] + dy); yh = min(h, yhi[pi] + dy)
                    if yh <= yl:
                        continue
                    ndy = dy / part_h
                    for dx in range(-sx, sx + 1):
                        xl = max(0, xlo[pi] + dx); xh = min(w, xhi[pi] + dx)
                        if xh <= xl:
                            continue
                        pool = _block_mean(m, xl, xh, yl, yh)
                        ndx = dx / part_w
                        ndsq = ndx * ndx + ndy * ndy
                        obj = pool - lam * ndsq
                        # ties: smaller normalized displacement, then first
                        # in lexicographic (dy, dx) iteration order
                        if obj > best or (obj == best and ndsq < best_nd):
                            best = obj
                            best_nd = ndsq
                            best_dx = dx
                            best_dy = dy
            pooled[pi, ci] = best
            disp[pi, ci, 0] = best_dx
            disp[pi, ci, 1] = best_dy
    return pooled_arr, disp_arr


def pool_fixed(double[:, :, :, ::1] maps,
               long[::1] xlo, long[::1] xhi, long[::1] ylo, long[::1] yhi,
               long[:, :, ::1] disp):
    """Pool every (part, channel) at its stored displacement."""
    cdef Py_ssize_t p = maps.shape[0]
    cdef Py_ssize_t c = maps.shape[1]
    cdef Py_ssize_t h = maps.shape[2]
    cdef Py_ssize_t w = maps.shape[3]
    out_arr = np.empty((p, c), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t pi, ci, xl, xh, yl, yh
    for pi in range(p):
        for ci in range(c):
            xl = max(0, xlo[pi] + disp[pi, ci, 0])
            xh = min(w, xhi[pi] + disp[pi, ci, 0])
            yl = max(0, ylo[pi] + disp[pi, ci, 1])
            yh = min(h, yhi[pi] + disp[pi, ci, 1])
            if xh <= xl or yh <= yl:
                raise ValueError(f"part {pi} channel {ci}: empty shifted cell")
            out[pi, ci] = _block_mean(maps[pi, ci], xl, xh, yl, yh)
    return out_arr


def scatter_fixed(double[:, :, :, ::1] grad_maps,
                  long[::1] xlo, long[::1] xhi, long[::1] ylo, long[::1] yhi,
                  long[:, :, ::1] disp, double[:, ::1] upstream):
    """Adjoint of pool_fixed: adds upstream / n over each shifted cell."""
    cdef Py_ssize_t p = grad_maps.shape[0]
    cdef Py_ssize_t c = grad_maps.shape[1]
    cdef Py_ssize_t h = grad_maps.shape[2]
    cdef Py_ssize_t w = grad_maps.shape[3]
    cdef Py_ssize_t pi, ci, xl, xh, yl, yh, y, x
    cdef double add
    for pi in range(p):
        for ci in range(c):
            if upstream[pi, ci] == 0.0:
                continue
            xl = max(0, xlo[pi] + disp[pi, ci, 0])
            xh = min(w, xhi[pi] + disp[pi, ci, 0])
            yl = max(0, ylo[pi] + disp[pi, ci, 1])
            yh = min(h, yhi[pi] + disp[pi, ci, 1])
            if xh <= xl or yh <= yl:
                raise ValueError(f"part {pi} channel {ci}: empty shifted cell")
            add = upstream[pi, ci] / ((yh - yl) * (xh - xl))
            for y in range(yl, yh):
                for x in range(xl, xh):
                    grad_maps[pi, ci, y, x] += add
    return None
