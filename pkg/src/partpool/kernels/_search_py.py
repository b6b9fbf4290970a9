"""Pure-numpy pooling kernels; reference twin of the compiled extension.

All kernels operate on stacked maps of shape (parts, channels, H, W) and
integer cell spans (xlo, xhi, ylo, yhi) per part, computed before clamping
to the map so that shifting a span by an integer displacement is exact.
"""

from __future__ import annotations

import numpy as np

IMPL = "python"


def _integral(maps: np.ndarray) -> np.ndarray:
    """Summed-area tables, one per (part, channel) map, padded by one."""
    p, c, h, w = maps.shape
    ii = np.zeros((p, c, h + 1, w + 1), dtype=np.float64)
    np.cumsum(np.cumsum(maps, axis=2), axis=3, out=ii[:, :, 1:, 1:])
    return ii


def _block_sum(ii: np.ndarray, xlo: int, xhi: int, ylo: int, yhi: int) -> np.ndarray:
    return (ii[:, yhi, xhi] - ii[:, ylo, xhi] - ii[:, yhi, xlo] + ii[:, ylo, xlo])


def pool_search(maps, xlo, xhi, ylo, yhi, part_w, part_h, lam, sx, sy):
    """Brute-force displacement search per (part, foreground channel).

    Channel 0 is the background: it is pooled at zero displacement only.
    Returns (pooled (P, C), disp (P, C, 2) int64). The objective is
    mean - lam * ((dx/part_w)^2 + (dy/part_h)^2); ties prefer the smaller
    normalized displacement, then lexicographic (dy, dx).
    """
    p, c, h, w = maps.shape
    pooled = np.empty((p, c), dtype=np.float64)
    disp = np.zeros((p, c, 2), dtype=np.int64)
    ii_all = _integral(maps)
    for pi in range(p):
        ii = ii_all[pi]
        # zero-displacement candidate, shared by background and foreground
        xl0 = max(0, xlo[pi]); xh0 = min(w, xhi[pi])
        yl0 = max(0, ylo[pi]); yh0 = min(h, yhi[pi])
        if xh0 <= xl0 or yh0 <= yl0:
            raise ValueError(f"part {pi}: empty zero-displacement cell")
        n0 = (xh0 - xl0) * (yh0 - yl0)
        pool0 = _block_sum(ii, xl0, xh0, yl0, yh0) / n0
        pooled[pi, 0] = pool0[0]
        if c == 1:
            continue
        objs, nds, dys, dxs = [], [], [], []
        for dy in range(-sy, sy + 1):
            yl = max(0, ylo[pi] + dy); yh = min(h, yhi[pi] + dy)
            if yh <= yl:
                continue
            for dx in range(-sx, sx + 1):
                xl = max(0, xlo[pi] + dx); xh = min(w, xhi[pi] + dx)
                if xh <= xl:
                    continue
                n = (xh - xl) * (yh - yl)
                if dx == 0 and dy == 0:
                    pool = pool0[1:]
                else:
                    pool = _block_sum(ii, xl, xh, yl, yh)[1:] / n
                ndsq = (dx / part_w) ** 2 + (dy / part_h) ** 2
                objs.append(pool - lam * ndsq)
                nds.append(ndsq)
                dys.append(dy)
                dxs.append(dx)
        objs = np.array(objs)        # (ncand, C-1)
        nds = np.array(nds)
        order = np.arange(len(nds))
        for ci in range(1, c):
            best = np.lexsort((order, nds, -objs[:, ci - 1]))[0]
            pooled[pi, ci] = objs[best, ci - 1]
            disp[pi, ci, 0] = dxs[best]
            disp[pi, ci, 1] = dys[best]
    return pooled, disp


def pool_fixed(maps, xlo, xhi, ylo, yhi, disp):
    """Pool every (part, channel) at its stored displacement."""
    p, c, h, w = maps.shape
    out = np.empty((p, c), dtype=np.float64)
    ii_all = _integral(maps)
    for pi in range(p):
        for ci in range(c):
            dx = int(disp[pi, ci, 0]); dy = int(disp[pi, ci, 1])
            xl = max(0, xlo[pi] + dx); xh = min(w, xhi[pi] + dx)
            yl = max(0, ylo[pi] + dy); yh = min(h, yhi[pi] + dy)
            if xh <= xl or yh <= yl:
                raise ValueError(f"part {pi} channel {ci}: empty shifted cell")
            n = (xh - xl) * (yh - yl)
            out[pi, ci] = _block_sum(ii_all[pi, ci:ci + 1], xl, xh, yl, yh)[0] / n
    return out


def scatter_fixed(grad_maps, xlo, xhi, ylo, yhi, disp, upstream):
    """Adjoint of pool_fixed: adds upstream / n over each shifted cell."""
    p, c, h, w = grad_maps.shape
    for pi in range(p):
        for ci in range(c):
            up = upstream[pi, ci]
            if up == 0.0:
                continue
            dx = int(disp[pi, ci, 0]); dy = int(disp[pi, ci, 1])
            xl = max(0, xlo[pi] + dx); xh = min(w, xhi[pi] + dx)
            yl = max(0, ylo[pi] + dy); yh = min(h, yhi[pi] + dy)
            if xh <= xl or yh <= yl:
                raise ValueError(f"part {pi} channel {ci}: empty shifted cell")
            n = (xh - xl) * (yh - yl)
            grad_maps[pi, ci, yl:yh, xl:xh] += up / n
