"""Compiled scalar geometry loops used on the planner's hot path."""

import math

import numpy as np
from numba import njit

_DR = np.array([-1, 1, 0, 0, -1, -1, 1, 1])
_DC = np.array([0, 0, -1, 1, -1, 1, -1, 1])
_COST = np.array([1.0, 1.0, 1.0, 1.0, math.sqrt(2.0), math.sqrt(2.0), math.sqrt(2.0), math.sqrt(2.0)])


@njit(cache=True)
def bilinear(pad, cs, x, y):
    h = pad.shape[0] - 2
    w = pad.shape[1] - 2
    if x < 0.0 or y < 0.0 or x > w * cs or y > h * cs:
        return 0.0
    u = x / cs - 0.5
    v = y / cs - 0.5
    c0 = int(math.floor(u))
    r0 = int(math.floor(v))
    fu = u - c0
    fv = v - r0
    if fu > 1.0 - 1e-9:
        c0 += 1
        fu = 0.0
    elif fu < 1e-9:
        fu = 0.0
    if fv > 1.0 - 1e-9:
        r0 += 1
        fv = 0.0
    elif fv < 1e-9:
        fv = 0.0
    c0 = min(max(c0 + 1, 0), w)
    r0 = min(max(r0 + 1, 0), h)
    val = ((1 - fu) * (1 - fv) * pad[r0, c0] + fu * (1 - fv) * pad[r0, c0 + 1]
           + (1 - fu) * fv * pad[r0 + 1, c0] + fu * fv * pad[r0 + 1, c0 + 1])
    return max(val, 0.0)


@njit(cache=True)
def segment_clear(pad, cs, ax, ay, bx, by, radius, step):
    d = math.hypot(bx - ax, by - ay)
    n = max(2, int(math.ceil(d / step)) + 1)
    for k in range(n):
        t = k / (n - 1)
        if bilinear(pad, cs, ax + t * (bx - ax), ay + t * (by - ay)) <= radius:
            return False
    return True


@njit(cache=True)
def shortcut_indices(pad, cs, pts, radius, step):
    n = pts.shape[0]
    keep = np.empty(n, dtype=np.int64)
    keep[0] = 0
    m = 1
    i = 0
    while i < n - 1:
        j = i + 1
        while j + 1 < n and segment_clear(pad, cs, pts[i, 0], pts[i, 1],
                                          pts[j + 1, 0], pts[j + 1, 1], radius, step):
            j += 1
        keep[m] = j
        m += 1
        i = j
    return keep[:m]


@njit(cache=True)
def descend(ctg, free, r, c):
    """Follow the exact cost-to-go field downhill from (r, c) to its zero."""
    h, w = free.shape
    out = np.empty((h * w, 2), dtype=np.int64)
    out[0, 0] = r
    out[0, 1] = c
    m = 1
    while ctg[r, c] > 0.0 and m < h * w:
        best = np.inf
        br = -1
        bc = -1
        for k in range(8):
            nr = r + _DR[k]
            nc = c + _DC[k]
            if nr < 0 or nr >= h or nc < 0 or nc >= w or not free[nr, nc]:
                continue
            if _DR[k] != 0 and _DC[k] != 0 and not (free[nr, c] and free[r, nc]):
                continue
            f = _COST[k] + ctg[nr, nc]
            if f < best - 1e-12:
                best = f
                br = nr
                bc = nc
        if br < 0:
            break
        r = br
        c = bc
        out[m, 0] = r
        out[m, 1] = c
        m += 1
    return out[:m]


@njit(cache=True)
def raycast(occ, cs, ox, oy, angles, max_range):
    """Grid traversal per ray; distance to the first occupied cell boundary."""
    h, w = occ.shape
    out = np.empty(angles.shape[0])
    gx = ox / cs
    gy = oy / cs
    ix0 = int(math.floor(gx))
    iy0 = int(math.floor(gy))
    start_blocked = ix0 < 0 or ix0 >= w or iy0 < 0 or iy0 >= h or occ[iy0, ix0]
    for n in range(angles.shape[0]):
        if start_blocked:
            out[n] = 0.0
            continue
        dx = math.cos(angles[n])
        dy = math.sin(angles[n])
        if abs(dx) < 1e-12:
            dx = 0.0
        if abs(dy) < 1e-12:
            dy = 0.0
        ix = ix0
        iy = iy0
        sx = 1 if dx > 0 else -1
        sy = 1 if dy > 0 else -1
        tdx = cs / abs(dx) if dx != 0 else np.inf
        tdy = cs / abs(dy) if dy != 0 else np.inf
        if dx != 0:
            tmx = ((ix + 1 - gx) if dx > 0 else (gx - ix)) * cs / abs(dx)
        else:
            tmx = np.inf
        if dy != 0:
            tmy = ((iy + 1 - gy) if dy > 0 else (gy - iy)) * cs / abs(dy)
        else:
            tmy = np.inf
        res = max_range
        while True:
            if tmx < tmy:
                t = tmx
                if t >= max_range:
                    break
                ix += sx
                tmx += tdx
            else:
                t = tmy
                if t >= max_range:
                    break
                iy += sy
                tmy += tdy
            if ix < 0 or ix >= w or iy < 0 or iy >= h or occ[iy, ix]:
                res = t
                break
        out[n] = res
    return out
