"""Pure NumPy/Python fallback for the hot grid kernels.

Semantics here are the contract; the compiled module in ``_speedups.pyx``
mirrors the same arithmetic (same traversal order, same epsilons) so both
backends produce identical results.

All functions work in grid coordinates: voxel (i, j, k) spans the unit cube
[i, i+1) x [j, j+1) x [k, k+1). Callers convert meters to grid units.
"""

from __future__ import annotations

import math

import numpy as np

BACKEND = "python"

# Cell states shared with navmap
UNKNOWN = 0
FREE = 1
OCCUPIED = 2

_EPS = 1e-6
_INF = float("inf")


def raycast(occ, px, py, pz, dx, dy, dz, max_range):
    """Distance (grid units) along (dx,dy,dz) to the first solid voxel.

    Returns -1.0 when no solid voxel is entered within max_range. The start
    voxel is not tested; callers guarantee the origin is in free space.
    """
    nx, ny, nz = occ.shape
    ix, iy, iz = int(math.floor(px)), int(math.floor(py)), int(math.floor(pz))

    step_x = 1 if dx > 0 else (-1 if dx < 0 else 0)
    step_y = 1 if dy > 0 else (-1 if dy < 0 else 0)
    step_z = 1 if dz > 0 else (-1 if dz < 0 else 0)

    tmax_x = ((ix + (step_x > 0)) - px) / dx if step_x != 0 else _INF
    tmax_y = ((iy + (step_y > 0)) - py) / dy if step_y != 0 else _INF
    tmax_z = ((iz + (step_z > 0)) - pz) / dz if step_z != 0 else _INF
    tdelta_x = abs(1.0 / dx) if step_x != 0 else _INF
    tdelta_y = abs(1.0 / dy) if step_y != 0 else _INF
    tdelta_z = abs(1.0 / dz) if step_z != 0 else _INF

    while True:
        if tmax_x <= tmax_y and tmax_x <= tmax_z:
            t = tmax_x
            ix += step_x
            tmax_x += tdelta_x
        elif tmax_y <= tmax_z:
            t = tmax_y
            iy += step_y
            tmax_y += tdelta_y
        else:
            t = tmax_z
            iz += step_z
            tmax_z += tdelta_z
        if t > max_range:
            return -1.0
        if ix < 0 or ix >= nx or iy < 0 or iy >= ny or iz < 0 or iz >= nz:
            return -1.0
        if occ[ix, iy, iz]:
            return t


def raycast_batch(occ, origin, dirs, max_range):
    """Vector of raycast() results for each unit direction in dirs (N,3)."""
    out = np.empty(len(dirs), dtype=np.float64)
    px, py, pz = float(origin[0]), float(origin[1]), float(origin[2])
    for i, d in enumerate(dirs):
        out[i] = raycast(occ, px, py, pz, float(d[0]), float(d[1]), float(d[2]), max_range)
    return out


def integrate_rays(state, counts, origin, dirs, ranges, max_range):
    """Mark ray-traversed voxels free and hit endpoints occupied.

    ranges[i] < 0 means no return (free to max_range). Occupied never
    downgrades to free; the hit voxel is the one containing the point just
    past the measured range (epsilon nudge keeps face hits deterministic).
    """
    nx, ny, nz = state.shape
    px, py, pz = float(origin[0]), float(origin[1]), float(origin[2])
    for i in range(len(dirs)):
        dx, dy, dz = float(dirs[i][0]), float(dirs[i][1]), float(dirs[i][2])
        r = float(ranges[i])
        hit = 0.0 <= r <= max_range
        tlim = r if hit else max_range
        _mark_ray(state, counts, nx, ny, nz, px, py, pz, dx, dy, dz, tlim, hit)


def _mark_ray(state, counts, nx, ny, nz, px, py, pz, dx, dy, dz, tlim, hit):
    ix, iy, iz = int(math.floor(px)), int(math.floor(py)), int(math.floor(pz))
    step_x = 1 if dx > 0 else (-1 if dx < 0 else 0)
    step_y = 1 if dy > 0 else (-1 if dy < 0 else 0)
    step_z = 1 if dz > 0 else (-1 if dz < 0 else 0)
    tmax_x = ((ix + (step_x > 0)) - px) / dx if step_x != 0 else _INF
    tmax_y = ((iy + (step_y > 0)) - py) / dy if step_y != 0 else _INF
    tmax_z = ((iz + (step_z > 0)) - pz) / dz if step_z != 0 else _INF
    tdelta_x = abs(1.0 / dx) if step_x != 0 else _INF
    tdelta_y = abs(1.0 / dy) if step_y != 0 else _INF
    tdelta_z = abs(1.0 / dz) if step_z != 0 else _INF

    t = 0.0
    while t < tlim - _EPS:
        if 0 <= ix < nx and 0 <= iy < ny and 0 <= iz < nz:
            if state[ix, iy, iz] != OCCUPIED:
                state[ix, iy, iz] = FREE
            counts[ix, iy, iz] += 1
        if tmax_x <= tmax_y and tmax_x <= tmax_z:
            t = tmax_x
            ix += step_x
            tmax_x += tdelta_x
        elif tmax_y <= tmax_z:
            t = tmax_y
            iy += step_y
            tmax_y += tdelta_y
        else:
            t = tmax_z
            iz += step_z
            tmax_z += tdelta_z
    if hit:
        hx = int(math.floor(px + dx * (tlim + _EPS)))
        hy = int(math.floor(py + dy * (tlim + _EPS)))
        hz = int(math.floor(pz + dz * (tlim + _EPS)))
        if 0 <= hx < nx and 0 <= hy < ny and 0 <= hz < nz:
            state[hx, hy, hz] = OCCUPIED
            counts[hx, hy, hz] += 1


def _edt_pass(f):
    """Lower-envelope transform of one line: out[i] = min_j f[j] + (i-j)^2.

    f is int64 with a large sentinel for +inf. Envelope boundaries are exact
    in double for grid-sized integers, so the output is the exact minimum.
    """
    n = len(f)
    out = np.empty(n, dtype=np.int64)
    v = np.empty(n, dtype=np.int64)       # parabola apex index
    z = np.empty(n + 1, dtype=np.float64)  # envelope boundaries
    k = 0
    v[0] = 0
    z[0] = -_INF
    z[1] = _INF
    for q in range(1, n):
        s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * (q - v[k]))
        while s <= z[k]:
            k -= 1
            s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * (q - v[k]))
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = _INF
    k = 0
    for q in range(n):
        while z[k + 1] < q:
            k += 1
        out[q] = (q - v[k]) ** 2 + f[v[k]]
    return out


def edt_sq(mask):
    """Exact squared Euclidean distance (in cells) to the nearest True cell.

    Works for any dimensionality; all-False input returns the sentinel
    (greater than any achievable squared distance).
    """
    big = np.int64(2) * sum(int(n) ** 2 for n in mask.shape) + 1
    f = np.where(mask, np.int64(0), big)
    for axis in range(f.ndim):
        moved = np.ascontiguousarray(np.moveaxis(f, axis, -1))
        flat = moved.reshape(-1, moved.shape[-1])
        for row in range(flat.shape[0]):
            if flat[row].min() < big:
                flat[row] = _edt_pass(flat[row])
        f = np.moveaxis(moved, -1, axis)
    return np.ascontiguousarray(f)


def los_state_clear(state, ax, ay, az, bx, by, bz):
    """True iff every voxel strictly between a and b has state FREE.

    Endpoints' own voxels are not tested. Used for visibility on robot maps,
    where unknown space blocks sight.
    """
    dx, dy, dz = bx - ax, by - ay, bz - az
    dist = math.sqrt(dx * dx + dy * dy + dz * dz)
    if dist < _EPS:
        return True
    dx, dy, dz = dx / dist, dy / dist, dz / dist
    nx, ny, nz = state.shape
    ix, iy, iz = int(math.floor(ax)), int(math.floor(ay)), int(math.floor(az))
    tx, ty, tz = int(math.floor(bx)), int(math.floor(by)), int(math.floor(bz))
    step_x = 1 if dx > 0 else (-1 if dx < 0 else 0)
    step_y = 1 if dy > 0 else (-1 if dy < 0 else 0)
    step_z = 1 if dz > 0 else (-1 if dz < 0 else 0)
    tmax_x = ((ix + (step_x > 0)) - ax) / dx if step_x != 0 else _INF
    tmax_y = ((iy + (step_y > 0)) - ay) / dy if step_y != 0 else _INF
    tmax_z = ((iz + (step_z > 0)) - az) / dz if step_z != 0 else _INF
    tdelta_x = abs(1.0 / dx) if step_x != 0 else _INF
    tdelta_y = abs(1.0 / dy) if step_y != 0 else _INF
    tdelta_z = abs(1.0 / dz) if step_z != 0 else _INF

    while True:
        if ix == tx and iy == ty and iz == tz:
            return True
        if tmax_x <= tmax_y and tmax_x <= tmax_z:
            t = tmax_x
            ix += step_x
            tmax_x += tdelta_x
        elif tmax_y <= tmax_z:
            t = tmax_y
            iy += step_y
            tmax_y += tdelta_y
        else:
            t = tmax_z
            iz += step_z
            tmax_z += tdelta_z
        if t > dist - _EPS:
            return True
        if ix < 0 or ix >= nx or iy < 0 or iy >= ny or iz < 0 or iz >= nz:
            return False
        # the endpoint's own voxel is exempt from the state test
        if ix == tx and iy == ty and iz == tz:
            return True
        if state[ix, iy, iz] != FREE:
            return False


def solid_length(occ, ax, ay, az, bx, by, bz):
    """Length (grid units) of segment a->b lying inside solid voxels."""
    dx, dy, dz = bx - ax, by - ay, bz - az
    dist = math.sqrt(dx * dx + dy * dy + dz * dz)
    if dist < _EPS:
        return 0.0
    dx, dy, dz = dx / dist, dy / dist, dz / dist
    nx, ny, nz = occ.shape
    ix, iy, iz = int(math.floor(ax)), int(math.floor(ay)), int(math.floor(az))
    step_x = 1 if dx > 0 else (-1 if dx < 0 else 0)
    step_y = 1 if dy > 0 else (-1 if dy < 0 else 0)
    step_z = 1 if dz > 0 else (-1 if dz < 0 else 0)
    tmax_x = ((ix + (step_x > 0)) - ax) / dx if step_x != 0 else _INF
    tmax_y = ((iy + (step_y > 0)) - ay) / dy if step_y != 0 else _INF
    tmax_z = ((iz + (step_z > 0)) - az) / dz if step_z != 0 else _INF
    tdelta_x = abs(1.0 / dx) if step_x != 0 else _INF
    tdelta_y = abs(1.0 / dy) if step_y != 0 else _INF
    tdelta_z = abs(1.0 / dz) if step_z != 0 else _INF

    total = 0.0
    t_prev = 0.0
    while t_prev < dist:
        if tmax_x <= tmax_y and tmax_x <= tmax_z:
            t_next = tmax_x
        elif tmax_y <= tmax_z:
            t_next = tmax_y
        else:
            t_next = tmax_z
        t_clip = min(t_next, dist)
        if 0 <= ix < nx and 0 <= iy < ny and 0 <= iz < nz and occ[ix, iy, iz]:
            total += t_clip - t_prev
        t_prev = t_clip
        if t_next >= dist:
            break
        if tmax_x <= tmax_y and tmax_x <= tmax_z:
            ix += step_x
            tmax_x += tdelta_x
        elif tmax_y <= tmax_z:
            iy += step_y
            tmax_y += tdelta_y
        else:
            iz += step_z
            tmax_z += tdelta_z
    return total
