# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled grid kernels. Mirrors _reference.py arithmetic exactly."""

import numpy as np

cimport numpy as cnp
from libc.math cimport floor, sqrt, INFINITY

cnp.import_array()

BACKEND = "compiled"

cdef int UNKNOWN = 0
cdef int FREE = 1
cdef int OCCUPIED = 2

cdef double _EPS = 1e-6


cdef double _raycast_c(cnp.uint8_t[:, :, ::1] occ, double px, double py, double pz,
                       double dx, double dy, double dz, double max_range) nogil:
    cdef Py_ssize_t nx = occ.shape[0], ny = occ.shape[1], nz = occ.shape[2]
    cdef Py_ssize_t ix = <Py_ssize_t>floor(px), iy = <Py_ssize_t>floor(py), iz = <Py_ssize_t>floor(pz)
    cdef int step_x = 1 if dx > 0 else (-1 if dx < 0 else 0)
    cdef int step_y = 1 if dy > 0 else (-1 if dy < 0 else 0)
    cdef int step_z = 1 if dz > 0 else (-1 if dz < 0 else 0)
    cdef double tmax_x = ((ix + (step_x > 0)) - px) / dx if step_x != 0 else INFINITY
    cdef double tmax_y = ((iy + (step_y > 0)) - py) / dy if step_y != 0 else INFINITY
    cdef double tmax_z = ((iz + (step_z > 0)) - pz) / dz if step_z != 0 else INFINITY
    cdef double tdelta_x = (1.0 / dx if dx > 0 else -1.0 / dx) if step_x != 0 else INFINITY
    cdef double tdelta_y = (1.0 / dy if dy > 0 else -1.0 / dy) if step_y != 0 else INFINITY
    cdef double tdelta_z = (1.0 / dz if dz > 0 else -1.0 / dz) if step_z != 0 else INFINITY
    cdef double t
    while True:
        if tmax_x <= tmax_y and tmax_x <= tmax_z:
            t = tmax_x; ix += step_x; tmax_x += tdelta_x
        elif tmax_y <= tmax_z:
            t = tmax_y; iy += step_y; tmax_y += tdelta_y
        else:
            t = tmax_z; iz += step_z; tmax_z += tdelta_z
        if t > max_range:
            return -1.0
        if ix < 0 or ix >= nx or iy < 0 or iy >= ny or iz < 0 or iz >= nz:
            return -1.0
        if occ[ix, iy, iz]:
            return t


def raycast(occ, double px, double py, double pz,
            double dx, double dy, double dz, double max_range):
    cdef cnp.uint8_t[:, :, ::1] o = np.ascontiguousarray(occ, dtype=np.uint8)
    return _raycast_c(o, px, py, pz, dx, dy, dz, max_range)


def raycast_batch(occ, origin, dirs, double max_range):
    cdef cnp.uint8_t[:, :, ::1] o = np.ascontiguousarray(occ, dtype=np.uint8)
    cdef cnp.float64_t[:, ::1] d = np.ascontiguousarray(dirs, dtype=np.float64)
    cdef Py_ssize_t n = d.shape[0], i
    out_arr = np.empty(n, dtype=np.float64)
    cdef cnp.float64_t[::1] out = out_arr
    cdef double px = origin[0], py = origin[1], pz = origin[2]
    with nogil:
        for i in range(n):
            out[i] = _raycast_c(o, px, py, pz, d[i, 0], d[i, 1], d[i, 2], max_range)
    return out_arr


cdef void _mark_ray_c(cnp.int8_t[:, :, ::1] state, cnp.uint16_t[:, :, ::1] counts,
                      double px, double py, double pz,
                      double dx, double dy, double dz, double tlim, bint hit) nogil:
    cdef Py_ssize_t nx = state.shape[0], ny = state.shape[1], nz = state.shape[2]
    cdef Py_ssize_t ix = <Py_ssize_t>floor(px), iy = <Py_ssize_t>floor(py), iz = <Py_ssize_t>floor(pz)
    cdef Py_ssize_t hx, hy, hz
    cdef int step_x = 1 if dx > 0 else (-1 if dx < 0 else 0)
    cdef int step_y = 1 if dy > 0 else (-1 if dy < 0 else 0)
    cdef int step_z = 1 if dz > 0 else (-1 if dz < 0 else 0)
    cdef double tmax_x = ((ix + (step_x > 0)) - px) / dx if step_x != 0 else INFINITY
    cdef double tmax_y = ((iy + (step_y > 0)) - py) / dy if step_y != 0 else INFINITY
    cdef double tmax_z = ((iz + (step_z > 0)) - pz) / dz if step_z != 0 else INFINITY
    cdef double tdelta_x = (1.0 / dx if dx > 0 else -1.0 / dx) if step_x != 0 else INFINITY
    cdef double tdelta_y = (1.0 / dy if dy > 0 else -1.0 / dy) if step_y != 0 else INFINITY
    cdef double tdelta_z = (1.0 / dz if dz > 0 else -1.0 / dz) if step_z != 0 else INFINITY
    cdef double t = 0.0
    while t < tlim - _EPS:
        if 0 <= ix < nx and 0 <= iy < ny and 0 <= iz < nz:
            if state[ix, iy, iz] != OCCUPIED:
                state[ix, iy, iz] = FREE
            counts[ix, iy, iz] += 1
        if tmax_x <= tmax_y and tmax_x <= tmax_z:
            t = tmax_x; ix += step_x; tmax_x += tdelta_x
        elif tmax_y <= tmax_z:
            t = tmax_y; iy += step_y; tmax_y += tdelta_y
        else:
            t = tmax_z; iz += step_z; tmax_z += tdelta_z
    if hit:
        hx = <Py_ssize_t>floor(px + dx * (tlim + _EPS))
        hy = <Py_ssize_t>floor(py + dy * (tlim + _EPS))
        hz = <Py_ssize_t>floor(pz + dz * (tlim + _EPS))
        if 0 <= hx < nx and 0 <= hy < ny and 0 <= hz < nz:
            state[hx, hy, hz] = OCCUPIED
            counts[hx, hy, hz] += 1


def integrate_rays(state, counts, origin, dirs, ranges, double max_range):
    cdef cnp.int8_t[:, :, ::1] s = state
    cdef cnp.uint16_t[:, :, ::1] c = counts
    cdef cnp.float64_t[:, ::1] d = np.ascontiguousarray(dirs, dtype=np.float64)
    cdef cnp.float64_t[::1] r = np.ascontiguousarray(ranges, dtype=np.float64)
    cdef double px = origin[0], py = origin[1], pz = origin[2]
    cdef Py_ssize_t i, n = d.shape[0]
    cdef bint hit
    cdef double tlim
    with nogil:
        for i in range(n):
            hit = 0.0 <= r[i] <= max_range
            tlim = r[i] if hit else max_range
            _mark_ray_c(s, c, px, py, pz, d[i, 0], d[i, 1], d[i, 2], tlim, hit)


cdef void _edt_pass_c(cnp.int64_t[::1] f, cnp.int64_t[::1] out,
                      cnp.int64_t[::1] v, cnp.float64_t[::1] z) nogil:
    cdef Py_ssize_t n = f.shape[0]
    cdef Py_ssize_t k = 0, q
    cdef double s
    v[0] = 0
    z[0] = -INFINITY
    z[1] = INFINITY
    for q in range(1, n):
        s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * (q - v[k]))
        while s <= z[k]:
            k -= 1
            s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * (q - v[k]))
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = INFINITY
    k = 0
    for q in range(n):
        while z[k + 1] < q:
            k += 1
        out[q] = (q - v[k]) * (q - v[k]) + f[v[k]]


def edt_sq(mask):
    cdef cnp.int64_t big = 0
    for n in mask.shape:
        big += 2 * <cnp.int64_t>n * <cnp.int64_t>n
    big += 1
    f = np.where(mask, np.int64(0), np.int64(big))
    cdef cnp.int64_t[:, ::1] flat
    cdef cnp.int64_t[::1] line, out_line, v
    cdef cnp.float64_t[::1] z
    cdef Py_ssize_t row, m
    for axis in range(f.ndim):
        moved = np.ascontiguousarray(np.moveaxis(f, axis, -1))
        # positive index: wraparound is disabled module-wide
        flat = moved.reshape(-1, moved.shape[moved.ndim - 1])
        m = flat.shape[1]
        out_arr = np.empty(m, dtype=np.int64)
        v_arr = np.empty(m, dtype=np.int64)
        z_arr = np.empty(m + 1, dtype=np.float64)
        out_line = out_arr; v = v_arr; z = z_arr
        with nogil:
            for row in range(flat.shape[0]):
                if _line_min(flat[row]) < big:
                    _edt_pass_c(flat[row], out_line, v, z)
                    flat[row, :] = out_line
        f = np.moveaxis(np.asarray(moved), -1, axis)
    return np.ascontiguousarray(f)


cdef cnp.int64_t _line_min(cnp.int64_t[::1] line) nogil:
    cdef cnp.int64_t m = line[0]
    cdef Py_ssize_t i
    for i in range(1, line.shape[0]):
        if line[i] < m:
            m = line[i]
    return m


def los_state_clear(state, double ax, double ay, double az,
                    double bx, double by, double bz):
    cdef cnp.int8_t[:, :, ::1] s = state
    cdef double dx = bx - ax, dy = by - ay, dz = bz - az
    cdef double dist = sqrt(dx * dx + dy * dy + dz * dz)
    if dist < _EPS:
        return True
    dx /= dist; dy /= dist; dz /= dist
    cdef Py_ssize_t nx = s.shape[0], ny = s.shape[1], nz = s.shape[2]
    cdef Py_ssize_t ix = <Py_ssize_t>floor(ax), iy = <Py_ssize_t>floor(ay), iz = <Py_ssize_t>floor(az)
    cdef Py_ssize_t tx = <Py_ssize_t>floor(bx), ty = <Py_ssize_t>floor(by), tz = <Py_ssize_t>floor(bz)
    cdef int step_x = 1 if dx > 0 else (-1 if dx < 0 else 0)
    cdef int step_y = 1 if dy > 0 else (-1 if dy < 0 else 0)
    cdef int step_z = 1 if dz > 0 else (-1 if dz < 0 else 0)
    cdef double tmax_x = ((ix + (step_x > 0)) - ax) / dx if step_x != 0 else INFINITY
    cdef double tmax_y = ((iy + (step_y > 0)) - ay) / dy if step_y != 0 else INFINITY
    cdef double tmax_z = ((iz + (step_z > 0)) - az) / dz if step_z != 0 else INFINITY
    cdef double tdelta_x = (1.0 / dx if dx > 0 else -1.0 / dx) if step_x != 0 else INFINITY
    cdef double tdelta_y = (1.0 / dy if dy > 0 else -1.0 / dy) if step_y != 0 else INFINITY
    cdef double tdelta_z = (1.0 / dz if dz > 0 else -1.0 / dz) if step_z != 0 else INFINITY
    cdef double t
    while True:
        if ix == tx and iy == ty and iz == tz:
            return True
        if tmax_x <= tmax_y and tmax_x <= tmax_z:
            t = tmax_x; ix += step_x; tmax_x += tdelta_x
        elif tmax_y <= tmax_z:
            t = tmax_y; iy += step_y; tmax_y += tdelta_y
        else:
            t = tmax_z; iz += step_z; tmax_z += tdelta_z
        if t > dist - _EPS:
            return True
        if ix < 0 or ix >= nx or iy < 0 or iy >= ny or iz < 0 or iz >= nz:
            return False
        # the endpoint's own voxel is exempt from the state test
        if ix == tx and iy == ty and iz == tz:
            return True
        if s[ix, iy, iz] != FREE:
            return False


def solid_length(occ, double ax, double ay, double az,
                 double bx, double by, double bz):
    cdef cnp.uint8_t[:, :, ::1] o = np.ascontiguousarray(occ, dtype=np.uint8)
    cdef double dx = bx - ax, dy = by - ay, dz = bz - az
    cdef double dist = sqrt(dx * dx + dy * dy + dz * dz)
    if dist < _EPS:
        return 0.0
    dx /= dist; dy /= dist; dz /= dist
    cdef Py_ssize_t nx = o.shape[0], ny = o.shape[1], nz = o.shape[2]
    cdef Py_ssize_t ix = <Py_ssize_t>floor(ax), iy = <Py_ssize_t>floor(ay), iz = <Py_ssize_t>floor(az)
    cdef int step_x = 1 if dx > 0 else (-1 if dx < 0 else 0)
    cdef int step_y = 1 if dy > 0 else (-1 if dy < 0 else 0)
    cdef int step_z = 1 if dz > 0 else (-1 if dz < 0 else 0)
    cdef double tmax_x = ((ix + (step_x > 0)) - ax) / dx if step_x != 0 else INFINITY
    cdef double tmax_y = ((iy + (step_y > 0)) - ay) / dy if step_y != 0 else INFINITY
    cdef double tmax_z = ((iz + (step_z > 0)) - az) / dz if step_z != 0 else INFINITY
    cdef double tdelta_x = (1.0 / dx if dx > 0 else -1.0 / dx) if step_x != 0 else INFINITY
    cdef double tdelta_y = (1.0 / dy if dy > 0 else -1.0 / dy) if step_y != 0 else INFINITY
    cdef double tdelta_z = (1.0 / dz if dz > 0 else -1.0 / dz) if step_z != 0 else INFINITY
    cdef double total = 0.0, t_prev = 0.0, t_next, t_clip
    while t_prev < dist:
        if tmax_x <= tmax_y and tmax_x <= tmax_z:
            t_next = tmax_x
        elif tmax_y <= tmax_z:
            t_next = tmax_y
        else:
            t_next = tmax_z
        t_clip = t_next if t_next < dist else dist
        if 0 <= ix < nx and 0 <= iy < ny and 0 <= iz < nz and o[ix, iy, iz]:
            total += t_clip - t_prev
        t_prev = t_clip
        if t_next >= dist:
            break
        if tmax_x <= tmax_y and tmax_x <= tmax_z:
            ix += step_x; tmax_x += tdelta_x
        elif tmax_y <= tmax_z:
            iy += step_y; tmax_y += tdelta_y
        else:
            iz += step_z; tmax_z += tdelta_z
    return total
