# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels. Numerically equivalent to ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, INFINITY

cnp.import_array()

cdef double _TINY = 1e-12
cdef double _FOUR_PI = 12.566370614359172


cdef inline void _add_segment(double px, double py, double pz,
                              double ax, double ay, double az,
                              double bx, double by, double bz,
                              double sign, double* out) noexcept nogil:
    cdef double r1x = px - ax, r1y = py - ay, r1z = pz - az
    cdef double r2x = px - bx, r2y = py - by, r2z = pz - bz
    cdef double cx = r1y * r2z - r1z * r2y
    cdef double cy = r1z * r2x - r1x * r2z
    cdef double cz = r1x * r2y - r1y * r2x
    cdef double r1n = sqrt(r1x * r1x + r1y * r1y + r1z * r1z)
    cdef double r2n = sqrt(r2x * r2x + r2y * r2y + r2z * r2z)
    cdef double denom = r1n * r2n * (r1n * r2n + r1x * r2x + r1y * r2y + r1z * r2z)
    cdef double lx = bx - ax, ly = by - ay, lz = bz - az
    cdef double fac
    if cx * cx + cy * cy + cz * cz <= _TINY * _TINY * (lx * lx + ly * ly + lz * lz) or denom == 0.0:
        return
    fac = sign * (r1n + r2n) / denom
    out[0] += fac * cx
    out[1] += fac * cy
    out[2] += fac * cz


cdef inline void _add_leg(double px, double py, double pz,
                          double ax, double ay, double az,
                          double sign, double* out) noexcept nogil:
    cdef double rx = px - ax, ry = py - ay, rz = pz - az
    cdef double rn = sqrt(rx * rx + ry * ry + rz * rz)
    cdef double h2 = ry * ry + rz * rz
    cdef double scale = rn * rn if rn * rn > 1.0 else 1.0
    cdef double fac
    if h2 <= _TINY * _TINY * scale:
        return
    fac = sign / (rn * (rn - rx))
    out[1] += -fac * rz
    out[2] += fac * ry


cdef inline void _add_ring(double px, double py, double pz, double[:, :, ::1] C, Py_ssize_t j,
                           double ys, double sign, double wake, double* out) noexcept nogil:
    # ys = -1 evaluates the mirror image (corners reflected in y)
    cdef double x0 = C[j, 0, 0], y0 = ys * C[j, 0, 1], z0 = C[j, 0, 2]
    cdef double x1 = C[j, 1, 0], y1 = ys * C[j, 1, 1], z1 = C[j, 1, 2]
    cdef double x2 = C[j, 2, 0], y2 = ys * C[j, 2, 1], z2 = C[j, 2, 2]
    cdef double x3 = C[j, 3, 0], y3 = ys * C[j, 3, 1], z3 = C[j, 3, 2]
    _add_segment(px, py, pz, x0, y0, z0, x1, y1, z1, sign, out)
    _add_segment(px, py, pz, x1, y1, z1, x2, y2, z2, sign, out)
    if wake != 1.0:
        _add_segment(px, py, pz, x2, y2, z2, x3, y3, z3, sign * (1.0 - wake), out)
    _add_segment(px, py, pz, x3, y3, z3, x0, y0, z0, sign, out)
    if wake != 0.0:
        _add_leg(px, py, pz, x2, y2, z2, sign * wake, out)
        _add_leg(px, py, pz, x3, y3, z3, -sign * wake, out)


def aic_matrix(colloc, normals, corners, wake):
    cdef double[:, ::1] P = np.ascontiguousarray(colloc, dtype=np.float64)
    cdef double[:, ::1] N = np.ascontiguousarray(normals, dtype=np.float64)
    cdef double[:, :, ::1] C = np.ascontiguousarray(corners, dtype=np.float64)
    cdef double[::1] W = np.ascontiguousarray(wake, dtype=np.float64)
    cdef Py_ssize_t n = P.shape[0], m = C.shape[0], i, j
    out_arr = np.zeros((n, m), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double v[3]
    with nogil:
        for i in range(n):
            for j in range(m):
                v[0] = 0.0
                v[1] = 0.0
                v[2] = 0.0
                _add_ring(P[i, 0], P[i, 1], P[i, 2], C, j, 1.0, 1.0, W[j], v)
                _add_ring(P[i, 0], P[i, 1], P[i, 2], C, j, -1.0, -1.0, W[j], v)
                out[i, j] = (v[0] * N[i, 0] + v[1] * N[i, 1] + v[2] * N[i, 2]) / _FOUR_PI
    return out_arr


def containment_sum(points, centers, axes, double eps):
    cdef double[:, ::1] pts = np.ascontiguousarray(points, dtype=np.float64)
    cdef double[:, ::1] ctr = np.ascontiguousarray(np.atleast_2d(centers), dtype=np.float64)
    cdef double[:, ::1] ax = np.ascontiguousarray(np.atleast_2d(axes), dtype=np.float64)
    cdef Py_ssize_t k = ctr.shape[0], p = pts.shape[0], i, j
    out_arr = np.zeros(k, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef double ia, ib, ic, dx, dy, dz, d2, s, vi
    with nogil:
        for i in range(k):
            ia = 1.0 / ax[i, 0]
            ib = 1.0 / ax[i, 1]
            ic = 1.0 / ax[i, 2]
            s = 0.0
            for j in range(p):
                dx = (pts[j, 0] - ctr[i, 0]) * ia
                dy = pts[j, 1] * ib
                dz = (pts[j, 2] - ctr[i, 1]) * ic
                d2 = dx * dx + dy * dy + dz * dz
                if d2 == 0.0:
                    s = INFINITY
                    continue
                vi = (1.0 + eps) / d2 - 1.0
                if vi > 0.0:
                    s += vi
            out[i] = s
    return out_arr


def hvi_batch(front, ref, samples):
    cdef double[:, ::1] F = np.ascontiguousarray(np.asarray(front, dtype=np.float64).reshape(-1, 2))
    cdef double[:, ::1] Y = np.ascontiguousarray(np.asarray(samples, dtype=np.float64).reshape(-1, 2))
    cdef double r1 = float(ref[0]), r2 = float(ref[1])
    cdef Py_ssize_t m = F.shape[0], s = Y.shape[0], i, k
    out_arr = np.zeros(s, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef double a, b, h, y1, y2, w, hh, acc
    with nogil:
        for i in range(s):
            y1 = Y[i, 0]
            y2 = Y[i, 1]
            acc = 0.0
            for k in range(m + 1):
                a = -INFINITY if k == 0 else F[k - 1, 0]
                b = r1 if k == m else F[k, 0]
                h = r2 if k == 0 else F[k - 1, 1]
                w = b - (y1 if y1 > a else a)
                hh = h - y2
                if w > 0.0 and hh > 0.0:
                    acc += w * hh
            out[i] = acc
    return out_arr
