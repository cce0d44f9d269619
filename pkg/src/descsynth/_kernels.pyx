# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops: batched projection, reprojection residuals, top-2 scans.

Results match ``_kernels_py`` bit-for-bit on the residual/projection paths
up to floating-point reassociation (<1e-12 relative).
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, INFINITY, NAN

cnp.import_array()


def project_points(const double[:, ::1] R, const double[::1] t, double fx, double fy,
                   double cx, double cy, double width, double height,
                   const double[:, ::1] points):
    cdef Py_ssize_t n = points.shape[0], i
    uv_arr = np.empty((n, 2))
    z_arr = np.empty(n)
    ok_arr = np.zeros(n, dtype=np.bool_)
    cdef double[:, ::1] uv = uv_arr
    cdef double[::1] zz = z_arr
    cdef cnp.npy_bool[::1] ok = ok_arr
    cdef double x, y, z, u, v, px, py, pz
    for i in range(n):
        px = points[i, 0]; py = points[i, 1]; pz = points[i, 2]
        x = R[0, 0] * px + R[0, 1] * py + R[0, 2] * pz + t[0]
        y = R[1, 0] * px + R[1, 1] * py + R[1, 2] * pz + t[1]
        z = R[2, 0] * px + R[2, 1] * py + R[2, 2] * pz + t[2]
        zz[i] = z
        if z > 0:
            u = fx * x / z + cx
            v = fy * y / z + cy
            uv[i, 0] = u
            uv[i, 1] = v
            ok[i] = (u >= 0) and (u < width) and (v >= 0) and (v < height)
        else:
            uv[i, 0] = NAN
            uv[i, 1] = NAN
    return uv_arr, z_arr, ok_arr


def reprojection_errors(const double[:, ::1] R, const double[::1] t, double fx, double fy,
                        double cx, double cy, const double[:, ::1] points,
                        const double[:, ::1] pixels):
    cdef Py_ssize_t n = points.shape[0], i
    out_arr = np.empty(n)
    cdef double[::1] out = out_arr
    cdef double x, y, z, du, dv, px, py, pz
    for i in range(n):
        px = points[i, 0]; py = points[i, 1]; pz = points[i, 2]
        z = R[2, 0] * px + R[2, 1] * py + R[2, 2] * pz + t[2]
        if z > 0:
            x = R[0, 0] * px + R[0, 1] * py + R[0, 2] * pz + t[0]
            y = R[1, 0] * px + R[1, 1] * py + R[1, 2] * pz + t[1]
            du = fx * x / z + cx - pixels[i, 0]
            dv = fy * y / z + cy - pixels[i, 1]
            out[i] = sqrt(du * du + dv * dv)
        else:
            out[i] = INFINITY
    return out_arr


def top2(const double[:, ::1] sim):
    cdef Py_ssize_t n = sim.shape[0], m = sim.shape[1], i, j
    rbi_arr = np.zeros(n, dtype=np.int64)
    rb_arr = np.full(n, -INFINITY)
    rs_arr = np.full(n, -INFINITY)
    cbi_arr = np.zeros(m, dtype=np.int64)
    cb_arr = np.full(m, -INFINITY)
    cs_arr = np.full(m, -INFINITY)
    cdef cnp.int64_t[::1] rbi = rbi_arr, cbi = cbi_arr
    cdef double[::1] rb = rb_arr, rs = rs_arr, cb = cb_arr, cs = cs_arr
    cdef double s
    for i in range(n):
        for j in range(m):
            s = sim[i, j]
            # strict '>' keeps the lower index on ties
            if s > rb[i] or (j == 0):
                if j != 0:
                    rs[i] = rb[i]
                rb[i] = s
                rbi[i] = j
            elif s > rs[i]:
                rs[i] = s
            if s > cb[j] or (i == 0):
                if i != 0:
                    cs[j] = cb[j]
                cb[j] = s
                cbi[j] = i
            elif s > cs[j]:
                cs[j] = s
    return rbi_arr, rb_arr, rs_arr, cbi_arr, cb_arr, cs_arr
