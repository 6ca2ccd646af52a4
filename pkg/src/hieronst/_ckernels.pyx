# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled raster kernels: bilinear resize, affine warp, confusion counting."""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()


cdef inline double _clamp(double v, double lo, double hi) nogil:
    if v < lo:
        return lo
    if v > hi:
        return hi
    return v


def resize_bilinear(image, Py_ssize_t out_h, Py_ssize_t out_w):
    cdef float[:, :, ::1] src = np.ascontiguousarray(image, dtype=np.float32)
    cdef Py_ssize_t h = src.shape[0], w = src.shape[1], c = src.shape[2]
    out = np.empty((out_h, out_w, c), dtype=np.float32)
    cdef float[:, :, ::1] dst = out
    cdef double sy_scale = <double>h / out_h, sx_scale = <double>w / out_w
    cdef Py_ssize_t i, j, k, y0, y1, x0, x1
    cdef double sy, sx, fy, fx, top, bot
    with nogil:
        for i in range(out_h):
            sy = _clamp((i + 0.5) * sy_scale - 0.5, 0.0, h - 1)
            y0 = <Py_ssize_t>floor(sy)
            y1 = y0 + 1 if y0 + 1 < h else h - 1
            fy = sy - y0
            for j in range(out_w):
                sx = _clamp((j + 0.5) * sx_scale - 0.5, 0.0, w - 1)
                x0 = <Py_ssize_t>floor(sx)
                x1 = x0 + 1 if x0 + 1 < w else w - 1
                fx = sx - x0
                for k in range(c):
                    top = src[y0, x0, k] * (1.0 - fx) + src[y0, x1, k] * fx
                    bot = src[y1, x0, k] * (1.0 - fx) + src[y1, x1, k] * fx
                    dst[i, j, k] = <float>(top * (1.0 - fy) + bot * fy)
    return out


cdef inline double _tap(float[:, :, ::1] src, Py_ssize_t y, Py_ssize_t x,
                        Py_ssize_t k, double fill) nogil:
    if y < 0 or x < 0 or y >= src.shape[0] or x >= src.shape[1]:
        return fill
    return src[y, x, k]


def warp_affine(image, inverse, double fill, bint edge):
    cdef float[:, :, ::1] src = np.ascontiguousarray(image, dtype=np.float32)
    cdef double[:, ::1] m = np.ascontiguousarray(inverse, dtype=np.float64)
    cdef Py_ssize_t h = src.shape[0], w = src.shape[1], c = src.shape[2]
    out = np.empty((h, w, c), dtype=np.float32)
    cdef float[:, :, ::1] dst = out
    cdef Py_ssize_t i, j, k, x0, y0
    cdef double sx, sy, fx, fy, v
    with nogil:
        for i in range(h):
            for j in range(w):
                sx = m[0, 0] * j + m[0, 1] * i + m[0, 2]
                sy = m[1, 0] * j + m[1, 1] * i + m[1, 2]
                if edge:
                    sx = _clamp(sx, 0.0, w - 1)
                    sy = _clamp(sy, 0.0, h - 1)
                x0 = <Py_ssize_t>floor(sx)
                y0 = <Py_ssize_t>floor(sy)
                fx = sx - x0
                fy = sy - y0
                for k in range(c):
                    v = (_tap(src, y0, x0, k, fill) * (1.0 - fx) * (1.0 - fy)
                         + _tap(src, y0, x0 + 1, k, fill) * fx * (1.0 - fy)
                         + _tap(src, y0 + 1, x0, k, fill) * (1.0 - fx) * fy
                         + _tap(src, y0 + 1, x0 + 1, k, fill) * fx * fy)
                    dst[i, j, k] = <float>v
    return out


def confusion_counts(true_idx, pred_idx, Py_ssize_t k):
    cdef cnp.int64_t[::1] t = np.ascontiguousarray(true_idx, dtype=np.int64)
    cdef cnp.int64_t[::1] p = np.ascontiguousarray(pred_idx, dtype=np.int64)
    counts = np.zeros((k, k), dtype=np.int64)
    cdef cnp.int64_t[:, ::1] cm = counts
    cdef Py_ssize_t n = t.shape[0], i
    for i in range(n):
        if t[i] < 0 or t[i] >= k or p[i] < 0 or p[i] >= k:
            raise IndexError("class index out of range")
        cm[t[i], p[i]] += 1
    return counts
