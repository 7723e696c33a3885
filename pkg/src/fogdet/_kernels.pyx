# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops: pairwise IoU, greedy NMS, max ROI pooling, greedy matching.

Arithmetic mirrors ``_kernels_py`` operation for operation.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport floor, ceil

cnp.import_array()

ctypedef fused real:
    float
    double


cdef inline double _iou(double ax1, double ay1, double ax2, double ay2, double area_a,
                        double bx1, double by1, double bx2, double by2, double area_b) noexcept nogil:
    cdef double iw = (ax2 if ax2 < bx2 else bx2) - (ax1 if ax1 > bx1 else bx1)
    cdef double ih = (ay2 if ay2 < by2 else by2) - (ay1 if ay1 > by1 else by1)
    cdef double inter
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (area_a + area_b - inter)


def iou_matrix(a, b):
    cdef double[:, ::1] A = np.ascontiguousarray(a, dtype=np.float64).reshape(-1, 4)
    cdef double[:, ::1] B = np.ascontiguousarray(b, dtype=np.float64).reshape(-1, 4)
    cdef Py_ssize_t n = A.shape[0], m = B.shape[0], i, j
    out = np.zeros((n, m), dtype=np.float64)
    cdef double[:, ::1] O = out
    cdef double area_a, area_b
    with nogil:
        for i in range(n):
            area_a = (A[i, 2] - A[i, 0]) * (A[i, 3] - A[i, 1])
            for j in range(m):
                area_b = (B[j, 2] - B[j, 0]) * (B[j, 3] - B[j, 1])
                O[i, j] = _iou(A[i, 0], A[i, 1], A[i, 2], A[i, 3], area_a,
                               B[j, 0], B[j, 1], B[j, 2], B[j, 3], area_b)
    return out


def nms(boxes, scores, double iou_threshold):
    cdef double[:, ::1] Bx = np.ascontiguousarray(boxes, dtype=np.float64).reshape(-1, 4)
    sc = np.ascontiguousarray(scores, dtype=np.float64).reshape(-1)
    cdef cnp.int64_t[::1] order = np.argsort(-sc, kind="stable").astype(np.int64)
    cdef Py_ssize_t n = Bx.shape[0], p, q, i, j, n_keep = 0
    keep_arr = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[::1] keep = keep_arr
    cdef unsigned char[::1] suppressed = np.zeros(n, dtype=np.uint8)
    areas_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] areas = areas_arr
    with nogil:
        for i in range(n):
            areas[i] = (Bx[i, 2] - Bx[i, 0]) * (Bx[i, 3] - Bx[i, 1])
        for p in range(n):
            i = order[p]
            if suppressed[i]:
                continue
            keep[n_keep] = i
            n_keep += 1
            for q in range(p + 1, n):
                j = order[q]
                if suppressed[j]:
                    continue
                if _iou(Bx[i, 0], Bx[i, 1], Bx[i, 2], Bx[i, 3], areas[i],
                        Bx[j, 0], Bx[j, 1], Bx[j, 2], Bx[j, 3], areas[j]) >= iou_threshold:
                    suppressed[j] = 1
    return keep_arr[:n_keep].copy()


cdef void _pool(real[:, :, :, ::1] F, double[:, ::1] R, double stride, int pooled,
                real[:, :, :, ::1] O, cnp.int64_t[:, :, :, ::1] AM) noexcept nogil:
    cdef Py_ssize_t n_roi = R.shape[0], C = F.shape[1], H = F.shape[2], W = F.shape[3]
    cdef Py_ssize_t r, c, ph, pw, h, w, h0, h1, w0, w1, b, best_idx
    cdef double fx1, fy1, rw, rh, lo, hi
    cdef real best, v
    for r in range(n_roi):
        b = <Py_ssize_t>R[r, 0]
        fx1 = R[r, 1] / stride
        fy1 = R[r, 2] / stride
        rw = R[r, 3] / stride - fx1
        rh = R[r, 4] / stride - fy1
        for ph in range(pooled):
            lo = fy1 + (ph * rh) / pooled
            hi = fy1 + ((ph + 1) * rh) / pooled
            h0 = <Py_ssize_t>floor(lo)
            h1 = <Py_ssize_t>ceil(hi)
            if h0 < 0:
                h0 = 0
            if h1 > H:
                h1 = H
            for pw in range(pooled):
                lo = fx1 + (pw * rw) / pooled
                hi = fx1 + ((pw + 1) * rw) / pooled
                w0 = <Py_ssize_t>floor(lo)
                w1 = <Py_ssize_t>ceil(hi)
                if w0 < 0:
                    w0 = 0
                if w1 > W:
                    w1 = W
                if h0 >= h1 or w0 >= w1:
                    continue
                for c in range(C):
                    best_idx = h0 * W + w0
                    best = F[b, c, h0, w0]
                    for h in range(h0, h1):
                        for w in range(w0, w1):
                            v = F[b, c, h, w]
                            if v > best:
                                best = v
                                best_idx = h * W + w
                    O[r, c, ph, pw] = best
                    AM[r, c, ph, pw] = best_idx


def roi_pool_forward(features, rois, double stride, int pooled):
    feats = np.ascontiguousarray(features)
    rr = np.ascontiguousarray(rois, dtype=np.float64).reshape(-1, 5)
    n_roi, C = rr.shape[0], feats.shape[1]
    out = np.zeros((n_roi, C, pooled, pooled), dtype=feats.dtype)
    argmax = np.full((n_roi, C, pooled, pooled), -1, dtype=np.int64)
    cdef double[:, ::1] R = rr
    cdef cnp.int64_t[:, :, :, ::1] AM = argmax
    cdef float[:, :, :, ::1] F32, O32
    cdef double[:, :, :, ::1] F64, O64
    if feats.dtype == np.float32:
        F32 = feats
        O32 = out
        with nogil:
            _pool(F32, R, stride, pooled, O32, AM)
    elif feats.dtype == np.float64:
        F64 = feats
        O64 = out
        with nogil:
            _pool(F64, R, stride, pooled, O64, AM)
    else:
        raise TypeError(f"unsupported feature dtype {feats.dtype}")
    return out, argmax


def greedy_match(det_boxes, det_labels, gt_boxes, gt_labels, double iou_threshold):
    cdef double[:, ::1] D = np.ascontiguousarray(det_boxes, dtype=np.float64).reshape(-1, 4)
    cdef double[:, ::1] G = np.ascontiguousarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    cdef cnp.int64_t[::1] DL = np.ascontiguousarray(det_labels, dtype=np.int64).reshape(-1)
    cdef cnp.int64_t[::1] GL = np.ascontiguousarray(gt_labels, dtype=np.int64).reshape(-1)
    cdef Py_ssize_t n = D.shape[0], m = G.shape[0], d, g, best_g
    tp_arr = np.zeros(n, dtype=bool)
    matched_arr = np.full(n, -1, dtype=np.int64)
    cdef cnp.uint8_t[::1] TP = tp_arr.view(np.uint8)
    cdef cnp.int64_t[::1] M = matched_arr
    cdef unsigned char[::1] taken = np.zeros(m, dtype=np.uint8)
    cdef double best, v, area_d, area_g
    with nogil:
        for d in range(n):
            area_d = (D[d, 2] - D[d, 0]) * (D[d, 3] - D[d, 1])
            best = -1.0
            best_g = -1
            for g in range(m):
                if taken[g] or GL[g] != DL[d]:
                    continue
                area_g = (G[g, 2] - G[g, 0]) * (G[g, 3] - G[g, 1])
                v = _iou(D[d, 0], D[d, 1], D[d, 2], D[d, 3], area_d,
                         G[g, 0], G[g, 1], G[g, 2], G[g, 3], area_g)
                if v >= iou_threshold and v > best:
                    best = v
                    best_g = g
            if best_g >= 0:
                taken[best_g] = 1
                TP[d] = 1
                M[d] = best_g
    return tp_arr, matched_arr
