# cython: boundscheck=False, wraparound=False, cdivision=True
"""Cython implementations of the hot box kernels.

Same contracts as ``facepyr.kernels._pure``; see that module for the
documented semantics. The pairwise IoU matrix and the greedy NMS sweep are
the two loops that dominate anchor matching and post-processing time.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND = "cython"


def iou_matrix(boxes_a, boxes_b):
    a = np.ascontiguousarray(boxes_a, dtype=np.float64)
    b = np.ascontiguousarray(boxes_b, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != 4 or b.ndim != 2 or b.shape[1] != 4:
        raise ValueError("boxes must have shape (N, 4)")
    return _iou_matrix(a, b)


cdef cnp.ndarray _iou_matrix(double[:, ::1] a, double[:, ::1] b):
    cdef Py_ssize_t n = a.shape[0]
    cdef Py_ssize_t m = b.shape[0]
    out_arr = np.zeros((n, m), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef double ax1, ay1, ax2, ay2, area_a
    cdef double iw, ih, inter, union

    for i in range(n):
        ax1 = a[i, 0]
        ay1 = a[i, 1]
        ax2 = a[i, 2]
        ay2 = a[i, 3]
        area_a = (ax2 - ax1) * (ay2 - ay1)
        for j in range(m):
            iw = min(ax2, b[j, 2]) - max(ax1, b[j, 0])
            if iw <= 0.0:
                continue
            ih = min(ay2, b[j, 3]) - max(ay1, b[j, 1])
            if ih <= 0.0:
                continue
            inter = iw * ih
            union = area_a + (b[j, 2] - b[j, 0]) * (b[j, 3] - b[j, 1]) - inter
            if union > 0.0:
                out[i, j] = inter / union
    return out_arr


def nms(boxes, scores, double iou_threshold):
    boxes = np.ascontiguousarray(boxes, dtype=np.float64)
    scores = np.ascontiguousarray(scores, dtype=np.float64)
    if boxes.ndim != 2 or boxes.shape[1] != 4:
        raise ValueError("boxes must have shape (N, 4)")
    if scores.shape != (boxes.shape[0],):
        raise ValueError("scores must have shape (N,)")
    order = np.argsort(-scores, kind="stable").astype(np.int64)
    return _nms(boxes, order, iou_threshold)


cdef tuple _nms(double[:, ::1] boxes, cnp.int64_t[::1] order, double thresh):
    cdef Py_ssize_t n = boxes.shape[0]
    keep_arr = np.empty(n, dtype=np.int64)
    supp_arr = np.full(n, -1, dtype=np.int64)
    cdef cnp.int64_t[::1] keep = keep_arr
    cdef cnp.int64_t[::1] supp = supp_arr
    # 0 = live, 1 = removed (kept or suppressed)
    removed_arr = np.zeros(n, dtype=np.uint8)
    cdef cnp.uint8_t[::1] removed = removed_arr

    cdef Py_ssize_t n_keep = 0
    cdef Py_ssize_t oi, oj, i, j
    cdef double x1, y1, x2, y2, area_i, iw, ih, inter, union, iou

    for oi in range(n):
        i = order[oi]
        if removed[i]:
            continue
        keep[n_keep] = i
        n_keep += 1
        removed[i] = 1
        x1 = boxes[i, 0]
        y1 = boxes[i, 1]
        x2 = boxes[i, 2]
        y2 = boxes[i, 3]
        area_i = (x2 - x1) * (y2 - y1)
        for oj in range(oi + 1, n):
            j = order[oj]
            if removed[j]:
                continue
            iw = min(x2, boxes[j, 2]) - max(x1, boxes[j, 0])
            if iw <= 0.0:
                continue
            ih = min(y2, boxes[j, 3]) - max(y1, boxes[j, 1])
            if ih <= 0.0:
                continue
            inter = iw * ih
            union = area_i + (boxes[j, 2] - boxes[j, 0]) * (boxes[j, 3] - boxes[j, 1]) - inter
            iou = inter / union if union > 0.0 else 0.0
            if iou > thresh:
                removed[j] = 1
                supp[j] = i

    return keep_arr[:n_keep].copy(), supp_arr
