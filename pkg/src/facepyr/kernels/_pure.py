"""Pure NumPy implementations of the hot box kernels.

These mirror ``facepyr.kernels._core`` (the Cython extension) exactly and are
used as the fallback when the extension has not been built. Both backends are
exercised by the test suite and compared by ``benchmarks/bench_kernels.py``.
"""

import numpy as np

BACKEND = "python"


def iou_matrix(boxes_a, boxes_b):
    """Pairwise IoU between two sets of (x1, y1, x2, y2) boxes.

    Args:
        boxes_a: Array of shape (N, 4).
        boxes_b: Array of shape (M, 4).

    Returns:
        float64 array of shape (N, M). Pairs whose union has zero area
        yield 0.
    """
    a = np.ascontiguousarray(boxes_a, dtype=np.float64)
    b = np.ascontiguousarray(boxes_b, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != 4 or b.ndim != 2 or b.shape[1] != 4:
        raise ValueError("boxes must have shape (N, 4)")

    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])

    lt = np.maximum(a[:, None, :2], b[None, :, :2])
    rb = np.minimum(a[:, None, 2:], b[None, :, 2:])
    wh = np.clip(rb - lt, 0.0, None)
    inter = wh[..., 0] * wh[..., 1]

    union = area_a[:, None] + area_b[None, :] - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0.0)
    return out


def nms(boxes, scores, iou_threshold):
    """Greedy non-maximum suppression.

    Detections are swept in descending score order (ties broken by the
    original index, which keeps the result invariant to input permutation).
    A detection is suppressed by the first kept detection whose IoU with it
    strictly exceeds ``iou_threshold``.

    Args:
        boxes: Array of shape (N, 4), (x1, y1, x2, y2).
        scores: Array of shape (N,).
        iou_threshold: Suppression threshold (strict).

    Returns:
        (keep, suppressor): ``keep`` is an int64 array of kept indices in
        sweep order; ``suppressor[i]`` is the index of the kept detection
        that suppressed ``i``, or -1 if ``i`` itself was kept.
    """
    boxes = np.ascontiguousarray(boxes, dtype=np.float64)
    scores = np.ascontiguousarray(scores, dtype=np.float64)
    if boxes.ndim != 2 or boxes.shape[1] != 4:
        raise ValueError("boxes must have shape (N, 4)")
    if scores.shape != (boxes.shape[0],):
        raise ValueError("scores must have shape (N,)")

    x1, y1, x2, y2 = boxes[:, 0], boxes[:, 1], boxes[:, 2], boxes[:, 3]
    areas = (x2 - x1) * (y2 - y1)
    # stable sort on -score == descending score, ascending index among ties
    order = np.argsort(-scores, kind="stable")

    keep = []
    suppressor = np.full(boxes.shape[0], -1, dtype=np.int64)
    while order.size > 0:
        i = order[0]
        keep.append(i)
        rest = order[1:]
        xx1 = np.maximum(x1[i], x1[rest])
        yy1 = np.maximum(y1[i], y1[rest])
        xx2 = np.minimum(x2[i], x2[rest])
        yy2 = np.minimum(y2[i], y2[rest])
        inter = np.maximum(0.0, xx2 - xx1) * np.maximum(0.0, yy2 - yy1)
        union = areas[i] + areas[rest] - inter
        iou = np.zeros_like(inter)
        np.divide(inter, union, out=iou, where=union > 0.0)

        suppressed = iou > iou_threshold
        suppressor[rest[suppressed]] = i
        order = rest[~suppressed]

    return np.asarray(keep, dtype=np.int64), suppressor
