"""Box and landmark arithmetic.

Boxes are (x1, y1, x2, y2) arrays in continuous pixel coordinates (no +1
adjustments), with x1 <= x2 and y1 <= y2. Landmarks are five (x, y) points
in the fixed order: left eye center, right eye center, nose tip, left mouth
corner, right mouth corner. A missing point carries the sentinel value -1
in both coordinates and is excluded from every loss and metric.

Regression targets are anchor-relative: center offsets normalized by the
anchor size plus log size ratios for boxes, and center offsets normalized
by the anchor size for landmark points (the Faster R-CNN parameterization).
"""

import numpy as np

from .kernels import iou_matrix, nms  # noqa: F401  (re-exported)

LANDMARK_SENTINEL = -1.0

# left eye, right eye, nose, left mouth, right mouth
NUM_LANDMARKS = 5
# index permutation applied to landmark points under horizontal flip
FLIP_LANDMARK_ORDER = np.array([1, 0, 2, 4, 3])


def box_area(box):
    """Area of one (x1, y1, x2, y2) box."""
    return max(0.0, box[2] - box[0]) * max(0.0, box[3] - box[1])


def iou(a, b):
    """IoU between two single boxes.

    Returns 0 for disjoint boxes and for degenerate pairs whose union has
    zero area.
    """
    ix1 = max(a[0], b[0])
    iy1 = max(a[1], b[1])
    ix2 = min(a[2], b[2])
    iy2 = min(a[3], b[3])
    inter = max(0.0, ix2 - ix1) * max(0.0, iy2 - iy1)
    union = box_area(a) + box_area(b) - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def _centers_sizes(boxes):
    boxes = np.asarray(boxes, dtype=np.float64)
    w = boxes[..., 2] - boxes[..., 0]
    h = boxes[..., 3] - boxes[..., 1]
    cx = boxes[..., 0] + 0.5 * w
    cy = boxes[..., 1] + 0.5 * h
    return cx, cy, w, h


def _check_anchors(anchors):
    anchors = np.atleast_2d(np.asarray(anchors, dtype=np.float64))
    w = anchors[:, 2] - anchors[:, 0]
    h = anchors[:, 3] - anchors[:, 1]
    if np.any(w <= 0.0) or np.any(h <= 0.0):
        raise ValueError("anchor with non-positive area")
    return anchors


def encode_boxes(gt, anchors):
    """Encode ground-truth boxes relative to anchors.

    Args:
        gt: (N, 4) or (4,) ground-truth boxes.
        anchors: matching anchor boxes, all with positive area.

    Returns:
        (N, 4) deltas (dx, dy, dw, dh): center offsets in anchor-size units
        and log size ratios.
    """
    anchors = _check_anchors(anchors)
    gt = np.atleast_2d(np.asarray(gt, dtype=np.float64))
    gcx, gcy, gw, gh = _centers_sizes(gt)
    acx, acy, aw, ah = _centers_sizes(anchors)
    dx = (gcx - acx) / aw
    dy = (gcy - acy) / ah
    dw = np.log(gw / aw)
    dh = np.log(gh / ah)
    return np.stack([dx, dy, dw, dh], axis=-1)


def decode_boxes(deltas, anchors):
    """Invert :func:`encode_boxes`. Monotone in each delta component."""
    anchors = _check_anchors(anchors)
    deltas = np.atleast_2d(np.asarray(deltas, dtype=np.float64))
    acx, acy, aw, ah = _centers_sizes(anchors)
    cx = deltas[:, 0] * aw + acx
    cy = deltas[:, 1] * ah + acy
    w = np.exp(deltas[:, 2]) * aw
    h = np.exp(deltas[:, 3]) * ah
    return np.stack([cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h], axis=-1)


def landmark_valid_mask(points):
    """Per-point validity: a point is missing iff both coords equal the sentinel."""
    points = np.asarray(points, dtype=np.float64)
    return ~np.all(points == LANDMARK_SENTINEL, axis=-1)


def encode_landmarks(points, anchors, valid=None):
    """Encode landmark points relative to anchors.

    Args:
        points: (N, 5, 2) landmark coordinates.
        anchors: (N, 4) anchor boxes with positive area.
        valid: optional (N, 5) bool mask; derived from the sentinel if None.

    Returns:
        (deltas, valid): deltas of shape (N, 10) laid out x1, y1, ..., x5, y5
        as center offsets in anchor-size units; invalid points keep the
        sentinel in both slots.
    """
    anchors = _check_anchors(anchors)
    points = np.asarray(points, dtype=np.float64).reshape(-1, NUM_LANDMARKS, 2)
    if valid is None:
        valid = landmark_valid_mask(points)
    valid = np.asarray(valid, dtype=bool).reshape(-1, NUM_LANDMARKS)
    acx, acy, aw, ah = _centers_sizes(anchors)
    dx = (points[..., 0] - acx[:, None]) / aw[:, None]
    dy = (points[..., 1] - acy[:, None]) / ah[:, None]
    deltas = np.stack([dx, dy], axis=-1)
    deltas[~valid] = LANDMARK_SENTINEL
    return deltas.reshape(-1, 2 * NUM_LANDMARKS), valid


def decode_landmarks(deltas, anchors, valid=None):
    """Invert :func:`encode_landmarks`.

    Args:
        deltas: (N, 10) landmark deltas.
        anchors: (N, 4) anchor boxes with positive area.
        valid: optional (N, 5) bool mask; when omitted, pairs equal to the
            sentinel in both slots are treated as missing.

    Returns:
        (points, valid): points of shape (N, 5, 2) with the sentinel at
        invalid slots.
    """
    anchors = _check_anchors(anchors)
    deltas = np.asarray(deltas, dtype=np.float64).reshape(-1, NUM_LANDMARKS, 2)
    if valid is None:
        valid = ~np.all(deltas == LANDMARK_SENTINEL, axis=-1)
    valid = np.asarray(valid, dtype=bool).reshape(-1, NUM_LANDMARKS)
    acx, acy, aw, ah = _centers_sizes(anchors)
    x = deltas[..., 0] * aw[:, None] + acx[:, None]
    y = deltas[..., 1] * ah[:, None] + acy[:, None]
    points = np.stack([x, y], axis=-1)
    points[~valid] = LANDMARK_SENTINEL
    return points, valid


def clip_boxes(boxes, width, height):
    """Clip boxes to [0, width] x [0, height]."""
    boxes = np.asarray(boxes, dtype=np.float64).copy()
    boxes[..., 0::2] = np.clip(boxes[..., 0::2], 0.0, float(width))
    boxes[..., 1::2] = np.clip(boxes[..., 1::2], 0.0, float(height))
    return boxes
