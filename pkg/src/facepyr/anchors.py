"""Dense anchor generation over the six-level pyramid and target assignment.

The default ladder uses strides (4, 8, 16, 32, 64, 128) with base square
anchor sides (16, 32, 64, 128, 256, 516), aspect ratio 1:1, and three scale
multipliers (1, 2^(1/3), 2^(2/3)) per grid cell. At 640x640 this tiles
102,375 anchors.

Anchor ordering is level-major, then grid row, grid column, scale
multiplier; prediction heads flatten to the same order.
"""

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import geometry
from .kernels import iou_matrix

DEFAULT_STRIDES = (4, 8, 16, 32, 64, 128)
DEFAULT_SCALES = (16, 32, 64, 128, 256, 516)
DEFAULT_SCALE_MULTIPLIERS = (1.0, 2.0 ** (1.0 / 3.0), 2.0 ** (2.0 / 3.0))

LABEL_NEGATIVE = 0
LABEL_POSITIVE = 1
LABEL_IGNORE = -1


@dataclass(frozen=True)
class PyramidSpec:
    """Stride/scale ladder for the feature pyramid."""

    strides: tuple = DEFAULT_STRIDES
    scales: tuple = DEFAULT_SCALES
    scale_multipliers: tuple = DEFAULT_SCALE_MULTIPLIERS

    def __post_init__(self):
        if len(self.strides) == 0:
            raise ValueError("pyramid spec needs at least one level")
        if len(self.strides) != len(self.scales):
            raise ValueError("strides and scales must have equal length")
        if len(self.scale_multipliers) == 0:
            raise ValueError("pyramid spec needs at least one scale multiplier")
        for prev, cur in zip(self.strides, self.strides[1:]):
            if cur != 2 * prev:
                raise ValueError(f"strides must double level to level, got {prev} -> {cur}")

    @property
    def num_levels(self):
        return len(self.strides)

    @property
    def anchors_per_cell(self):
        return len(self.scale_multipliers)

    def grid_shape(self, level, image_size):
        """(rows, cols) of the level's grid for an (height, width) image."""
        h, w = image_size
        s = self.strides[level]
        return (-(-h // s), -(-w // s))  # ceil division

    def num_anchors(self, image_size):
        total = 0
        for level in range(self.num_levels):
            rows, cols = self.grid_shape(level, image_size)
            total += rows * cols * self.anchors_per_cell
        return total


@dataclass
class AnchorGrid:
    """Flat anchor set with per-anchor level and grid bookkeeping."""

    boxes: np.ndarray          # (A, 4) float64
    level: np.ndarray          # (A,) int
    row: np.ndarray            # (A,) int
    col: np.ndarray            # (A,) int
    scale_index: np.ndarray    # (A,) int
    image_size: tuple          # (height, width)
    spec: PyramidSpec = field(repr=False, default=None)

    def __len__(self):
        return self.boxes.shape[0]


def build_anchors(spec: PyramidSpec, image_size) -> AnchorGrid:
    """Tile square anchors over every pyramid level.

    The anchor for level l, cell (i, j), multiplier m is the square of side
    scales[l] * m centered at ((j + 0.5) * stride_l, (i + 0.5) * stride_l).

    Args:
        spec: pyramid ladder.
        image_size: (height, width) in pixels.

    Returns:
        AnchorGrid with anchors in level-major (row, col, scale) order.
        Anchors straddling the image border are kept unclipped.
    """
    h, w = image_size
    if h <= 0 or w <= 0:
        raise ValueError(f"image size must be positive, got {image_size}")

    boxes, levels, rows_idx, cols_idx, scale_idx = [], [], [], [], []
    mults = np.asarray(spec.scale_multipliers, dtype=np.float64)
    for level, (stride, scale) in enumerate(zip(spec.strides, spec.scales)):
        rows, cols = spec.grid_shape(level, image_size)
        cy = (np.arange(rows, dtype=np.float64) + 0.5) * stride
        cx = (np.arange(cols, dtype=np.float64) + 0.5) * stride
        sides = scale * mults
        # broadcast to (rows, cols, mults)
        cy_g = cy[:, None, None]
        cx_g = cx[None, :, None]
        half = (sides / 2.0)[None, None, :]
        level_boxes = np.stack(
            np.broadcast_arrays(cx_g - half, cy_g - half, cx_g + half, cy_g + half),
            axis=-1,
        ).reshape(-1, 4)
        boxes.append(level_boxes)
        n = rows * cols * len(mults)
        levels.append(np.full(n, level, dtype=np.int64))
        grid_r, grid_c, grid_m = np.meshgrid(
            np.arange(rows), np.arange(cols), np.arange(len(mults)), indexing="ij"
        )
        rows_idx.append(grid_r.reshape(-1))
        cols_idx.append(grid_c.reshape(-1))
        scale_idx.append(grid_m.reshape(-1))

    return AnchorGrid(
        boxes=np.concatenate(boxes),
        level=np.concatenate(levels),
        row=np.concatenate(rows_idx),
        col=np.concatenate(cols_idx),
        scale_index=np.concatenate(scale_idx),
        image_size=(h, w),
        spec=spec,
    )


@dataclass
class MatchResult:
    """Per-anchor training targets produced by :func:`match`."""

    labels: np.ndarray           # (A,) int: 1 positive, 0 negative, -1 ignore
    matched_gt: np.ndarray       # (A,) int, gt index for positives, -1 otherwise
    box_targets: np.ndarray      # (A, 4) encoded deltas, zeros where not positive
    landmark_targets: np.ndarray  # (A, 10) encoded deltas, zeros where masked
    landmark_valid: np.ndarray   # (A, 5) bool

    @property
    def num_positive(self):
        return int((self.labels == LABEL_POSITIVE).sum())


def match(
    anchors: AnchorGrid,
    gt_boxes,
    gt_landmarks=None,
    gt_landmark_valid=None,
    positive_iou=0.5,
    negative_iou=0.3,
    low_quality_rescue=True,
) -> MatchResult:
    """Assign ground-truth targets to anchors by IoU.

    Anchors with best IoU >= ``positive_iou`` are positive and encode their
    best-IoU ground truth (ties broken by lowest gt index); anchors below
    ``negative_iou`` are negative; the band in between is ignored. With
    ``low_quality_rescue``, a ground truth whose best anchor IoU lies in
    (0, positive_iou) additionally claims its argmax anchor as positive,
    provided that anchor is not already positive; conflicting claims on one
    anchor go to the higher IoU, then the lower gt index.

    Args:
        anchors: AnchorGrid from :func:`build_anchors`.
        gt_boxes: (G, 4) ground-truth boxes; G may be zero.
        gt_landmarks: optional (G, 5, 2) points with the -1 sentinel.
        gt_landmark_valid: optional (G, 5) bool mask.

    Returns:
        MatchResult; with zero ground truths every anchor is negative.
    """
    num_anchors = len(anchors)
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    num_gt = gt_boxes.shape[0]

    labels = np.zeros(num_anchors, dtype=np.int64)
    matched = np.full(num_anchors, -1, dtype=np.int64)
    box_targets = np.zeros((num_anchors, 4), dtype=np.float64)
    lmk_targets = np.zeros((num_anchors, 2 * geometry.NUM_LANDMARKS), dtype=np.float64)
    lmk_valid = np.zeros((num_anchors, geometry.NUM_LANDMARKS), dtype=bool)

    if num_gt == 0:
        return MatchResult(labels, matched, box_targets, lmk_targets, lmk_valid)

    ious = iou_matrix(anchors.boxes, gt_boxes)  # (A, G)
    best_iou = ious.max(axis=1)
    best_gt = ious.argmax(axis=1)  # argmax takes the lowest index on ties

    labels[best_iou >= positive_iou] = LABEL_POSITIVE
    labels[(best_iou >= negative_iou) & (best_iou < positive_iou)] = LABEL_IGNORE
    matched[labels == LABEL_POSITIVE] = best_gt[labels == LABEL_POSITIVE]

    if low_quality_rescue:
        gt_best_iou = ious.max(axis=0)
        gt_best_anchor = ious.argmax(axis=0)
        claims = {}  # anchor index -> (iou, gt index)
        for g in range(num_gt):
            if 0.0 < gt_best_iou[g] < positive_iou:
                a = int(gt_best_anchor[g])
                if labels[a] == LABEL_POSITIVE:
                    continue
                cand = (gt_best_iou[g], -g)
                if a not in claims or cand > claims[a]:
                    claims[a] = cand
        for a, (_, neg_g) in claims.items():
            labels[a] = LABEL_POSITIVE
            matched[a] = -neg_g

    pos = labels == LABEL_POSITIVE
    if pos.any():
        pos_anchors = anchors.boxes[pos]
        pos_gt = matched[pos]
        box_targets[pos] = geometry.encode_boxes(gt_boxes[pos_gt], pos_anchors)
        if gt_landmarks is not None:
            gt_landmarks = np.asarray(gt_landmarks, dtype=np.float64).reshape(
                num_gt, geometry.NUM_LANDMARKS, 2
            )
            if gt_landmark_valid is None:
                gt_landmark_valid = geometry.landmark_valid_mask(gt_landmarks)
            gt_landmark_valid = np.asarray(gt_landmark_valid, dtype=bool)
            deltas, valid = geometry.encode_landmarks(
                gt_landmarks[pos_gt], pos_anchors, gt_landmark_valid[pos_gt]
            )
            # zeros, not the sentinel, where masked: the loss never reads them
            deltas = deltas.reshape(-1, geometry.NUM_LANDMARKS, 2)
            deltas[~valid] = 0.0
            lmk_targets[pos] = deltas.reshape(-1, 2 * geometry.NUM_LANDMARKS)
            lmk_valid[pos] = valid

    return MatchResult(labels, matched, box_targets, lmk_targets, lmk_valid)
