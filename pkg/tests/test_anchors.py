import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from facepyr import geometry
from facepyr.anchors import (
    LABEL_IGNORE,
    LABEL_NEGATIVE,
    LABEL_POSITIVE,
    AnchorGrid,
    PyramidSpec,
    build_anchors,
    match,
)


def brute_force_labels(anchor_boxes, gt_boxes, pos=0.5, neg=0.3):
    """Oracle: exhaustive pairwise IoU, no vectorization."""
    labels, matched = [], []
    for a in anchor_boxes:
        ious = [geometry.iou(a, g) for g in gt_boxes]
        best = max(ious) if ious else 0.0
        if best >= pos:
            labels.append(LABEL_POSITIVE)
            matched.append(int(np.argmax(ious)))
        elif best >= neg:
            labels.append(LABEL_IGNORE)
            matched.append(-1)
        else:
            labels.append(LABEL_NEGATIVE)
            matched.append(-1)
    return np.array(labels), np.array(matched)


class TestBuildAnchors:
    def test_default_count_three_scales(self):
        start = time.monotonic()
        grid = build_anchors(PyramidSpec(), (640, 640))
        elapsed = time.monotonic() - start
        assert len(grid) == 102_375
        assert elapsed < 1.0

    def test_default_count_single_scale(self):
        spec = PyramidSpec(scale_multipliers=(1.0,))
        assert len(build_anchors(spec, (640, 640))) == 34_125

    def test_single_cell_level(self):
        spec = PyramidSpec(strides=(128,), scales=(516,), scale_multipliers=(1.0,))
        grid = build_anchors(spec, (128, 128))
        assert len(grid) == 1
        box = grid.boxes[0]
        assert (box[0] + box[2]) / 2 == 64.0
        assert (box[1] + box[3]) / 2 == 64.0

    def test_centers_on_stride_lattice(self):
        spec = PyramidSpec()
        grid = build_anchors(spec, (160, 96))
        for level, stride in enumerate(spec.strides):
            sel = grid.level == level
            cx = (grid.boxes[sel, 0] + grid.boxes[sel, 2]) / 2
            cy = (grid.boxes[sel, 1] + grid.boxes[sel, 3]) / 2
            np.testing.assert_allclose(cx, (grid.col[sel] + 0.5) * stride)
            np.testing.assert_allclose(cy, (grid.row[sel] + 0.5) * stride)

    def test_sides_follow_scale_ladder(self):
        spec = PyramidSpec()
        grid = build_anchors(spec, (640, 640))
        sides = grid.boxes[:, 2] - grid.boxes[:, 0]
        expect = np.array(spec.scales)[grid.level] * np.array(spec.scale_multipliers)[
            grid.scale_index
        ]
        np.testing.assert_allclose(sides, expect)
        np.testing.assert_allclose(sides, grid.boxes[:, 3] - grid.boxes[:, 1])

    def test_deterministic(self):
        a = build_anchors(PyramidSpec(), (320, 320))
        b = build_anchors(PyramidSpec(), (320, 320))
        np.testing.assert_array_equal(a.boxes, b.boxes)

    @given(h=st.integers(1, 700), w=st.integers(1, 700))
    @settings(max_examples=40, deadline=None)
    def test_count_formula(self, h, w):
        spec = PyramidSpec()
        grid = build_anchors(spec, (h, w))
        expect = sum(
            -(-h // s) * -(-w // s) * len(spec.scale_multipliers) for s in spec.strides
        )
        assert len(grid) == expect == spec.num_anchors((h, w))

    def test_empty_spec_rejected(self):
        with pytest.raises(ValueError):
            PyramidSpec(strides=(), scales=())

    def test_non_doubling_strides_rejected(self):
        with pytest.raises(ValueError):
            PyramidSpec(strides=(4, 12), scales=(16, 32))


def tiny_grid(boxes):
    boxes = np.asarray(boxes, dtype=np.float64)
    n = len(boxes)
    return AnchorGrid(
        boxes=boxes,
        level=np.zeros(n, dtype=np.int64),
        row=np.zeros(n, dtype=np.int64),
        col=np.arange(n, dtype=np.int64),
        scale_index=np.zeros(n, dtype=np.int64),
        image_size=(100, 100),
    )


class TestMatch:
    def test_threshold_bands(self):
        # IoUs with the single gt: 1.0, ~0.6, 0.4, ~0.2
        gt = np.array([[0.0, 0.0, 10.0, 10.0]])
        anchors = tiny_grid(
            [
                [0, 0, 10, 10],
                [0, 0, 10, 16.6666666667],
                [0, 0, 10, 25],
                [0, 0, 10, 50],
            ]
        )
        res = match(anchors, gt, low_quality_rescue=False)
        assert list(res.labels) == [
            LABEL_POSITIVE,
            LABEL_POSITIVE,
            LABEL_IGNORE,
            LABEL_NEGATIVE,
        ]

    def test_zero_gts_all_negative(self):
        anchors = tiny_grid([[0, 0, 10, 10], [5, 5, 20, 20]])
        res = match(anchors, np.zeros((0, 4)))
        assert (res.labels == LABEL_NEGATIVE).all()
        assert res.num_positive == 0

    def test_toy_instance_vs_oracle(self):
        anchor_boxes = np.array(
            [[0, 0, 10, 10], [8, 8, 18, 18], [30, 30, 42, 42]], dtype=np.float64
        )
        gts = np.array([[1, 1, 11, 11], [29, 29, 41, 41]], dtype=np.float64)
        res = match(tiny_grid(anchor_boxes), gts, low_quality_rescue=False)
        labels, matched = brute_force_labels(anchor_boxes, gts)
        np.testing.assert_array_equal(res.labels, labels)
        np.testing.assert_array_equal(res.matched_gt, matched)

    def test_random_instances_vs_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            anchor_boxes = np.concatenate(
                [rng.uniform(0, 30, (6, 2)), rng.uniform(5, 25, (6, 2))], axis=1
            )
            anchor_boxes[:, 2:] += anchor_boxes[:, :2]
            gts = np.concatenate(
                [rng.uniform(0, 30, (3, 2)), rng.uniform(5, 25, (3, 2))], axis=1
            )
            gts[:, 2:] += gts[:, :2]
            res = match(tiny_grid(anchor_boxes), gts, low_quality_rescue=False)
            labels, matched = brute_force_labels(anchor_boxes, gts)
            np.testing.assert_array_equal(res.labels, labels)
            np.testing.assert_array_equal(res.matched_gt, matched)

    def test_positive_targets_encode_matched_gt(self):
        gt = np.array([[2.0, 2.0, 12.0, 12.0]])
        lmk = np.full((1, 5, 2), 7.0)
        anchors = tiny_grid([[0, 0, 10, 10]])
        res = match(anchors, gt, gt_landmarks=lmk)
        assert res.labels[0] == LABEL_POSITIVE
        np.testing.assert_allclose(
            res.box_targets[0], geometry.encode_boxes(gt, anchors.boxes[:1])[0]
        )
        decoded = geometry.decode_boxes(res.box_targets[:1], anchors.boxes[:1])
        np.testing.assert_allclose(decoded[0], gt[0], atol=1e-9)
        assert res.landmark_valid[0].all()

    def test_landmark_mask_follows_sentinel(self):
        gt = np.array([[0.0, 0.0, 10.0, 10.0]])
        lmk = np.full((1, 5, 2), 5.0)
        lmk[0, 3] = geometry.LANDMARK_SENTINEL
        res = match(tiny_grid([[0, 0, 10, 10]]), gt, gt_landmarks=lmk)
        assert res.landmark_valid[0].tolist() == [True, True, True, False, True]

    def test_labels_partition_anchor_set(self):
        rng = np.random.default_rng(11)
        anchor_boxes = np.concatenate(
            [rng.uniform(0, 60, (40, 2)), rng.uniform(4, 30, (40, 2))], axis=1
        )
        anchor_boxes[:, 2:] += anchor_boxes[:, :2]
        gts = np.array([[5, 5, 25, 25], [40, 40, 58, 58]], dtype=np.float64)
        res = match(tiny_grid(anchor_boxes), gts)
        assert set(np.unique(res.labels)) <= {LABEL_NEGATIVE, LABEL_POSITIVE, LABEL_IGNORE}

    def test_gt_permutation_invariance(self):
        rng = np.random.default_rng(13)
        anchor_boxes = np.concatenate(
            [rng.uniform(0, 60, (30, 2)), rng.uniform(4, 30, (30, 2))], axis=1
        )
        anchor_boxes[:, 2:] += anchor_boxes[:, :2]
        gts = np.concatenate(
            [rng.uniform(0, 50, (4, 2)), rng.uniform(5, 30, (4, 2))], axis=1
        )
        gts[:, 2:] += gts[:, :2]
        perm = np.array([2, 0, 3, 1])
        res_a = match(tiny_grid(anchor_boxes), gts)
        res_b = match(tiny_grid(anchor_boxes), gts[perm])
        np.testing.assert_array_equal(res_a.labels, res_b.labels)
        # matched indices map through the permutation
        inv = np.argsort(perm)
        for a in range(30):
            if res_a.labels[a] == LABEL_POSITIVE:
                assert inv[res_a.matched_gt[a]] == res_b.matched_gt[a]

    def test_low_quality_rescue(self):
        # best anchor IoU for the gt is below 0.5 everywhere
        gt = np.array([[0.0, 0.0, 8.0, 8.0]])  # IoUs: 0.16, 0.444, 0.0
        anchors = tiny_grid([[0, 0, 20, 20], [0, 0, 12, 12], [40, 40, 50, 50]])
        no_rescue = match(anchors, gt, low_quality_rescue=False)
        assert no_rescue.num_positive == 0
        rescued = match(anchors, gt, low_quality_rescue=True)
        assert rescued.num_positive == 1
        assert rescued.labels[1] == LABEL_POSITIVE  # argmax anchor
        assert rescued.matched_gt[1] == 0

    def test_rescue_rule_on_random_instances(self):
        from facepyr.kernels import iou_matrix

        rng = np.random.default_rng(17)
        for _ in range(20):
            anchor_boxes = np.concatenate(
                [rng.uniform(0, 40, (25, 2)), rng.uniform(6, 24, (25, 2))], axis=1
            )
            anchor_boxes[:, 2:] += anchor_boxes[:, :2]
            gts = np.concatenate(
                [rng.uniform(0, 40, (3, 2)), rng.uniform(6, 24, (3, 2))], axis=1
            )
            gts[:, 2:] += gts[:, :2]
            res = match(tiny_grid(anchor_boxes), gts)
            ious = iou_matrix(anchor_boxes, gts)
            for g in range(3):
                best = ious[:, g].max()
                if best >= 0.5:
                    # the gt's best anchor is positive (high-quality band)
                    assert res.labels[ious[:, g].argmax()] == LABEL_POSITIVE
                elif best > 0.0:
                    # rescued: its argmax anchor ends up positive for someone
                    a = ious[:, g].argmax()
                    assert res.labels[a] == LABEL_POSITIVE
