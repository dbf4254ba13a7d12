import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cropdet import geometry
from cropdet.errors import ConfigError, InvalidInputError
from cropdet.geometry import (
    AnchorAssignment,
    AnchorConfig,
    Box,
    LabeledBox,
    RegressionDeltas,
    assign_targets,
    box_iou,
    decode_box,
    decode_boxes,
    encode_box,
    encode_boxes,
    generate_anchors,
    iou_matrix,
    nms,
    nms_indices,
)

from oracles import count_anchors, reference_nms, scalar_iou


def random_boxes(rng, n, extent=200.0, max_size=60.0):
    xy = rng.uniform(0, extent, size=(n, 2))
    wh = rng.uniform(1.0, max_size, size=(n, 2))
    return np.concatenate([xy, xy + wh], axis=1)


coords = st.floats(-100, 100, allow_nan=False)
sizes = st.floats(0.5, 80, allow_nan=False)


@st.composite
def boxes(draw):
    x, y, w, h = draw(coords), draw(coords), draw(sizes), draw(sizes)
    return Box(x, y, x + w, y + h)


class TestBox:
    def test_degenerate_rejected(self):
        with pytest.raises(InvalidInputError):
            Box(0, 0, 0, 5)
        with pytest.raises(InvalidInputError):
            Box(3, 0, 1, 5)

    def test_labeled_box_validation(self):
        with pytest.raises(InvalidInputError):
            LabeledBox(Box(0, 0, 1, 1), 2)
        with pytest.raises(InvalidInputError):
            LabeledBox(Box(0, 0, 1, 1), 0, 1.5)


class TestBoxIou:
    def test_identity(self):
        b = Box(1, 2, 5, 9)
        assert box_iou(b, b) == 1.0

    def test_disjoint(self):
        assert box_iou(Box(0, 0, 1, 1), Box(5, 5, 6, 6)) == 0.0

    def test_partial_overlap_against_grid_oracle(self):
        # count centres of a 0.01 grid covered by each box
        s = 0.01
        xs = np.arange(0, 15, s) + s / 2
        X, Y = np.meshgrid(xs, xs)
        a = (X < 10) & (Y < 10)
        b = (X > 5) & (Y > 5)
        grid = (a & b).sum() / (a | b).sum()
        value = box_iou(Box(0, 0, 10, 10), Box(5, 5, 15, 15))
        assert value == pytest.approx(25 / 175, abs=1e-15)
        assert value == pytest.approx(grid, abs=1e-6)

    @given(boxes(), boxes())
    def test_symmetric_and_bounded(self, a, b):
        v = box_iou(a, b)
        assert v == box_iou(b, a)
        assert 0.0 <= v <= 1.0

    @given(boxes(), boxes())
    def test_matrix_agrees_with_scalar(self, a, b):
        m = iou_matrix(np.array([a.as_tuple()]), np.array([b.as_tuple()]))
        assert m[0, 0] == pytest.approx(box_iou(a, b), abs=1e-12)

    def test_touching_edges_are_disjoint(self):
        assert box_iou(Box(0, 0, 2, 2), Box(2, 0, 4, 2)) == 0.0


class TestAnchors:
    def test_default_counts_against_loop_oracle(self):
        cfg = AnchorConfig()
        levels = generate_anchors(cfg)
        oracle = count_anchors(672, 672, cfg.level_strides, 3)
        assert [len(l) for l in levels] == oracle == [84672, 21168, 5292, 1323, 363]
        assert sum(oracle) == 112818
        assert cfg.grid_shapes() == [(168, 168), (84, 84), (42, 42), (21, 21), (11, 11)]

    def test_small_input(self):
        cfg = AnchorConfig(input_size=(64, 64))
        assert cfg.grid_shapes() == [(16, 16), (8, 8), (4, 4), (2, 2), (1, 1)]
        assert sum(len(l) for l in generate_anchors(cfg)) == 3 * (256 + 64 + 16 + 4 + 1) == 1023

    def test_first_p2_anchor(self):
        p2 = generate_anchors(AnchorConfig())[0]
        # cell (0, 0), ratio order 0.5, 1, 2 -> ratio 1 is the second anchor
        np.testing.assert_allclose(p2[1], [-6, -6, 10, 10])

    def test_ratio_half_shape(self):
        p2 = generate_anchors(AnchorConfig())[0]
        w, h = p2[0, 2] - p2[0, 0], p2[0, 3] - p2[0, 1]
        assert w == pytest.approx(16 / math.sqrt(2), abs=1e-12)
        assert h == pytest.approx(16 * math.sqrt(2), abs=1e-12)
        assert w == pytest.approx(11.3137, abs=1e-4)
        assert h == pytest.approx(22.6274, abs=1e-4)
        assert w * h == pytest.approx(256, abs=1e-9)

    def test_area_preserved_everywhere(self):
        cfg = AnchorConfig(input_size=(128, 96))
        for size, level in zip(cfg.level_sizes, generate_anchors(cfg)):
            area = (level[:, 2] - level[:, 0]) * (level[:, 3] - level[:, 1])
            np.testing.assert_allclose(area, size ** 2, rtol=1e-12)

    def test_centres_row_major(self):
        cfg = AnchorConfig(input_size=(64, 96))
        p3 = generate_anchors(cfg)[1]
        gh, gw = cfg.grid_shapes()[1]
        centres = 0.5 * (p3[:, :2] + p3[:, 2:])
        cell = (2 * gw + 5) * 3
        np.testing.assert_allclose(centres[cell:cell + 3], [[(5 + 0.5) * 8, (2 + 0.5) * 8]] * 3)

    @pytest.mark.parametrize("kwargs", [
        {"input_size": (100, 96)},
        {"level_sizes": (16, 32)},
        {"level_strides": (4, 8, 12, 32, 64)},
        {"ratios": (0.5, -1.0)},
    ])
    def test_config_validation(self, kwargs):
        with pytest.raises(ConfigError):
            AnchorConfig(**kwargs)


class TestCoding:
    def test_identity(self):
        a = Box(10, 20, 50, 80)
        assert encode_box(a, a) == (0.0, 0.0, 0.0, 0.0)

    def test_hand_example(self):
        anchor = Box.from_center(50, 50, 100, 100)
        gt = Box.from_center(60, 50, 200, 100)
        d = encode_box(anchor, gt)
        np.testing.assert_allclose(d, [0.1, 0.0, 0.6931471805599453, 0.0], atol=1e-15)
        back = decode_box(anchor, d)
        np.testing.assert_allclose(back.as_tuple(), gt.as_tuple(), atol=1e-9)

    def test_zero_deltas_clip(self):
        out = decode_box(Box(-6, -6, 10, 10), RegressionDeltas(0, 0, 0, 0), (672, 672))
        assert out.as_tuple() == (0.0, 0.0, 10.0, 10.0)

    def test_round_trip_random(self):
        rng = np.random.default_rng(3)
        anchors = random_boxes(rng, 10_000)
        gt = random_boxes(rng, 10_000)
        back = decode_boxes(anchors, encode_boxes(anchors, gt))
        assert np.max(np.abs(back - gt)) <= 1e-9

    def test_overflow_saturates_with_warning(self):
        with pytest.warns(RuntimeWarning):
            out = decode_boxes(np.array([[10, 10, 20, 20.0]]), np.array([[0, 0, 1000.0, 1000.0]]), (64, 48))
        np.testing.assert_array_equal(out, [[0, 0, 48, 64]])

    def test_invalid_sizes(self):
        with pytest.raises(InvalidInputError):
            encode_boxes(np.array([0, 0, 0, 1.0]), np.array([0, 0, 1, 1.0]))


class TestNms:
    def test_empty(self):
        assert nms([]) == []

    def test_singleton(self):
        d = LabeledBox(Box(0, 0, 5, 5), 0, 0.4)
        assert nms([d]) == [d]

    def test_duplicates(self):
        a = LabeledBox(Box(0, 0, 5, 5), 1, 0.9)
        b = LabeledBox(Box(0, 0, 5, 5), 1, 0.8)
        assert nms([b, a]) == [a]

    def test_classes_independent(self):
        a = LabeledBox(Box(0, 0, 5, 5), 0, 0.9)
        b = LabeledBox(Box(0, 0, 5, 5), 1, 0.8)
        assert nms([a, b]) == [a, b]
        assert nms([a, b], per_class=False) == [a]

    def test_threshold_is_strict(self):
        # IoU exactly 1/3 > 0.3 suppresses; at threshold 1/3 it survives
        a = LabeledBox(Box(0, 0, 2, 1), 0, 0.9)
        b = LabeledBox(Box(1, 0, 3, 1), 0, 0.8)
        assert nms([a, b], 0.3) == [a]
        assert nms([a, b], 1 / 3) == [a, b]

    def test_ties_keep_insertion_order(self):
        boxes = np.array([[0, 0, 5, 5], [0, 0, 5, 5.0]])
        assert nms_indices(boxes, np.array([0.5, 0.5]), None, 0.3).tolist() == [0]

    def test_matches_reference(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            b = random_boxes(rng, 300)
            s = rng.random(300)
            c = rng.integers(0, 2, 300)
            assert nms_indices(b, s, c, 0.3).tolist() == reference_nms(b, s, c, 0.3)

    def test_output_properties(self):
        rng = np.random.default_rng(5)
        b = random_boxes(rng, 200)
        s = rng.random(200)
        c = rng.integers(0, 2, 200)
        keep = nms_indices(b, s, c, 0.3)
        assert np.all(np.diff(s[keep]) <= 0)
        m = iou_matrix(b[keep], b[keep])
        same = c[keep][:, None] == c[keep][None, :]
        np.fill_diagonal(m, 0)
        assert np.all(m[same] <= 0.3)


class TestAssignTargets:
    def test_exact_match_positive(self):
        gt = [LabeledBox(Box(0, 0, 10, 10), 1)]
        a = assign_targets(np.array([[0, 0, 10, 10.0], [50, 50, 60, 60]]), gt)
        assert a.labels.tolist() == [1, 0]
        assert a.matched[0] == 0

    def test_empty_gt(self):
        a = assign_targets(np.array([[0, 0, 10, 10.0]] * 4), [])
        assert a.labels.tolist() == [0, 0, 0, 0]
        assert a.num_positive == 0

    def test_ignore_band(self):
        gt = [LabeledBox(Box(0, 0, 10, 10), 0)]
        # IoU 0.45 lies between 0.4 and 0.5; another anchor reaches 1.0 so no forced match
        anchors = np.array([[0, 0, 10, 4.5], [0, 0, 10, 10.0]])
        a = assign_targets(anchors, gt)
        assert a.labels.tolist() == [AnchorAssignment.IGNORE, AnchorAssignment.POSITIVE]

    def test_forced_match(self):
        gt = [LabeledBox(Box(0, 0, 10, 10), 0)]
        anchors = np.array([[0, 0, 10, 2.0], [0, 0, 10, 3.0], [40, 40, 50, 50]])
        a = assign_targets(anchors, gt)
        assert a.labels.tolist() == [0, 1, 0]
        assert a.matched[1] == 0

    def test_bad_thresholds(self):
        with pytest.raises(ConfigError):
            assign_targets(np.zeros((0, 4)), [], pos_thresh=0.3, neg_thresh=0.4)

    def test_brute_force(self):
        rng = np.random.default_rng(2)
        for trial in range(20):
            anchors = random_boxes(rng, 50, extent=60, max_size=40)
            gt_arr = random_boxes(rng, 5, extent=60, max_size=40)
            gt = [LabeledBox(Box(*g), int(rng.integers(0, 2))) for g in gt_arr]
            got = assign_targets(anchors, gt)

            labels, matched = [], []
            for a in anchors:
                ious = [scalar_iou(a, g) for g in gt_arr]
                best = max(range(len(ious)), key=lambda k: (ious[k], -k))
                if ious[best] >= 0.5:
                    labels.append(1)
                    matched.append(best)
                elif ious[best] >= 0.4:
                    labels.append(-1)
                    matched.append(-1)
                else:
                    labels.append(0)
                    matched.append(-1)
            for g in range(len(gt_arr)):
                col = [scalar_iou(a, gt_arr[g]) for a in anchors]
                if max(col) < 0.5 and max(col) > 0:
                    best = col.index(max(col))
                    labels[best] = 1
                    matched[best] = g
            assert got.labels.tolist() == labels, trial
            assert got.matched.tolist() == matched, trial
            assert not np.any(got.positive & (got.labels == 0))


@settings(max_examples=50)
@given(st.integers(1, 4), st.integers(1, 4))
def test_anchor_count_property(hm, wm):
    cfg = AnchorConfig(input_size=(32 * hm, 32 * wm))
    for (gh, gw), level in zip(cfg.grid_shapes(), generate_anchors(cfg)):
        assert len(level) == 3 * gh * gw
    assert geometry.anchor_counts(cfg) == [len(l) for l in generate_anchors(cfg)]
