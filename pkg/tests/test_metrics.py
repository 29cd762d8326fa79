import numpy as np
import pytest

from protopart.errors import EmptyGroundTruth, InvalidParams, IoError, KTooSmall
from protopart.metrics import (
    BoxSpec,
    MaskThreshold,
    box_iou,
    comprehensiveness,
    comprehensiveness_detail,
    distinctiveness,
    max_box,
    overlap_score,
    render_heatmap,
    threshold_mask,
    union_mask,
    upsample_bilinear,
)


# ---------------------------------------------------------------------------
# upsampling

def test_upsample_constant_stays_constant():
    out = upsample_bilinear(np.full((3, 5), 0.7), (17, 11))
    np.testing.assert_array_equal(out, np.full((17, 11), 0.7))


def test_upsample_single_cell_broadcasts():
    out = upsample_bilinear(np.array([[2.5]]), (4, 6))
    np.testing.assert_array_equal(out, np.full((4, 6), 2.5))


def test_upsample_2x2_to_4x4_hand_values():
    src = np.array([[0.0, 1.0], [0.0, 0.0]])
    # corner-aligned: only src[0, 1] contributes, weight (1 - y/3) * (x/3)
    expected = np.array(
        [
            [0.0, 1 / 3, 2 / 3, 1.0],
            [0.0, 2 / 9, 4 / 9, 2 / 3],
            [0.0, 1 / 9, 2 / 9, 1 / 3],
            [0.0, 0.0, 0.0, 0.0],
        ]
    )
    np.testing.assert_allclose(upsample_bilinear(src, (4, 4)), expected, atol=1e-12)


def test_upsample_preserves_unimodal_peak_location():
    src = np.zeros((4, 4))
    src[1, 2] = 1.0
    out = upsample_bilinear(src, (16, 16))
    r, c = divmod(int(np.argmax(out)), 16)
    # peak must stay within one source cell of the scaled argmax
    assert abs(r - 1 * 15 / 3) <= 15 / 3 and abs(c - 2 * 15 / 3) <= 15 / 3


# ---------------------------------------------------------------------------
# boxes

def test_max_box_centered():
    act = np.zeros((16, 16))
    act[8, 8] = 1.0
    assert max_box(act, BoxSpec(4, 4)) == (6, 6, 4, 4)


def test_max_box_corner_clamped():
    act = np.zeros((16, 16))
    act[0, 0] = 1.0
    assert max_box(act, BoxSpec(4, 4)) == (0, 0, 4, 4)


def test_max_box_derived_partial_clamp():
    act = np.zeros((16, 16))
    act[1, 5] = 1.0
    assert max_box(act, BoxSpec(4, 4)) == (0, 3, 4, 4)


def test_max_box_tie_takes_first_row_major():
    act = np.ones((8, 8))
    assert max_box(act, BoxSpec(2, 2)) == (0, 0, 2, 2)


def test_box_iou_examples():
    a = (2, 2, 4, 4)
    assert box_iou(a, a) == 1.0
    assert box_iou(a, (10, 10, 4, 4)) == 0.0
    # horizontal offset by 2: intersection 8, union 24
    assert abs(box_iou(a, (2, 4, 4, 4)) - 1 / 3) < 1e-15


# ---------------------------------------------------------------------------
# distinctiveness

def _peaked(h, w, r, c):
    m = np.zeros((h, w))
    m[r, c] = 1.0
    return m


def test_distinctiveness_identical_maps_is_zero():
    maps = np.stack([_peaked(16, 16, 4, 4)] * 3)
    assert distinctiveness([maps, maps], (16, 16), BoxSpec(4, 4)) == 0.0


def test_distinctiveness_disjoint_boxes_is_one():
    maps = np.stack(
        [_peaked(16, 16, 2, 2), _peaked(16, 16, 2, 13), _peaked(16, 16, 13, 2)]
    )
    assert distinctiveness([maps], (16, 16), BoxSpec(4, 4)) == 1.0


def test_distinctiveness_mixed_case_two_thirds():
    maps = np.stack(
        [_peaked(16, 16, 3, 3), _peaked(16, 16, 3, 3), _peaked(16, 16, 12, 12)]
    )
    score = distinctiveness([maps], (16, 16), BoxSpec(4, 4))
    assert abs(score - 2 / 3) < 1e-12


def test_distinctiveness_k2_equals_one_minus_iou():
    maps = np.stack([_peaked(16, 16, 4, 4), _peaked(16, 16, 4, 6)])
    spec = BoxSpec(4, 4)
    iou = box_iou(max_box(maps[0], spec), max_box(maps[1], spec))
    assert distinctiveness([maps], (16, 16), spec) == 1.0 - iou


def test_distinctiveness_needs_two_prototypes():
    with pytest.raises(KTooSmall):
        overlap_score(np.zeros((1, 4, 4)), (16, 16), BoxSpec(4, 4))


def test_distinctiveness_monotone_transform_invariance(rng):
    # invariance holds for maps at evaluation resolution: the argmax
    # commutes with strictly monotone transforms
    maps = rng.normal(size=(3, 24, 24))
    spec = BoxSpec(5, 5)
    base = distinctiveness([maps], (24, 24), spec)
    transformed = np.exp(3.0 * maps) + 2.0  # strictly monotone
    assert distinctiveness([transformed], (24, 24), spec) == base


# ---------------------------------------------------------------------------
# thresholded masks and comprehensiveness

def test_threshold_mask_examples():
    m = threshold_mask(np.array([[0.0, 10.0]]), MaskThreshold(0.5))
    np.testing.assert_array_equal(m, [[False, True]])
    np.testing.assert_array_equal(
        threshold_mask(np.full((2, 3), 4.2), MaskThreshold(0.5)), np.ones((2, 3), dtype=bool)
    )
    m = threshold_mask(np.array([[0.0, 2.0, 4.0, 10.0]]), MaskThreshold(0.3))
    np.testing.assert_array_equal(m, [[False, False, True, True]])


def test_threshold_tau_bounds():
    with pytest.raises(InvalidParams):
        MaskThreshold(0.0)
    with pytest.raises(InvalidParams):
        MaskThreshold(1.0)


def test_comprehensiveness_perfect_and_disjoint():
    gt = np.zeros((8, 8), dtype=bool)
    gt[:4] = True
    hit = np.zeros((1, 8, 8))
    hit[0, :4] = 1.0
    assert comprehensiveness([hit], [gt], MaskThreshold(0.5)) == 1.0
    miss = np.zeros((1, 8, 8))
    miss[0, 6:] = 1.0
    assert comprehensiveness([miss], [gt], MaskThreshold(0.5)) == 0.0


def test_comprehensiveness_half_coverage():
    # union covers exactly half of the ground truth and nothing outside
    gt = np.zeros((8, 8), dtype=bool)
    gt[:, :4] = True
    maps = np.zeros((2, 8, 8))
    maps[0, :, :2] = 1.0
    maps[1, :, :2] = 1.0
    assert comprehensiveness([maps], [gt], MaskThreshold(0.5)) == 0.5


def test_comprehensiveness_skips_empty_ground_truth():
    gt_ok = np.ones((4, 4), dtype=bool)
    gt_empty = np.zeros((4, 4), dtype=bool)
    maps = np.ones((1, 4, 4))
    ious, skipped = comprehensiveness_detail([maps, maps], [gt_ok, gt_empty], MaskThreshold(0.5))
    assert skipped == [1] and ious[1] is None and ious[0] == 1.0
    with pytest.raises(EmptyGroundTruth):
        comprehensiveness([maps], [gt_empty], MaskThreshold(0.5))


def test_comprehensiveness_affine_transform_invariance(rng):
    # min-max thresholding commutes with positive affine maps (a general
    # monotone transform reshapes the normalized values, so only the
    # affine-invariance can hold)
    maps = rng.normal(size=(2, 20, 20))
    gt = rng.integers(0, 2, size=(20, 20)).astype(bool)
    gt[0, 0] = True
    tau = MaskThreshold(0.4)
    base = comprehensiveness([maps], [gt], tau)
    assert comprehensiveness([maps * 4.0 + 11.0], [gt], tau) == base


def test_scores_stay_in_unit_interval(rng):
    for _ in range(10):
        k = int(rng.integers(2, 5))
        maps = rng.normal(size=(k, 4, 4))
        gt = rng.integers(0, 2, size=(12, 12)).astype(bool)
        gt[0, 0] = True
        d = distinctiveness([maps], (12, 12), BoxSpec(3, 3))
        c = comprehensiveness([maps], [gt], MaskThreshold(0.5))
        assert 0.0 <= d <= 1.0 and 0.0 <= c <= 1.0


# ---------------------------------------------------------------------------
# rendering

def test_render_constant_map_is_white(tmp_path):
    path = tmp_path / "flat.pgm"
    render_heatmap(np.full((2, 2), 0.3), path)
    raw = path.read_bytes()
    assert raw.startswith(b"P5\n2 2\n255\n")
    assert raw[-4:] == b"\xff\xff\xff\xff"
    assert (tmp_path / "flat.csv").exists()


def test_render_derived_pixel_values(tmp_path):
    path = tmp_path / "m.pgm"
    render_heatmap(np.array([[0.0, 1.0], [0.5, 0.25]]), path)
    raw = path.read_bytes()
    assert list(raw[-4:]) == [0, 255, 127, 63]
    csv_text = (tmp_path / "m.csv").read_text().strip().splitlines()
    assert csv_text[0].split(",") == ["0.0", "1.0"]


def test_render_unwritable_path():
    with pytest.raises(IoError):
        render_heatmap(np.zeros((2, 2)), "/nonexistent/dir/x.pgm")


def test_union_mask_matches_manual(rng):
    maps = rng.normal(size=(2, 4, 4))
    tau = MaskThreshold(0.5)
    manual = threshold_mask(upsample_bilinear(maps[0], (8, 8)), tau) | threshold_mask(
        upsample_bilinear(maps[1], (8, 8)), tau
    )
    np.testing.assert_array_equal(union_mask(maps, (8, 8), tau), manual)
