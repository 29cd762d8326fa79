import numpy as np
import pytest

from protopart.errors import InvalidParams
from protopart.ptfd import read_ptfd, write_ptfd
from protopart.synth import (
    _REGION,
    _REGION_ANCHORS,
    SynthSpec,
    SynthTruth,
    generate,
    load_truth,
    save_truth,
)


def test_sidecar_centers_are_unit_and_near_orthogonal():
    spec = SynthSpec(seed=0)
    _, _, truth = generate(spec)
    flat = truth.part_dirs.reshape(-1, spec.dim)
    assert flat.shape == (15, 16)
    np.testing.assert_allclose(np.linalg.norm(flat, axis=1), 1.0, atol=1e-12)
    gram = np.abs(flat @ flat.T) - np.eye(15)
    assert gram.max() < 0.1
    assert abs(np.linalg.norm(truth.background) - 1.0) < 1e-12


def test_zero_sigma_part_tokens_equal_centers():
    spec = SynthSpec(seed=3, sigma=0.0, n_train=2, n_test=1, occlusion_rate=0.0)
    train, _, truth = generate(spec)
    for i in range(train.shape[0]):
        label = int(train.labels[i])
        for k in range(spec.per_class):
            top, left = _REGION_ANCHORS[k]
            region = train.tokens[i, top : top + _REGION, left : left + _REGION].astype(np.float64)
            expected = truth.part_dirs[label, k].astype(np.float32).astype(np.float64)
            # every token of the part, rim included, up to float32 storage
            np.testing.assert_allclose(region, np.broadcast_to(expected, region.shape), atol=5e-7)


def test_orthonormal_infeasible_raises():
    with pytest.raises(InvalidParams):
        SynthSpec(num_classes=5, per_class=4, dim=16)  # 21 directions > 16
    spec = SynthSpec(num_classes=5, per_class=4, dim=16, orthonormal=False, n_train=1, n_test=1)
    generate(spec)  # loose directions are allowed


def test_output_round_trips_through_ptfd(tmp_path):
    spec = SynthSpec(seed=1, n_train=3, n_test=2)
    train, test, _ = generate(spec)
    write_ptfd(train, tmp_path / "train.ptfd")
    write_ptfd(test, tmp_path / "test.ptfd")
    back = read_ptfd(tmp_path / "train.ptfd")
    assert np.array_equal(back.tokens, train.tokens)
    assert back.gt_masks is not None and np.array_equal(back.gt_masks, train.gt_masks)


def test_generation_is_deterministic():
    a_train, a_test, a_truth = generate(SynthSpec(seed=9, n_train=3, n_test=2))
    b_train, b_test, b_truth = generate(SynthSpec(seed=9, n_train=3, n_test=2))
    assert np.array_equal(a_train.tokens, b_train.tokens)
    assert np.array_equal(a_test.tokens, b_test.tokens)
    assert np.array_equal(a_truth.part_dirs, b_truth.part_dirs)
    assert a_train.ids == b_train.ids


def test_masks_cover_exactly_the_part_regions():
    spec = SynthSpec(seed=2, n_train=1, n_test=1, occlusion_rate=0.0)
    train, _, _ = generate(spec)
    expected = np.zeros((96, 96), dtype=bool)
    for k in range(spec.per_class):
        top, left = _REGION_ANCHORS[k]
        scale = spec.image_px // spec.grid
        expected[top * scale : (top + _REGION) * scale, left * scale : (left + _REGION) * scale] = True
    np.testing.assert_array_equal(train.gt_masks[0], expected)


def test_truth_sidecar_round_trip(tmp_path):
    _, _, truth = generate(SynthSpec(seed=4, n_train=1, n_test=1))
    save_truth(truth, tmp_path / "centers.npz")
    back = load_truth(tmp_path / "centers.npz")
    assert np.array_equal(back.part_dirs, truth.part_dirs)
    assert np.array_equal(back.background, truth.background)
