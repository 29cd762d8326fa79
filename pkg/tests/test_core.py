import numpy as np
import pytest

from protopart.core import (
    FeatureBatch,
    PrototypeBank,
    SimilarityTensor,
    cosine_similarity,
    l2_normalize,
    similarity_tensor,
)
from protopart.errors import InvariantViolation, ZeroVector


def test_l2_normalize_examples():
    np.testing.assert_allclose(l2_normalize(np.array([3.0, 4.0])), [0.6, 0.8], atol=1e-15)
    np.testing.assert_array_equal(l2_normalize(np.array([1.0, 0.0])), [1.0, 0.0])
    with pytest.raises(ZeroVector):
        l2_normalize(np.array([0.0, 0.0]))


def test_l2_normalize_output_is_unit_and_parallel(rng):
    for _ in range(50):
        v = rng.normal(size=int(rng.integers(2, 10)))
        out = l2_normalize(v)
        assert abs(np.linalg.norm(out) - 1.0) < 1e-12
        cross = out * np.linalg.norm(v) - v
        np.testing.assert_allclose(cross, 0, atol=1e-9)


def test_cosine_similarity_examples():
    np.testing.assert_allclose(
        cosine_similarity(np.array([[1.0, 0.0]]), np.array([[1.0, 0.0]])), [[1.0]]
    )
    np.testing.assert_allclose(
        cosine_similarity(np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]])), [[0.0]]
    )
    # 1/sqrt(2) by direct dot-product arithmetic
    np.testing.assert_allclose(
        cosine_similarity(np.array([[1.0, 0.0]]), np.array([[1.0, 1.0]])),
        [[0.7071067811865475]],
        atol=1e-15,
    )


def test_cosine_similarity_zero_row():
    with pytest.raises(ZeroVector):
        cosine_similarity(np.array([[0.0, 0.0]]), np.array([[1.0, 0.0]]))


def test_cosine_similarity_swap_transpose(rng):
    f = rng.normal(size=(4, 6))
    p = rng.normal(size=(3, 6))
    np.testing.assert_allclose(cosine_similarity(f, p), cosine_similarity(p, f).T, atol=1e-12)


def test_cosine_similarity_scale_invariance(rng):
    f = rng.normal(size=(5, 4))
    p = rng.normal(size=(3, 4))
    base = cosine_similarity(f, p)
    scales = rng.uniform(0.1, 10.0, size=(5, 1))
    np.testing.assert_allclose(cosine_similarity(f * scales, p), base, atol=1e-12)
    np.testing.assert_allclose(
        cosine_similarity(f, p * rng.uniform(0.5, 3.0, size=(3, 1))), base, atol=1e-12
    )


def test_cosine_self_similarity_diagonal(rng):
    f = rng.normal(size=(8, 5))
    f /= np.linalg.norm(f, axis=1, keepdims=True)
    diag = np.diag(cosine_similarity(f, f))
    np.testing.assert_allclose(diag, 1.0, atol=1e-9)


def _batch(**kw):
    defaults = dict(
        tokens=np.zeros((2, 2, 2, 3), dtype=np.float32) + 1.0,
        labels=[0, 1],
        num_classes=2,
        image_size=(8, 8),
        ids=("a", "b"),
    )
    defaults.update(kw)
    return FeatureBatch(**defaults)


def test_feature_batch_invariants():
    b = _batch()
    assert b.shape == (2, 2, 2, 3)
    with pytest.raises(InvariantViolation):
        _batch(labels=[0, 2])  # label >= C
    with pytest.raises(InvariantViolation):
        _batch(tokens=np.ones((2, 2, 2, 1), dtype=np.float32))  # D < 2
    with pytest.raises(InvariantViolation):
        _batch(tokens=np.full((2, 2, 2, 3), np.nan, dtype=np.float32))
    with pytest.raises(InvariantViolation):
        _batch(gt_masks=np.zeros((1, 8, 8), dtype=bool))  # wrong B
    with pytest.raises(InvariantViolation):
        _batch(ids=("a",))


def test_feature_batch_is_immutable():
    b = _batch()
    with pytest.raises(ValueError):
        b.tokens[0, 0, 0, 0] = 5.0


def test_prototype_bank_requires_unit_norm(rng):
    vecs = rng.normal(size=(2, 3, 4))
    with pytest.raises(InvariantViolation):
        PrototypeBank(vecs)
    vecs /= np.linalg.norm(vecs, axis=-1, keepdims=True)
    bank = PrototypeBank(vecs)
    assert bank.num_classes == 2 and bank.per_class == 3 and bank.dim == 4
    assert bank.flat().shape == (6, 4)


def test_similarity_tensor_bounds(rng):
    with pytest.raises(InvariantViolation):
        SimilarityTensor(np.full((1, 1, 1, 1, 1), 1.5))
    vecs = rng.normal(size=(2, 2, 3))
    vecs /= np.linalg.norm(vecs, axis=-1, keepdims=True)
    bank = PrototypeBank(vecs)
    batch = _batch()
    sims = similarity_tensor(batch, bank)
    assert sims.values.shape == (2, 2, 2, 2, 2)
    assert np.all(np.abs(sims.values) <= 1.0 + 1e-9)
