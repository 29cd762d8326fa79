import numpy as np
import pytest

from protopart.core import FeatureBatch


def random_batch(rng, b=None, h=None, w=None, d=None, with_masks=None, c=None):
    """A random but valid FeatureBatch for round-trip style tests."""
    b = b or int(rng.integers(1, 5))
    h = h or int(rng.integers(1, 5))
    w = w or int(rng.integers(1, 5))
    d = d or int(rng.integers(2, 9))
    c = c or int(rng.integers(1, 7))
    img_h, img_w = int(rng.integers(1, 24)), int(rng.integers(1, 24))
    if with_masks is None:
        with_masks = bool(rng.integers(2))
    masks = rng.integers(0, 2, size=(b, img_h, img_w)).astype(bool) if with_masks else None
    ids = tuple(f"im{idx}_{rng.integers(1000)}" for idx in range(b))
    return FeatureBatch(
        tokens=rng.normal(size=(b, h, w, d)).astype(np.float32),
        labels=rng.integers(0, c, size=b),
        num_classes=c,
        image_size=(img_h, img_w),
        ids=ids,
        gt_masks=masks,
    )


def split(batch, size, keep_masks=False):
    out = []
    for s in range(0, batch.shape[0], size):
        e = min(s + size, batch.shape[0])
        out.append(
            FeatureBatch(
                tokens=batch.tokens[s:e],
                labels=batch.labels[s:e],
                num_classes=batch.num_classes,
                image_size=batch.image_size,
                ids=batch.ids[s:e],
                gt_masks=batch.gt_masks[s:e] if keep_masks and batch.gt_masks is not None else None,
            )
        )
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
