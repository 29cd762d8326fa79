import numpy as np
import pytest
from PIL import Image


@pytest.fixture(scope="session")
def toy_folder(tmp_path_factory):
    """A two-class toy image folder with matching segmentation masks."""
    root = tmp_path_factory.mktemp("toy")
    images = root / "images"
    masks = root / "masks"
    rng = np.random.default_rng(0)
    for cls, base in (("finch", (200, 60, 40)), ("wren", (40, 80, 210))):
        (images / cls).mkdir(parents=True)
        (masks / cls).mkdir(parents=True)
        for i in range(2):
            px = np.tile(np.array(base, dtype=np.uint8), (64, 64, 1))
            px += rng.integers(0, 40, size=px.shape, dtype=np.uint8)
            # a bright square "object" in a per-image spot
            r, c = 8 + 10 * i, 20 + 6 * i
            px[r : r + 24, c : c + 24] = (245, 245, 20 + 40 * i)
            Image.fromarray(px).save(images / cls / f"{cls}_{i}.png")
            m = np.zeros((64, 64), dtype=np.uint8)
            m[r : r + 24, c : c + 24] = 255
            Image.fromarray(m).save(masks / cls / f"{cls}_{i}.png")
    return {"images": str(images), "masks": str(masks)}
