import numpy as np
import pytest
from PIL import Image


@pytest.fixture(scope="session")
def toy_images(tmp_path_factory):
    """3 classes x 5 deterministic 16x16 PNGs."""
    root = tmp_path_factory.mktemp("toyset")
    rng = np.random.default_rng(42)
    for cls, base in (("heron", 40), ("otter", 120), ("pylon", 200)):
        sub = root / cls
        sub.mkdir()
        for i in range(5):
            pixels = np.clip(base + 25 * rng.standard_normal((16, 16, 3)), 0, 255)
            Image.fromarray(pixels.astype(np.uint8)).save(sub / f"img{i:02d}.png")
    return root
