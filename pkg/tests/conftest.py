import cv2
import numpy as np
import pytest

from flowsim.media_io import Image, SaliencyMap


def textured_image(h=128, w=128, seed=0, smooth=2.0):
    """Smoothed random texture with full-range contrast."""
    rng = np.random.default_rng(seed)
    base = rng.random((h, w, 3))
    img = cv2.GaussianBlur(base, (0, 0), smooth)
    img = (img - img.min()) / (img.max() - img.min())
    return Image(img)


def blob_mask(h=128, w=128, cy=None, cx=None, radius=None):
    """Binary disk mask."""
    cy = h // 2 if cy is None else cy
    cx = w // 2 if cx is None else cx
    radius = min(h, w) // 5 if radius is None else radius
    ys, xs = np.mgrid[0:h, 0:w]
    values = ((ys - cy) ** 2 + (xs - cx) ** 2 <= radius**2).astype(np.float64)
    return SaliencyMap(values, is_binary=True)


@pytest.fixture
def small_image():
    return textured_image(32, 32, seed=7)


@pytest.fixture
def small_mask():
    return blob_mask(32, 32)
