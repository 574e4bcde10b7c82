"""Image and mask I/O with the canonical in-memory representations.

All pixel data lives in float arrays over [0, 1], channel-last. Every other
module assumes this domain, so conversion from 8-bit rasters happens here and
nowhere else.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import cv2
import numpy as np

from .errors import InvalidDimensions, MissingFile, UndecodableImage

# conventional luminance weights for collapsing RGB masks
_LUMA = np.array([0.299, 0.587, 0.114], dtype=np.float64)

MIN_SIDE = 8


@dataclass(frozen=True)
class Image:
    """RGB image, H x W x 3 float64 in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 3 or px.shape[2] != 3:
            raise InvalidDimensions(f"expected HxWx3 pixels, got shape {px.shape}")
        if px.min() < 0.0 or px.max() > 1.0:
            raise InvalidDimensions("pixel values must lie in [0, 1]")
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class SaliencyMap:
    """Single-channel saliency values, H x W float64 in [0, 1]."""

    values: np.ndarray
    is_binary: bool = False

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 2:
            raise InvalidDimensions(f"expected HxW values, got shape {vals.shape}")
        if vals.min() < 0.0 or vals.max() > 1.0:
            raise InvalidDimensions("saliency values must lie in [0, 1]")
        if self.is_binary and not np.isin(vals, (0.0, 1.0)).all():
            raise InvalidDimensions("binary map contains non-{0,1} values")
        object.__setattr__(self, "values", vals)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


def _read_raster(path):
    if not os.path.isfile(path):
        raise MissingFile(str(path))
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise UndecodableImage(str(path))
    if raw.dtype != np.uint8:
        raise UndecodableImage(f"{path}: only 8-bit rasters are supported")
    return raw


def load_image(path) -> Image:
    """Load an 8-bit raster as an RGB Image scaled into [0, 1]."""
    raw = _read_raster(path)
    if raw.ndim == 2:
        raw = np.stack([raw] * 3, axis=-1)
    elif raw.shape[2] == 4:
        raw = raw[:, :, :3]
    rgb = cv2.cvtColor(raw, cv2.COLOR_BGR2RGB)
    return Image(rgb.astype(np.float64) / 255.0)


def load_mask(path, binarize_threshold: float | None = 0.5) -> SaliencyMap:
    """Load a mask raster; RGB inputs are collapsed by luminance.

    With a threshold the result is binarized to {0, 1}; pass None to keep
    the continuous values.
    """
    raw = _read_raster(path)
    if raw.ndim == 3:
        if raw.shape[2] == 4:
            raw = raw[:, :, :3]
        rgb = cv2.cvtColor(raw, cv2.COLOR_BGR2RGB).astype(np.float64) / 255.0
        vals = rgb @ _LUMA
        vals = np.clip(vals, 0.0, 1.0)
    else:
        vals = raw.astype(np.float64) / 255.0
    if binarize_threshold is None:
        return SaliencyMap(vals, is_binary=False)
    return SaliencyMap((vals >= binarize_threshold).astype(np.float64), is_binary=True)


def save_image(image: Image, path) -> None:
    """Store an Image as an 8-bit raster (rounded to nearest level)."""
    raw = np.rint(image.pixels * 255.0).astype(np.uint8)
    bgr = cv2.cvtColor(raw, cv2.COLOR_RGB2BGR)
    if not cv2.imwrite(str(path), bgr):
        raise UndecodableImage(f"failed to encode {path}")


def save_mask(mask: SaliencyMap, path) -> None:
    raw = np.rint(mask.values * 255.0).astype(np.uint8)
    if not cv2.imwrite(str(path), raw):
        raise UndecodableImage(f"failed to encode {path}")


def resize(image: Image, h: int, w: int, mode: str = "bilinear") -> Image:
    """Resize to exactly h x w. Nearest mode preserves the value set."""
    if h < MIN_SIDE or w < MIN_SIDE:
        raise InvalidDimensions(f"target sides must be >= {MIN_SIDE}, got {(h, w)}")
    if (h, w) == (image.height, image.width):
        return Image(image.pixels.copy())
    interp = {"bilinear": cv2.INTER_LINEAR, "nearest": cv2.INTER_NEAREST}.get(mode)
    if interp is None:
        raise ValueError(f"unknown resize mode {mode!r}")
    out = cv2.resize(image.pixels, (w, h), interpolation=interp)
    return Image(np.clip(out, 0.0, 1.0))


def resize_mask(mask: SaliencyMap, h: int, w: int, mode: str = "nearest") -> SaliencyMap:
    if h < MIN_SIDE or w < MIN_SIDE:
        raise InvalidDimensions(f"target sides must be >= {MIN_SIDE}, got {(h, w)}")
    if (h, w) == (mask.height, mask.width):
        return SaliencyMap(mask.values.copy(), is_binary=mask.is_binary)
    interp = {"bilinear": cv2.INTER_LINEAR, "nearest": cv2.INTER_NEAREST}.get(mode)
    if interp is None:
        raise ValueError(f"unknown resize mode {mode!r}")
    out = cv2.resize(mask.values, (w, h), interpolation=interp)
    binary = mask.is_binary and mode == "nearest"
    return SaliencyMap(np.clip(out, 0.0, 1.0), is_binary=binary)
