"""Dense optical flow: the FlowField type, .flo file I/O, colorization, stats.

The .flo layout is the Middlebury interchange format: float32 magic
202021.25, int32 width, int32 height, then row-major interleaved (u, v)
float32 pairs, all little-endian.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import cv2
import numpy as np
from scipy import ndimage

from .errors import BadMagic, InvalidDimensions, IoFailure, MissingFile, TruncatedFile
from .media_io import Image

FLO_MAGIC = 202021.25

# values beyond this are the conventional unknown-flow sentinel; this
# pipeline never produces them, so they are rejected as invalid input
SENTINEL_THRESHOLD = 1e9


@dataclass(frozen=True)
class FlowField:
    """Forward flow on the source grid: u horizontal, v vertical, in pixels."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=np.float64)
        v = np.asarray(self.v, dtype=np.float64)
        if u.ndim != 2 or u.shape != v.shape:
            raise InvalidDimensions(f"u/v must be matching HxW arrays, got {u.shape} vs {v.shape}")
        if not (np.isfinite(u).all() and np.isfinite(v).all()):
            raise InvalidDimensions("flow contains non-finite values")
        if max(np.abs(u).max(initial=0.0), np.abs(v).max(initial=0.0)) > SENTINEL_THRESHOLD:
            raise InvalidDimensions("flow contains unknown-flow sentinel values")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @property
    def height(self) -> int:
        return self.u.shape[0]

    @property
    def width(self) -> int:
        return self.u.shape[1]

    def magnitude(self) -> np.ndarray:
        return np.sqrt(self.u**2 + self.v**2)

    def scaled(self, alpha: float) -> "FlowField":
        return FlowField(self.u * alpha, self.v * alpha)


def read_flo(path) -> FlowField:
    """Read a .flo file; values are bit-identical to the stored float32s."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except FileNotFoundError as exc:
        raise MissingFile(str(path)) from exc
    if len(data) < 12:
        raise TruncatedFile(f"{path}: header incomplete ({len(data)} bytes)")
    magic, w, h = struct.unpack("<fii", data[:12])
    if magic != np.float32(FLO_MAGIC):
        raise BadMagic(f"{path}: magic {magic} != {FLO_MAGIC}")
    if w <= 0 or h <= 0:
        raise TruncatedFile(f"{path}: bad dimensions {w}x{h}")
    expected = 12 + h * w * 2 * 4
    if len(data) < expected:
        raise TruncatedFile(f"{path}: expected {expected} bytes, got {len(data)}")
    payload = np.frombuffer(data[12:expected], dtype="<f4").reshape(h, w, 2)
    return FlowField(payload[:, :, 0].astype(np.float64), payload[:, :, 1].astype(np.float64))


def write_flo(flow: FlowField, path) -> None:
    """Write a FlowField in the .flo layout (see module docstring)."""
    payload = np.stack([flow.u, flow.v], axis=-1).astype("<f4")
    try:
        with open(path, "wb") as fh:
            fh.write(struct.pack("<fii", FLO_MAGIC, flow.width, flow.height))
            fh.write(payload.tobytes())
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def _color_wheel() -> np.ndarray:
    """Middlebury color wheel: 55 hue bins RY15 YG6 GC4 CB11 BM13 MR6."""
    ry, yg, gc, cb, bm, mr = 15, 6, 4, 11, 13, 6
    ncols = ry + yg + gc + cb + bm + mr
    wheel = np.zeros((ncols, 3))
    col = 0
    wheel[0:ry, 0] = 1.0
    wheel[0:ry, 1] = np.arange(ry) / ry
    col += ry
    wheel[col : col + yg, 0] = 1.0 - np.arange(yg) / yg
    wheel[col : col + yg, 1] = 1.0
    col += yg
    wheel[col : col + gc, 1] = 1.0
    wheel[col : col + gc, 2] = np.arange(gc) / gc
    col += gc
    wheel[col : col + cb, 1] = 1.0 - np.arange(cb) / cb
    wheel[col : col + cb, 2] = 1.0
    col += cb
    wheel[col : col + bm, 2] = 1.0
    wheel[col : col + bm, 0] = np.arange(bm) / bm
    col += bm
    wheel[col : col + mr, 2] = 1.0 - np.arange(mr) / mr
    wheel[col : col + mr, 0] = 1.0
    return wheel


_WHEEL = _color_wheel()


def colorize(flow: FlowField, max_magnitude: float | None = None) -> Image:
    """Render a flow field with the Middlebury color wheel.

    Hue encodes direction (angle 0, i.e. pure +u, lands on wheel bin 0, red),
    saturation encodes magnitude normalized by max_magnitude or by the
    field's own maximum; zero flow renders white.
    """
    mag = flow.magnitude()
    norm = max_magnitude if max_magnitude is not None else mag.max()
    if norm <= 0:
        norm = 1.0
    rad = np.clip(mag / norm, 0.0, 1.0)

    ncols = _WHEEL.shape[0]
    angle = np.arctan2(flow.v, flow.u)  # 0 for pure +u
    fk = (angle / (2 * np.pi)) % 1.0 * ncols
    k0 = np.floor(fk).astype(int) % ncols
    k1 = (k0 + 1) % ncols
    f = (fk - np.floor(fk))[..., None]
    col = (1 - f) * _WHEEL[k0] + f * _WHEEL[k1]
    # desaturate toward white as magnitude drops
    rgb = 1.0 - rad[..., None] * (1.0 - col)
    return Image(np.clip(rgb, 0.0, 1.0))


def resize_flow(flow: FlowField, h: int, w: int) -> FlowField:
    """Resize a flow field, rescaling displacements to the new pixel grid."""
    if (h, w) == (flow.height, flow.width):
        return FlowField(flow.u.copy(), flow.v.copy())
    sx = w / flow.width
    sy = h / flow.height
    u = cv2.resize(flow.u, (w, h), interpolation=cv2.INTER_LINEAR) * sx
    v = cv2.resize(flow.v, (w, h), interpolation=cv2.INTER_LINEAR) * sy
    return FlowField(u, v)


def boundary_contrast(flow: FlowField, mask: np.ndarray, band: int = 3) -> float:
    """Mean flow difference across a mask boundary.

    Compares the mean flow vector in a thin band just inside the mask with
    the band just outside; returns the Euclidean norm of the difference.
    """
    m = mask > 0.5
    inner = m & ~ndimage.binary_erosion(m, iterations=band)
    outer = ndimage.binary_dilation(m, iterations=band) & ~m
    if not inner.any() or not outer.any():
        return 0.0
    du = flow.u[inner].mean() - flow.u[outer].mean()
    dv = flow.v[inner].mean() - flow.v[outer].mean()
    return float(np.hypot(du, dv))


def flow_stats(flow: FlowField) -> dict:
    """Mean / median / max of the per-pixel magnitude sqrt(u^2 + v^2)."""
    mag = flow.magnitude()
    return {
        "mean_mag": float(mag.mean()),
        "median_mag": float(np.median(mag)),
        "max_mag": float(mag.max()),
    }
