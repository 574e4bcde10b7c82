"""Target-frame generators: turn one source image into a sequence of frames.

Backends are interchangeable: identity (null baseline), affine+thin-plate
spline warps (the classic simulation baseline), synthetic two-layer scenes
(test oracle with exact flow), and an external image-to-video model reached
through a file-exchange directory.

Warp and scene generators also return the analytic dense displacement field
of each frame, so downstream code can either use the exact flow directly or
run a flow estimator on the frames and validate it.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass, field

import cv2
import numpy as np
from scipy import ndimage

from .errors import (
    BackendTimeout,
    DegenerateWarp,
    EmptyMask,
    IncompleteSequence,
    InvalidDimensions,
)
from .flow_core import FlowField
from .media_io import Image, SaliencyMap, load_image, resize, save_image


@dataclass(frozen=True)
class GenerationConfig:
    """Sampling parameters forwarded to the external image-to-video model."""

    num_frames: int = 14
    resolution: tuple = (576, 1024)  # (h, w)
    sampler_steps: int = 25
    guidance_first: float = 3.0
    guidance_last: float = 1.0
    frame_rate: int = 7
    decode_chunk: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.num_frames < 1:
            raise InvalidDimensions("num_frames must be >= 1")
        if self.sampler_steps < 1:
            raise InvalidDimensions("sampler_steps must be >= 1")
        if self.guidance_first <= 0 or self.guidance_last <= 0:
            raise InvalidDimensions("guidance values must be > 0")


@dataclass(frozen=True)
class FrameSequence:
    source: Image
    frames: tuple
    generator_id: str
    config: GenerationConfig | None = None

    def __post_init__(self):
        frames = tuple(self.frames)
        for f in frames:
            if (f.height, f.width) != (self.source.height, self.source.width):
                raise InvalidDimensions("frame resolution differs from source")
        object.__setattr__(self, "frames", frames)

    def __len__(self):
        return len(self.frames)


@dataclass(frozen=True)
class WarpParams:
    """One spatial-warp trajectory; frame t compounds these per-frame deltas."""

    rotation: float = 0.0  # degrees per frame
    scale: float = 1.0  # ratio per frame
    translation: tuple = (0.0, 0.0)  # (fx, fy), fraction of width/height per frame
    tps_grid: int = 5
    tps_jitter: float = 0.0  # control-point jitter, fraction of dims per frame
    seed: int = 0

    def __post_init__(self):
        if self.scale <= 0:
            raise DegenerateWarp("scale must be > 0")
        if self.tps_grid < 3:
            raise InvalidDimensions("tps_grid must be >= 3")


def sample_warp_params(rng: np.random.Generator) -> WarpParams:
    """Draw baseline warp parameters from the conventional ranges."""
    return WarpParams(
        rotation=float(rng.uniform(-10.0, 10.0)),
        scale=float(rng.uniform(0.95, 1.05)),
        translation=(float(rng.uniform(-0.05, 0.05)), float(rng.uniform(-0.05, 0.05))),
        tps_grid=5,
        tps_jitter=0.02,
        seed=int(rng.integers(0, 2**31 - 1)),
    )


def generate_identity(source: Image, T: int) -> FrameSequence:
    frames = tuple(Image(source.pixels.copy()) for _ in range(T))
    return FrameSequence(source=source, frames=frames, generator_id="identity")


# ---------------------------------------------------------------------------
# thin-plate spline machinery


def _tps_kernel(r2: np.ndarray) -> np.ndarray:
    # U(r) = r^2 log(r^2), with U(0) = 0
    out = np.zeros_like(r2)
    pos = r2 > 0
    out[pos] = r2[pos] * np.log(r2[pos])
    return out


def _tps_fit(points: np.ndarray, values: np.ndarray) -> tuple:
    """Solve the TPS interpolation system for scalar values at control points."""
    n = points.shape[0]
    d2 = ((points[:, None, :] - points[None, :, :]) ** 2).sum(-1)
    K = _tps_kernel(d2)
    P = np.concatenate([np.ones((n, 1)), points], axis=1)
    A = np.zeros((n + 3, n + 3))
    A[:n, :n] = K
    A[:n, n:] = P
    A[n:, :n] = P.T
    b = np.concatenate([values, np.zeros(3)])
    sol = np.linalg.solve(A, b)
    return sol[:n], sol[n:]


def _tps_eval(points, w, a, grid_xy: np.ndarray) -> np.ndarray:
    """Evaluate a fitted TPS at dense query points (..., 2)."""
    d2 = ((grid_xy[..., None, :] - points) ** 2).sum(-1)
    return _tps_kernel(d2) @ w + a[0] + grid_xy[..., 0] * a[1] + grid_xy[..., 1] * a[2]


def _dense_grid(h: int, w: int) -> np.ndarray:
    xs, ys = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    return np.stack([xs, ys], axis=-1)


def _forward_displacement(params: WarpParams, t: int, h: int, w: int) -> np.ndarray:
    """Dense forward displacement of frame t's compounded warp, H x W x 2."""
    theta = np.deg2rad(params.rotation * t)
    s = params.scale**t
    tx = params.translation[0] * t * w
    ty = params.translation[1] * t * h
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    A = s * np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    if abs(np.linalg.det(A)) < 1e-9:
        raise DegenerateWarp(f"affine determinant {np.linalg.det(A)}")
    grid = _dense_grid(h, w)
    centered = grid - np.array([cx, cy])
    warped = centered @ A.T + np.array([cx + tx, cy + ty])
    disp = warped - grid

    if params.tps_jitter != 0.0:
        rng = np.random.default_rng(params.seed)
        g = params.tps_grid
        px, py = np.meshgrid(np.linspace(0, w - 1, g), np.linspace(0, h - 1, g))
        pts = np.stack([px.ravel(), py.ravel()], axis=-1)
        jx = rng.uniform(-params.tps_jitter, params.tps_jitter, g * g) * w * t
        jy = rng.uniform(-params.tps_jitter, params.tps_jitter, g * g) * h * t
        wx, ax = _tps_fit(pts, jx)
        wy, ay = _tps_fit(pts, jy)
        disp[..., 0] += _tps_eval(pts, wx, ax, grid)
        disp[..., 1] += _tps_eval(pts, wy, ay, grid)
    return disp


def _invert_displacement(disp: np.ndarray, iterations: int = 10) -> np.ndarray:
    """Backward map B with B(q) = q - disp(B(q)), by fixed-point iteration."""
    h, w = disp.shape[:2]
    grid = _dense_grid(h, w)
    p = grid.copy()
    for _ in range(iterations):
        mapped = np.stack(
            [
                cv2.remap(
                    disp[..., c],
                    p[..., 0].astype(np.float32),
                    p[..., 1].astype(np.float32),
                    cv2.INTER_LINEAR,
                    borderMode=cv2.BORDER_REPLICATE,
                )
                for c in range(2)
            ],
            axis=-1,
        )
        p = grid - mapped
    return p


def _remap_image(pixels: np.ndarray, coords: np.ndarray, interp=cv2.INTER_LINEAR) -> np.ndarray:
    out = cv2.remap(
        pixels,
        coords[..., 0].astype(np.float32),
        coords[..., 1].astype(np.float32),
        interp,
        borderMode=cv2.BORDER_REPLICATE,
    )
    return np.clip(out, 0.0, 1.0)


def generate_spatial_warp(source: Image, params: WarpParams, T: int):
    """Warped frame sequence plus the analytic flow of every frame."""
    h, w = source.height, source.width
    frames, flows = [], []
    for t in range(1, T + 1):
        disp = _forward_displacement(params, t, h, w)
        flows.append(FlowField(disp[..., 0], disp[..., 1]))
        backward = _invert_displacement(disp)
        frames.append(Image(_remap_image(source.pixels, backward)))
    seq = FrameSequence(source=source, frames=tuple(frames), generator_id="warp")
    return seq, flows


def backward_warp(image: Image, flow: FlowField) -> Image:
    """Sample `image` at p + flow(p); on the source grid this reconstructs
    the source from a target frame and the forward flow."""
    grid = _dense_grid(flow.height, flow.width)
    coords = grid + np.stack([flow.u, flow.v], axis=-1)
    return Image(_remap_image(image.pixels, coords))


# ---------------------------------------------------------------------------
# synthetic two-layer scenes


def _fill_masked_region(pixels: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Replace masked pixels with the nearest unmasked pixel's value."""
    if not mask.any():
        return pixels.copy()
    _, (iy, ix) = ndimage.distance_transform_edt(mask, return_indices=True)
    return pixels[iy, ix]


def _shift(pixels: np.ndarray, dx: float, dy: float, interp=cv2.INTER_LINEAR) -> np.ndarray:
    M = np.array([[1.0, 0.0, dx], [0.0, 1.0, dy]])
    h, w = pixels.shape[:2]
    return cv2.warpAffine(pixels, M, (w, h), flags=interp, borderMode=cv2.BORDER_REPLICATE)


def generate_synthetic_scene(
    mask: SaliencyMap,
    source: Image,
    fg_velocity: tuple,
    bg_velocity: tuple,
    T: int,
):
    """Foreground translates over an independently translating background.

    The analytic flow is piecewise constant on the source grid: fg_velocity*t
    inside the mask, bg_velocity*t elsewhere. Disoccluded background is
    filled from the nearest non-object pixel.
    """
    m = mask.values > 0.5
    if not m.any():
        raise EmptyMask("synthetic scene needs a nonempty foreground")
    if (mask.height, mask.width) != (source.height, source.width):
        raise InvalidDimensions("mask and source dimensions differ")
    h, w = source.height, source.width
    plate = _fill_masked_region(source.pixels, m)

    frames, flows = [], []
    for t in range(1, T + 1):
        bdx, bdy = bg_velocity[0] * t, bg_velocity[1] * t
        fdx, fdy = fg_velocity[0] * t, fg_velocity[1] * t
        frame = _shift(plate, bdx, bdy)
        obj = _shift(source.pixels, fdx, fdy)
        m_t = _shift(m.astype(np.float64), fdx, fdy, interp=cv2.INTER_NEAREST) > 0.5
        frame[m_t] = obj[m_t]
        frames.append(Image(np.clip(frame, 0.0, 1.0)))

        u = np.full((h, w), bg_velocity[0] * t, dtype=np.float64)
        v = np.full((h, w), bg_velocity[1] * t, dtype=np.float64)
        u[m] = fg_velocity[0] * t
        v[m] = fg_velocity[1] * t
        flows.append(FlowField(u, v))
    seq = FrameSequence(source=source, frames=tuple(frames), generator_id="synthetic")
    return seq, flows


# ---------------------------------------------------------------------------
# external image-to-video backend (file-exchange protocol)

REQUEST_FILE = "request.json"
DONE_MARKER = "DONE"


def _request_id(source: Image, config: GenerationConfig) -> str:
    digest = hashlib.sha1(source.pixels.tobytes()).hexdigest()[:10]
    return f"req_{config.seed:08d}_{digest}"


def generate_external(
    source: Image,
    config: GenerationConfig,
    backend_dir,
    timeout: float = 60.0,
    poll_interval: float = 0.05,
) -> FrameSequence:
    """Hand one source image to the exchange-directory backend.

    Layout per request: `<req_id>/source.png`, `<req_id>/request.json`,
    results `frame_001.png` .. `frame_T.png`, completion marker `DONE`.
    Returned frames are resized back to the source resolution.
    """
    from pathlib import Path

    root = Path(backend_dir)
    if not root.is_dir():
        raise BackendTimeout(f"backend directory {root} does not exist")
    req = root / _request_id(source, config)
    req.mkdir(parents=True, exist_ok=True)

    resized = resize(source, config.resolution[0], config.resolution[1])
    save_image(resized, req / "source.png")
    descriptor = {
        "T": config.num_frames,
        "resolution": list(config.resolution),
        "sampler_steps": config.sampler_steps,
        "guidance_first": config.guidance_first,
        "guidance_last": config.guidance_last,
        "frame_rate": config.frame_rate,
        "decode_chunk": config.decode_chunk,
        "seed": config.seed,
    }
    # write-then-rename so a polling backend never sees a partial descriptor
    tmp = req / (REQUEST_FILE + ".tmp")
    tmp.write_text(json.dumps(descriptor, indent=2))
    os.replace(tmp, req / REQUEST_FILE)

    deadline = time.monotonic() + timeout
    while not (req / DONE_MARKER).exists():
        if time.monotonic() > deadline:
            raise BackendTimeout(f"no result in {timeout}s for {req}")
        time.sleep(poll_interval)

    frames = []
    for t in range(1, config.num_frames + 1):
        frame_path = req / f"frame_{t:03d}.png"
        if not frame_path.exists():
            raise IncompleteSequence(
                f"{req}: got {t - 1} of {config.num_frames} frames"
            )
        frame = load_image(frame_path)
        frames.append(resize(frame, source.height, source.width))
    return FrameSequence(
        source=source, frames=tuple(frames), generator_id="external", config=config
    )
