"""Dense optical flow estimation between two images.

The built-in estimator is a pyramidal Horn-Schunck scheme with intermediate
warping: grayscale pyramids, per level an iterative brightness-constancy +
smoothness solve, flow upsampled and rescaled between levels. A learned
estimator can replace it through the file-exchange adapter.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from .errors import BackendTimeout, BadResult, DimensionMismatch, InvalidDimensions
from .flow_core import FlowField, read_flo
from .media_io import Image, save_image

_LUMA = np.array([0.299, 0.587, 0.114])

# weighted neighborhood average used by the Horn-Schunck update
_AVG_KERNEL = np.array(
    [[1 / 12, 1 / 6, 1 / 12], [1 / 6, 0.0, 1 / 6], [1 / 12, 1 / 6, 1 / 12]]
)


@dataclass(frozen=True)
class FlowEstimatorConfig:
    pyramid_levels: int = 4
    scale_factor: float = 0.5
    iterations_per_level: int = 50
    smoothness_weight: float = 0.1
    warp_steps_per_level: int = 2

    def __post_init__(self):
        if self.pyramid_levels < 1:
            raise InvalidDimensions("pyramid_levels must be >= 1")
        if not 0.0 < self.scale_factor < 1.0:
            raise InvalidDimensions("scale_factor must be in (0, 1)")
        if self.smoothness_weight <= 0:
            raise InvalidDimensions("smoothness_weight must be > 0")


def _to_gray(image: Image) -> np.ndarray:
    return image.pixels @ _LUMA


def _pyramid(gray: np.ndarray, levels: int, scale: float) -> list:
    pyr = [cv2.GaussianBlur(gray, (0, 0), 1.0)]
    for _ in range(1, levels):
        prev = pyr[-1]
        h = max(4, int(round(prev.shape[0] * scale)))
        w = max(4, int(round(prev.shape[1] * scale)))
        if (h, w) == prev.shape:
            break
        down = cv2.resize(cv2.GaussianBlur(prev, (0, 0), 1.0), (w, h), interpolation=cv2.INTER_AREA)
        pyr.append(down)
    return pyr


def _warp_backward(img: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    h, w = img.shape
    xs, ys = np.meshgrid(np.arange(w, dtype=np.float32), np.arange(h, dtype=np.float32))
    return cv2.remap(
        img,
        (xs + u).astype(np.float32),
        (ys + v).astype(np.float32),
        cv2.INTER_LINEAR,
        borderMode=cv2.BORDER_REPLICATE,
    )


def _gradients(a: np.ndarray, b: np.ndarray):
    # replicate-padded central differences, averaged over both frames
    kx = np.array([[-0.5, 0.0, 0.5]])
    mean = 0.5 * (a + b)
    ix = cv2.filter2D(mean, -1, kx, borderType=cv2.BORDER_REPLICATE)
    iy = cv2.filter2D(mean, -1, kx.T, borderType=cv2.BORDER_REPLICATE)
    return ix, iy, b - a


def _hs_increment(a, b_warped, iterations, alpha):
    ix, iy, it = _gradients(a, b_warped)
    denom = alpha**2 + ix**2 + iy**2
    du = np.zeros_like(a)
    dv = np.zeros_like(a)
    for _ in range(iterations):
        du_bar = cv2.filter2D(du, -1, _AVG_KERNEL, borderType=cv2.BORDER_REPLICATE)
        dv_bar = cv2.filter2D(dv, -1, _AVG_KERNEL, borderType=cv2.BORDER_REPLICATE)
        common = (ix * du_bar + iy * dv_bar + it) / denom
        du = du_bar - ix * common
        dv = dv_bar - iy * common
    return du, dv


def estimate_flow(a: Image, b: Image, config: FlowEstimatorConfig | None = None) -> FlowField:
    """Forward flow a -> b on a's pixel grid."""
    if (a.height, a.width) != (b.height, b.width):
        raise DimensionMismatch(
            f"image dimensions differ: {(a.height, a.width)} vs {(b.height, b.width)}"
        )
    cfg = config or FlowEstimatorConfig()
    pyr_a = _pyramid(_to_gray(a), cfg.pyramid_levels, cfg.scale_factor)
    pyr_b = _pyramid(_to_gray(b), cfg.pyramid_levels, cfg.scale_factor)

    u = np.zeros_like(pyr_a[-1])
    v = np.zeros_like(pyr_a[-1])
    for level in range(len(pyr_a) - 1, -1, -1):
        ga, gb = pyr_a[level], pyr_b[level]
        if u.shape != ga.shape:
            ratio_x = ga.shape[1] / u.shape[1]
            ratio_y = ga.shape[0] / u.shape[0]
            u = cv2.resize(u, (ga.shape[1], ga.shape[0]), interpolation=cv2.INTER_LINEAR) * ratio_x
            v = cv2.resize(v, (ga.shape[1], ga.shape[0]), interpolation=cv2.INTER_LINEAR) * ratio_y
        for _ in range(cfg.warp_steps_per_level):
            gb_w = _warp_backward(gb, u, v)
            du, dv = _hs_increment(ga, gb_w, cfg.iterations_per_level, cfg.smoothness_weight)
            u = u + du
            v = v + dv
    return FlowField(u, v)


# ---------------------------------------------------------------------------
# external estimator adapter (file-exchange protocol)


def estimate_flow_external(
    a: Image,
    b: Image,
    backend_dir,
    timeout: float = 60.0,
    poll_interval: float = 0.05,
    request_id: str | None = None,
) -> FlowField:
    """Write an image pair to the exchange directory, read back a .flo result.

    Layout per request: `<req_id>/a.png`, `<req_id>/b.png`,
    `<req_id>/request.json`, result `<req_id>/flow.flo`, marker `DONE`.
    """
    if (a.height, a.width) != (b.height, b.width):
        raise DimensionMismatch("image dimensions differ")
    root = Path(backend_dir)
    if not root.is_dir():
        raise BackendTimeout(f"backend directory {root} does not exist")
    req = root / (request_id or f"flow_{int(time.time() * 1e6):x}")
    req.mkdir(parents=True, exist_ok=True)
    save_image(a, req / "a.png")
    save_image(b, req / "b.png")
    # write-then-rename so a polling backend never sees a partial descriptor
    tmp = req / "request.json.tmp"
    tmp.write_text(json.dumps({"height": a.height, "width": a.width}, indent=2))
    os.replace(tmp, req / "request.json")

    deadline = time.monotonic() + timeout
    while not (req / "DONE").exists():
        if time.monotonic() > deadline:
            raise BackendTimeout(f"no result in {timeout}s for {req}")
        time.sleep(poll_interval)
    flow = read_flo(req / "flow.flo")
    if (flow.height, flow.width) != (a.height, a.width):
        raise BadResult(
            f"backend returned {flow.height}x{flow.width}, expected {a.height}x{a.width}"
        )
    return flow
