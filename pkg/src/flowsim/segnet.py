"""Two-stream encoder-fusion-decoder network for primary-object saliency.

Separate encoders embed the RGB image and the flow input at strides
4/8/16/32; per level the two feature maps are combined and gated by channel
attention followed by spatial attention (CBAM-style), then decoded with
progressive upsampling and skip connections into a full-resolution
probability map.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import InvalidDimensions, ShapeMismatch
from .flow_core import FlowField, colorize
from .media_io import Image


@dataclass(frozen=True)
class NetworkConfig:
    encoder_widths: tuple = (32, 64, 128, 256)  # channels at strides 4/8/16/32
    flow_input_mode: str = "colorized-3ch"  # or "raw-2ch"
    fusion_combine: str = "add"  # or "concat"
    decoder_widths: tuple = (128, 64, 32, 16)
    input_size: tuple = (128, 128)

    def __post_init__(self):
        if len(self.encoder_widths) != 4:
            raise InvalidDimensions("encoder needs exactly 4 stages")
        if list(self.encoder_widths) != sorted(self.encoder_widths) or len(
            set(self.encoder_widths)
        ) != 4:
            raise InvalidDimensions("encoder widths must be strictly increasing")
        if self.flow_input_mode not in ("colorized-3ch", "raw-2ch"):
            raise InvalidDimensions(f"bad flow_input_mode {self.flow_input_mode!r}")
        if self.fusion_combine not in ("add", "concat"):
            raise InvalidDimensions(f"bad fusion_combine {self.fusion_combine!r}")


@dataclass(frozen=True)
class Prediction:
    logits: np.ndarray
    probability: np.ndarray

    def __post_init__(self):
        if self.logits.shape != self.probability.shape:
            raise ShapeMismatch("logits/probability shapes differ")


class _EncoderStage(nn.Module):
    def __init__(self, c_in, c_out, stride):
        super().__init__()
        self.down = nn.Conv2d(c_in, c_out, 3, stride=stride, padding=1)
        self.conv = nn.Conv2d(c_out, c_out, 3, padding=1)

    def forward(self, x):
        x = F.relu(self.down(x))
        return F.relu(self.conv(x))


class _Encoder(nn.Module):
    """Hierarchical convolutional encoder, features at strides 4/8/16/32."""

    def __init__(self, c_in, widths):
        super().__init__()
        self.stem = nn.Conv2d(c_in, widths[0], 3, stride=2, padding=1)
        strides = (2, 2, 2, 2)
        chans = (widths[0],) + tuple(widths[:-1])
        self.stages = nn.ModuleList(
            _EncoderStage(ci, co, s) for ci, co, s in zip(chans, widths, strides)
        )

    def forward(self, x):
        x = F.relu(self.stem(x))
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats


class ChannelAttention(nn.Module):
    def __init__(self, channels, reduction=8):
        super().__init__()
        hidden = max(channels // reduction, 4)
        self.mlp = nn.Sequential(
            nn.Conv2d(channels, hidden, 1, bias=False),
            nn.ReLU(),
            nn.Conv2d(hidden, channels, 1, bias=False),
        )

    def forward(self, x):
        avg = self.mlp(F.adaptive_avg_pool2d(x, 1))
        mx = self.mlp(F.adaptive_max_pool2d(x, 1))
        return torch.sigmoid(avg + mx)


class SpatialAttention(nn.Module):
    def __init__(self, kernel=7):
        super().__init__()
        self.conv = nn.Conv2d(2, 1, kernel, padding=kernel // 2, bias=False)

    def forward(self, x):
        avg = x.mean(dim=1, keepdim=True)
        mx = x.max(dim=1, keepdim=True).values
        return torch.sigmoid(self.conv(torch.cat([avg, mx], dim=1)))


class FusionBlock(nn.Module):
    """Combine appearance and motion features, then gate with CBAM attention.

    `attention_enabled = False` forces both attention maps to 1, reducing
    the block to plain feature combination (addition in `add` mode).
    """

    def __init__(self, channels, combine="add"):
        super().__init__()
        self.combine = combine
        if combine == "concat":
            self.proj = nn.Conv2d(2 * channels, channels, 1)
        self.ca = ChannelAttention(channels)
        self.sa = SpatialAttention()
        self.attention_enabled = True

    def forward(self, appearance, motion):
        if self.combine == "add":
            z = appearance + motion
        else:
            z = self.proj(torch.cat([appearance, motion], dim=1))
        if self.attention_enabled:
            z = z * self.ca(z)
            z = z * self.sa(z)
        return z


class _DecoderStage(nn.Module):
    def __init__(self, c_in, c_skip, c_out):
        super().__init__()
        self.conv1 = nn.Conv2d(c_in + c_skip, c_out, 3, padding=1)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)

    def forward(self, x, skip=None):
        x = F.interpolate(x, scale_factor=2, mode="nearest")
        if skip is not None:
            x = torch.cat([x, skip], dim=1)
        x = F.relu(self.conv1(x))
        return F.relu(self.conv2(x))


class TwoStreamSegNet(nn.Module):
    def __init__(self, config: NetworkConfig):
        super().__init__()
        self.config = config
        ew = config.encoder_widths
        dw = config.decoder_widths
        flow_ch = 3 if config.flow_input_mode == "colorized-3ch" else 2
        self.appearance = _Encoder(3, ew)
        self.motion = _Encoder(flow_ch, ew)
        self.fusions = nn.ModuleList(
            FusionBlock(c, combine=config.fusion_combine) for c in ew
        )
        # decode from stride 32 back to stride 4 with skips, then to full res
        self.dec3 = _DecoderStage(ew[3], ew[2], dw[0])  # 32 -> 16
        self.dec2 = _DecoderStage(dw[0], ew[1], dw[1])  # 16 -> 8
        self.dec1 = _DecoderStage(dw[1], ew[0], dw[2])  # 8 -> 4
        self.dec0 = _DecoderStage(dw[2], 0, dw[3])  # 4 -> 2
        self.dec_final = _DecoderStage(dw[3], 0, dw[3])  # 2 -> 1
        self.head = nn.Conv2d(dw[3], 1, 1)

    def set_attention_enabled(self, enabled: bool):
        for fb in self.fusions:
            fb.attention_enabled = enabled

    def forward(self, image, flow):
        if image.shape[-2:] != flow.shape[-2:]:
            raise ShapeMismatch("image and flow spatial sizes differ")
        a_feats = self.appearance(image)
        m_feats = self.motion(flow)
        fused = [fb(a, m) for fb, a, m in zip(self.fusions, a_feats, m_feats)]
        x = self.dec3(fused[3], fused[2])
        x = self.dec2(x, fused[1])
        x = self.dec1(x, fused[0])
        x = self.dec0(x)
        x = self.dec_final(x)
        return self.head(x)


def flow_to_input(flow: FlowField, mode: str, max_magnitude: float | None = None) -> np.ndarray:
    """Encode a FlowField as the motion-stream input (CHW float array)."""
    if mode == "colorized-3ch":
        rgb = colorize(flow, max_magnitude=max_magnitude).pixels
        return np.moveaxis(rgb, -1, 0)
    return np.stack([flow.u, flow.v], axis=0)


def forward(image: Image, flow: FlowField, config: NetworkConfig, model: TwoStreamSegNet) -> Prediction:
    """Single-sample inference returning logits and probability maps."""
    if (image.height, image.width) != (flow.height, flow.width):
        raise ShapeMismatch("image and flow dimensions differ")
    img = torch.from_numpy(np.moveaxis(image.pixels, -1, 0)[None]).float()
    flo = torch.from_numpy(flow_to_input(flow, config.flow_input_mode)[None]).float()
    model.eval()
    with torch.no_grad():
        logits = model(img, flo)[0, 0].numpy().astype(np.float64)
    prob = 1.0 / (1.0 + np.exp(-logits))
    return Prediction(logits=logits, probability=prob)


def count_parameters(config: NetworkConfig) -> int:
    model = TwoStreamSegNet(config)
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def save_checkpoint(model: TwoStreamSegNet, path) -> None:
    """Self-describing container: config snapshot plus named tensors."""
    payload = {
        "config": {
            "encoder_widths": list(model.config.encoder_widths),
            "flow_input_mode": model.config.flow_input_mode,
            "fusion_combine": model.config.fusion_combine,
            "decoder_widths": list(model.config.decoder_widths),
            "input_size": list(model.config.input_size),
        },
        "state_dict": model.state_dict(),
    }
    torch.save(payload, path)


def load_checkpoint(path) -> TwoStreamSegNet:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    cfg = payload["config"]
    config = NetworkConfig(
        encoder_widths=tuple(cfg["encoder_widths"]),
        flow_input_mode=cfg["flow_input_mode"],
        fusion_combine=cfg["fusion_combine"],
        decoder_widths=tuple(cfg["decoder_widths"]),
        input_size=tuple(cfg["input_size"]),
    )
    model = TwoStreamSegNet(config)
    model.load_state_dict(payload["state_dict"])
    return model
