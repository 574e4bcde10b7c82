"""Supervised training loop: cross-entropy loss, Adam, and mixture sampling
over named data sources (expectation semantics, independent categorical
draws per batch element)."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import EmptySource, ShapeMismatch
from .flow_core import FlowField, resize_flow
from .media_io import SaliencyMap, resize, resize_mask
from .pair_factory import load_pair
from .segnet import (
    NetworkConfig,
    Prediction,
    TwoStreamSegNet,
    flow_to_input,
    save_checkpoint,
)

log = logging.getLogger(__name__)

EPS = 1e-7


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-5
    batch_size: int = 16
    input_size: tuple = (512, 512)
    max_steps: int = 1000
    mixture: dict = field(default_factory=dict)  # source-name -> weight
    seed: int = 0
    checkpoint_every: int = 1000
    hflip_augment: bool = True

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.mixture and sum(self.mixture.values()) <= 0:
            raise ValueError("mixture weights must sum to > 0")


class MixtureSampler:
    """Draws each batch element by first picking a named source with
    probability proportional to its weight, then a uniform entry from it."""

    def __init__(self, sources: dict, weights: dict, seed: int = 0):
        names = [n for n in sources if weights.get(n, 0.0) > 0.0]
        if not names:
            raise EmptySource("no source with positive weight")
        for n in names:
            if not sources[n]:
                raise EmptySource(f"source {n!r} is empty")
        total = sum(weights[n] for n in names)
        self.names = names
        self.sources = {n: list(sources[n]) for n in names}
        self.weights = np.array([weights[n] / total for n in names])
        self.rng = np.random.default_rng(seed)

    def sample_source(self) -> str:
        return self.names[int(self.rng.choice(len(self.names), p=self.weights))]


def sample_batch(sampler: MixtureSampler, batch_size: int) -> list:
    """Independent draws; returns (source_name, entry) tuples."""
    batch = []
    for _ in range(batch_size):
        name = sampler.sample_source()
        entries = sampler.sources[name]
        batch.append((name, entries[int(sampler.rng.integers(len(entries)))]))
    return batch


def loss(pred: Prediction, mask: SaliencyMap) -> float:
    """Mean per-pixel binary cross-entropy, probability clamped to [eps, 1-eps]."""
    if pred.probability.shape != mask.values.shape:
        raise ShapeMismatch(
            f"prediction {pred.probability.shape} vs mask {mask.values.shape}"
        )
    p = np.clip(pred.probability, EPS, 1.0 - EPS)
    m = mask.values
    return float(-(m * np.log(p) + (1.0 - m) * np.log(1.0 - p)).mean())


def bce_loss_torch(logits: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    p = torch.clamp(torch.sigmoid(logits), EPS, 1.0 - EPS)
    return -(target * torch.log(p) + (1.0 - target) * torch.log(1.0 - p)).mean()


def _prepare_sample(pair, input_size, flow_mode, flip: bool):
    h, w = input_size
    image = resize(pair.image, h, w, mode="bilinear")
    mask = resize_mask(pair.mask, h, w, mode="nearest")
    flow = resize_flow(pair.flow, h, w)
    if flip:
        px = image.pixels[:, ::-1].copy()
        mv = mask.values[:, ::-1].copy()
        # horizontal displacement changes sign under a horizontal flip
        flow = FlowField(-flow.u[:, ::-1].copy(), flow.v[:, ::-1].copy())
        image_arr, mask_arr = px, mv
    else:
        image_arr, mask_arr = image.pixels, mask.values
        flow = flow
    img_t = np.moveaxis(image_arr, -1, 0)
    flo_t = flow_to_input(flow, flow_mode)
    return img_t, flo_t, mask_arr


def train(
    model_config: NetworkConfig,
    train_config: TrainConfig,
    sources: dict,
    out_dir=None,
    model: TwoStreamSegNet | None = None,
):
    """Run the training loop over manifest-backed sources.

    `sources` maps source-name -> (dataset_root, entry list). Returns the
    trained model and the training log (one record per step with loss, lr
    and the batch's source composition).
    """
    torch.manual_seed(train_config.seed)
    if model is None:
        model = TwoStreamSegNet(model_config)
    model.train()
    optimizer = torch.optim.Adam(
        model.parameters(), lr=train_config.learning_rate, betas=(0.9, 0.999)
    )
    sampler = MixtureSampler(
        sources={n: entries for n, (_, entries) in sources.items()},
        weights=train_config.mixture or {n: 1.0 for n in sources},
        seed=train_config.seed,
    )
    roots = {n: root for n, (root, _) in sources.items()}
    aug_rng = np.random.default_rng(train_config.seed + 1)

    records = []
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    for step in range(1, train_config.max_steps + 1):
        batch = sample_batch(sampler, train_config.batch_size)
        imgs, flos, masks = [], [], []
        counts: dict = {}
        for name, entry in batch:
            counts[name] = counts.get(name, 0) + 1
            pair = load_pair(roots[name], entry)
            flip = train_config.hflip_augment and bool(aug_rng.integers(2))
            img_t, flo_t, mask_arr = _prepare_sample(
                pair, train_config.input_size, model_config.flow_input_mode, flip
            )
            imgs.append(img_t)
            flos.append(flo_t)
            masks.append(mask_arr)
        img_b = torch.from_numpy(np.stack(imgs)).float()
        flo_b = torch.from_numpy(np.stack(flos)).float()
        mask_b = torch.from_numpy(np.stack(masks)).float()

        optimizer.zero_grad()
        logits = model(img_b, flo_b)[:, 0]
        step_loss = bce_loss_torch(logits, mask_b)
        if train_config.learning_rate > 0:
            step_loss.backward()
            optimizer.step()
        record = {
            "step": step,
            "loss": float(step_loss.item()),
            "lr": train_config.learning_rate,
            "source_counts": counts,
        }
        records.append(record)
        if out_dir is not None:
            with open(out_dir / "training_log.jsonl", "a") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
            if step % train_config.checkpoint_every == 0:
                save_checkpoint(model, out_dir / f"checkpoint_{step:06d}.pt")
    if out_dir is not None:
        save_checkpoint(model, out_dir / "checkpoint_final.pt")
    return model, records
