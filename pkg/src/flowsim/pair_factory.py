"""Build training pairs: source image -> frame sequence -> image-flow pairs,
persisted with masks and provenance into a dataset layout plus manifest.

From N source images and T generated frames per image, the factory emits
N*T aligned (image, flow, mask) records.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path


from .errors import (
    DuplicatePairId,
    EmptyDirectory,
    FlowsimError,
    InvalidDimensions,
    IoFailure,
    MissingMask,
)
from .flow_core import FlowField, read_flo, write_flo
from .generators import FrameSequence
from .media_io import Image, SaliencyMap, load_image, load_mask, save_image, save_mask

log = logging.getLogger(__name__)

SIMULATED = "simulated"


@dataclass(frozen=True)
class TrainingPair:
    """One aligned (image, flow, mask) training record."""

    image: Image
    flow: FlowField
    mask: SaliencyMap
    source_id: str
    frame_index: int
    provenance: str  # "simulated" or "real:<dataset-name>"
    generator_id: str = ""
    flow_backend_id: str = ""

    def __post_init__(self):
        dims = (self.image.height, self.image.width)
        if (self.flow.height, self.flow.width) != dims or (
            self.mask.height,
            self.mask.width,
        ) != dims:
            raise InvalidDimensions(
                f"pair {self.pair_id}: image/flow/mask dimensions disagree"
            )
        if self.provenance != SIMULATED and not self.provenance.startswith("real:"):
            raise InvalidDimensions(f"bad provenance {self.provenance!r}")

    @property
    def pair_id(self) -> str:
        return f"{self.source_id}_t{self.frame_index:03d}"


@dataclass
class DatasetManifest:
    entries: list = field(default_factory=list)
    named_sources: dict = field(default_factory=dict)
    created_with: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.entries)


def build_temporary_pairs(source: Image, seq: FrameSequence) -> list:
    """[(I_s, I_1), ..., (I_s, I_T)] — the source paired with every frame."""
    return [(source, frame) for frame in seq.frames]


def build_final_pairs(
    source: Image,
    mask: SaliencyMap,
    seq: FrameSequence,
    estimator,
    source_id: str = "source",
    flow_backend_id: str = "builtin",
    precomputed_flows: list | None = None,
) -> tuple:
    """One TrainingPair per frame, flow = estimator(I_s, I_t).

    A frame whose flow estimation fails is skipped and logged, never
    zero-filled. Returns (pairs, skipped_count). When analytic flows are
    available (warp/synthetic generators) they may be passed in to bypass
    estimation.
    """
    if (mask.height, mask.width) != (source.height, source.width):
        raise InvalidDimensions("mask not aligned with source")
    pairs = []
    skipped = 0
    for t, frame in enumerate(seq.frames, start=1):
        try:
            if precomputed_flows is not None:
                flow = precomputed_flows[t - 1]
            else:
                flow = estimator(source, frame)
        except FlowsimError as exc:
            log.warning("skipping %s frame %d: %s", source_id, t, exc)
            skipped += 1
            continue
        pairs.append(
            TrainingPair(
                image=source,
                flow=flow,
                mask=mask,
                source_id=source_id,
                frame_index=t,
                provenance=SIMULATED,
                generator_id=seq.generator_id,
                flow_backend_id="analytic" if precomputed_flows is not None else flow_backend_id,
            )
        )
    return pairs, skipped


def materialize_dataset(pairs: list, root, created_with: dict | None = None) -> DatasetManifest:
    """Write pairs under root/{images,flows,masks}/ and emit manifest.jsonl.

    Re-running with identical inputs is idempotent: same ids, same bytes.
    """
    root = Path(root)
    seen = set()
    for p in pairs:
        if p.pair_id in seen:
            raise DuplicatePairId(p.pair_id)
        seen.add(p.pair_id)
    try:
        for sub in ("images", "flows", "masks"):
            (root / sub).mkdir(parents=True, exist_ok=True)
        entries = []
        for p in pairs:
            image_path = root / "images" / f"{p.pair_id}.png"
            flow_path = root / "flows" / f"{p.pair_id}.flo"
            mask_path = root / "masks" / f"{p.pair_id}.png"
            save_image(p.image, image_path)
            write_flo(p.flow, flow_path)
            save_mask(p.mask, mask_path)
            entries.append(
                {
                    "pair_id": p.pair_id,
                    "image_path": str(image_path.relative_to(root)),
                    "flow_path": str(flow_path.relative_to(root)),
                    "mask_path": str(mask_path.relative_to(root)),
                    "provenance": p.provenance,
                    "source_id": p.source_id,
                    "t": p.frame_index,
                    "generator_id": p.generator_id,
                    "flow_backend_id": p.flow_backend_id,
                }
            )
        with open(root / "manifest.jsonl", "w") as fh:
            for e in entries:
                fh.write(json.dumps(e, sort_keys=True) + "\n")
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    return DatasetManifest(entries=entries, created_with=created_with or {})


def load_manifest(root) -> DatasetManifest:
    root = Path(root)
    path = root / "manifest.jsonl"
    if not path.is_file():
        raise EmptyDirectory(f"no manifest.jsonl under {root}")
    entries = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                entries.append(json.loads(line))
    for e in entries:
        for key in ("image_path", "flow_path", "mask_path"):
            if not (root / e[key]).is_file():
                raise IoFailure(f"manifest references missing file {e[key]}")
    return DatasetManifest(entries=entries, created_with={"root": str(root)})


def load_pair(root, entry: dict) -> TrainingPair:
    root = Path(root)
    return TrainingPair(
        image=load_image(root / entry["image_path"]),
        flow=read_flo(root / entry["flow_path"]),
        mask=load_mask(root / entry["mask_path"]),
        source_id=entry["source_id"],
        frame_index=entry["t"],
        provenance=entry["provenance"],
        generator_id=entry.get("generator_id", ""),
        flow_backend_id=entry.get("flow_backend_id", ""),
    )


def ingest_real_video(
    frames_dir,
    masks_dir,
    estimator,
    dataset_name: str,
    flow_backend_id: str = "builtin",
) -> list:
    """Turn an annotated clip into pairs with consecutive-frame flows.

    Pair k uses flow(frame_k -> frame_{k+1}); the last frame uses the
    negated backward flow to its predecessor so every annotated frame stays
    usable. Frames without a mask are skipped with a log line.
    """
    frames_dir, masks_dir = Path(frames_dir), Path(masks_dir)
    frame_paths = sorted(
        p for p in frames_dir.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg")
    )
    if not frame_paths:
        raise EmptyDirectory(str(frames_dir))
    frames = [load_image(p) for p in frame_paths]

    pairs = []
    for k, path in enumerate(frame_paths):
        mask_path = None
        for ext in (".png", ".jpg", ".jpeg"):
            cand = masks_dir / (path.stem + ext)
            if cand.is_file():
                mask_path = cand
                break
        if mask_path is None:
            log.warning("no mask for frame %s, skipping", path.name)
            continue
        mask = load_mask(mask_path)
        if k + 1 < len(frames):
            flow = estimator(frames[k], frames[k + 1])
        else:
            back = estimator(frames[k], frames[k - 1])
            flow = FlowField(-back.u, -back.v)
        pairs.append(
            TrainingPair(
                image=frames[k],
                flow=flow,
                mask=mask,
                source_id=f"{dataset_name}_{frames_dir.name}_{path.stem}",
                frame_index=1,
                provenance=f"real:{dataset_name}",
                generator_id="real-video",
                flow_backend_id=flow_backend_id,
            )
        )
    if not pairs:
        raise MissingMask(f"no annotated frames in {frames_dir}")
    return pairs
