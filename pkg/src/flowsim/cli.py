"""Command-line entry point: simulate pairs, ingest real clips, train,
evaluate, and visualize flows.

Config precedence is flags > config file > defaults; the effective config
is embedded in every produced artifact so runs are reproducible from the
artifact alone.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .errors import FlowsimError, IncompleteSequence
from .flow_core import colorize, flow_stats, read_flo, resize_flow
from .flow_estimation import FlowEstimatorConfig, estimate_flow, estimate_flow_external
from .generators import (
    GenerationConfig,
    WarpParams,
    generate_external,
    generate_identity,
    generate_spatial_warp,
    generate_synthetic_scene,
    sample_warp_params,
)
from .media_io import (
    SaliencyMap,
    load_image,
    load_mask,
    resize,
    resize_mask,
    save_image,
    save_mask,
)
from .metrics import (
    MetricReport,
    evaluate_pair,
    format_report_table,
)
from .pair_factory import (
    build_final_pairs,
    ingest_real_video,
    load_manifest,
    materialize_dataset,
)
from .segnet import NetworkConfig, forward, load_checkpoint
from .training import TrainConfig, train

log = logging.getLogger("flowsim")

IMAGE_EXTS = (".png", ".jpg", ".jpeg")


def _load_config_file(path):
    if path is None:
        return {}
    with open(path) as fh:
        return yaml.safe_load(fh) or {}


def _matched_stems(images_dir: Path, masks_dir: Path) -> list:
    stems = []
    for p in sorted(images_dir.iterdir()):
        if p.suffix.lower() not in IMAGE_EXTS:
            continue
        mask = next(
            (masks_dir / (p.stem + e) for e in IMAGE_EXTS if (masks_dir / (p.stem + e)).is_file()),
            None,
        )
        if mask is not None:
            stems.append((p.stem, p, mask))
    return stems


def _make_estimator(args):
    if args.estimator == "builtin":
        cfg = FlowEstimatorConfig()
        return lambda a, b: estimate_flow(a, b, cfg), "builtin-hs"
    backend = Path(args.flow_backend_dir)
    return (
        lambda a, b: estimate_flow_external(a, b, backend, timeout=args.backend_timeout),
        f"external:{backend}",
    )


def _simulate_one(stem, image_path, mask_path, args, seed):
    """Generate frames, estimate flows and build pairs for one source."""
    rng = np.random.default_rng(seed)
    source = load_image(image_path)
    mask = load_mask(mask_path)
    flows = None
    if args.generator == "identity":
        seq = generate_identity(source, args.frames)
    elif args.generator == "warp":
        seq, flows = generate_spatial_warp(source, sample_warp_params(rng), args.frames)
    elif args.generator == "synthetic":
        fg = (float(rng.uniform(1.5, 4.0)) * rng.choice((-1, 1)), float(rng.uniform(-1.5, 1.5)))
        bg = (float(rng.uniform(-0.5, 0.5)), float(rng.uniform(-0.5, 0.5)))
        seq, flows = generate_synthetic_scene(mask, source, fg, bg, args.frames)
    else:  # external
        config = GenerationConfig(num_frames=args.frames, seed=seed)
        seq = generate_external(
            source, config, args.backend_dir, timeout=args.backend_timeout
        )
    estimator, backend_id = _make_estimator(args)
    use_analytic = args.flow_source == "analytic" and flows is not None
    pairs, skipped = build_final_pairs(
        source,
        mask,
        seq,
        estimator,
        source_id=stem,
        flow_backend_id=backend_id,
        precomputed_flows=flows if use_analytic else None,
    )
    return pairs, skipped


def cmd_simulate(args) -> int:
    images_dir, masks_dir = Path(args.images_dir), Path(args.masks_dir)
    out_dir = Path(args.out_dir)
    if not images_dir.is_dir() or not masks_dir.is_dir():
        print(f"error: input directories not found: {images_dir}, {masks_dir}", file=sys.stderr)
        return 1
    stems = _matched_stems(images_dir, masks_dir)
    if not stems:
        print("error: no image/mask pairs with matching stems", file=sys.stderr)
        return 1
    if args.generator == "external" and args.backend_dir is None:
        print("error: --generator external requires --backend-dir", file=sys.stderr)
        return 1
    if args.estimator == "external" and args.flow_backend_dir is None:
        print("error: --estimator external requires --flow-backend-dir", file=sys.stderr)
        return 1

    seeds = [args.seed + i for i in range(len(stems))]
    results = [None] * len(stems)

    def job(i):
        stem, image_path, mask_path = stems[i]
        try:
            return _simulate_one(stem, image_path, mask_path, args, seeds[i])
        except IncompleteSequence as exc:
            log.warning("incomplete sequence for %s: %s", stem, exc)
            return [], args.frames
        except FlowsimError as exc:
            log.warning("source %s failed: %s", stem, exc)
            return [], args.frames

    if args.workers > 1:
        with ThreadPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(job, range(len(stems))))
    else:
        results = [job(i) for i in range(len(stems))]

    all_pairs = []
    report_sources = {}
    for (stem, _, _), (pairs, skipped) in zip(stems, results):
        all_pairs.extend(pairs)
        report_sources[stem] = {"pairs": len(pairs), "skipped": skipped}
    if not all_pairs:
        print("error: no pairs produced", file=sys.stderr)
        return 1

    effective = {
        "command": "simulate",
        "generator": args.generator,
        "estimator": args.estimator,
        "flow_source": args.flow_source,
        "frames": args.frames,
        "seed": args.seed,
        "version": __version__,
    }
    if args.generator == "external":
        cfg = GenerationConfig(num_frames=args.frames, seed=args.seed)
        effective["generation_config"] = {
            "T": cfg.num_frames,
            "resolution": list(cfg.resolution),
            "sampler_steps": cfg.sampler_steps,
            "guidance_first": cfg.guidance_first,
            "guidance_last": cfg.guidance_last,
            "frame_rate": cfg.frame_rate,
            "decode_chunk": cfg.decode_chunk,
        }
    materialize_dataset(all_pairs, out_dir, created_with=effective)

    stats = [flow_stats(p.flow) for p in all_pairs]
    report = {
        "config": effective,
        "sources": report_sources,
        "pairs_total": len(all_pairs),
        "skipped_total": sum(s["skipped"] for s in report_sources.values()),
        "flow_stats": {
            "mean_mag": float(np.mean([s["mean_mag"] for s in stats])),
            "median_mag": float(np.median([s["median_mag"] for s in stats])),
            "max_mag": float(np.max([s["max_mag"] for s in stats])),
        },
    }
    (out_dir / "build_report.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    print(f"wrote {len(all_pairs)} pairs to {out_dir} ({report['skipped_total']} frames skipped)")
    return 0


def cmd_build_dataset(args) -> int:
    frames_root, masks_root = Path(args.frames_dir), Path(args.masks_dir)
    if not frames_root.is_dir() or not masks_root.is_dir():
        print("error: input directories not found", file=sys.stderr)
        return 1
    estimator_cfg = FlowEstimatorConfig()
    estimator = lambda a, b: estimate_flow(a, b, estimator_cfg)

    clip_dirs = sorted(p for p in frames_root.iterdir() if p.is_dir())
    if not clip_dirs:
        clip_dirs = [frames_root]
        mask_dirs = [masks_root]
    else:
        mask_dirs = [masks_root / c.name for c in clip_dirs]

    pairs = []
    report = {}
    for clip, mdir in zip(clip_dirs, mask_dirs):
        try:
            clip_pairs = ingest_real_video(clip, mdir, estimator, args.name)
        except FlowsimError as exc:
            log.warning("clip %s failed: %s", clip.name, exc)
            report[clip.name] = {"pairs": 0, "error": str(exc)}
            continue
        pairs.extend(clip_pairs)
        report[clip.name] = {"pairs": len(clip_pairs)}
    if not pairs:
        print("error: no pairs ingested", file=sys.stderr)
        return 1
    out_dir = Path(args.out_dir)
    effective = {"command": "build-dataset", "name": args.name, "version": __version__}
    materialize_dataset(pairs, out_dir, created_with=effective)
    (out_dir / "build_report.json").write_text(
        json.dumps({"config": effective, "clips": report}, indent=2, sort_keys=True)
    )
    print(f"ingested {len(pairs)} pairs from {len(clip_dirs)} clip(s) into {out_dir}")
    return 0


def _parse_named(values, cast=str) -> dict:
    out = {}
    for item in values:
        if "=" not in item:
            raise ValueError(f"expected name=value, got {item!r}")
        name, value = item.split("=", 1)
        out[name] = cast(value)
    return out


def cmd_train(args) -> int:
    try:
        manifest_paths = _parse_named(args.manifests)
        mixture = _parse_named(args.mixture, float) if args.mixture else None
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    file_cfg = _load_config_file(args.config)
    net_cfg = file_cfg.get("network", {})
    trn_cfg = file_cfg.get("training", {})

    sources = {}
    for name, root in manifest_paths.items():
        try:
            manifest = load_manifest(root)
        except FlowsimError as exc:
            print(f"error: manifest {name}={root}: {exc}", file=sys.stderr)
            return 1
        sources[name] = (root, manifest.entries)
    if mixture:
        unknown = set(mixture) - set(sources)
        if unknown:
            print(f"error: mixture names {sorted(unknown)} have no manifest", file=sys.stderr)
            return 1

    model_config = NetworkConfig(
        encoder_widths=tuple(net_cfg.get("encoder_widths", (32, 64, 128, 256))),
        flow_input_mode=net_cfg.get("flow_input_mode", "colorized-3ch"),
        fusion_combine=net_cfg.get("fusion_combine", "add"),
        decoder_widths=tuple(net_cfg.get("decoder_widths", (128, 64, 32, 16))),
        input_size=tuple(trn_cfg.get("input_size", (128, 128))),
    )
    train_config = TrainConfig(
        learning_rate=args.learning_rate
        if args.learning_rate is not None
        else trn_cfg.get("learning_rate", 1e-5),
        batch_size=args.batch_size
        if args.batch_size is not None
        else trn_cfg.get("batch_size", 16),
        input_size=tuple(trn_cfg.get("input_size", (128, 128))),
        max_steps=args.max_steps
        if args.max_steps is not None
        else trn_cfg.get("max_steps", 1000),
        mixture=mixture or {n: 1.0 for n in sources},
        seed=args.seed,
        checkpoint_every=trn_cfg.get("checkpoint_every", 1000),
        hflip_augment=trn_cfg.get("hflip_augment", True),
    )

    out_dir = Path(args.out_dir)
    try:
        _, records = train(model_config, train_config, sources, out_dir=out_dir)
    except FlowsimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    totals: dict = {}
    for rec in records:
        for name, n in rec["source_counts"].items():
            totals[name] = totals.get(name, 0) + n
    grand = sum(totals.values())
    composition = {n: totals.get(n, 0) / grand for n in sources}
    weight_sum = sum(train_config.mixture.values())
    expected = {n: train_config.mixture.get(n, 0.0) / weight_sum for n in sources}
    summary = {
        "steps": len(records),
        "final_loss": records[-1]["loss"],
        "composition": composition,
        "expected_composition": expected,
    }
    with open(out_dir / "training_log.jsonl", "a") as fh:
        fh.write(json.dumps({"summary": summary}, sort_keys=True) + "\n")
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_eval(args) -> int:
    frames_dir, flows_dir, gt_dir = Path(args.frames_dir), Path(args.flows_dir), Path(args.gt_dir)
    for d in (frames_dir, gt_dir):
        if not d.is_dir():
            print(f"error: missing directory {d}", file=sys.stderr)
            return 1
    if not args.oracle_gt:
        if not Path(args.checkpoint).is_file():
            print(f"error: missing checkpoint {args.checkpoint}", file=sys.stderr)
            return 1
        model = load_checkpoint(args.checkpoint)
        ih, iw = model.config.input_size

    gt_paths = sorted(p for p in gt_dir.iterdir() if p.suffix.lower() in IMAGE_EXTS)
    if not gt_paths:
        print(f"error: no ground truth in {gt_dir}", file=sys.stderr)
        return 1

    per_frame, missing = [], []
    for gt_path in gt_paths:
        gt = load_mask(gt_path)
        if args.oracle_gt:
            pred = SaliencyMap(gt.values.copy())
        else:
            frame_path = next(
                (frames_dir / (gt_path.stem + e) for e in IMAGE_EXTS
                 if (frames_dir / (gt_path.stem + e)).is_file()),
                None,
            )
            flow_path = flows_dir / (gt_path.stem + ".flo")
            if frame_path is None or not flow_path.is_file():
                log.warning("missing frame or flow for %s, scoring worst-case", gt_path.name)
                missing.append(gt_path.name)
                per_frame.append(
                    {"name": gt_path.name, "s": 0.0, "f_max": 0.0, "f_mean": 0.0, "mae": 1.0}
                )
                continue
            image = load_image(frame_path)
            flow = read_flo(flow_path)
            net_in = resize(image, ih, iw)
            net_flow = resize_flow(flow, ih, iw)
            result = forward(net_in, net_flow, model.config, model)
            pred = resize_mask(
                SaliencyMap(result.probability), gt.height, gt.width, mode="bilinear"
            )
        scores = evaluate_pair(pred, gt)
        scores["name"] = gt_path.name
        per_frame.append(scores)

    report = MetricReport(
        s_measure=float(np.mean([r["s"] for r in per_frame])),
        f_measure=float(np.mean([r["f_max"] for r in per_frame])),
        f_measure_mean=float(np.mean([r["f_mean"] for r in per_frame])),
        mae=float(np.mean([r["mae"] for r in per_frame])),
        per_frame=per_frame,
        dataset=args.dataset,
        missing=missing,
    )
    table = format_report_table([report])
    print(table)
    if args.report:
        out = Path(args.report)
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w") as fh:
            for r in per_frame:
                fh.write(json.dumps(r, sort_keys=True) + "\n")
            fh.write(
                json.dumps(
                    {
                        "dataset": report.dataset,
                        "s_measure": report.s_measure,
                        "f_measure": report.f_measure,
                        "f_measure_mean": report.f_measure_mean,
                        "mae": report.mae,
                        "missing": missing,
                    },
                    sort_keys=True,
                )
                + "\n"
            )
        (out.with_suffix(".txt")).write_text(table + "\n")
    return 0


def cmd_viz_flow(args) -> int:
    try:
        flow = read_flo(args.flo_path)
    except FlowsimError as exc:
        print(f"error reading {args.flo_path}: {exc}", file=sys.stderr)
        return 1
    image = colorize(flow, max_magnitude=args.max_magnitude)
    save_image(image, args.out_png)
    print(f"wrote {args.out_png}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flowsim")
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate image-flow-mask pairs from static images")
    p.add_argument("images_dir")
    p.add_argument("masks_dir")
    p.add_argument("out_dir")
    p.add_argument("--generator", choices=("identity", "warp", "synthetic", "external"),
                   default="synthetic")
    p.add_argument("--estimator", choices=("builtin", "external"), default="builtin")
    p.add_argument("--flow-source", choices=("estimator", "analytic"), default="estimator")
    p.add_argument("--frames", type=int, default=14)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--backend-dir", default=None, help="exchange dir for the external generator")
    p.add_argument("--flow-backend-dir", default=None, help="exchange dir for the external estimator")
    p.add_argument("--backend-timeout", type=float, default=60.0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("build-dataset", help="ingest an annotated real video clip")
    p.add_argument("frames_dir")
    p.add_argument("masks_dir")
    p.add_argument("out_dir")
    p.add_argument("--name", required=True, help="dataset name recorded as provenance")
    p.set_defaults(func=cmd_build_dataset)

    p = sub.add_parser("train", help="train the two-stream network on named manifests")
    p.add_argument("manifests", nargs="+", help="name=dataset-root pairs")
    p.add_argument("--mixture", nargs="*", default=None, help="name=weight pairs")
    p.add_argument("--config", default=None, help="YAML config file")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="run inference and score against ground truth")
    p.add_argument("checkpoint")
    p.add_argument("frames_dir")
    p.add_argument("flows_dir")
    p.add_argument("gt_dir")
    p.add_argument("--report", default=None)
    p.add_argument("--dataset", default="")
    p.add_argument("--oracle-gt", action="store_true",
                   help="score ground truth against itself (checkpoint bypass)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("viz-flow", help="colorize a .flo file to PNG")
    p.add_argument("flo_path")
    p.add_argument("out_png")
    p.add_argument("--max-magnitude", type=float, default=None)
    p.set_defaults(func=cmd_viz_flow)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except FlowsimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
