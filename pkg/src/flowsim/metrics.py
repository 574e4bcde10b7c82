"""Saliency evaluation: S-measure, F-measure and MAE, plus dataset-level
aggregation and Table-style report rendering.

Internal values stay in [0, 1]; the x100 percentage scaling happens only
when a report is rendered.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyGroundTruth, ShapeMismatch
from .media_io import SaliencyMap, load_mask

# machine epsilon in similarity denominators; a larger constant would break
# the exact-match identity score
EPS = float(np.finfo(np.float64).eps)
BETA2 = 0.3
N_THRESHOLDS = 255


def _check(pred: SaliencyMap, gt: SaliencyMap):
    if pred.values.shape != gt.values.shape:
        raise ShapeMismatch(f"pred {pred.values.shape} vs gt {gt.values.shape}")


def mae(pred: SaliencyMap, gt: SaliencyMap) -> float:
    """Mean absolute per-pixel difference."""
    _check(pred, gt)
    return float(np.abs(pred.values - gt.values).mean())


def _fbeta(precision: float, recall: float) -> float:
    denom = BETA2 * precision + recall
    if denom == 0:
        return 0.0
    return (1.0 + BETA2) * precision * recall / denom


def f_measure(pred: SaliencyMap, gt: SaliencyMap, mode: str = "max") -> float:
    """Precision/recall F with beta^2 = 0.3.

    mode "max": maximum over 255 uniform binarization thresholds in (0, 1).
    mode "mean": mean over the same thresholds.
    mode "fixed:<tau>": single threshold tau.
    """
    _check(pred, gt)
    g = gt.values > 0.5
    if not g.any():
        raise EmptyGroundTruth("F-measure needs nonempty ground-truth foreground")
    if mode.startswith("fixed:"):
        thresholds = [float(mode.split(":", 1)[1])]
    else:
        thresholds = np.linspace(0.0, 1.0, N_THRESHOLDS + 2)[1:-1]
    scores = []
    gp = g.sum()
    for tau in thresholds:
        b = pred.values >= tau
        tp = (b & g).sum()
        pp = b.sum()
        precision = tp / pp if pp > 0 else 0.0
        recall = tp / gp
        scores.append(_fbeta(precision, recall))
    if mode == "mean":
        return float(np.mean(scores))
    return float(np.max(scores))


# ---------------------------------------------------------------------------
# S-measure (structure measure): object-aware + region-aware terms


def _object_score(x: np.ndarray) -> float:
    if x.size == 0:
        return 0.0
    x_mean = x.mean()
    x_std = x.std(ddof=1) if x.size > 1 else 0.0
    return 2.0 * x_mean / (x_mean**2 + 1.0 + x_std + EPS)


def _s_object(pred: np.ndarray, g: np.ndarray) -> float:
    mu = g.mean()
    o_fg = _object_score(pred[g > 0.5])
    o_bg = _object_score((1.0 - pred)[g <= 0.5])
    return mu * o_fg + (1.0 - mu) * o_bg


def _region_ssim(x: np.ndarray, y: np.ndarray) -> float:
    n = x.size
    x_mean, y_mean = x.mean(), y.mean()
    if n > 1:
        sigma_x = ((x - x_mean) ** 2).sum() / (n - 1)
        sigma_y = ((y - y_mean) ** 2).sum() / (n - 1)
        sigma_xy = ((x - x_mean) * (y - y_mean)).sum() / (n - 1)
    else:
        sigma_x = sigma_y = sigma_xy = 0.0
    alpha = 4.0 * x_mean * y_mean * sigma_xy
    beta = (x_mean**2 + y_mean**2) * (sigma_x + sigma_y)
    if alpha != 0.0:
        return alpha / (beta + EPS)
    if beta == 0.0:
        return 1.0
    return 0.0


def _centroid(g: np.ndarray) -> tuple:
    """Block split indices at the foreground centroid.

    The fractional centroid is kept and the split taken at its ceiling, so a
    horizontal flip of both maps mirrors the partition exactly (up to the
    measure-zero case of an integer centroid)."""
    rows, cols = np.nonzero(g > 0.5)
    h, w = g.shape
    cy = int(np.ceil(rows.mean()))
    cx = int(np.ceil(cols.mean()))
    # keep all four blocks nonempty
    cy = min(max(cy, 1), h - 1)
    cx = min(max(cx, 1), w - 1)
    return cy, cx


def _s_region(pred: np.ndarray, g: np.ndarray) -> float:
    cy, cx = _centroid(g)
    h, w = g.shape
    total = h * w
    score = 0.0
    for rs, cs in ((slice(0, cy), slice(0, cx)), (slice(0, cy), slice(cx, w)),
                   (slice(cy, h), slice(0, cx)), (slice(cy, h), slice(cx, w))):
        weight = g[rs, cs].size / total
        score += weight * _region_ssim(pred[rs, cs], g[rs, cs])
    return score


def s_measure(pred: SaliencyMap, gt: SaliencyMap, alpha: float = 0.5) -> float:
    """Structure measure alpha*S_o + (1-alpha)*S_r, clamped to [0, 1].

    Edge rules: all-background gt scores 1 - mean(pred); all-foreground gt
    scores mean(pred).
    """
    _check(pred, gt)
    g = (gt.values > 0.5).astype(np.float64)
    p = pred.values
    y = g.mean()
    if y == 0.0:
        s = 1.0 - p.mean()
    elif y == 1.0:
        s = p.mean()
    else:
        s = alpha * _s_object(p, g) + (1.0 - alpha) * _s_region(p, g)
    return float(min(max(s, 0.0), 1.0))


# ---------------------------------------------------------------------------
# dataset-level evaluation


@dataclass
class MetricReport:
    s_measure: float
    f_measure: float  # max-F, the headline by convention
    f_measure_mean: float
    mae: float
    per_frame: list = field(default_factory=list)
    dataset: str = ""
    missing: list = field(default_factory=list)


def evaluate_pair(pred: SaliencyMap, gt: SaliencyMap) -> dict:
    return {
        "s": s_measure(pred, gt),
        "f_max": f_measure(pred, gt, mode="max"),
        "f_mean": f_measure(pred, gt, mode="mean"),
        "mae": mae(pred, gt),
    }


def evaluate_dataset(pred_dir, gt_dir, dataset: str = "") -> MetricReport:
    """Per-frame metrics averaged uniformly; missing predictions are scored
    worst-case and listed in the report's `missing` field."""
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    gt_paths = sorted(
        p for p in gt_dir.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg")
    )
    if not gt_paths:
        raise EmptyGroundTruth(f"no ground-truth rasters in {gt_dir}")
    per_frame, missing = [], []
    for gt_path in gt_paths:
        gt = load_mask(gt_path)
        pred_path = None
        for ext in (".png", ".jpg", ".jpeg"):
            cand = pred_dir / (gt_path.stem + ext)
            if cand.is_file():
                pred_path = cand
                break
        if pred_path is None:
            missing.append(gt_path.name)
            per_frame.append(
                {"name": gt_path.name, "s": 0.0, "f_max": 0.0, "f_mean": 0.0, "mae": 1.0}
            )
            continue
        pred = load_mask(pred_path, binarize_threshold=None)
        scores = evaluate_pair(pred, gt)
        scores["name"] = gt_path.name
        per_frame.append(scores)
    return MetricReport(
        s_measure=float(np.mean([r["s"] for r in per_frame])),
        f_measure=float(np.mean([r["f_max"] for r in per_frame])),
        f_measure_mean=float(np.mean([r["f_mean"] for r in per_frame])),
        mae=float(np.mean([r["mae"] for r in per_frame])),
        per_frame=per_frame,
        dataset=dataset,
        missing=missing,
    )


def aggregate_scores(per_dataset: list) -> float:
    """Multi-dataset aggregation: unweighted mean of per-dataset means."""
    return float(np.mean(per_dataset))


def aggregate_reports(reports: list) -> dict:
    return {
        "s_measure": aggregate_scores([r.s_measure for r in reports]),
        "f_measure": aggregate_scores([r.f_measure for r in reports]),
        "f_measure_mean": aggregate_scores([r.f_measure_mean for r in reports]),
        "mae": aggregate_scores([r.mae for r in reports]),
    }


def format_report_table(reports: list) -> str:
    """Aligned table, scores x100 with one decimal."""
    rows = list(reports)
    header = f"{'Dataset':<16}{'S':>7}{'F':>7}{'Fmean':>8}{'M':>7}"
    lines = [header, "-" * len(header)]
    for r in rows:
        lines.append(
            f"{r.dataset or '-':<16}"
            f"{100 * r.s_measure:>7.1f}{100 * r.f_measure:>7.1f}"
            f"{100 * r.f_measure_mean:>8.1f}{100 * r.mae:>7.1f}"
        )
    if len(rows) > 1:
        agg = aggregate_reports(rows)
        lines.append(
            f"{'Average':<16}"
            f"{100 * agg['s_measure']:>7.1f}{100 * agg['f_measure']:>7.1f}"
            f"{100 * agg['f_measure_mean']:>8.1f}{100 * agg['mae']:>7.1f}"
        )
    return "\n".join(lines)
