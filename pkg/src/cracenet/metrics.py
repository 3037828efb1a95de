"""Saliency evaluation suite: PR curves, F-measures, MAE, Sm, Em.

Conventions (documented because the literature varies):

* Thresholding.  The 256-point PR curve binarizes at ``pred > t/256`` for
  t = 0..255, i.e. thresholds sample [0, 1) uniformly.  This keeps a
  prediction identical to its ground truth perfect at every threshold, so
  maxF and mean F are exactly 1 on identical maps.
* Aggregation.  PR counts accumulate dataset-wide per threshold by
  default (``per_image=True`` averages per-image curves instead).  The
  mean F-measure averages F over the curve; an adaptive-threshold variant
  (2x mean, capped at 1) is available via ``convention="adaptive"``.
* Weighted F uses a 7x7 Gaussian dependency kernel (sigma 5) whose border
  truncation is renormalized, so an all-miss prediction scores exactly 0.
* Ground-truth maps with no foreground are skipped (and counted) by the
  F-family metrics; MAE, Sm and Em include them.

All functions take lists of float maps in [0, 1] and binary masks.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

__all__ = [
    "MetricReport",
    "e_measure",
    "evaluate_dataset",
    "evaluate_pairs",
    "f_beta",
    "mae",
    "max_f",
    "mean_f",
    "pr_curve",
    "s_measure",
    "weighted_f",
]

NUM_THRESHOLDS = 256
THRESHOLDS = np.arange(NUM_THRESHOLDS) / NUM_THRESHOLDS
F_BETA_SQ = 0.3


class DatasetMismatchError(ValueError):
    """Prediction and ground-truth directories do not pair up."""


def _ordered_mean(values) -> float:
    """Mean accumulated in sorted order, so image order cannot perturb it."""
    return float(np.mean(np.sort(np.asarray(values, dtype=np.float64))))


@dataclass
class MetricReport:
    max_f: float
    mean_f: float
    weighted_f: float
    mae: float
    s_measure: float
    e_measure: float
    pr: np.ndarray  # (256, 2) precision/recall pairs
    per_image: list = field(default_factory=list)
    skipped_empty_gt: int = 0

    def as_dict(self) -> dict[str, float]:
        return {
            "maxF": self.max_f,
            "mF": self.mean_f,
            "wF": self.weighted_f,
            "MAE": self.mae,
            "Sm": self.s_measure,
            "Em": self.e_measure,
        }

    def text_table(self) -> str:
        vals = self.as_dict()
        head = "  ".join(f"{k:>8s}" for k in vals)
        row = "  ".join(f"{v:8.4f}" for v in vals.values())
        return head + "\n" + row

    def delimited(self) -> str:
        lines = [f"{k}\t{v:.6f}" for k, v in self.as_dict().items()]
        lines.append(f"skipped_empty_gt\t{self.skipped_empty_gt}")
        return "\n".join(lines) + "\n"

    def pr_rows(self) -> str:
        return "\n".join(f"{p:.6f}\t{r:.6f}" for p, r in self.pr) + "\n"


def _validate_pairs(preds, gts):
    if len(preds) == 0:
        raise ValueError("empty dataset")
    if len(preds) != len(gts):
        raise ValueError(f"{len(preds)} predictions vs {len(gts)} ground truths")
    for p, g in zip(preds, gts):
        if p.shape != g.shape:
            raise ValueError(f"shape mismatch: pred {p.shape} vs gt {g.shape}")


def _counts_per_threshold(pred: np.ndarray, fg: np.ndarray):
    """(TP, FP) at each threshold via sorted-value search; strict >."""
    fg_vals = np.sort(pred[fg], kind="stable")
    bg_vals = np.sort(pred[~fg], kind="stable")
    tp = fg_vals.size - np.searchsorted(fg_vals, THRESHOLDS, side="right")
    fp = bg_vals.size - np.searchsorted(bg_vals, THRESHOLDS, side="right")
    return tp.astype(np.float64), fp.astype(np.float64)


def pr_curve(preds, gts, per_image: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """256-point precision/recall arrays over the dataset."""
    _validate_pairs(preds, gts)
    used = 0
    if per_image:
        p_rows, r_rows = [], []
    else:
        tp_acc = np.zeros(NUM_THRESHOLDS)
        fp_acc = np.zeros(NUM_THRESHOLDS)
        fn_acc = np.zeros(NUM_THRESHOLDS)
    for pred, gt in zip(preds, gts):
        fg = np.asarray(gt) == 1
        n_fg = int(fg.sum())
        if n_fg == 0:
            continue
        used += 1
        tp, fp = _counts_per_threshold(np.asarray(pred, dtype=np.float64), fg)
        if per_image:
            p_rows.append(np.where(tp + fp > 0, tp / np.maximum(tp + fp, 1), 1.0))
            r_rows.append(tp / n_fg)
        else:
            # integer-valued accumulators: exact, so image order is irrelevant
            tp_acc += tp
            fp_acc += fp
            fn_acc += n_fg - tp
    if used == 0:
        raise ValueError("no ground-truth map contains foreground")
    if per_image:
        # sort per threshold before averaging to stay order-invariant
        p_sorted = np.sort(np.stack(p_rows), axis=0)
        r_sorted = np.sort(np.stack(r_rows), axis=0)
        return p_sorted.mean(axis=0), r_sorted.mean(axis=0)
    denom = tp_acc + fp_acc
    precision = np.where(denom > 0, tp_acc / np.maximum(denom, 1), 1.0)
    recall = tp_acc / (tp_acc + fn_acc)
    return precision, recall


def f_beta(precision, recall, beta_sq: float = F_BETA_SQ):
    """Precision-weighted F-score; 0 wherever the denominator vanishes."""
    precision = np.asarray(precision, dtype=np.float64)
    recall = np.asarray(recall, dtype=np.float64)
    denom = beta_sq * precision + recall
    num = (1.0 + beta_sq) * precision * recall
    out = np.divide(num, denom, out=np.zeros_like(num), where=denom > 0)
    return out if out.ndim else float(out)


def max_f(curve: tuple[np.ndarray, np.ndarray], beta_sq: float = F_BETA_SQ) -> float:
    precision, recall = curve
    return float(np.max(f_beta(precision, recall, beta_sq)))


def mean_f(
    preds,
    gts,
    beta_sq: float = F_BETA_SQ,
    convention: str = "curve",
    per_image: bool = False,
) -> float:
    """Mean F: average over the threshold curve, or adaptive 2x-mean."""
    if convention == "curve":
        precision, recall = pr_curve(preds, gts, per_image=per_image)
        return float(np.mean(f_beta(precision, recall, beta_sq)))
    if convention != "adaptive":
        raise ValueError(f"unknown mean-F convention {convention!r}")
    _validate_pairs(preds, gts)
    scores, skipped = [], 0
    for pred, gt in zip(preds, gts):
        fg = np.asarray(gt) == 1
        if not fg.any():
            skipped += 1
            continue
        pred = np.asarray(pred, dtype=np.float64)
        thresh = min(2.0 * pred.mean(), 1.0)
        binary = pred > thresh
        tp = float((binary & fg).sum())
        fp = float((binary & ~fg).sum())
        precision = tp / (tp + fp) if tp + fp > 0 else 1.0
        recall = tp / fg.sum()
        scores.append(f_beta(precision, recall, beta_sq))
    if not scores:
        raise ValueError("no ground-truth map contains foreground")
    if skipped:
        logger.info("adaptive mean-F skipped %d empty-GT images", skipped)
    return _ordered_mean(scores)


def mae(preds, gts) -> float:
    """Mean over images of the per-image mean absolute error."""
    _validate_pairs(preds, gts)
    return _ordered_mean(
        [np.abs(np.asarray(p, dtype=np.float64) - np.asarray(g)).mean()
         for p, g in zip(preds, gts)]
    )


# -- weighted F-measure ---------------------------------------------------


def _gauss_kernel(size: int, sigma: float) -> np.ndarray:
    half = size // 2
    ax = np.arange(-half, half + 1, dtype=np.float64)
    k = np.exp(-(ax[:, None] ** 2 + ax[None, :] ** 2) / (2.0 * sigma * sigma))
    return k / k.sum()


def _conv_same(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    half = kernel.shape[0] // 2
    padded = np.pad(img, half)
    out = np.zeros_like(img)
    H, W = img.shape
    for i in range(kernel.shape[0]):
        for j in range(kernel.shape[1]):
            out += kernel[i, j] * padded[i : i + H, j : j + W]
    return out


def _nearest_fg(fg: np.ndarray):
    """Distance to and row-major-first index of the nearest foreground pixel.

    Squared distances are exact integers; ties resolve to the smallest
    (row, col) foreground pixel, keeping the result convention-stable.
    """
    H, W = fg.shape
    fr, fc = np.nonzero(fg)
    br, bc = np.nonzero(~fg)
    dist = np.zeros((H, W))
    near_r = np.zeros((H, W), dtype=np.intp)
    near_c = np.zeros((H, W), dtype=np.intp)
    near_r[fg], near_c[fg] = np.nonzero(fg)
    chunk = max(1, 2_000_000 // max(len(fr), 1))
    for start in range(0, len(br), chunk):
        rs = br[start : start + chunk]
        cs = bc[start : start + chunk]
        d2 = (rs[:, None] - fr[None, :]) ** 2 + (cs[:, None] - fc[None, :]) ** 2
        idx = np.argmin(d2, axis=1)  # first minimum = lexicographic winner
        dist[rs, cs] = np.sqrt(d2[np.arange(len(rs)), idx].astype(np.float64))
        near_r[rs, cs] = fr[idx]
        near_c[rs, cs] = fc[idx]
    return dist, near_r, near_c


def _weighted_f_single(
    pred: np.ndarray, gt: np.ndarray, sigma: float, ksize: int, beta_sq: float
) -> float:
    fg = gt == 1
    err = np.abs(pred - gt)
    dist, near_r, near_c = _nearest_fg(fg)
    dep_err = err.copy()
    dep_err[~fg] = err[near_r[~fg], near_c[~fg]]
    kernel = _gauss_kernel(ksize, sigma)
    # Renormalized smoothing: rows of the dependency matrix sum to 1 even at
    # the border, so a uniformly missed object stays a full miss.
    smoothed = _conv_same(dep_err, kernel) / _conv_same(np.ones_like(dep_err), kernel)
    adjusted = err.copy()
    take = fg & (smoothed < err)
    adjusted[take] = smoothed[take]
    weight = np.ones_like(err)
    weight[~fg] = 2.0 - np.exp(np.log(0.5) / 5.0 * dist[~fg])
    weighted_err = adjusted * weight
    n_fg = fg.sum()
    tp = n_fg - weighted_err[fg].sum()
    fp = weighted_err[~fg].sum()
    recall = 1.0 - weighted_err[fg].mean()
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    if precision + recall <= 0:
        return 0.0
    return float(
        (1.0 + beta_sq) * precision * recall / (beta_sq * precision + recall)
    )


def weighted_f(preds, gts, sigma: float = 5.0, ksize: int = 7, beta_sq: float = 1.0) -> float:
    """Weighted F-measure averaged over images with foreground."""
    _validate_pairs(preds, gts)
    scores, skipped = [], 0
    for pred, gt in zip(preds, gts):
        gt = np.asarray(gt, dtype=np.float64)
        if not (gt == 1).any():
            skipped += 1
            continue
        scores.append(
            _weighted_f_single(np.asarray(pred, dtype=np.float64), gt, sigma, ksize, beta_sq)
        )
    if skipped:
        logger.info("weighted F skipped %d empty-GT images", skipped)
    if not scores:
        raise ValueError("no ground-truth map contains foreground")
    return _ordered_mean(scores)


# -- structure measure ------------------------------------------------------


def _s_object_half(region_vals: np.ndarray) -> float:
    x_mean = float(region_vals.mean())
    x_std = float(region_vals.std(ddof=1)) if region_vals.size > 1 else 0.0
    return 2.0 * x_mean / (x_mean * x_mean + 1.0 + x_std)


def _s_object(pred: np.ndarray, gt: np.ndarray) -> float:
    fg = gt == 1
    u = float(gt.mean())
    fg_score = _s_object_half(pred[fg]) if fg.any() else 0.0
    bg_score = _s_object_half(1.0 - pred[~fg]) if (~fg).any() else 0.0
    return u * fg_score + (1.0 - u) * bg_score


def _gt_centroid(gt: np.ndarray) -> tuple[int, int]:
    H, W = gt.shape
    total = gt.sum()
    rows = np.arange(H)
    cols = np.arange(W)
    cy = int(round(float((gt.sum(axis=1) * rows).sum() / total)))
    cx = int(round(float((gt.sum(axis=0) * cols).sum() / total)))
    return cy, cx


def _quadrants(arr: np.ndarray, cy: int, cx: int):
    # Centroid row/column belong to the top/left blocks.
    return (
        arr[: cy + 1, : cx + 1],
        arr[: cy + 1, cx + 1 :],
        arr[cy + 1 :, : cx + 1],
        arr[cy + 1 :, cx + 1 :],
    )


def _region_ssim(x: np.ndarray, y: np.ndarray) -> float:
    n = x.size
    if n == 0:
        return 0.0
    mx, my = float(x.mean()), float(y.mean())
    if n > 1:
        vx = float(((x - mx) ** 2).sum() / (n - 1))
        vy = float(((y - my) ** 2).sum() / (n - 1))
        cov = float(((x - mx) * (y - my)).sum() / (n - 1))
    else:
        vx = vy = cov = 0.0
    alpha = 4.0 * mx * my * cov
    beta = (mx * mx + my * my) * (vx + vy)
    if alpha != 0.0:
        return alpha / beta if beta != 0.0 else 0.0
    return 1.0 if beta == 0.0 else 0.0


def _s_region(pred: np.ndarray, gt: np.ndarray) -> float:
    cy, cx = _gt_centroid(gt)
    H, W = gt.shape
    gt_parts = _quadrants(gt, cy, cx)
    pred_parts = _quadrants(pred, cy, cx)
    total = float(H * W)
    score = 0.0
    for gp, pp in zip(gt_parts, pred_parts):
        score += (gp.size / total) * _region_ssim(pp, gp)
    return score


def _s_measure_single(pred: np.ndarray, gt: np.ndarray, alpha: float) -> float:
    mean_gt = float(gt.mean())
    if mean_gt == 0.0:  # no foreground: reward empty predictions
        return 1.0 - float(pred.mean())
    if mean_gt == 1.0:  # all foreground: reward full predictions
        return float(pred.mean())
    score = alpha * _s_object(pred, gt) + (1.0 - alpha) * _s_region(pred, gt)
    return float(min(max(score, 0.0), 1.0))


def s_measure(preds, gts, alpha: float = 0.5) -> float:
    """Structure measure: object- plus region-aware similarity."""
    _validate_pairs(preds, gts)
    return _ordered_mean(
        [
            _s_measure_single(
                np.asarray(p, dtype=np.float64), np.asarray(g, dtype=np.float64), alpha
            )
            for p, g in zip(preds, gts)
        ]
    )


# -- enhanced-alignment measure ----------------------------------------------


def _e_measure_single(pred: np.ndarray, gt: np.ndarray) -> float:
    if not (gt == 1).any():
        enhanced = 1.0 - pred
    elif (gt == 1).all():
        enhanced = pred
    else:
        bias_gt = gt - gt.mean()
        bias_pred = pred - pred.mean()
        align = 2.0 * bias_gt * bias_pred / (bias_gt**2 + bias_pred**2)
        enhanced = (align + 1.0) ** 2 / 4.0
    return float(enhanced.mean())


def e_measure(preds, gts) -> float:
    """Enhanced-alignment measure on bias-removed maps, mean over pixels."""
    _validate_pairs(preds, gts)
    return _ordered_mean(
        [
            _e_measure_single(np.asarray(p, dtype=np.float64), np.asarray(g, dtype=np.float64))
            for p, g in zip(preds, gts)
        ]
    )


# -- dataset-level aggregation ---------------------------------------------------


def evaluate_pairs(preds, gts, ids=None, per_image_pr: bool = False) -> MetricReport:
    """Full metric bundle over paired prediction / ground-truth lists."""
    _validate_pairs(preds, gts)
    ids = ids or [str(i) for i in range(len(preds))]
    precision, recall = pr_curve(preds, gts, per_image=per_image_pr)
    curve_f = f_beta(precision, recall)
    skipped = sum(1 for g in gts if not (np.asarray(g) == 1).any())
    per_image_rows = []
    for name, pred, gt in zip(ids, preds, gts):
        pred = np.asarray(pred, dtype=np.float64)
        gt = np.asarray(gt, dtype=np.float64)
        row = {
            "id": name,
            "mae": float(np.abs(pred - gt).mean()),
            "sm": _s_measure_single(pred, gt, 0.5),
            "em": _e_measure_single(pred, gt),
        }
        if (gt == 1).any():
            row["wf"] = _weighted_f_single(pred, gt, 5.0, 7, 1.0)
        per_image_rows.append(row)
    return MetricReport(
        max_f=float(np.max(curve_f)),
        mean_f=float(np.mean(curve_f)),
        weighted_f=weighted_f(preds, gts),
        mae=mae(preds, gts),
        s_measure=s_measure(preds, gts),
        e_measure=e_measure(preds, gts),
        pr=np.stack([precision, recall], axis=1),
        per_image=per_image_rows,
        skipped_empty_gt=skipped,
    )


def evaluate_dataset(pred_dir, gt_dir, per_image_pr: bool = False) -> MetricReport:
    """Load matching grayscale maps from two directories and evaluate.

    Filenames (stems) must match exactly; any unmatched file on either
    side is an error, never silently skipped.
    """
    from .data import load_gray

    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    pred_files = {p.stem: p for p in sorted(pred_dir.glob("*.pgm"))}
    gt_files = {p.stem: p for p in sorted(gt_dir.glob("*.pgm"))}
    missing_gt = sorted(set(pred_files) - set(gt_files))
    missing_pred = sorted(set(gt_files) - set(pred_files))
    if missing_gt or missing_pred:
        raise DatasetMismatchError(
            f"unmatched files: no ground truth for {missing_gt}, "
            f"no prediction for {missing_pred}"
        )
    if not pred_files:
        raise ValueError("empty dataset")
    ids = sorted(pred_files)
    preds = [load_gray(pred_files[i]) for i in ids]
    gts = [(load_gray(gt_files[i]) >= 0.5).astype(np.float64) for i in ids]
    return evaluate_pairs(preds, gts, ids, per_image_pr=per_image_pr)
