"""
SUDF Saliency - Evaluation Metrics
AUC (Borji), CC, NSS, KL divergence, precision/recall curves and the F-measure family, computed on
8-bit quantized saliency so results are reproducible bit-for-bit. CSV reports are written with pandas.
"""
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional, Union

import numpy as np
import pandas as pd

from config import AUC_SPLITS, BETA_SQ, SEED, debug_log
from hsio import BinaryMask, quantize_saliency

LEVELS = 256
KL_EPSILON = 1e-12
REPORT_COLUMNS = ["image", "auc_borji", "cc", "f_beta", "max_f", "ave_f", "precision", "recall", "nss", "kldiv"]
MEAN_ROW = "MEAN"


class MetricError(ValueError):
    """Degenerate ground truth, mismatched shapes or out-of-range saliency."""


# ─── Domain Types ────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class MetricReport:
    auc_borji: float
    cc: float
    f_beta: float
    max_f: float
    ave_f: float
    precision: float
    recall: float
    nss: float
    kldiv: float


@dataclass(frozen=True, eq=False)
class PrCurve:
    """Precision and recall at thresholds 0..255 on the quantized saliency."""

    thresholds: np.ndarray
    precision: np.ndarray
    recall: np.ndarray


def _prepare(saliency: np.ndarray, gt: Union[BinaryMask, np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Returns (quantized levels 0..255, boolean mask)."""
    mask = gt.values if isinstance(gt, BinaryMask) else np.asarray(gt, dtype=bool)
    saliency = np.asarray(saliency, dtype=np.float64)
    if saliency.shape != mask.shape:
        raise MetricError(f"Saliency {saliency.shape} and mask {mask.shape} differ in shape")
    if not np.isfinite(saliency).all() or saliency.min() < 0.0 or saliency.max() > 1.0:
        raise MetricError("Saliency values must be finite and lie in [0, 1]")
    return quantize_saliency(saliency).astype(np.int64), mask


def _require_positives(mask: np.ndarray) -> None:
    if not mask.any():
        raise MetricError("Ground-truth mask has no salient pixels")


# ─── Distribution Metrics ────────────────────────────────────────────────────

def cc(saliency: np.ndarray, gt: Union[BinaryMask, np.ndarray]) -> float:
    """Pearson correlation between saliency and the mask as a 0/1 map. Constant inputs give 0."""
    levels, mask = _prepare(saliency, gt)
    s = levels.ravel() / 255.0
    g = mask.ravel().astype(np.float64)
    s_c, g_c = s - s.mean(), g - g.mean()
    denom = math.sqrt(float((s_c ** 2).sum()) * float((g_c ** 2).sum()))
    if denom == 0.0:
        return 0.0
    return float((s_c * g_c).sum() / denom)


def nss(saliency: np.ndarray, gt: Union[BinaryMask, np.ndarray]) -> float:
    """Mean of the standardized saliency over salient pixels. Zero-variance saliency gives 0."""
    levels, mask = _prepare(saliency, gt)
    _require_positives(mask)
    s = levels / 255.0
    std = s.std()
    if std == 0.0:
        return 0.0
    return float(((s - s.mean()) / std)[mask].mean())


def kldiv(saliency: np.ndarray, gt: Union[BinaryMask, np.ndarray]) -> float:
    """KL(gt || saliency) with both maps normalized to distributions; all-zero saliency counts as uniform."""
    levels, mask = _prepare(saliency, gt)
    _require_positives(mask)
    s = levels.astype(np.float64) / 255.0
    total = s.sum()
    s = s / total if total > 0 else np.full(s.shape, 1.0 / s.size)
    g = mask / float(mask.sum())
    value = float((g[mask] * np.log(g[mask] / (s[mask] + KL_EPSILON))).sum())
    return max(value, 0.0)


# ─── Ranking Metrics ─────────────────────────────────────────────────────────

def _histogram_auc(positives: np.ndarray, negatives: np.ndarray) -> float:
    """ROC area from a sweep over quantized levels; ties count one half."""
    hp = np.bincount(positives, minlength=LEVELS).astype(np.float64)
    hn = np.bincount(negatives, minlength=LEVELS).astype(np.float64)
    below = np.concatenate([[0.0], np.cumsum(hn)[:-1]])
    return float((hp * (below + 0.5 * hn)).sum() / (hp.sum() * hn.sum()))


def auc_borji(saliency: np.ndarray, gt: Union[BinaryMask, np.ndarray], n_splits: int = AUC_SPLITS, seed: int = SEED) -> float:
    """
    Mean ROC area over `n_splits` trials; each trial samples as many negatives as there are
    salient pixels, uniformly with replacement from the non-salient pixels.
    """
    levels, mask = _prepare(saliency, gt)
    if not mask.any() or mask.all():
        raise MetricError("AUC needs both salient and non-salient pixels")
    if n_splits < 1:
        raise MetricError(f"n_splits must be >= 1, got {n_splits}")
    positives = levels[mask]
    pool = levels[~mask]
    rng = np.random.default_rng(seed)
    scores = []
    for _ in range(n_splits):
        negatives = pool[rng.integers(0, pool.size, size=positives.size)]
        scores.append(_histogram_auc(positives, negatives))
    return float(np.mean(scores))


def pr_curve(saliency: np.ndarray, gt: Union[BinaryMask, np.ndarray]) -> PrCurve:
    """Binarize at level >= t for t = 0..255; precision is 1 when nothing is predicted positive."""
    levels, mask = _prepare(saliency, gt)
    _require_positives(mask)
    hp = np.bincount(levels[mask], minlength=LEVELS)
    hn = np.bincount(levels[~mask], minlength=LEVELS)
    tp = np.cumsum(hp[::-1])[::-1].astype(np.float64)
    fp = np.cumsum(hn[::-1])[::-1].astype(np.float64)
    predicted = tp + fp
    precision = np.divide(tp, predicted, out=np.ones(LEVELS), where=predicted > 0)
    recall = tp / float(mask.sum())
    return PrCurve(thresholds=np.arange(LEVELS), precision=precision, recall=recall)


def f_score(precision, recall, beta_sq: float = BETA_SQ):
    """(1 + b2) p r / (b2 p + r), 0 where the denominator is 0."""
    p, r = np.asarray(precision, dtype=np.float64), np.asarray(recall, dtype=np.float64)
    denom = beta_sq * p + r
    out = np.divide((1.0 + beta_sq) * p * r, denom, out=np.zeros(np.broadcast(p, r).shape), where=denom > 0)
    return float(out) if out.ndim == 0 else out


def adaptive_level(saliency: np.ndarray) -> int:
    """Quantized level of the adaptive threshold min(2 * mean saliency, 1)."""
    levels = quantize_saliency(np.asarray(saliency, dtype=np.float64)).astype(np.float64) / 255.0
    threshold = min(2.0 * float(levels.mean()), 1.0)
    return int(min(LEVELS - 1, math.ceil(threshold * 255.0 - 1e-9)))


def f_measures(curve: PrCurve, saliency: np.ndarray, gt: Union[BinaryMask, np.ndarray], beta_sq: float = BETA_SQ):
    """Returns (f_beta, max_f, ave_f, precision, recall); scalar values use the adaptive threshold."""
    _prepare(saliency, gt)
    scores = f_score(curve.precision, curve.recall, beta_sq)
    level = adaptive_level(saliency)
    precision, recall = float(curve.precision[level]), float(curve.recall[level])
    return float(scores[level]), float(scores.max()), float(scores.mean()), precision, recall


# ─── Aggregation ─────────────────────────────────────────────────────────────

def evaluate(saliency: np.ndarray, gt: Union[BinaryMask, np.ndarray], n_splits: int = AUC_SPLITS, seed: int = SEED,
             beta_sq: float = BETA_SQ, curve: Optional[PrCurve] = None) -> MetricReport:
    """Full metric suite for one saliency/mask pair."""
    curve = curve if curve is not None else pr_curve(saliency, gt)
    f_beta, max_f, ave_f, precision, recall = f_measures(curve, saliency, gt, beta_sq)
    report = MetricReport(
        auc_borji=auc_borji(saliency, gt, n_splits, seed),
        cc=cc(saliency, gt),
        f_beta=f_beta,
        max_f=max_f,
        ave_f=ave_f,
        precision=precision,
        recall=recall,
        nss=nss(saliency, gt),
        kldiv=kldiv(saliency, gt),
    )
    debug_log("[metrics evaluate] %s" % report)
    return report


def aggregate(reports: list[MetricReport]) -> MetricReport:
    """Per-metric arithmetic mean over images."""
    if not reports:
        raise MetricError("Cannot aggregate an empty list of reports")
    names = [f.name for f in fields(MetricReport)]
    values = np.array([[getattr(r, name) for name in names] for r in reports], dtype=np.float64)
    return MetricReport(**{name: float(v) for name, v in zip(names, values.mean(axis=0))})


def mean_pr_curve(curves: list[PrCurve]) -> PrCurve:
    if not curves:
        raise MetricError("Cannot average an empty list of curves")
    return PrCurve(
        thresholds=np.arange(LEVELS),
        precision=np.mean([c.precision for c in curves], axis=0),
        recall=np.mean([c.recall for c in curves], axis=0),
    )


# ─── CSV Reports ─────────────────────────────────────────────────────────────

def _write_frame(frame: pd.DataFrame, path: Path, provenance: Optional[list[str]]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        for item in provenance or []:
            f.write(f"# {item}\n")
        frame.to_csv(f, index=False, float_format="%.17g", lineterminator="\n")


def report_frame(rows: list[tuple[str, MetricReport]]) -> pd.DataFrame:
    """One row per image (in the given order) followed by the MEAN row."""
    records = [{"image": name, **asdict(report)} for name, report in rows]
    if rows:
        records.append({"image": MEAN_ROW, **asdict(aggregate([r for _, r in rows]))})
    return pd.DataFrame(records, columns=REPORT_COLUMNS)


def write_report_csv(rows: list[tuple[str, MetricReport]], path: Path, provenance: Optional[list[str]] = None) -> None:
    _write_frame(report_frame(rows), path, provenance)


def read_report_csv(path: Path) -> list[tuple[str, MetricReport]]:
    """Rows of a report CSV, MEAN row included, in file order."""
    frame = pd.read_csv(path, comment="#", dtype={"image": str})
    if list(frame.columns) != REPORT_COLUMNS:
        raise MetricError(f"{path} does not have the report columns")
    names = REPORT_COLUMNS[1:]
    return [(row["image"], MetricReport(**{n: float(row[n]) for n in names})) for _, row in frame.iterrows()]


def write_pr_csv(curve: PrCurve, path: Path, provenance: Optional[list[str]] = None) -> None:
    frame = pd.DataFrame({"threshold": curve.thresholds, "precision": curve.precision, "recall": curve.recall})
    _write_frame(frame, path, provenance)
