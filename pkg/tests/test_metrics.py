import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from hsio import BinaryMask, quantize_saliency
from metrics import (
    LEVELS, MEAN_ROW, REPORT_COLUMNS, MetricError, MetricReport, adaptive_level, aggregate, auc_borji, cc, evaluate,
    f_measures, f_score, kldiv, mean_pr_curve, nss, pr_curve, read_report_csv, report_frame, write_pr_csv,
    write_report_csv,
)


def half_mask(shape=(4, 4)) -> np.ndarray:
    mask = np.zeros(shape, dtype=bool)
    mask[:, : shape[1] // 2] = True
    return mask


def report(**values) -> MetricReport:
    base = dict(auc_borji=0.5, cc=0.0, f_beta=0.0, max_f=0.0, ave_f=0.0, precision=0.0, recall=0.0, nss=0.0, kldiv=0.0)
    base.update(values)
    return MetricReport(**base)


def random_pair(seed: int):
    """Random saliency in [0, 1] and a mask holding both classes."""
    rng = np.random.default_rng(seed)
    shape = tuple(rng.integers(3, 9, size=2))
    saliency = rng.uniform(size=shape)
    saliency[rng.uniform(size=shape) < 0.2] = 0.0
    mask = rng.uniform(size=shape) < rng.uniform(0.1, 0.7)
    mask.flat[0], mask.flat[-1] = True, False
    return saliency, mask


def pixel_levels(saliency):
    return [int(math.floor(v * 255 + 0.5)) for v in saliency.ravel()]


def pixel_pr(saliency, mask):
    levels, truth = pixel_levels(saliency), list(mask.ravel())
    precision, recall = [], []
    for t in range(256):
        predicted = [lv >= t for lv in levels]
        tp = sum(1 for p, g in zip(predicted, truth) if p and g)
        fp = sum(1 for p, g in zip(predicted, truth) if p and not g)
        precision.append(tp / (tp + fp) if tp + fp else 1.0)
        recall.append(tp / sum(truth))
    return precision, recall


# ─── Distribution Metrics ────────────────────────────────────────────────────

def test_cc_perfect_and_inverted():
    mask = half_mask()
    assert cc(mask.astype(float), mask) == pytest.approx(1.0)
    assert cc((~mask).astype(float), mask) == pytest.approx(-1.0)


def test_cc_constant_saliency_is_zero():
    assert cc(np.full((4, 4), 0.3), half_mask()) == 0.0


def test_nss_balanced_mask():
    mask = half_mask()
    assert nss(mask.astype(float), BinaryMask(values=mask)) == pytest.approx(1.0)


def test_kldiv_uniform_saliency_single_pixel():
    mask = np.zeros((5, 5), dtype=bool)
    mask[2, 2] = True
    assert kldiv(np.full((5, 5), 0.5), mask) == pytest.approx(math.log(25), rel=1e-6)


def test_kldiv_matching_distribution_is_zero():
    mask = half_mask()
    assert kldiv(mask.astype(float), mask) == pytest.approx(0.0, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_distribution_metrics_match_pixel_loops(seed):
    saliency, mask = random_pair(seed)
    values = [lv / 255 for lv in pixel_levels(saliency)]
    truth = [1.0 if g else 0.0 for g in mask.ravel()]
    n = len(values)
    mean_s, mean_g = sum(values) / n, sum(truth) / n
    cov = sum((s - mean_s) * (g - mean_g) for s, g in zip(values, truth))
    var_s = sum((s - mean_s) ** 2 for s in values)
    var_g = sum((g - mean_g) ** 2 for g in truth)
    expected_cc = cov / math.sqrt(var_s * var_g) if var_s > 0 else 0.0
    assert cc(saliency, mask) == pytest.approx(expected_cc, abs=1e-9)

    std = math.sqrt(var_s / n)
    salient = [s for s, g in zip(values, truth) if g]
    expected_nss = sum((s - mean_s) / std for s in salient) / len(salient) if std > 0 else 0.0
    assert nss(saliency, mask) == pytest.approx(expected_nss, abs=1e-9)

    total = sum(values)
    dist = [s / total for s in values] if total > 0 else [1.0 / n] * n
    g_mass = 1.0 / len(salient)
    expected_kl = sum(g_mass * math.log(g_mass / (d + 1e-12)) for d, g in zip(dist, truth) if g)
    assert kldiv(saliency, mask) == pytest.approx(max(expected_kl, 0.0), abs=1e-9)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 100_000), scale=st.sampled_from([1, 2]), shift=st.integers(0, 64))
def test_cc_and_nss_ignore_positive_affine_rescaling(seed, scale, shift):
    rng = np.random.default_rng(seed)
    levels = rng.integers(0, 96, size=(6, 7))
    levels[0, 0], levels[-1, -1] = 0, 95
    mask = rng.uniform(size=(6, 7)) < 0.4
    mask[0, 0], mask[-1, -1] = False, True
    base = levels / 255.0
    moved = (scale * levels + shift) / 255.0
    assert cc(moved, mask) == pytest.approx(cc(base, mask), abs=1e-9)
    assert nss(moved, mask) == pytest.approx(nss(base, mask), abs=1e-9)


def test_metrics_reject_bad_inputs():
    with pytest.raises(MetricError):
        cc(np.zeros((3, 3)), half_mask())
    with pytest.raises(MetricError):
        cc(np.full((4, 4), 1.5), half_mask())
    with pytest.raises(MetricError):
        nss(np.zeros((4, 4)), np.zeros((4, 4), dtype=bool))


# ─── AUC ─────────────────────────────────────────────────────────────────────

def test_auc_perfect_and_chance():
    mask = half_mask((6, 6))
    assert auc_borji(mask.astype(float), mask) == pytest.approx(1.0)
    assert auc_borji(np.full((6, 6), 0.4), mask) == pytest.approx(0.5)


def test_auc_needs_both_classes():
    with pytest.raises(MetricError):
        auc_borji(np.zeros((3, 3)), np.ones((3, 3), dtype=bool))


def brute_force_auc(saliency, mask, n_splits, seed):
    levels = quantize_saliency(saliency).astype(int)
    positives, pool = levels[mask], levels[~mask]
    rng = np.random.default_rng(seed)
    scores = []
    for _ in range(n_splits):
        negatives = pool[rng.integers(0, pool.size, size=positives.size)]
        wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in positives for n in negatives)
        scores.append(wins / (positives.size * negatives.size))
    return float(np.mean(scores))


@settings(max_examples=25, deadline=None)
@given(saliency=arrays(np.float64, (6, 6), elements=st.floats(0, 1)), seed=st.integers(0, 1000))
def test_auc_matches_pairwise_count(saliency, seed):
    mask = np.zeros((6, 6), dtype=bool)
    mask[1:4, 2:5] = True
    assert auc_borji(saliency, mask, n_splits=3, seed=seed) == pytest.approx(brute_force_auc(saliency, mask, 3, seed))


# ─── Precision / Recall ──────────────────────────────────────────────────────

def test_pr_curve_endpoints():
    mask = half_mask()
    saliency = np.where(mask, 0.9, 0.1)
    curve = pr_curve(saliency, mask)
    assert curve.thresholds.size == LEVELS
    assert curve.recall[0] == 1.0
    assert curve.precision[0] == pytest.approx(0.5)
    assert curve.precision[128] == 1.0 and curve.recall[128] == 1.0
    assert curve.precision[255] == 1.0 and curve.recall[255] == 0.0
    assert np.all(np.diff(curve.recall) <= 0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_pr_curve_matches_pixel_loop(seed):
    saliency, mask = random_pair(seed)
    precision, recall = pixel_pr(saliency, mask)
    curve = pr_curve(saliency, mask)
    np.testing.assert_allclose(curve.precision, precision, atol=1e-12)
    np.testing.assert_allclose(curve.recall, recall, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 100_000), beta_sq=st.sampled_from([0.3, 1.0]))
def test_f_measures_match_pixel_loop(seed, beta_sq):
    saliency, mask = random_pair(seed)
    precision, recall = pixel_pr(saliency, mask)
    scores = [(1 + beta_sq) * p * r / (beta_sq * p + r) if beta_sq * p + r > 0 else 0.0
              for p, r in zip(precision, recall)]
    levels = pixel_levels(saliency)
    threshold = min(2 * sum(levels) / (255 * len(levels)), 1.0)
    level = min(255, math.ceil(threshold * 255 - 1e-9))

    f_beta, max_f, ave_f, p, r = f_measures(pr_curve(saliency, mask), saliency, mask, beta_sq)
    assert max_f == pytest.approx(max(scores), abs=1e-12)
    assert ave_f == pytest.approx(sum(scores) / 256, abs=1e-12)
    assert (p, r) == (pytest.approx(precision[level]), pytest.approx(recall[level]))
    assert f_beta == pytest.approx(scores[level], abs=1e-12)
    assert max_f >= f_beta and max_f >= ave_f


def test_f_score_rules():
    assert f_score(1.0, 1.0) == pytest.approx(1.0)
    assert f_score(0.0, 0.0) == 0.0
    assert f_score(0.5, 1.0, beta_sq=0.3) == pytest.approx(1.3 * 0.5 / (0.15 + 1.0))


def test_adaptive_level():
    assert adaptive_level(np.full((4, 4), 0.25)) == 128
    assert adaptive_level(np.full((4, 4), 0.9)) == 255
    assert adaptive_level(np.zeros((4, 4))) == 0


def test_f_measures_perfect_map():
    mask = half_mask()
    saliency = mask.astype(float)
    f_beta, max_f, ave_f, precision, recall = f_measures(pr_curve(saliency, mask), saliency, mask)
    assert max_f == pytest.approx(1.0)
    assert f_beta == pytest.approx(1.0)
    assert (precision, recall) == (1.0, 1.0)
    assert 0.0 < ave_f <= max_f


def test_mean_pr_curve():
    mask = half_mask()
    a = pr_curve(mask.astype(float), mask)
    b = pr_curve(np.full((4, 4), 0.5), mask)
    mean = mean_pr_curve([a, b])
    np.testing.assert_allclose(mean.recall, (a.recall + b.recall) / 2)


# ─── Reports ─────────────────────────────────────────────────────────────────

def test_evaluate_ranges(scene):
    _, mask = scene
    result = evaluate(mask.values * 0.8 + 0.1, mask)
    assert result.auc_borji == pytest.approx(1.0)
    assert result.cc == pytest.approx(1.0)
    assert result.max_f == pytest.approx(1.0)


def test_aggregate_means():
    mean = aggregate([report(cc=0.2), report(cc=0.4)])
    assert mean.cc == pytest.approx(0.3)
    assert mean.auc_borji == pytest.approx(0.5)
    with pytest.raises(MetricError):
        aggregate([])


def test_report_csv_has_mean_row(tmp_path):
    rows = [("a", report(cc=0.2, kldiv=1.0)), ("b", report(cc=0.4, kldiv=2.0))]
    frame = report_frame(rows)
    assert list(frame.columns) == REPORT_COLUMNS
    assert list(frame["image"]) == ["a", "b", MEAN_ROW]

    write_report_csv(rows, tmp_path / "metrics.csv", provenance=["seed=0"])
    assert (tmp_path / "metrics.csv").read_text().startswith("# seed=0\nimage,")
    back = read_report_csv(tmp_path / "metrics.csv")
    assert [name for name, _ in back] == ["a", "b", MEAN_ROW]
    assert back[0][1] == rows[0][1]
    assert back[2][1].kldiv == pytest.approx(1.5)


def test_pr_csv(tmp_path):
    mask = half_mask()
    write_pr_csv(pr_curve(mask.astype(float), mask), tmp_path / "pr.csv")
    lines = (tmp_path / "pr.csv").read_text().splitlines()
    assert lines[0] == "threshold,precision,recall"
    assert len(lines) == LEVELS + 1
