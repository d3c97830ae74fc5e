"""Segmentation metrics, dataset aggregation, and Welch's t-test.

Predictions are thresholded at 0.5 (ties count as positive).  With T/P
the positive pixel sets of ground truth and prediction:

    IOU      = |T n P| / |T u P|
    FP rate  = |T- n P| / (total pixels)
    FN rate  = |T n P-| / |T|

Degenerate cases are pinned: IOU of two empty masks is 1, FN rate with an
empty ground truth is 0.  Aggregates use the sample standard deviation.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class MetricsRecord:
    sample_id: str
    iou: float
    fp_rate: float
    fn_rate: float


@dataclass(frozen=True)
class MetricsSummary:
    n: int
    iou_mean: float
    iou_std: float
    fp_mean: float
    fp_std: float
    fn_mean: float
    fn_std: float


@dataclass(frozen=True)
class WelchResult:
    t: float
    nu: float
    p: float


def binarize(pred: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Threshold a [0,1] prediction; values >= threshold map to 1."""
    pred = np.asarray(pred)
    if pred.size and (pred.min() < 0.0 or pred.max() > 1.0):
        raise ValueError("prediction values must lie in [0, 1]")
    return (pred >= threshold).astype(np.float32)


def confusion(pred_binary: np.ndarray, gt_binary: np.ndarray) -> ConfusionCounts:
    """Exact pixel counts for a binary prediction against a binary mask."""
    pred_binary = np.asarray(pred_binary)
    gt_binary = np.asarray(gt_binary)
    if pred_binary.shape != gt_binary.shape:
        raise ValueError(f"shape mismatch: {pred_binary.shape} vs {gt_binary.shape}")
    for name, arr in (("prediction", pred_binary), ("ground truth", gt_binary)):
        if not np.isin(arr, (0, 1)).all():
            raise ValueError(f"{name} is not binary")
    p = pred_binary.astype(bool)
    t = gt_binary.astype(bool)
    tp = int(np.count_nonzero(p & t))
    fp = int(np.count_nonzero(p & ~t))
    fn = int(np.count_nonzero(~p & t))
    tn = int(np.count_nonzero(~p & ~t))
    return ConfusionCounts(tp, fp, fn, tn)


def iou(c: ConfusionCounts) -> float:
    union = c.tp + c.fp + c.fn
    if union == 0:
        return 1.0  # both masks empty
    return c.tp / union


def fp_rate(c: ConfusionCounts) -> float:
    return c.fp / c.total


def fn_rate(c: ConfusionCounts) -> float:
    t_size = c.tp + c.fn
    if t_size == 0:
        return 0.0  # empty ground truth
    return c.fn / t_size


# ---------------------------------------------------------------------------
# Welch's t-test
# ---------------------------------------------------------------------------


def regularized_incomplete_beta(x: float, a: float, b: float) -> float:
    """I_x(a, b) by the standard continued fraction (abs err <= 1e-10)."""
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x={x} outside [0, 1]")
    if a <= 0.0 or b <= 0.0:
        raise ValueError("a and b must be > 0")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_cf(a, b, x) / a
    return 1.0 - front * _beta_cf(b, a, 1.0 - x) / b


def _beta_cf(a: float, b: float, x: float) -> float:
    """Lentz evaluation of the incomplete-beta continued fraction."""
    tiny = 1e-300
    eps = 1e-15
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 400):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise RuntimeError(f"incomplete beta did not converge for a={a}, b={b}, x={x}")


def welch_t_test(xs, ys) -> WelchResult:
    """Two-sample Welch test: t, Welch-Satterthwaite df, two-tailed p."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    n1, n2 = xs.size, ys.size
    if n1 < 2 or n2 < 2:
        raise ValueError("each sample needs at least 2 observations")
    m1, m2 = xs.mean(), ys.mean()
    v1 = xs.var(ddof=1)
    v2 = ys.var(ddof=1)
    se1, se2 = v1 / n1, v2 / n2
    pooled = se1 + se2
    if pooled == 0.0:
        if m1 == m2:
            return WelchResult(0.0, float(n1 + n2 - 2), 1.0)
        raise ValueError("zero variance in both samples with unequal means")
    t = float((m1 - m2) / math.sqrt(pooled))
    nu = float(pooled ** 2 / (se1 ** 2 / (n1 - 1) + se2 ** 2 / (n2 - 1)))
    p = regularized_incomplete_beta(nu / (nu + t * t), nu / 2.0, 0.5)
    return WelchResult(t, nu, min(1.0, max(0.0, p)))


# ---------------------------------------------------------------------------
# Dataset evaluation
# ---------------------------------------------------------------------------


def image_metrics(sample_id: str, pred: np.ndarray, gt_mask: np.ndarray,
                  threshold: float = 0.5) -> MetricsRecord:
    c = confusion(binarize(pred, threshold), binarize(gt_mask, threshold))
    return MetricsRecord(sample_id, iou(c), fp_rate(c), fn_rate(c))


def summarize(records) -> MetricsSummary:
    if not records:
        raise ValueError("no records to summarize")

    def stats(vals):
        arr = np.asarray(vals, dtype=np.float64)
        std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
        return float(arr.mean()), std

    im, isd = stats([r.iou for r in records])
    pm, psd = stats([r.fp_rate for r in records])
    nm, nsd = stats([r.fn_rate for r in records])
    return MetricsSummary(len(records), im, isd, pm, psd, nm, nsd)


def evaluate_dataset(checkpoint, samples, threshold: float = 0.5):
    """Per-image metrics plus aggregates for (sample_id, input, gt) samples.

    Rows come back ordered by sample id regardless of input order.
    """
    from .segnet import load_generator, predict_mask

    samples = list(samples)
    if not samples:
        raise ValueError("empty dataset")
    gen = load_generator(checkpoint)
    records = []
    for sample_id, inp, gt in sorted(samples, key=lambda s: s[0]):
        pred = predict_mask(gen, inp)
        records.append(image_metrics(sample_id, pred, gt, threshold))
    return records, summarize(records)


# ---------------------------------------------------------------------------
# CSV interfaces
# ---------------------------------------------------------------------------

METRICS_HEADER = ("sample_id", "iou", "fp_rate", "fn_rate")
COMPARISON_HEADER = ("metric", "mean_a", "mean_b", "t", "nu", "p")


def write_metrics_csv(records, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_HEADER)
        for r in records:
            writer.writerow([r.sample_id, repr(r.iou), repr(r.fp_rate), repr(r.fn_rate)])


def read_metrics_csv(path):
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != METRICS_HEADER:
            raise ValueError(f"{path}: bad metrics CSV header {header}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 columns, got {len(row)}")
            try:
                records.append(MetricsRecord(row[0], float(row[1]), float(row[2]), float(row[3])))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
    return records


def compare_metric_sets(records_a, records_b):
    """Welch-test each metric of two per-image metric tables."""
    rows = []
    for metric in ("iou", "fp_rate", "fn_rate"):
        xs = [getattr(r, metric) for r in records_a]
        ys = [getattr(r, metric) for r in records_b]
        res = welch_t_test(xs, ys)
        rows.append((metric, float(np.mean(xs)), float(np.mean(ys)), res.t, res.nu, res.p))
    return rows


def write_comparison_csv(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(COMPARISON_HEADER)
        for metric, ma, mb, t, nu, p in rows:
            writer.writerow([metric, repr(ma), repr(mb), repr(t), repr(nu), repr(p)])
