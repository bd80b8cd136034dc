"""Classification/regression metrics, subject-level split plans, and the
paired t-test (p-value via a continued-fraction incomplete beta, evaluated
at 64-bit)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError

__all__ = [
    "LABELS", "label_to_index", "FoldMetrics", "confusion_matrix",
    "classification_metrics", "rmse_clamped", "SplitPlan", "make_splits",
    "TTestResult", "paired_t_test", "regularized_incomplete_beta",
    "student_t_sf",
]

LABELS = ("CH", "AD")  # AD is the positive class (index 1)


def label_to_index(label: str) -> int:
    try:
        return LABELS.index(label)
    except ValueError:
        raise ContractError(f"unknown label {label!r}, expected one of {LABELS}")


def confusion_matrix(y_true, y_pred) -> np.ndarray:
    """2x2 counts, rows = true class, cols = predicted class."""
    y_true = np.asarray(y_true, dtype=int)
    y_pred = np.asarray(y_pred, dtype=int)
    if y_true.shape != y_pred.shape:
        raise ContractError(
            f"label arrays differ in shape: {y_true.shape} vs {y_pred.shape}")
    if y_true.size == 0:
        raise ContractError("cannot evaluate an empty test set")
    cm = np.zeros((2, 2), dtype=np.int64)
    for t, p in zip(y_true, y_pred):
        cm[t, p] += 1
    return cm


@dataclass
class FoldMetrics:
    """Percent-scale rates plus the raw confusion matrix they reconcile with.

    Classification fills the rate fields (rmse None); regression fills rmse
    only.
    """

    n_test: int
    accuracy: float | None = None
    f1: float | None = None
    precision: float | None = None
    recall: float | None = None
    confusion: list[list[int]] | None = None
    per_class: dict[str, dict[str, float]] = field(default_factory=dict)
    rmse: float | None = None

    def to_dict(self) -> dict:
        out: dict = {"n_test": self.n_test}
        for name in ("accuracy", "f1", "precision", "recall"):
            value = getattr(self, name)
            if value is not None:
                out[name] = value
        if self.confusion is not None:
            out["confusion"] = self.confusion
        if self.per_class:
            out["per_class"] = self.per_class
        if self.rmse is not None:
            out["rmse"] = self.rmse
        return out


def classification_metrics(cm: np.ndarray) -> FoldMetrics:
    """Accuracy plus macro-averaged precision/recall/F1, all on [0, 100]."""
    cm = np.asarray(cm, dtype=np.int64)
    total = int(cm.sum())
    if total == 0:
        raise ContractError("cannot evaluate an empty test set")
    accuracy = 100.0 * float(np.trace(cm)) / total
    per_class: dict[str, dict[str, float]] = {}
    precisions, recalls, f1s = [], [], []
    for c, name in enumerate(LABELS):
        tp = float(cm[c, c])
        fp = float(cm[1 - c, c])
        fn = float(cm[c, 1 - c])
        precision = tp / (tp + fp) if tp + fp > 0 else 0.0
        recall = tp / (tp + fn) if tp + fn > 0 else 0.0
        f1 = (2 * precision * recall / (precision + recall)
              if precision + recall > 0 else 0.0)
        per_class[name] = {
            "precision": 100.0 * precision,
            "recall": 100.0 * recall,
            "f1": 100.0 * f1,
        }
        precisions.append(precision)
        recalls.append(recall)
        f1s.append(f1)
    return FoldMetrics(
        n_test=total,
        accuracy=accuracy,
        f1=100.0 * float(np.mean(f1s)),
        precision=100.0 * float(np.mean(precisions)),
        recall=100.0 * float(np.mean(recalls)),
        confusion=cm.tolist(),
        per_class=per_class,
    )


def rmse_clamped(predictions, targets, lo: float = 0.0, hi: float = 30.0) -> float:
    """Root mean squared error with predictions clamped to the score range."""
    predictions = np.clip(np.asarray(predictions, dtype=np.float64), lo, hi)
    targets = np.asarray(targets, dtype=np.float64)
    if predictions.shape != targets.shape or predictions.size == 0:
        raise ContractError("rmse needs equal-length, non-empty arrays")
    return float(np.sqrt(np.mean((predictions - targets) ** 2)))


# --- splits -----------------------------------------------------------------


@dataclass
class SplitPlan:
    protocol: str  # "kfold" | "loso"
    folds: list[list[str]]  # test subject ids per fold
    stratified: bool = True

    def train_ids(self, fold: int) -> list[str]:
        test = set(self.folds[fold])
        return [s for f in self.folds for s in f if s not in test]

    def validate_partition(self, all_ids: list[str]) -> None:
        seen: list[str] = [s for f in self.folds for s in f]
        if sorted(seen) != sorted(all_ids):
            raise ContractError("folds do not partition the subject roster")
        if len(set(seen)) != len(seen):
            raise ContractError("a subject appears in more than one fold")


def make_splits(
    subjects: list[tuple[str, str]],
    protocol: str,
    k: int = 5,
    seed: int = 0,
    stratified: bool = True,
) -> SplitPlan:
    """Partition (subject_id, label) rosters into evaluation folds.

    "loso" gives one single-subject fold per subject. Stratified k-fold deals
    each label group round-robin so per-fold class counts balance within one.
    """
    ids = [s for s, _ in subjects]
    if len(set(ids)) != len(ids):
        raise ContractError("duplicate subject ids in roster")
    if protocol == "loso":
        return SplitPlan("loso", [[s] for s in sorted(ids)], stratified=False)
    if protocol != "kfold":
        raise ContractError(f"unknown protocol {protocol!r}")
    if k < 2 or k > len(subjects):
        raise ContractError(
            f"k={k} invalid for a roster of {len(subjects)} subjects")
    rng = np.random.Generator(np.random.Philox(key=seed))
    folds: list[list[str]] = [[] for _ in range(k)]
    if stratified:
        by_label: dict[str, list[str]] = {}
        for sid, label in subjects:
            by_label.setdefault(label, []).append(sid)
        cursor = 0
        for label in sorted(by_label):
            group = sorted(by_label[label])
            rng.shuffle(group)
            for sid in group:
                folds[cursor % k].append(sid)
                cursor += 1
    else:
        pool = sorted(ids)
        rng.shuffle(pool)
        for i, sid in enumerate(pool):
            folds[i % k].append(sid)
    folds = [sorted(f) for f in folds]
    plan = SplitPlan("kfold", folds, stratified=stratified)
    plan.validate_partition(ids)
    return plan


# --- paired t-test ------------------------------------------------------------


@dataclass
class TTestResult:
    t_stat: float | None
    p_value: float | None
    mean_diff: float
    dof: int
    degenerate: bool = False


def _beta_continued_fraction(a: float, b: float, x: float) -> float:
    """Lentz's algorithm for the incomplete-beta continued fraction."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 300):
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
        if abs(delta - 1.0) < 1e-15:
            return h
    raise ContractError(f"incomplete beta failed to converge for a={a} b={b} x={x}")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b) via the continued fraction, series-switched at the symmetry point."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_continued_fraction(a, b, x) / a
    return 1.0 - front * _beta_continued_fraction(b, a, 1.0 - x) / b


def student_t_sf(t: float, dof: int) -> float:
    """Two-sided survival mass P(|T| >= |t|) for Student's t."""
    if dof < 1:
        raise ContractError(f"degrees of freedom must be >= 1, got {dof}")
    x = dof / (dof + t * t)
    return regularized_incomplete_beta(dof / 2.0, 0.5, x)


def paired_t_test(acc_a, acc_b) -> TTestResult:
    """Two-sided paired Student t-test on matched accuracy lists.

    Zero-variance differences give a flagged degenerate result (t undefined)
    rather than NaN.
    """
    a = np.asarray(acc_a, dtype=np.float64)
    b = np.asarray(acc_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ContractError("paired t-test needs two equal-length 1-d lists")
    n = a.size
    if n < 2:
        raise ContractError(f"paired t-test needs at least 2 pairs, got {n}")
    diffs = a - b
    mean_diff = float(diffs.mean())
    sd = float(diffs.std(ddof=1))
    if sd == 0.0:
        return TTestResult(None, None, mean_diff, dof=n - 1, degenerate=True)
    t = mean_diff / (sd / math.sqrt(n))
    p = student_t_sf(t, n - 1)
    return TTestResult(t, p, mean_diff, dof=n - 1)
