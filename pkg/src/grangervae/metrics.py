"""Scoring estimated graphs against ground truth.

Ranking metrics use |normalized estimate| as the score; AUROC counts ties
as one half and AUPRC integrates the precision-recall curve stepwise, so both
match their brute-force pairwise/threshold oracles exactly. Reports carry the
metrics with and without the diagonal because dominant self-edges can distort
comparisons.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, UndefinedMetricError

__all__ = [
    "ScoredGraph", "MetricsReport", "graph_scores",
    "ranking_metrics", "best_f1", "threshold_sweep",
    "normalize_graph", "sign_agreement", "posthoc_average",
    "score_graph", "DEFAULT_THRESHOLDS",
]

DEFAULT_THRESHOLDS = (0.05, 0.1, 0.15, 0.2, 0.3, 0.4, 0.5)
SIGN_MAGNITUDE_FLOOR = 0.05


@dataclass
class ScoredGraph:
    scores: np.ndarray      # ranking scores, higher = more confident edge
    labels: np.ndarray      # boolean truth support
    signs: np.ndarray | None = None

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        self.labels = np.asarray(self.labels, dtype=bool).reshape(-1)
        if self.scores.shape != self.labels.shape:
            raise ConfigurationError("scores and labels must have equal size")

    def check_both_classes(self):
        pos = int(self.labels.sum())
        if pos == 0 or pos == self.labels.size:
            raise UndefinedMetricError(
                "ranking metrics need both positive and negative labels")


@dataclass
class MetricsReport:
    auroc: float
    auprc: float
    f1_best: float
    best_threshold: float
    sweep: list = field(default_factory=list)  # (threshold, tpr, tnr, acc)

    def to_dict(self) -> dict:
        return {"auroc": self.auroc, "auprc": self.auprc,
                "f1_best": self.f1_best, "best_threshold": self.best_threshold,
                "sweep": [{"threshold": t, "tpr": tp, "tnr": tn, "acc": ac}
                          for (t, tp, tn, ac) in self.sweep]}


def graph_scores(est: np.ndarray, truth: np.ndarray,
                 include_diagonal: bool = True) -> ScoredGraph:
    """Build the ranking view of an estimate: |normalized| scores vs support."""
    est = np.asarray(est, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if est.shape != truth.shape:
        raise ConfigurationError(
            f"estimate shape {est.shape} != truth shape {truth.shape}")
    norm, _ = normalize_graph(est)
    scores = np.abs(norm)
    labels = np.abs(truth) > 1e-12
    signs = np.sign(truth)
    if not include_diagonal and est.ndim == 2 and est.shape[0] == est.shape[1]:
        off = ~np.eye(est.shape[0], dtype=bool)
        return ScoredGraph(scores[off], labels[off], signs[off])
    return ScoredGraph(scores, labels, signs)


def ranking_metrics(sg: ScoredGraph) -> tuple[float, float]:
    """(AUROC, AUPRC) via sorting; ties share credit exactly like the
    O(n^2) pairwise count and the stepwise threshold oracle."""
    sg.check_both_classes()
    scores, labels = sg.scores, sg.labels
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos

    order = np.argsort(scores, kind="stable")
    s_sorted = scores[order]
    l_sorted = labels[order]
    # AUROC: for each positive, count negatives strictly below plus half ties.
    auroc_num = 0.0
    i = 0
    neg_below = 0
    n = labels.size
    while i < n:
        j = i
        while j < n and s_sorted[j] == s_sorted[i]:
            j += 1
        tie_pos = int(l_sorted[i:j].sum())
        tie_neg = (j - i) - tie_pos
        auroc_num += tie_pos * (neg_below + 0.5 * tie_neg)
        neg_below += tie_neg
        i = j
    auroc = auroc_num / (n_pos * n_neg)

    # AUPRC: walk thresholds from high to low, stepwise interpolation.
    desc_scores = s_sorted[::-1]
    desc_labels = l_sorted[::-1]
    tp = 0
    seen = 0
    auprc = 0.0
    prev_recall = 0.0
    i = 0
    while i < n:
        j = i
        while j < n and desc_scores[j] == desc_scores[i]:
            j += 1
        tp += int(desc_labels[i:j].sum())
        seen = j
        recall = tp / n_pos
        precision = tp / seen
        auprc += (recall - prev_recall) * precision
        prev_recall = recall
        i = j
    return float(auroc), float(auprc)


def best_f1(sg: ScoredGraph) -> tuple[float, float]:
    """Maximum F1 over thresholds at the distinct scores (prediction is
    score >= threshold); ties in F1 break toward the larger threshold."""
    sg.check_both_classes()
    scores, labels = sg.scores, sg.labels
    n_pos = int(labels.sum())
    thresholds = np.unique(scores)
    best = (-1.0, 0.0)
    for thr in thresholds:
        pred = scores >= thr
        tp = int((pred & labels).sum())
        fp = int((pred & ~labels).sum())
        fn = n_pos - tp
        denom = 2 * tp + fp + fn
        f1 = (2.0 * tp / denom) if denom else 0.0
        if f1 >= best[0] - 1e-15:
            if f1 > best[0] + 1e-15 or thr > best[1]:
                best = (f1, float(thr))
    return best


def threshold_sweep(sg: ScoredGraph, thresholds=DEFAULT_THRESHOLDS) -> list:
    """(threshold, TPR, TNR, ACC) rows on the binarized support, ascending."""
    scores, labels = sg.scores, sg.labels
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    rows = []
    for thr in sorted(thresholds):
        pred = scores >= thr
        tp = int((pred & labels).sum())
        tn = int((~pred & ~labels).sum())
        tpr = tp / n_pos if n_pos else 1.0
        tnr = tn / n_neg if n_neg else 1.0
        acc = (tp + tn) / labels.size
        rows.append((float(thr), tpr, tnr, acc))
    return rows


def normalize_graph(est: np.ndarray) -> tuple[np.ndarray, bool]:
    """Divide by the largest magnitude; all-zero input comes back flagged."""
    est = np.asarray(est, dtype=np.float64)
    if not np.all(np.isfinite(est)):
        raise ConfigurationError("normalize_graph: estimate must be finite")
    peak = np.max(np.abs(est))
    if peak == 0.0:
        return est.copy(), True
    return est / peak, False


def sign_agreement(est: np.ndarray, truth: np.ndarray,
                   magnitude_floor: float = SIGN_MAGNITUDE_FLOOR) -> dict:
    """Sign match fraction on the truth support under the best global flip.

    Comparison is restricted to support entries whose normalized truth
    magnitude clears ``magnitude_floor``.
    """
    est = np.asarray(est, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if est.shape != truth.shape:
        raise ConfigurationError("sign_agreement: shape mismatch")
    t_norm, _ = normalize_graph(truth)
    mask = np.abs(t_norm) >= magnitude_floor
    if not mask.any():
        return {"agreement": float("nan"), "flip": False, "defined": False}
    s_est = np.sign(est[mask])
    s_tru = np.sign(truth[mask])
    plain = float(np.mean(s_est == s_tru))
    flipped = float(np.mean(-s_est == s_tru))
    if flipped > plain:
        return {"agreement": flipped, "flip": True, "defined": True}
    return {"agreement": plain, "flip": False, "defined": True}


def posthoc_average(entity_estimates) -> np.ndarray:
    """Entrywise mean of entity estimates: the individual-learning comparator."""
    mats = [np.asarray(m, dtype=np.float64) for m in entity_estimates]
    if not mats:
        raise ConfigurationError("posthoc_average needs at least one matrix")
    shapes = {m.shape for m in mats}
    if len(shapes) > 1:
        raise ConfigurationError(f"posthoc_average: unequal shapes {shapes}")
    return np.mean(mats, axis=0)


def score_graph(est: np.ndarray, truth: np.ndarray,
                thresholds=DEFAULT_THRESHOLDS,
                include_diagonal: bool = True) -> MetricsReport:
    """Full report for one estimate/truth pair."""
    sg = graph_scores(est, truth, include_diagonal=include_diagonal)
    auroc, auprc = ranking_metrics(sg)
    f1, thr = best_f1(sg)
    sweep = threshold_sweep(sg, thresholds)
    return MetricsReport(auroc, auprc, f1, thr, sweep)
