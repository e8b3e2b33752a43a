"""Evaluation: confusion metrics, rank-based AUC, stratified per-branch reports."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, UndefinedMetricError
from .model import ModelParams, forward_batch
from .simulate import GradedDataset

STRATA = ("consensus", "non_consensus", "all")
REPORT_BRANCHES = ("sen", "spec", "fusion")
METRIC_NAMES = ("acc", "sen", "spec", "f1", "auc")


@dataclass(frozen=True)
class ConfusionMetrics:
    """Threshold metrics; zero-denominator metrics are 0.0 and flagged."""

    acc: float
    sen: float
    spec: float
    f1: float
    undefined: frozenset[str]


def confusion_metrics(predictions, labels) -> ConfusionMetrics:
    """Accuracy, sensitivity, specificity and F1 from binary predictions."""
    preds = np.asarray(predictions, dtype=int)
    labs = np.asarray(labels, dtype=int)
    if preds.shape != labs.shape or preds.ndim != 1 or preds.size < 1:
        raise ParameterError(f"predictions/labels must be equal-length 1-d, got {preds.shape} vs {labs.shape}")
    if np.any((preds != 0) & (preds != 1)) or np.any((labs != 0) & (labs != 1)):
        raise ParameterError("predictions and labels must be binary")

    tp = int(np.sum((preds == 1) & (labs == 1)))
    tn = int(np.sum((preds == 0) & (labs == 0)))
    fp = int(np.sum((preds == 1) & (labs == 0)))
    fn = int(np.sum((preds == 0) & (labs == 1)))

    undefined = set()

    def ratio(num, den, name):
        if den == 0:
            undefined.add(name)
            return 0.0
        return num / den

    acc = (tp + tn) / preds.size
    sen = ratio(tp, tp + fn, "sen")
    spec = ratio(tn, tn + fp, "spec")
    f1 = ratio(2 * tp, 2 * tp + fp + fn, "f1")
    return ConfusionMetrics(acc=acc, sen=sen, spec=spec, f1=f1, undefined=frozenset(undefined))


def _average_ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks with ties assigned their group average."""
    order = np.argsort(x, kind="stable")
    ranks = np.empty(x.size, dtype=float)
    sorted_x = x[order]
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and sorted_x[j + 1] == sorted_x[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def roc_auc(scores, labels) -> float:
    """ROC AUC via the rank-sum (Mann-Whitney) statistic; ties count half."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=int)
    if s.shape != y.shape or s.ndim != 1 or s.size < 1:
        raise ParameterError(f"scores/labels must be equal-length 1-d, got {s.shape} vs {y.shape}")
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC requires both classes present")
    ranks = _average_ranks(s)
    rank_sum = float(ranks[y == 1].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


@dataclass
class EvalReport:
    """Branch x stratum metric grid plus stratum counts and mean uncertainty.

    ``metrics[branch][stratum][name]`` is a float in [0, 1], or None when the
    stratum is empty / the metric is undefined there. ``undefined`` lists
    zero-denominator threshold metrics reported as 0.0.
    """

    counts: dict[str, int]
    mean_uncertainty: dict[str, float | None]
    metrics: dict[str, dict[str, dict[str, float | None]]]
    undefined: dict[str, dict[str, list[str]]]
    threshold: float

    def to_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "counts": self.counts,
            "mean_uncertainty": self.mean_uncertainty,
            "metrics": self.metrics,
            "undefined": self.undefined,
        }

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    def format_table(self) -> str:
        """Aligned text table: branches x (stratum-grouped Sen / Spec / AUC)."""
        stratum_titles = {"consensus": "Consensus", "non_consensus": "Non-Consensus", "all": "All Data"}
        branch_titles = {"fusion": "FusionBr", "sen": "SenBr", "spec": "SpecBr"}

        def fmt(value):
            return "   -  " if value is None else f"{100.0 * value:6.2f}"

        lines = []
        group = " | ".join(f"{stratum_titles[s]:^22}" for s in STRATA)
        lines.append(f"{'Branch':<10}| {group}")
        sub = " | ".join(f"{'Sen':>6} {'Spec':>6} {'AUC':>6}" for _ in STRATA)
        lines.append(f"{'':<10}| {sub}")
        lines.append("-" * len(lines[0]))
        for branch in ("fusion", "sen", "spec"):
            cells = []
            for stratum in STRATA:
                m = self.metrics[branch][stratum]
                cells.append(f"{fmt(m['sen'])} {fmt(m['spec'])} {fmt(m['auc'])}")
            lines.append(f"{branch_titles[branch]:<10}| " + " | ".join(cells))
        counts = ", ".join(f"{stratum_titles[s]}: n={self.counts[s]}" for s in STRATA)
        lines.append(counts)
        return "\n".join(lines) + "\n"


def evaluate(params: ModelParams, dataset: GradedDataset, threshold: float = 0.5) -> EvalReport:
    """Forward the whole dataset and fill the branch x stratum metric grid.

    Positive predictions are scores >= threshold on the positive-class
    probability. Labels are the adjudicated final labels; strata follow the
    per-record consensus flags.
    """
    if not (0.0 <= threshold <= 1.0):
        raise ParameterError(f"threshold must lie in [0, 1], got {threshold}")
    out, _ = forward_batch(params, dataset.features)
    finals = dataset.final_labels
    cons = dataset.consensus_flags
    masks = {
        "consensus": cons == 1,
        "non_consensus": cons == 0,
        "all": np.ones(len(dataset), dtype=bool),
    }
    branch_probs = {"sen": out.y_sen, "spec": out.y_spec, "fusion": out.y_fusion}

    counts = {s: int(m.sum()) for s, m in masks.items()}
    mean_u = {
        s: (float(out.uncertainty[m].mean()) if m.any() else None) for s, m in masks.items()
    }
    metrics: dict[str, dict[str, dict[str, float | None]]] = {}
    undefined: dict[str, dict[str, list[str]]] = {}
    for branch in REPORT_BRANCHES:
        scores = branch_probs[branch][:, 1]
        preds = (scores >= threshold).astype(int)
        metrics[branch] = {}
        undefined[branch] = {}
        for stratum, mask in masks.items():
            if not mask.any():
                metrics[branch][stratum] = dict.fromkeys(METRIC_NAMES)
                undefined[branch][stratum] = []
                continue
            cm = confusion_metrics(preds[mask], finals[mask])
            try:
                auc = roc_auc(scores[mask], finals[mask])
            except UndefinedMetricError:
                auc = None
            metrics[branch][stratum] = {
                "acc": cm.acc, "sen": cm.sen, "spec": cm.spec, "f1": cm.f1, "auc": auc,
            }
            undefined[branch][stratum] = sorted(cm.undefined)
    return EvalReport(
        counts=counts,
        mean_uncertainty=mean_u,
        metrics=metrics,
        undefined=undefined,
        threshold=threshold,
    )
