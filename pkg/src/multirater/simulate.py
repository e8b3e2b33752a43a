"""Synthetic multi-rater grading: feature generation, rater noise, two-stage adjudication.

Each class is a pair of isotropic Gaussian clusters; the pairs sit on two
orthogonal signal directions in an XOR arrangement, so the class boundary is
genuinely nonlinear and the cluster separation shrinks as ``difficulty_mix``
grows. Each sample carries a scalar difficulty in [0, 1] derived from its
distance to the boundary; rater error rates scale up with that difficulty, so
disagreement concentrates on ambiguous samples.

Grading follows a two-stage protocol: two independent first-stage raters, and
an adjudicator who settles disagreements. The adjudicated label becomes the
ground truth used downstream.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, ParameterError
from .rng import STREAM_GENERATE, STREAM_GRADE, STREAM_SPLIT, seeded_rng

# Cluster separation interpolates between these extremes as difficulty_mix goes 0 -> 1.
SEPARATION_EASY = 12.0
SEPARATION_HARD = 1.0
# difficulty = exp(-margin^2 / DIFFICULTY_SCALE), margin = distance to the class boundary.
DIFFICULTY_SCALE = 2.0
# Rater error on a sample = base_error * (1 + ERROR_GAIN * difficulty), clipped to [0, 0.5].
DEFAULT_ERROR_GAIN = 2.0

# Defaults calibrated so that a default-sized run (6318 samples) lands near the
# reference consensus profile 34.4 / 36.6 / 12.4 / 16.6 percent for the
# categories (consensus positive, consensus negative, non-consensus positive,
# non-consensus negative), with ~29% of samples graded without consensus.
DEFAULT_N_SAMPLES = 6318
DEFAULT_FEATURE_DIM = 16
DEFAULT_CLASS_BALANCE = 0.455
DEFAULT_DIFFICULTY_MIX = 0.80
DEFAULT_SPLIT = (0.6, 0.15, 0.25)

CATEGORY_NAMES = (
    "consensus_positive",
    "consensus_negative",
    "non_consensus_positive",
    "non_consensus_negative",
)


@dataclass(frozen=True)
class RaterProfile:
    """A simulated grader: per-class correctness rates on easy samples."""

    rater_id: int
    sensitivity: float
    specificity: float

    def __post_init__(self):
        if not (0.0 <= self.sensitivity <= 1.0 and 0.0 <= self.specificity <= 1.0):
            raise ParameterError(
                f"rater {self.rater_id}: sensitivity/specificity must lie in [0, 1]"
            )


@dataclass(frozen=True)
class GradingPanel:
    """Two first-stage raters plus one adjudicator, with unique rater ids."""

    stage1: tuple[RaterProfile, RaterProfile]
    adjudicator: RaterProfile

    def __post_init__(self):
        if len(self.stage1) != 2:
            raise ParameterError("panel needs exactly two first-stage raters")
        ids = [r.rater_id for r in self.stage1] + [self.adjudicator.rater_id]
        if len(set(ids)) != 3:
            raise ParameterError(f"rater ids must be unique, got {ids}")


def default_panel() -> GradingPanel:
    """Calibrated default: two good-but-noisy raters and a stronger adjudicator."""
    return GradingPanel(
        stage1=(
            RaterProfile(rater_id=1, sensitivity=0.905, specificity=0.895),
            RaterProfile(rater_id=2, sensitivity=0.900, specificity=0.865),
        ),
        adjudicator=RaterProfile(rater_id=3, sensitivity=0.95, specificity=0.95),
    )


@dataclass
class SyntheticSample:
    features: np.ndarray
    true_label: int
    difficulty: float


@dataclass
class GradingRecord:
    """Outcome of grading one sample through the two-stage protocol.

    ``soft_label`` starts as the equal-weight mean of the raw labels and is
    replaced with an accuracy-weighted value once rater weights are known
    (see :mod:`multirater.labels`).
    """

    sample_id: int
    stage1_labels: tuple[tuple[int, int], tuple[int, int]]
    adjudicator_label: tuple[int, int] | None
    consensus: int
    final_label: int
    soft_label: float

    @property
    def raw_labels(self) -> list[tuple[int, int]]:
        """All (rater_id, label) pairs, adjudicator entry last when present."""
        raw = list(self.stage1_labels)
        if self.adjudicator_label is not None:
            raw.append(self.adjudicator_label)
        return raw


@dataclass
class GradedDataset:
    """Feature matrix plus per-sample grading records (parallel order)."""

    features: np.ndarray
    true_labels: np.ndarray
    records: list[GradingRecord]
    difficulties: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.records)

    @property
    def final_labels(self) -> np.ndarray:
        return np.array([r.final_label for r in self.records], dtype=int)

    @property
    def consensus_flags(self) -> np.ndarray:
        return np.array([r.consensus for r in self.records], dtype=int)

    def subset(self, indices) -> "GradedDataset":
        idx = np.asarray(indices, dtype=int)
        return GradedDataset(
            features=self.features[idx],
            true_labels=self.true_labels[idx],
            records=[self.records[i] for i in idx],
            difficulties=None if self.difficulties is None else self.difficulties[idx],
        )


def signal_directions(feature_dim: int) -> tuple[np.ndarray, np.ndarray]:
    """The two orthonormal directions carrying the class signal.

    Class 0 clusters sit on the all-ones diagonal, class 1 clusters on the
    alternating-sign diagonal (last coordinate dropped when the dimension is
    odd, to keep the directions orthogonal).
    """
    u = np.ones(feature_dim)
    v = np.where(np.arange(feature_dim) % 2 == 0, 1.0, -1.0)
    if feature_dim % 2 == 1:
        v[-1] = 0.0
    return u / np.linalg.norm(u), v / np.linalg.norm(v)


def boundary_margins(features: np.ndarray, feature_dim: int | None = None) -> np.ndarray:
    """Signed distance to the class boundary; positive on the class-1 side.

    The boundary is the set where the two signal axes pull equally,
    |x.u| = |x.v|; the distance to it is (|x.v| - |x.u|) / sqrt(2).
    """
    features = np.atleast_2d(np.asarray(features, dtype=float))
    u, v = signal_directions(features.shape[1] if feature_dim is None else feature_dim)
    return (np.abs(features @ v) - np.abs(features @ u)) / np.sqrt(2.0)


def generate_dataset(
    n_samples: int,
    feature_dim: int = DEFAULT_FEATURE_DIM,
    class_balance: float = DEFAULT_CLASS_BALANCE,
    difficulty_mix: float = DEFAULT_DIFFICULTY_MIX,
    seed: int = 0,
) -> list[SyntheticSample]:
    """Draw samples from two Gaussian sub-clusters per class with controllable overlap.

    Class 0 samples center on +-g * u and class 1 samples on +-g * v, where
    (u, v) are the orthonormal ``signal_directions`` and the amplitude g
    shrinks as ``difficulty_mix`` goes 0 -> 1. The XOR-style arrangement makes
    the boundary nonlinear, so the classifier has to learn features rather
    than a single projection. ``difficulty_mix`` = 0 yields well-separated
    clusters with difficulty ~ 0 everywhere.
    """
    if n_samples < 1:
        raise ParameterError(f"n_samples must be >= 1, got {n_samples}")
    if feature_dim < 2:
        raise ParameterError(f"feature_dim must be >= 2, got {feature_dim}")
    if not (0.0 < class_balance < 1.0):
        raise ParameterError(f"class_balance must lie strictly in (0, 1), got {class_balance}")
    if not (0.0 <= difficulty_mix <= 1.0):
        raise ParameterError(f"difficulty_mix must lie in [0, 1], got {difficulty_mix}")

    rng = seeded_rng(seed, STREAM_GENERATE)
    labels = (rng.random(n_samples) < class_balance).astype(int)
    sides = np.where(rng.random(n_samples) < 0.5, 1.0, -1.0)
    amplitude = SEPARATION_EASY * (1.0 - difficulty_mix) + SEPARATION_HARD * difficulty_mix
    u, v = signal_directions(feature_dim)
    axis = np.where(labels[:, None] == 1, v[None, :], u[None, :])
    features = rng.standard_normal((n_samples, feature_dim)) + amplitude * sides[:, None] * axis
    margins = boundary_margins(features)
    difficulties = np.exp(-(margins**2) / DIFFICULTY_SCALE)
    return [
        SyntheticSample(features=features[i], true_label=int(labels[i]), difficulty=float(difficulties[i]))
        for i in range(n_samples)
    ]


def _error_prob(rater: RaterProfile, true_label: int, difficulty: float, error_gain: float) -> float:
    base = (1.0 - rater.sensitivity) if true_label == 1 else (1.0 - rater.specificity)
    return float(np.clip(base * (1.0 + error_gain * difficulty), 0.0, 0.5))


def grade_sample(
    sample: SyntheticSample,
    panel: GradingPanel,
    seed: int,
    sample_id: int = 0,
    error_gain: float = DEFAULT_ERROR_GAIN,
) -> GradingRecord:
    """Grade one sample: two independent ratings, adjudication on disagreement.

    Each rater reports the true label with probability 1 - error, where the
    error rate is the rater's base rate for that class inflated by sample
    difficulty. Deterministic given (seed, sample_id).
    """
    if not isinstance(panel, GradingPanel):
        raise ParameterError("panel must be a GradingPanel")
    rng = seeded_rng(seed, STREAM_GRADE, sample_id)
    stage1 = []
    for rater in panel.stage1:
        err = _error_prob(rater, sample.true_label, sample.difficulty, error_gain)
        label = sample.true_label if rng.random() >= err else 1 - sample.true_label
        stage1.append((rater.rater_id, int(label)))
    consensus = int(stage1[0][1] == stage1[1][1])
    if consensus:
        adjudicator_label = None
        final = stage1[0][1]
    else:
        err = _error_prob(panel.adjudicator, sample.true_label, sample.difficulty, error_gain)
        label = sample.true_label if rng.random() >= err else 1 - sample.true_label
        adjudicator_label = (panel.adjudicator.rater_id, int(label))
        final = int(label)
    raw = [lab for _, lab in stage1] + ([adjudicator_label[1]] if adjudicator_label else [])
    soft = float(np.clip(np.mean(raw), 0.01, 0.99))
    return GradingRecord(
        sample_id=sample_id,
        stage1_labels=(stage1[0], stage1[1]),
        adjudicator_label=adjudicator_label,
        consensus=consensus,
        final_label=final,
        soft_label=soft,
    )


def grade_dataset(
    samples: list[SyntheticSample],
    panel: GradingPanel,
    seed: int,
    error_gain: float = DEFAULT_ERROR_GAIN,
) -> GradedDataset:
    """Grade every sample; sample ids are assigned by position."""
    records = [
        grade_sample(s, panel, seed, sample_id=i, error_gain=error_gain)
        for i, s in enumerate(samples)
    ]
    return GradedDataset(
        features=np.stack([s.features for s in samples]),
        true_labels=np.array([s.true_label for s in samples], dtype=int),
        records=records,
        difficulties=np.array([s.difficulty for s in samples]),
    )


def category_counts(records: list[GradingRecord]) -> dict[str, int]:
    """Counts per (consensus, final label) category; keys in CATEGORY_NAMES order."""
    counts = dict.fromkeys(CATEGORY_NAMES, 0)
    for r in records:
        if r.consensus and r.final_label == 1:
            counts["consensus_positive"] += 1
        elif r.consensus:
            counts["consensus_negative"] += 1
        elif r.final_label == 1:
            counts["non_consensus_positive"] += 1
        else:
            counts["non_consensus_negative"] += 1
    return counts


def split_dataset(
    dataset: GradedDataset,
    ratios: tuple[float, float, float],
    seed: int,
) -> tuple[GradedDataset, GradedDataset, GradedDataset]:
    """Stratified train/val/test split.

    Strata are the four (final_label, consensus) cells; within each, the split
    sizes follow ``ratios`` to within one sample (largest-remainder rounding,
    ties resolved toward the earlier split).
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise ParameterError(f"ratios must be three non-negative numbers, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ParameterError(f"ratios must sum to 1, got sum={sum(ratios)!r}")

    finals = dataset.final_labels
    flags = dataset.consensus_flags
    rng = seeded_rng(seed, STREAM_SPLIT)
    parts: list[list[int]] = [[], [], []]
    for lab in (0, 1):
        for cons in (0, 1):
            idx = np.flatnonzero((finals == lab) & (flags == cons))
            if idx.size == 0:
                warnings.warn(f"empty stratum (final_label={lab}, consensus={cons})", stacklevel=2)
                continue
            idx = rng.permutation(idx)
            exact = np.array(ratios) * idx.size
            counts = np.floor(exact).astype(int)
            leftovers = idx.size - counts.sum()
            for j in np.argsort(-(exact - counts), kind="stable")[:leftovers]:
                counts[j] += 1
            start = 0
            for part, c in zip(parts, counts):
                part.extend(idx[start : start + c].tolist())
                start += c
    return tuple(dataset.subset(sorted(p)) for p in parts)


# ---------------------------------------------------------------------------
# CSV round trip
#
# Column layout (fixed contract):
#   sample_id,f_0..f_{d-1},true_label,rater_labels,adjudicator_label,consensus,final_label,soft_label
# rater_labels holds the first-stage gradings as semicolon-joined rater_id:label
# pairs; adjudicator_label is a single rater_id:label pair, empty on consensus.
# Floats are written with repr() so values round-trip exactly.
# ---------------------------------------------------------------------------


def _csv_header(feature_dim: int) -> list[str]:
    return (
        ["sample_id"]
        + [f"f_{j}" for j in range(feature_dim)]
        + ["true_label", "rater_labels", "adjudicator_label", "consensus", "final_label", "soft_label"]
    )


def write_dataset_csv(dataset: GradedDataset, path) -> None:
    n, d = dataset.features.shape
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_csv_header(d))
        for i in range(n):
            rec = dataset.records[i]
            rater_labels = ";".join(f"{rid}:{lab}" for rid, lab in rec.stage1_labels)
            adj = "" if rec.adjudicator_label is None else "{}:{}".format(*rec.adjudicator_label)
            writer.writerow(
                [rec.sample_id]
                + [repr(float(x)) for x in dataset.features[i]]
                + [int(dataset.true_labels[i]), rater_labels, adj, rec.consensus, rec.final_label, repr(rec.soft_label)]
            )


def read_dataset_csv(path) -> GradedDataset:
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty dataset file")
    header = rows[0]
    d = len(header) - 7
    if d < 1 or header != _csv_header(d):
        raise DataError(f"{path}: unexpected CSV header")
    if len(rows) == 1:
        raise DataError(f"{path}: dataset has a header but no rows")

    features, trues, records = [], [], []
    for row in rows[1:]:
        sample_id = int(row[0])
        feats = np.array([float(x) for x in row[1 : 1 + d]])
        true_label = int(row[1 + d])
        stage1 = tuple(
            (int(ri), int(la)) for ri, la in (pair.split(":") for pair in row[2 + d].split(";"))
        )
        adj_field = row[3 + d]
        adjudicator = None
        if adj_field:
            rid, lab = adj_field.split(":")
            adjudicator = (int(rid), int(lab))
        records.append(
            GradingRecord(
                sample_id=sample_id,
                stage1_labels=stage1,
                adjudicator_label=adjudicator,
                consensus=int(row[4 + d]),
                final_label=int(row[5 + d]),
                soft_label=float(row[6 + d]),
            )
        )
        features.append(feats)
        trues.append(true_label)
    return GradedDataset(
        features=np.stack(features),
        true_labels=np.array(trues, dtype=int),
        records=records,
    )
