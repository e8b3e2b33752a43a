"""Multi-branch training loop: per-epoch label sampling, Adam, LR halving, model selection.

Each batch optimizes one combined objective,

    mean_i[CE_sen_i + alpha * L_con_i] + mean_i[CE_spec_i + alpha * L_con_i]
        + fusion KL (uncertainty-weighted, self-normalized),

with a single Adam update over all parameters. The consensus term appears in
both branch losses, so its effective weight on the shared term is 2 * alpha.
Branch labels are redrawn every epoch; soft labels come from rater-accuracy
weights computed on the training split.

Ablation flags:

* ``multi_branch=False``: single head trained with cross entropy on the final
  labels (the baseline); the other flags are ignored.
* ``consensus_loss=False``: drop the consensus term from both branch losses.
* ``uncertainty_weighting=False``: fusion KL weights all samples equally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError, TrainingDivergedError, UndefinedMetricError
from .labels import Branch, RaterWeights, compute_rater_weights, sample_branch_label, soft_label
from .losses import LOG_CLAMP, fusion_loss
from .metrics import roc_auc
from .model import BatchOutputs, ModelConfig, ModelParams, backward, forward_batch, init_params
from .rng import STREAM_SHUFFLE, seeded_rng
from .simulate import GradedDataset

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    max_epochs: int = 50
    lr: float = 2e-4
    lr_halving_period: int = 15
    alpha: float = 0.5
    margin: float = 1.0
    seed: int = 0
    multi_branch: bool = True
    consensus_loss: bool = True
    uncertainty_weighting: bool = True

    def __post_init__(self):
        if self.batch_size < 1:
            raise ParameterError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr <= 0:
            raise ParameterError(f"lr must be > 0, got {self.lr}")
        if self.max_epochs < 0:
            raise ParameterError(f"max_epochs must be >= 0, got {self.max_epochs}")
        if self.lr_halving_period < 1:
            raise ParameterError(f"lr_halving_period must be >= 1, got {self.lr_halving_period}")


def learning_rate(config: TrainConfig, epoch: int) -> float:
    """Step schedule: halved every lr_halving_period epochs (epochs count from 0)."""
    return config.lr * 0.5 ** (epoch // config.lr_halving_period)


@dataclass
class TrainState:
    params: ModelParams
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    epoch: int = 0
    best_params: ModelParams | None = None
    best_val_auc: float = float("-inf")
    log: list[dict] = field(default_factory=list)


def init_state(model_config: ModelConfig, train_config: TrainConfig) -> TrainState:
    params = init_params(model_config, multi_branch=train_config.multi_branch)
    return TrainState(
        params=params,
        m={k: np.zeros_like(v) for k, v in params.tensors.items()},
        v={k: np.zeros_like(v) for k, v in params.tensors.items()},
    )


def _one_hot(labels: np.ndarray) -> np.ndarray:
    out = np.zeros((labels.size, 2))
    out[np.arange(labels.size), labels] = 1.0
    return out


def _clamped_log_prob(probs: np.ndarray, idx: np.ndarray):
    """Per-sample -log p[idx] with the clamp of losses.branch_loss; also d/dp."""
    rows = np.arange(idx.size)
    p = probs[rows, idx]
    ce = -np.log(np.maximum(p, LOG_CLAMP))
    dprob = np.zeros_like(probs)
    dprob[rows, idx] = np.where(p > LOG_CLAMP, -1.0 / np.maximum(p, LOG_CLAMP), 0.0)
    return ce, dprob


def _consensus_terms(y_sen: np.ndarray, y_spec: np.ndarray, a: np.ndarray, margin: float):
    """Vectorized consensus loss and gradient wrt y_sen (negate for y_spec).

    Matches losses.consensus_loss sample by sample, including the zero
    gradient on the inactive hinge region and at zero distance.
    """
    d = y_sen - y_spec
    dist = np.linalg.norm(d, axis=1)
    gap = margin - dist
    agree = a == 1
    loss = np.where(agree, 0.5 * dist**2, 0.5 * np.maximum(gap, 0.0) ** 2)
    safe_dist = np.maximum(dist, 1e-300)
    scale = np.where(agree, 1.0, np.where((gap > 0) & (dist > 0), -gap / safe_dist, 0.0))
    return loss, scale[:, None] * d


def _losses_and_grads(
    out: BatchOutputs,
    sen_idx: np.ndarray,
    spec_idx: np.ndarray,
    softs: np.ndarray,
    final_idx: np.ndarray,
    a: np.ndarray,
    config: TrainConfig,
):
    """Batch objective scalars and probability-space gradients."""
    n = final_idx.size
    scalars: dict[str, float] = {}
    grads: dict[str, np.ndarray] = {}

    if not config.multi_branch:
        ce, dfus = _clamped_log_prob(out.y_fusion, final_idx)
        scalars.update(
            loss_sen=0.0, loss_spec=0.0, loss_consensus=0.0, loss_fusion=float(ce.mean())
        )
        grads["y_fusion"] = dfus / n
        scalars["total"] = scalars["loss_fusion"]
        return scalars, grads

    ce_sen, d_sen = _clamped_log_prob(out.y_sen, sen_idx)
    ce_spec, d_spec = _clamped_log_prob(out.y_spec, spec_idx)
    con, g_con_sen = _consensus_terms(out.y_sen, out.y_spec, a, config.margin)
    alpha = config.alpha if config.consensus_loss else 0.0

    u = out.uncertainty if config.uncertainty_weighting else np.zeros(n)
    fus, d_fus = fusion_loss(out.y_fusion, softs, u)

    scalars["loss_sen"] = float((ce_sen + alpha * con).mean())
    scalars["loss_spec"] = float((ce_spec + alpha * con).mean())
    scalars["loss_consensus"] = float(con.mean())
    scalars["loss_fusion"] = fus
    scalars["total"] = scalars["loss_sen"] + scalars["loss_spec"] + fus

    grads["y_sen"] = (d_sen + 2.0 * alpha * g_con_sen) / n
    grads["y_spec"] = (d_spec - 2.0 * alpha * g_con_sen) / n
    grads["y_fusion"] = d_fus
    return scalars, grads


def _adam_update(state: TrainState, grads: dict[str, np.ndarray], lr: float) -> None:
    state.t += 1
    bc1 = 1.0 - ADAM_BETA1**state.t
    bc2 = 1.0 - ADAM_BETA2**state.t
    for name in state.params.tensors:
        g = grads[name]
        state.m[name] = ADAM_BETA1 * state.m[name] + (1.0 - ADAM_BETA1) * g
        state.v[name] = ADAM_BETA2 * state.v[name] + (1.0 - ADAM_BETA2) * g * g
        state.params.tensors[name] -= lr * (state.m[name] / bc1) / (
            np.sqrt(state.v[name] / bc2) + ADAM_EPS
        )
    state.params.version += 1


def train_step(
    state: TrainState,
    features: np.ndarray,
    records: list,
    weights: RaterWeights,
    config: TrainConfig,
) -> dict[str, float]:
    """One combined Adam step on a batch; returns the loss scalars."""
    if len(records) < 1:
        raise ParameterError("batch must be non-empty")
    final_idx = np.array([r.final_label for r in records], dtype=int)
    a = np.array([r.consensus for r in records], dtype=int)
    if config.multi_branch:
        sen_idx = np.array(
            [sample_branch_label(r, Branch.SEN, config.seed, state.epoch) for r in records], dtype=int
        )
        spec_idx = np.array(
            [sample_branch_label(r, Branch.SPEC, config.seed, state.epoch) for r in records], dtype=int
        )
        softs = np.stack([soft_label(r, weights) for r in records])
    else:
        sen_idx = spec_idx = final_idx
        softs = _one_hot(final_idx)

    out, cache = forward_batch(state.params, features)
    scalars, prob_grads = _losses_and_grads(out, sen_idx, spec_idx, softs, final_idx, a, config)
    if not math.isfinite(scalars["total"]):
        raise TrainingDivergedError(
            f"non-finite loss at epoch {state.epoch}, step {state.t}: {scalars}"
        )
    param_grads = backward(state.params, cache, prob_grads)
    _adam_update(state, param_grads, learning_rate(config, state.epoch))
    return scalars


def _validation_auc(params: ModelParams, val: GradedDataset) -> float:
    out, _ = forward_batch(params, val.features)
    try:
        return roc_auc(out.y_fusion[:, 1], val.final_labels)
    except UndefinedMetricError:
        return float("nan")


def fit(
    train: GradedDataset,
    val: GradedDataset,
    model_config: ModelConfig,
    train_config: TrainConfig,
    on_epoch=None,
) -> tuple[ModelParams, list[dict]]:
    """Train for up to max_epochs and return the best-validation-AUC parameters.

    The training log holds one record per completed epoch:
    {epoch, lr, loss_sen, loss_spec, loss_fusion, loss_consensus, val_auc}.
    On divergence the loop aborts and the log collected so far is returned.
    ``on_epoch``, when given, is called with each record as it is appended.
    """
    state = init_state(model_config, train_config)
    weights = compute_rater_weights(train.records)
    shuffle_rng = seeded_rng(train_config.seed, STREAM_SHUFFLE)
    state.best_params = state.params.copy()
    n = len(train)

    for epoch in range(train_config.max_epochs):
        state.epoch = epoch
        order = shuffle_rng.permutation(n)
        sums = dict.fromkeys(("loss_sen", "loss_spec", "loss_fusion", "loss_consensus"), 0.0)
        try:
            for start in range(0, n, train_config.batch_size):
                idx = order[start : start + train_config.batch_size]
                scalars = train_step(
                    state, train.features[idx], [train.records[i] for i in idx], weights, train_config
                )
                for key in sums:
                    sums[key] += scalars[key] * idx.size
        except TrainingDivergedError:
            break
        val_auc = _validation_auc(state.params, val)
        if val_auc > state.best_val_auc:
            state.best_val_auc = val_auc
            state.best_params = state.params.copy()
        record = {
            "epoch": epoch,
            "lr": learning_rate(train_config, epoch),
            **{key: sums[key] / n for key in sums},
            "val_auc": val_auc,
        }
        state.log.append(record)
        if on_epoch is not None:
            on_epoch(record)
    return state.best_params, state.log
