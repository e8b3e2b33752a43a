"""Training losses with analytic gradients.

All functions operate on post-softmax two-class probability vectors and
return gradients with respect to those vectors; the model's backward pass
maps them through the softmax onto parameters.

* ``consensus_loss`` -- contrastive penalty between the sensitivity and
  specificity branch outputs: pull together on consensus samples, push apart
  (up to a margin) on disagreement samples.
* ``uncertainty`` -- 0.5 * (1 - cosine similarity) of the two branch outputs,
  a per-sample difficulty score in [0, 0.5]. Used as a constant weight; no
  gradient flows through it.
* ``branch_loss`` -- cross entropy against a sampled branch label plus the
  weighted consensus term.
* ``fusion_loss`` -- KL divergence from soft labels to the fusion output,
  with per-sample weights (1 + u_i), normalized by their sum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ParameterError

LOG_CLAMP = 1e-12
# Probability inputs are validated loosely so finite-difference probes
# (single-coordinate perturbations of ~1e-5) stay inside the contract.
PROB_TOL = 1e-3


@dataclass(frozen=True)
class LossConfig:
    margin: float = 1.0
    alpha: float = 0.5

    def __post_init__(self):
        if self.margin <= 0:
            raise ParameterError(f"margin must be > 0, got {self.margin}")
        if self.alpha < 0:
            raise ParameterError(f"alpha must be >= 0, got {self.alpha}")


def _check_prob(vec, name: str) -> np.ndarray:
    arr = np.asarray(vec, dtype=float)
    if arr.shape != (2,):
        raise ContractError(f"{name} must be a two-class vector, got shape {arr.shape}")
    if np.any(arr < -PROB_TOL) or abs(float(arr.sum()) - 1.0) > PROB_TOL:
        raise ContractError(f"{name} is not a normalized probability vector: {arr}")
    return arr


def _check_flag(a) -> int:
    if a not in (0, 1):
        raise ParameterError(f"consensus flag must be 0 or 1, got {a!r}")
    return int(a)


def consensus_loss(y_sen, y_spec, a, margin: float = 1.0):
    """Contrastive consensus penalty and its gradients.

    loss = 0.5 * a * ||d||^2 + 0.5 * (1 - a) * max(0, margin - ||d||)^2,
    d = y_sen - y_spec.

    Returns (loss, grad_sen, grad_spec). In the disagreement term the
    gradient is 0 throughout the inactive region ||d|| >= margin (including
    the kink at ||d|| = margin) and, by subgradient choice, at d = 0.
    """
    y_sen = _check_prob(y_sen, "y_sen")
    y_spec = _check_prob(y_spec, "y_spec")
    a = _check_flag(a)
    if margin <= 0:
        raise ParameterError(f"margin must be > 0, got {margin}")

    d = y_sen - y_spec
    dist = float(np.linalg.norm(d))
    if a == 1:
        loss = 0.5 * dist * dist
        return loss, d.copy(), -d
    gap = margin - dist
    if gap <= 0:
        return 0.0, np.zeros(2), np.zeros(2)
    if dist == 0.0:
        return 0.5 * gap * gap, np.zeros(2), np.zeros(2)
    grad_sen = -(gap / dist) * d
    return 0.5 * gap * gap, grad_sen, -grad_sen


def uncertainty(y_sen, y_spec) -> float:
    """0.5 * (1 - cosine similarity); in [0, 0.5] for nonnegative vectors."""
    y_sen = _check_prob(y_sen, "y_sen")
    y_spec = _check_prob(y_spec, "y_spec")
    n_sen = float(np.linalg.norm(y_sen))
    n_spec = float(np.linalg.norm(y_spec))
    if n_sen == 0.0 or n_spec == 0.0:
        raise ContractError("uncertainty undefined for a zero vector")
    cos = float(y_sen @ y_spec) / (n_sen * n_spec)
    return float(np.clip(0.5 * (1.0 - cos), 0.0, 0.5))


def _log_clamped(p: np.ndarray) -> np.ndarray:
    return np.log(np.maximum(p, LOG_CLAMP))


def branch_loss(y_pred, y_label, partner_pred, a, config: LossConfig):
    """Cross entropy against a one-hot branch label plus the consensus term.

    Returns (loss, grad_pred, grad_partner); the consensus term contributes
    gradient to both branch outputs.
    """
    y_pred = _check_prob(y_pred, "y_pred")
    partner_pred = _check_prob(partner_pred, "partner_pred")
    y_label = np.asarray(y_label, dtype=float)
    if y_label.shape != (2,) or sorted(y_label.tolist()) != [0.0, 1.0]:
        raise ContractError(f"y_label must be one-hot over 2 classes, got {y_label}")

    ce = -float(y_label @ _log_clamped(y_pred))
    # d/dp of -label*log(max(p, clamp)): zero in the clamped region.
    grad_ce = np.where(y_pred > LOG_CLAMP, -y_label / np.maximum(y_pred, LOG_CLAMP), 0.0)
    con, g_own, g_partner = consensus_loss(y_pred, partner_pred, a, config.margin)
    loss = ce + config.alpha * con
    return loss, grad_ce + config.alpha * g_own, config.alpha * g_partner


def fusion_loss(batch_preds, batch_soft, batch_u):
    """Uncertainty-weighted KL divergence from soft labels to predictions.

    loss = sum_i (1 + u_i) * KL(soft_i || pred_i) / sum_i (1 + u_i).
    The weights are treated as constants; gradients flow only through the
    predictions. Returns (loss, grad_preds) with grad_preds shaped (n, 2).
    """
    preds = np.asarray(batch_preds, dtype=float)
    soft = np.asarray(batch_soft, dtype=float)
    u = np.asarray(batch_u, dtype=float)
    if preds.ndim != 2 or preds.shape[1] != 2:
        raise ParameterError(f"batch_preds must be (n, 2), got {preds.shape}")
    if soft.shape != preds.shape or u.shape != (preds.shape[0],):
        raise ParameterError(
            f"length mismatch: preds {preds.shape}, soft {soft.shape}, u {u.shape}"
        )
    if preds.shape[0] < 1:
        raise ParameterError("batch must contain at least one sample")
    for i in range(preds.shape[0]):
        _check_prob(preds[i], f"batch_preds[{i}]")
        _check_prob(soft[i], f"batch_soft[{i}]")
    if np.any(u < -PROB_TOL) or np.any(u > 0.5 + PROB_TOL):
        raise ParameterError("uncertainty weights must lie in [0, 0.5]")

    w = 1.0 + u
    total_w = float(w.sum())
    # 0 * log 0 = 0 by convention.
    elem = np.where(soft > 0.0, soft * (_log_clamped(soft) - _log_clamped(preds)), 0.0)
    loss = float((w[:, None] * elem).sum() / total_w)
    grad = np.where(
        preds > LOG_CLAMP,
        -(w[:, None] * soft) / np.maximum(preds, LOG_CLAMP) / total_w,
        0.0,
    )
    return loss, grad
