"""Three-branch dense network with a hand-rolled backward pass.

Topology: a shared tanh trunk feeds three per-branch feature layers (sen,
spec, fusion). The sen and spec heads classify their own features; the fusion
head classifies the concatenation [sen_features, spec_features,
fusion_features]. Gradients from the fusion head therefore flow back into the
sen/spec feature layers, and the trunk receives the sum of all three branch
contributions.

With ``multi_branch=False`` the network degenerates to trunk + one feature
layer + one head (the fusion slot); the sen/spec outputs mirror the fusion
output and the uncertainty is 0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DataError, ParameterError
from .rng import seeded_rng

CHECKPOINT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    trunk_dims: tuple[int, ...] = (64, 64, 64)
    branch_dim: int = 32
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "trunk_dims", tuple(int(w) for w in self.trunk_dims))
        if self.input_dim < 1 or self.branch_dim < 1 or any(w < 1 for w in self.trunk_dims):
            raise ParameterError("all layer widths must be >= 1")


@dataclass
class BranchOutputs:
    """Per-branch class probabilities for one sample plus derived uncertainty."""

    y_sen: np.ndarray
    y_spec: np.ndarray
    y_fusion: np.ndarray
    uncertainty: float


@dataclass
class BatchOutputs:
    y_sen: np.ndarray  # (n, 2)
    y_spec: np.ndarray
    y_fusion: np.ndarray
    uncertainty: np.ndarray  # (n,)


class ModelParams:
    """Named parameter tensors plus topology; mutated in place by training.

    ``version`` increments on every in-place update so that a forward cache
    can detect staleness in backward().
    """

    def __init__(self, config: ModelConfig, multi_branch: bool, tensors: dict[str, np.ndarray]):
        self.config = config
        self.multi_branch = multi_branch
        self.tensors = tensors
        self.version = 0

    def copy(self) -> "ModelParams":
        dup = ModelParams(self.config, self.multi_branch, {k: v.copy() for k, v in self.tensors.items()})
        dup.version = self.version
        return dup


def _layer_names(multi_branch: bool) -> list[str]:
    names = ["trunk.0", "trunk.1", "trunk.2"]
    if multi_branch:
        names += ["sen.feat", "sen.head", "spec.feat", "spec.head"]
    names += ["fusion.feat", "fusion.head"]
    return names


def _layer_shapes(config: ModelConfig, multi_branch: bool) -> dict[str, tuple[int, int]]:
    t1, t2, t3 = config.trunk_dims
    bd = config.branch_dim
    shapes = {"trunk.0": (config.input_dim, t1), "trunk.1": (t1, t2), "trunk.2": (t2, t3)}
    if multi_branch:
        shapes.update({"sen.feat": (t3, bd), "sen.head": (bd, 2), "spec.feat": (t3, bd), "spec.head": (bd, 2)})
        shapes["fusion.feat"] = (t3, bd)
        shapes["fusion.head"] = (3 * bd, 2)
    else:
        shapes["fusion.feat"] = (t3, bd)
        shapes["fusion.head"] = (bd, 2)
    return shapes


def init_params(config: ModelConfig, multi_branch: bool = True) -> ModelParams:
    """Symmetric uniform fan-in initialization; all biases zero."""
    rng = seeded_rng(config.seed)
    shapes = _layer_shapes(config, multi_branch)
    tensors: dict[str, np.ndarray] = {}
    for name in _layer_names(multi_branch):
        fan_in, fan_out = shapes[name]
        bound = 1.0 / np.sqrt(fan_in)
        tensors[f"{name}.W"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        tensors[f"{name}.b"] = np.zeros(fan_out)
    return ModelParams(config, multi_branch, tensors)


def _softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class ForwardCache:
    params: ModelParams
    version: int
    x: np.ndarray
    trunk: list[np.ndarray]  # post-tanh activations per trunk layer
    feats: dict[str, np.ndarray]  # branch name -> post-tanh features
    probs: dict[str, np.ndarray]  # branch name -> softmax outputs


def forward_batch(params: ModelParams, x: np.ndarray) -> tuple[BatchOutputs, ForwardCache]:
    """Run the network on a (n, input_dim) batch."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != params.config.input_dim:
        raise ParameterError(
            f"expected input of shape (n, {params.config.input_dim}), got {x.shape}"
        )
    t = params.tensors
    trunk = []
    h = x
    for i in range(3):
        h = np.tanh(h @ t[f"trunk.{i}.W"] + t[f"trunk.{i}.b"])
        trunk.append(h)

    feats = {}
    branch_names = ("sen", "spec", "fusion") if params.multi_branch else ("fusion",)
    for name in branch_names:
        feats[name] = np.tanh(h @ t[f"{name}.feat.W"] + t[f"{name}.feat.b"])

    probs = {}
    if params.multi_branch:
        probs["sen"] = _softmax(feats["sen"] @ t["sen.head.W"] + t["sen.head.b"])
        probs["spec"] = _softmax(feats["spec"] @ t["spec.head.W"] + t["spec.head.b"])
        concat = np.concatenate([feats["sen"], feats["spec"], feats["fusion"]], axis=1)
        probs["fusion"] = _softmax(concat @ t["fusion.head.W"] + t["fusion.head.b"])
        dots = (probs["sen"] * probs["spec"]).sum(axis=1)
        norms = np.linalg.norm(probs["sen"], axis=1) * np.linalg.norm(probs["spec"], axis=1)
        u = np.clip(0.5 * (1.0 - dots / norms), 0.0, 0.5)
    else:
        probs["fusion"] = _softmax(feats["fusion"] @ t["fusion.head.W"] + t["fusion.head.b"])
        probs["sen"] = probs["fusion"]
        probs["spec"] = probs["fusion"]
        u = np.zeros(x.shape[0])

    out = BatchOutputs(
        y_sen=probs["sen"], y_spec=probs["spec"], y_fusion=probs["fusion"], uncertainty=u
    )
    cache = ForwardCache(params=params, version=params.version, x=x, trunk=trunk, feats=feats, probs=probs)
    return out, cache


def forward(params: ModelParams, features: np.ndarray) -> tuple[BranchOutputs, ForwardCache]:
    """Single-sample wrapper around forward_batch."""
    features = np.asarray(features, dtype=float)
    if features.ndim != 1:
        raise ParameterError(f"expected a flat feature vector, got shape {features.shape}")
    out, cache = forward_batch(params, features[None, :])
    single = BranchOutputs(
        y_sen=out.y_sen[0],
        y_spec=out.y_spec[0],
        y_fusion=out.y_fusion[0],
        uncertainty=float(out.uncertainty[0]),
    )
    return single, cache


def _softmax_backward(y: np.ndarray, dy: np.ndarray) -> np.ndarray:
    # dL/dz for z the logits of softmax y, given dL/dy.
    inner = (y * dy).sum(axis=1, keepdims=True)
    return y * (dy - inner)


def backward(params: ModelParams, cache: ForwardCache, grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Map probability-space gradients onto all parameters.

    ``grads`` holds dL/dy arrays of shape (n, 2) under keys 'y_sen', 'y_spec',
    'y_fusion'; missing keys mean zero gradient. Raises ContractError when the
    cache does not match the current parameter values.
    """
    if cache.params is not params or cache.version != params.version:
        raise ContractError("stale forward cache: parameters changed since forward()")
    n = cache.x.shape[0]
    zero = np.zeros((n, 2))
    dy_sen = np.asarray(grads.get("y_sen", zero), dtype=float)
    dy_spec = np.asarray(grads.get("y_spec", zero), dtype=float)
    dy_fus = np.asarray(grads.get("y_fusion", zero), dtype=float)
    if not params.multi_branch and (np.any(dy_sen) or np.any(dy_spec)):
        raise ContractError("single-branch model only accepts y_fusion gradients")

    t = params.tensors
    out: dict[str, np.ndarray] = {}
    h3 = cache.trunk[2]
    bd = params.config.branch_dim

    if params.multi_branch:
        dz_sen = _softmax_backward(cache.probs["sen"], dy_sen)
        dz_spec = _softmax_backward(cache.probs["spec"], dy_spec)
        dz_fus = _softmax_backward(cache.probs["fusion"], dy_fus)

        out["sen.head.W"] = cache.feats["sen"].T @ dz_sen
        out["sen.head.b"] = dz_sen.sum(axis=0)
        out["spec.head.W"] = cache.feats["spec"].T @ dz_spec
        out["spec.head.b"] = dz_spec.sum(axis=0)
        concat = np.concatenate([cache.feats["sen"], cache.feats["spec"], cache.feats["fusion"]], axis=1)
        out["fusion.head.W"] = concat.T @ dz_fus
        out["fusion.head.b"] = dz_fus.sum(axis=0)

        dconcat = dz_fus @ t["fusion.head.W"].T
        dfeat = {
            "sen": dz_sen @ t["sen.head.W"].T + dconcat[:, :bd],
            "spec": dz_spec @ t["spec.head.W"].T + dconcat[:, bd : 2 * bd],
            "fusion": dconcat[:, 2 * bd :],
        }
    else:
        dz_fus = _softmax_backward(cache.probs["fusion"], dy_fus)
        out["fusion.head.W"] = cache.feats["fusion"].T @ dz_fus
        out["fusion.head.b"] = dz_fus.sum(axis=0)
        dfeat = {"fusion": dz_fus @ t["fusion.head.W"].T}

    dh3 = np.zeros_like(h3)
    for name, df in dfeat.items():
        dz = df * (1.0 - cache.feats[name] ** 2)
        out[f"{name}.feat.W"] = h3.T @ dz
        out[f"{name}.feat.b"] = dz.sum(axis=0)
        dh3 += dz @ t[f"{name}.feat.W"].T

    dh = dh3
    for i in (2, 1, 0):
        dz = dh * (1.0 - cache.trunk[i] ** 2)
        prev = cache.x if i == 0 else cache.trunk[i - 1]
        out[f"trunk.{i}.W"] = prev.T @ dz
        out[f"trunk.{i}.b"] = dz.sum(axis=0)
        if i > 0:
            dh = dz @ t[f"trunk.{i}.W"].T
    return out


# ---------------------------------------------------------------------------
# Checkpoint format (stable): a JSON document
#   {"format_version": 1,
#    "model": {"input_dim", "trunk_dims", "branch_dim", "seed", "multi_branch"},
#    "metadata": {...},
#    "tensors": [{"name": str, "shape": [int, ...], "data": [row-major floats]}]}
# ---------------------------------------------------------------------------


def save_checkpoint(params: ModelParams, path, metadata: dict | None = None) -> None:
    doc = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "model": {
            "input_dim": params.config.input_dim,
            "trunk_dims": list(params.config.trunk_dims),
            "branch_dim": params.config.branch_dim,
            "seed": params.config.seed,
            "multi_branch": params.multi_branch,
        },
        "metadata": metadata or {},
        "tensors": [
            {"name": name, "shape": list(arr.shape), "data": arr.ravel(order="C").tolist()}
            for name, arr in params.tensors.items()
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path) -> tuple[ModelParams, dict]:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint format {doc.get('format_version')!r}")
    m = doc["model"]
    config = ModelConfig(
        input_dim=m["input_dim"],
        trunk_dims=tuple(m["trunk_dims"]),
        branch_dim=m["branch_dim"],
        seed=m["seed"],
    )
    multi_branch = bool(m["multi_branch"])
    expected = _layer_shapes(config, multi_branch)
    tensors: dict[str, np.ndarray] = {}
    for entry in doc["tensors"]:
        arr = np.array(entry["data"], dtype=float).reshape(entry["shape"])
        tensors[entry["name"]] = arr
    for name in _layer_names(multi_branch):
        fan_in, fan_out = expected[name]
        if tensors.get(f"{name}.W") is None or tensors[f"{name}.W"].shape != (fan_in, fan_out):
            raise DataError(f"{path}: tensor {name}.W missing or mis-shaped")
        if tensors.get(f"{name}.b") is None or tensors[f"{name}.b"].shape != (fan_out,):
            raise DataError(f"{path}: tensor {name}.b missing or mis-shaped")
    return ModelParams(config, multi_branch, tensors), doc.get("metadata", {})
