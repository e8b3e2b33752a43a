"""Model: forward/backward correctness, topology routing, checkpoints."""

import numpy as np
import pytest

from multirater.errors import ContractError, DataError, ParameterError
from multirater.losses import LossConfig, branch_loss, fusion_loss, uncertainty
from multirater.model import (
    ModelConfig,
    backward,
    forward,
    forward_batch,
    init_params,
    load_checkpoint,
    save_checkpoint,
)

RNG = np.random.default_rng(7)

TOY = ModelConfig(input_dim=5, trunk_dims=(6, 5, 4), branch_dim=3, seed=123)


def toy_params(seed=123, multi_branch=True, jitter=None):
    params = init_params(ModelConfig(5, (6, 5, 4), 3, seed), multi_branch=multi_branch)
    if jitter is not None:
        rng = np.random.default_rng(jitter)
        for name in params.tensors:
            params.tensors[name] = params.tensors[name] + 0.3 * rng.standard_normal(
                params.tensors[name].shape
            )
    return params


def total_loss(params, x, sen_labels, spec_labels, softs, a, u_weights, cfg=LossConfig()):
    """Full objective via the per-sample loss functions (all terms active)."""
    out, _ = forward_batch(params, x)
    total = 0.0
    n = x.shape[0]
    for i in range(n):
        ls, _, _ = branch_loss(out.y_sen[i], sen_labels[i], out.y_spec[i], a[i], cfg)
        lp, _, _ = branch_loss(out.y_spec[i], spec_labels[i], out.y_sen[i], a[i], cfg)
        total += (ls + lp) / n
    lf, _ = fusion_loss(out.y_fusion, softs, u_weights)
    return total + lf


def assemble_prob_grads(out, sen_labels, spec_labels, softs, a, u_weights, cfg=LossConfig()):
    """Probability-space gradients matching total_loss."""
    n = out.y_sen.shape[0]
    dy_sen = np.zeros_like(out.y_sen)
    dy_spec = np.zeros_like(out.y_spec)
    for i in range(n):
        _, g_own, g_partner = branch_loss(out.y_sen[i], sen_labels[i], out.y_spec[i], a[i], cfg)
        dy_sen[i] += g_own / n
        dy_spec[i] += g_partner / n
        _, g_own, g_partner = branch_loss(out.y_spec[i], spec_labels[i], out.y_sen[i], a[i], cfg)
        dy_spec[i] += g_own / n
        dy_sen[i] += g_partner / n
    _, dy_fus = fusion_loss(out.y_fusion, softs, u_weights)
    return {"y_sen": dy_sen, "y_spec": dy_spec, "y_fusion": dy_fus}


def random_batch(n, rng):
    x = rng.standard_normal((n, 5))
    labels = rng.integers(0, 2, size=n)
    sen = np.eye(2)[rng.integers(0, 2, size=n)]
    spec = np.eye(2)[rng.integers(0, 2, size=n)]
    soft = rng.uniform(0.01, 0.99, size=n)
    softs = np.stack([1 - soft, soft], axis=1)
    a = rng.integers(0, 2, size=n)
    del labels
    return x, sen, spec, softs, a


class TestForward:
    def test_outputs_are_distributions(self):
        params = toy_params()
        out, _ = forward_batch(params, RNG.standard_normal((40, 5)))
        for probs in (out.y_sen, out.y_spec, out.y_fusion):
            assert np.all(probs >= 0)
            np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)

    def test_zeroed_heads_give_uniform_outputs_and_zero_uncertainty(self):
        params = toy_params()
        for name in ("sen.head", "spec.head", "fusion.head"):
            params.tensors[f"{name}.W"] = np.zeros_like(params.tensors[f"{name}.W"])
            params.tensors[f"{name}.b"] = np.zeros_like(params.tensors[f"{name}.b"])
        out, _ = forward(params, RNG.standard_normal(5))
        np.testing.assert_allclose(out.y_sen, [0.5, 0.5], atol=1e-12)
        np.testing.assert_allclose(out.y_fusion, [0.5, 0.5], atol=1e-12)
        assert out.uncertainty == pytest.approx(0.0, abs=1e-12)

    def test_deterministic(self):
        x = RNG.standard_normal(5)
        out1, _ = forward(toy_params(), x)
        out2, _ = forward(toy_params(), x)
        np.testing.assert_array_equal(out1.y_fusion, out2.y_fusion)
        np.testing.assert_array_equal(out1.y_sen, out2.y_sen)

    def test_uncertainty_matches_definition(self):
        params = toy_params(jitter=5)
        out, _ = forward_batch(params, RNG.standard_normal((20, 5)))
        for i in range(20):
            assert out.uncertainty[i] == pytest.approx(
                uncertainty(out.y_sen[i], out.y_spec[i]), abs=1e-9
            )

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ParameterError):
            forward(toy_params(), np.zeros(4))
        with pytest.raises(ParameterError):
            forward_batch(toy_params(), np.zeros((3, 7)))

    def test_single_branch_outputs_mirror_fusion(self):
        params = toy_params(multi_branch=False)
        out, _ = forward_batch(params, RNG.standard_normal((6, 5)))
        np.testing.assert_array_equal(out.y_sen, out.y_fusion)
        np.testing.assert_array_equal(out.y_spec, out.y_fusion)
        np.testing.assert_array_equal(out.uncertainty, 0.0)

    def test_permuting_trunk_units_preserves_outputs(self):
        params = toy_params(jitter=11)
        x = RNG.standard_normal((8, 5))
        base, _ = forward_batch(params, x)
        perm = np.random.default_rng(0).permutation(params.config.trunk_dims[1])
        permuted = params.copy()
        permuted.tensors["trunk.1.W"] = params.tensors["trunk.1.W"][:, perm]
        permuted.tensors["trunk.1.b"] = params.tensors["trunk.1.b"][perm]
        permuted.tensors["trunk.2.W"] = params.tensors["trunk.2.W"][perm, :]
        out, _ = forward_batch(permuted, x)
        np.testing.assert_allclose(out.y_fusion, base.y_fusion, atol=1e-9)
        np.testing.assert_allclose(out.y_sen, base.y_sen, atol=1e-9)
        np.testing.assert_allclose(out.y_spec, base.y_spec, atol=1e-9)


class TestBackward:
    def test_full_model_gradients_match_finite_differences(self):
        """All losses active, random params, 20 samples: max rel err < 1e-4."""
        params = toy_params(jitter=3)
        rng = np.random.default_rng(42)
        x, sen, spec, softs, a = random_batch(20, rng)
        out, cache = forward_batch(params, x)
        u_weights = out.uncertainty.copy()  # detached constants
        grads = backward(params, cache, assemble_prob_grads(out, sen, spec, softs, a, u_weights))

        h = 1e-5
        worst = 0.0
        for name, tensor in params.tensors.items():
            flat = tensor.ravel()
            for k in range(flat.size):
                orig = flat[k]
                flat[k] = orig + h
                up = total_loss(params, x, sen, spec, softs, a, u_weights)
                flat[k] = orig - h
                down = total_loss(params, x, sen, spec, softs, a, u_weights)
                flat[k] = orig
                fd = (up - down) / (2 * h)
                got = grads[name].ravel()[k]
                rel = abs(got - fd) / max(abs(fd), 1e-6)
                worst = max(worst, rel)
        assert worst < 1e-4, f"worst relative gradient error {worst}"

    def test_zero_upstream_gradients_give_zero_parameter_gradients(self):
        params = toy_params()
        out, cache = forward_batch(params, RNG.standard_normal((4, 5)))
        grads = backward(params, cache, {})
        for g in grads.values():
            np.testing.assert_array_equal(g, 0.0)

    def test_fusion_gradient_reaches_sen_features_but_not_sen_head(self):
        params = toy_params(jitter=9)
        out, cache = forward_batch(params, RNG.standard_normal((4, 5)))
        # asymmetric probe: a constant vector would vanish in the softmax jacobian
        probe = np.tile([1.0, -1.0], (4, 1))
        grads = backward(params, cache, {"y_fusion": probe})
        np.testing.assert_array_equal(grads["sen.head.W"], 0.0)
        np.testing.assert_array_equal(grads["sen.head.b"], 0.0)
        assert np.abs(grads["sen.feat.W"]).max() > 1e-6  # concat features carry gradient

    def test_sen_gradient_does_not_touch_fusion_head(self):
        params = toy_params(jitter=9)
        out, cache = forward_batch(params, RNG.standard_normal((4, 5)))
        probe = np.tile([1.0, -1.0], (4, 1))
        grads = backward(params, cache, {"y_sen": probe})
        np.testing.assert_array_equal(grads["fusion.head.W"], 0.0)
        assert np.abs(grads["trunk.0.W"]).max() > 1e-6

    def test_stale_cache_rejected(self):
        params = toy_params()
        out, cache = forward_batch(params, RNG.standard_normal((2, 5)))
        params.version += 1  # simulate an optimizer update
        with pytest.raises(ContractError, match="stale"):
            backward(params, cache, {"y_fusion": np.ones_like(out.y_fusion)})

    def test_single_branch_rejects_sen_gradients(self):
        params = toy_params(multi_branch=False)
        out, cache = forward_batch(params, RNG.standard_normal((2, 5)))
        with pytest.raises(ContractError):
            backward(params, cache, {"y_sen": np.ones_like(out.y_sen)})


class TestCheckpoint:
    def test_round_trip_is_exact(self, tmp_path):
        params = toy_params(jitter=2)
        path = tmp_path / "ckpt.json"
        save_checkpoint(params, path, metadata={"note": "test"})
        loaded, meta = load_checkpoint(path)
        assert meta == {"note": "test"}
        assert loaded.multi_branch == params.multi_branch
        assert loaded.config == params.config
        assert set(loaded.tensors) == set(params.tensors)
        for name in params.tensors:
            np.testing.assert_array_equal(loaded.tensors[name], params.tensors[name])

    def test_round_trip_single_branch(self, tmp_path):
        params = toy_params(multi_branch=False)
        path = tmp_path / "ckpt.json"
        save_checkpoint(params, path)
        loaded, _ = load_checkpoint(path)
        assert not loaded.multi_branch
        assert "sen.head.W" not in loaded.tensors

    def test_corrupt_checkpoint_rejected(self, tmp_path):
        params = toy_params()
        path = tmp_path / "ckpt.json"
        save_checkpoint(params, path)
        import json

        doc = json.loads(path.read_text())
        doc["tensors"] = doc["tensors"][:-1]
        path.write_text(json.dumps(doc))
        with pytest.raises(DataError):
            load_checkpoint(path)


class TestConfig:
    def test_bad_widths_rejected(self):
        with pytest.raises(ParameterError):
            ModelConfig(input_dim=0)
        with pytest.raises(ParameterError):
            ModelConfig(input_dim=3, trunk_dims=(4, 0, 4))
