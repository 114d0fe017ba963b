import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dgpo.nn import (
    AdamState,
    Checkpoint,
    MlpSpec,
    NonFiniteError,
    ParamVector,
    adam_step,
    categorical_sample,
    categorical_sample_batch,
    clip_global_norm,
    init_params,
    load_checkpoint,
    log_softmax,
    mlp_backward,
    mlp_forward,
    save_checkpoint,
    softmax_probs,
)


def reference_forward(spec, params, x):
    # straight matmul-and-activate, independent of the cache machinery
    blocks = dict(params.blocks())
    h = np.asarray(x, dtype=np.float64)
    n_layers = len(spec.sizes) - 1
    for i in range(n_layers):
        h = h @ blocks[f"W{i}"] + blocks[f"b{i}"]
        if i < n_layers - 1:
            h = np.tanh(h) if spec.activation == "tanh" else np.maximum(h, 0.0)
    return h


def random_net(rng, activation="tanh", max_dim=8):
    dims = rng.integers(1, max_dim + 1, size=rng.integers(3, 5))
    spec = MlpSpec(int(dims[0]), tuple(int(d) for d in dims[1:-1]), int(dims[-1]), activation)
    params = ParamVector(rng.normal(size=spec.n_params), spec.layout)
    return spec, params


# ---------------------------------------------------------------------------
# ParamVector / MlpSpec

def test_param_vector_length_matches_layout():
    spec = MlpSpec(3, (4, 5), 2)
    assert spec.n_params == 3 * 4 + 4 + 4 * 5 + 5 + 5 * 2 + 2
    with pytest.raises(ValueError):
        ParamVector(np.zeros(spec.n_params - 1), spec.layout)


def test_blocks_are_views():
    spec = MlpSpec(2, (3,), 1)
    p = ParamVector(np.zeros(spec.n_params), spec.layout)
    dict(p.blocks())["b0"][:] = 7.0
    assert np.count_nonzero(p.values == 7.0) == 3


@pytest.mark.parametrize("kw", [dict(hidden=()), dict(input_dim=0), dict(activation="gelu")])
def test_spec_rejects_bad_shapes(kw):
    args = dict(input_dim=2, hidden=(3,), output_dim=1, activation="tanh")
    args.update(kw)
    with pytest.raises(ValueError):
        MlpSpec(**args)


# ---------------------------------------------------------------------------
# forward

def test_zero_params_give_zero_output():
    spec = MlpSpec(3, (4,), 2)
    out = mlp_forward(spec, ParamVector(np.zeros(spec.n_params), spec.layout), np.array([1.0, -2.0, 3.0]))
    np.testing.assert_array_equal(out, np.zeros(2))


def test_relu_identity_layer():
    spec = MlpSpec(2, (2,), 2, "relu")
    p = ParamVector(np.zeros(spec.n_params), spec.layout)
    b = dict(p.blocks())
    b["W0"][:] = np.eye(2)
    b["W1"][:] = np.eye(2)
    np.testing.assert_array_equal(mlp_forward(spec, p, np.array([1.0, -1.0])), [1.0, 0.0])


@pytest.mark.parametrize("activation", ["tanh", "relu"])
def test_forward_matches_reference(activation):
    rng = np.random.default_rng(3)
    for _ in range(20):
        spec, params = random_net(rng, activation)
        x = rng.normal(size=(5, spec.input_dim))
        np.testing.assert_allclose(mlp_forward(spec, params, x), reference_forward(spec, params, x),
                                   rtol=0, atol=1e-12)
        np.testing.assert_allclose(mlp_forward(spec, params, x[0]), reference_forward(spec, params, x[0]),
                                   rtol=0, atol=1e-12)


def test_forward_rejects_wrong_input_dim():
    spec = MlpSpec(3, (4,), 2)
    params = ParamVector(np.zeros(spec.n_params), spec.layout)
    with pytest.raises(ValueError, match="input"):
        mlp_forward(spec, params, np.zeros(4))


def test_forward_rejects_wrong_param_length():
    spec = MlpSpec(3, (4,), 2)
    other = MlpSpec(3, (5,), 2)
    with pytest.raises(ValueError):
        mlp_forward(spec, ParamVector(np.zeros(other.n_params), other.layout), np.zeros(3))


# ---------------------------------------------------------------------------
# backward

def test_zero_output_grad_gives_zero_gradients():
    rng = np.random.default_rng(0)
    spec, params = random_net(rng)
    g, gx = mlp_backward(spec, params, rng.normal(size=spec.input_dim), np.zeros(spec.output_dim))
    assert not np.any(g.values)
    assert not np.any(gx)


def test_linear_identity_gradient():
    # y = w * x through an identity hidden unit (relu, positive path)
    spec = MlpSpec(1, (1,), 1, "relu")
    p = ParamVector(np.zeros(spec.n_params), spec.layout)
    b = dict(p.blocks())
    b["W0"][:] = 1.0
    b["W1"][:] = 2.5
    g, gx = mlp_backward(spec, p, np.array([3.0]), np.array([1.0]))
    gb = dict(g.blocks())
    assert gb["W1"][0, 0] == pytest.approx(3.0)
    assert gx[0] == pytest.approx(2.5)


def finite_difference_check(spec, params, x, out_grad, h=1e-5, rel=1e-4):
    def f(values, xin):
        return float(mlp_forward(spec, ParamVector(values, spec.layout), xin).ravel() @ out_grad.ravel())

    g, gx = mlp_backward(spec, params, x, out_grad)
    for i in range(len(params)):
        e = np.zeros(len(params))
        e[i] = h
        num = (f(params.values + e, x) - f(params.values - e, x)) / (2 * h)
        assert abs(num - g.values[i]) <= rel * max(1.0, abs(num)), (i, num, g.values[i])
    flat = x.ravel()
    for i in range(flat.size):
        e = np.zeros_like(flat)
        e[i] = h
        num = (f(params.values, (flat + e).reshape(x.shape)) - f(params.values, (flat - e).reshape(x.shape))) / (2 * h)
        assert abs(num - gx.ravel()[i]) <= rel * max(1.0, abs(num))


def test_gradients_match_finite_differences_on_100_probes():
    rng = np.random.default_rng(11)
    for probe in range(100):
        spec, params = random_net(rng, "tanh")
        batch = rng.integers(1, 4)
        x = rng.normal(size=(batch, spec.input_dim))
        finite_difference_check(spec, params, x, rng.normal(size=(batch, spec.output_dim)))


def test_relu_gradients_match_finite_differences():
    rng = np.random.default_rng(5)
    for _ in range(20):
        spec, params = random_net(rng, "relu")
        x = rng.normal(size=(2, spec.input_dim))
        finite_difference_check(spec, params, x, rng.normal(size=(2, spec.output_dim)))


# ---------------------------------------------------------------------------
# Adam

def test_adam_zero_grads_leave_params_unchanged():
    p = ParamVector(np.array([1.0, -2.0]), (("w", (2,)),))
    new_p, new_s = adam_step(AdamState.for_params(p), p, ParamVector(np.zeros(2), p.layout))
    np.testing.assert_array_equal(new_p.values, p.values)
    assert new_s.step_count == 1


def test_adam_zero_grads_decay_moments():
    p = ParamVector(np.array([1.0, -2.0]), (("w", (2,)),))
    state = AdamState(np.array([0.5, 0.5]), np.array([0.1, 0.1]), step_count=3)
    _, new_s = adam_step(state, p, ParamVector(np.zeros(2), p.layout))
    np.testing.assert_allclose(new_s.first_moment, 0.9 * 0.5)
    np.testing.assert_allclose(new_s.second_moment, 0.999 * 0.1)
    assert new_s.step_count == 4


def test_adam_first_step_magnitude_is_lr():
    p = ParamVector(np.array([0.0]), (("w", (1,)),))
    state = AdamState.for_params(p, lr=0.01)
    new_p, _ = adam_step(state, p, ParamVector(np.array([1.0]), p.layout))
    # m_hat = 1, v_hat = 1: step = lr / (1 + eps)
    assert new_p.values[0] == pytest.approx(-0.01 / (1 + 1e-8), rel=1e-12)


def test_adam_repeated_grads_converge_to_lr_sign():
    p = ParamVector(np.array([0.0, 0.0]), (("w", (2,)),))
    state = AdamState.for_params(p, lr=1e-3)
    g = ParamVector(np.array([0.3, -7.0]), p.layout)
    for _ in range(2000):
        prev = p.values.copy()
        p, state = adam_step(state, p, g)
    np.testing.assert_allclose(p.values - prev, [-1e-3, 1e-3], rtol=1e-6)


def test_adam_names_non_finite_block():
    layout = (("W0", (2,)), ("b0", (1,)))
    p = ParamVector(np.zeros(3), layout)
    with pytest.raises(NonFiniteError, match="b0"):
        adam_step(AdamState.for_params(p), p, ParamVector(np.array([0.0, 0.0, np.nan]), layout))


def test_clip_global_norm_joint():
    a = ParamVector(np.array([3.0]), (("w", (1,)),))
    b = ParamVector(np.array([4.0]), (("w", (1,)),))
    norm = clip_global_norm([a, b], 1.0)
    assert norm == pytest.approx(5.0)
    assert math.hypot(a.values[0], b.values[0]) == pytest.approx(1.0)


# ---------------------------------------------------------------------------
# categorical

def test_softmax_examples():
    np.testing.assert_allclose(softmax_probs([0.0, 0.0]), [0.5, 0.5], atol=1e-15)
    np.testing.assert_allclose(softmax_probs([math.log(9.0), 0.0]), [0.9, 0.1], atol=1e-15)
    p = softmax_probs([1e4, 0.0])
    assert np.all(np.isfinite(p)) and p[0] == pytest.approx(1.0)


def test_softmax_rejects_non_finite():
    with pytest.raises(ValueError):
        softmax_probs([np.inf, 0.0])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=12))
def test_softmax_is_a_distribution(logits):
    p = softmax_probs(np.array(logits))
    assert abs(p.sum() - 1.0) <= 1e-12
    assert np.all(p >= 0)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-30, 30), min_size=1, max_size=12))
def test_softmax_strictly_positive_for_moderate_logits(logits):
    assert np.all(softmax_probs(np.array(logits)) > 0)


def test_uniform_sampling_frequencies():
    rng = np.random.default_rng(0)
    idx, logp = categorical_sample_batch(np.zeros((100_000, 4)), rng)
    np.testing.assert_allclose(np.bincount(idx, minlength=4) / idx.size, 0.25, atol=0.02)
    np.testing.assert_allclose(logp, math.log(0.25))


def test_dominant_logit_always_wins():
    rng = np.random.default_rng(1)
    assert all(categorical_sample(np.array([1000.0, 0.0]), rng)[0] == 0 for _ in range(1000))


def test_sample_log_prob_matches_softmax():
    rng = np.random.default_rng(2)
    logits = np.array([math.log(2.0), 0.0, 0.0])
    np.testing.assert_allclose(softmax_probs(logits), [0.5, 0.25, 0.25], atol=1e-15)
    for _ in range(50):
        i, lp = categorical_sample(logits, rng)
        assert lp == pytest.approx(log_softmax(logits)[i])


def test_sampling_is_reproducible():
    logits = np.random.default_rng(0).normal(size=(64, 5))
    a = categorical_sample_batch(logits, np.random.default_rng(9))
    b = categorical_sample_batch(logits, np.random.default_rng(9))
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])


def test_empty_logits_rejected():
    with pytest.raises(ValueError):
        categorical_sample(np.array([]), np.random.default_rng(0))


# ---------------------------------------------------------------------------
# init and checkpoints

def test_init_final_layer_scale_gives_near_uniform_policy():
    spec = MlpSpec(11, (64, 64), 8)
    params = init_params(spec, np.random.default_rng(0), final_scale=0.01)
    p = softmax_probs(mlp_forward(spec, params, np.random.default_rng(1).uniform(-1, 1, size=(50, 11))))
    assert np.max(0.5 * np.abs(p - 1 / 8).sum(axis=1)) < 0.05


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(4)
    spec_a, pa = random_net(rng)
    spec_b, pb = random_net(rng)
    ckpt = Checkpoint({"a": pa, "b": pb}, {"note": "x", "n": 3})
    path = tmp_path / "c.dgpo"
    save_checkpoint(path, ckpt)
    raw = path.read_bytes()
    assert raw.startswith(b"DGPO1")
    back = load_checkpoint(path)
    assert back.meta == ckpt.meta
    for k in ("a", "b"):
        assert back.sections[k].layout == ckpt.sections[k].layout
        assert back.sections[k].values.tobytes() == ckpt.sections[k].values.tobytes()


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.dgpo"
    path.write_bytes(b"nope")
    with pytest.raises(ValueError):
        load_checkpoint(path)


def test_checkpoint_rejects_truncation(tmp_path):
    spec = MlpSpec(2, (3,), 1)
    path = tmp_path / "c.dgpo"
    save_checkpoint(path, Checkpoint({"a": ParamVector(np.ones(spec.n_params), spec.layout)}))
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(ValueError, match="truncated"):
        load_checkpoint(path)
