import math

import numpy as np
import pytest

from dgpo.config import ExperimentConfig
from dgpo.nn import AdamState, ParamVector, mlp_backward, softmax_probs
from dgpo.policy import (
    LatentPrior,
    act,
    act_batch,
    actor_logits,
    conditioned_input,
    discriminator_probs,
    make_policy,
    policy_from_checkpoint,
    policy_to_checkpoint,
    sample_latent,
)
from dgpo.trainer import discriminator_update


@pytest.fixture
def policy():
    return make_policy(obs_dim=5, n_actions=4, n_z=3, rng=np.random.default_rng(0))


def test_prior_degenerate_and_uniform():
    rng = np.random.default_rng(0)
    assert {sample_latent(LatentPrior(1), rng) for _ in range(100)} == {0}
    draws = np.array([sample_latent(LatentPrior(4), rng) for _ in range(100_000)])
    np.testing.assert_allclose(np.bincount(draws) / draws.size, 0.25, atol=0.02)
    assert all(LatentPrior(4).log_prob(z) == -math.log(4) for z in range(4))


def test_network_shapes(policy):
    assert policy.actor.spec.input_dim == 5 + 3
    assert policy.critic_ex.spec.input_dim == policy.critic_in.spec.input_dim == 8
    assert policy.discriminator.spec.input_dim == 5
    assert policy.discriminator.spec.output_dim == 3
    assert policy.critic_ex.params is not policy.critic_in.params


def test_fresh_policy_is_near_uniform(policy):
    obs = np.random.default_rng(1).uniform(-1, 1, size=(200, 5))
    for z in range(3):
        p = softmax_probs(actor_logits(policy, obs, z))
        assert np.max(0.5 * np.abs(p - 0.25).sum(axis=1)) < 0.05


def test_latent_path_is_live(policy):
    # gradient of the logits w.r.t. the one-hot code is nonzero, and logits differ across codes
    obs = np.random.default_rng(2).uniform(-1, 1, size=5)
    x = conditioned_input(obs, 0, 3)[0]
    _, gx = mlp_backward(policy.actor.spec, policy.actor.params, x, np.ones(4))
    assert np.any(np.abs(gx[5:]) > 0)
    assert np.max(np.abs(actor_logits(policy, obs, 0) - actor_logits(policy, obs, 1))) > 1e-6


def test_act_is_deterministic_given_rng(policy):
    obs = np.zeros(5)
    a = [act(policy, obs, 1, np.random.default_rng(5)) for _ in range(2)]
    assert a[0] == a[1]


def test_act_rejects_bad_latent(policy):
    with pytest.raises(ValueError):
        act(policy, np.zeros(5), 3, np.random.default_rng(0))
    with pytest.raises(ValueError):
        act_batch(policy, np.zeros((2, 5)), np.array([0, -1]), np.random.default_rng(0))


def test_act_does_not_mutate(policy):
    before = {k: n.params.values.copy() for k, n in policy.nets().items()}
    act_batch(policy, np.zeros((4, 5)), np.array([0, 1, 2, 0]), np.random.default_rng(0))
    discriminator_probs(policy, np.zeros((4, 5)))
    for k, n in policy.nets().items():
        np.testing.assert_array_equal(n.params.values, before[k])


def test_discriminator_zero_final_layer_is_uniform(policy):
    w = dict(policy.discriminator.params.blocks())
    last = max(k for k in w if k.startswith("W"))
    w[last][:] = 0.0
    np.testing.assert_allclose(discriminator_probs(policy, np.ones(5)), 1 / 3, atol=1e-15)


def test_discriminator_probs_sum_to_one(policy):
    q = discriminator_probs(policy, np.random.default_rng(3).normal(size=(100, 5)) * 10)
    np.testing.assert_allclose(q.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(q > 0)


def test_discriminator_learns_separable_codes(policy):
    rng = np.random.default_rng(4)
    z = rng.integers(0, 3, 600)
    centers = np.array([[1, 0, 0, 0, 0], [0, 1, 0, 0, 0], [0, 0, 1, 0, 0]], dtype=float)
    obs = centers[z] + 0.05 * rng.normal(size=(600, 5))
    cfg = ExperimentConfig(disc_epochs=50)
    optim = {"discriminator": AdamState.for_params(policy.discriminator.params, lr=3e-3)}
    loss = discriminator_update(policy, obs, z, cfg, optim, rng)
    q = discriminator_probs(policy, obs)
    assert q[np.arange(600), z].min() >= 0.9
    assert loss >= 0


def test_checkpoint_round_trip(policy, tmp_path):
    from dgpo.nn import load_checkpoint, save_checkpoint

    save_checkpoint(tmp_path / "p.dgpo", policy_to_checkpoint(policy, {"env": "two_paths"}))
    back = policy_from_checkpoint(load_checkpoint(tmp_path / "p.dgpo"))
    assert back.n_z == 3
    for k, n in policy.nets().items():
        assert getattr(back, k).params.values.tobytes() == n.params.values.tobytes()
        assert getattr(back, k).spec == n.spec


def test_checkpoint_missing_section_rejected(policy):
    ckpt = policy_to_checkpoint(policy)
    del ckpt.sections["critic_in"]
    with pytest.raises(ValueError, match="critic_in"):
        policy_from_checkpoint(ckpt)


def test_checkpoint_wrong_shape_rejected(policy):
    ckpt = policy_to_checkpoint(policy)
    ckpt.sections["actor"] = ParamVector(np.zeros(3), (("W0", (3,)),))
    with pytest.raises(ValueError, match="actor"):
        policy_from_checkpoint(ckpt)

