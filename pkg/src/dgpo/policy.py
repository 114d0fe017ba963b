"""Latent-conditioned actor, the extrinsic and intrinsic critics, and the code discriminator."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from dgpo.nn import (
    Checkpoint,
    MlpSpec,
    ParamVector,
    categorical_sample_batch,
    init_params,
    mlp_forward,
    softmax_probs,
)

NETWORKS = ("actor", "critic_ex", "critic_in", "discriminator")


@dataclass
class Net:
    spec: MlpSpec
    params: ParamVector

    def __call__(self, x):
        return mlp_forward(self.spec, self.params, x)


@dataclass
class LatentPolicy:
    n_z: int
    obs_dim: int
    n_actions: int
    actor: Net
    critic_ex: Net
    critic_in: Net
    discriminator: Net

    def nets(self) -> dict[str, Net]:
        return {name: getattr(self, name) for name in NETWORKS}


@dataclass(frozen=True)
class LatentPrior:
    n_z: int

    def __post_init__(self):
        if self.n_z < 1:
            raise ValueError("n_z must be >= 1")

    def sample(self, rng: np.random.Generator) -> int:
        return int(rng.integers(self.n_z))

    def log_prob(self, z: int) -> float:
        return -math.log(self.n_z)


def sample_latent(prior: LatentPrior, rng: np.random.Generator) -> int:
    return prior.sample(rng)


def make_policy(
    obs_dim: int,
    n_actions: int,
    n_z: int,
    rng: np.random.Generator,
    hidden=(64, 64),
    activation: str = "tanh",
) -> LatentPolicy:
    if n_z < 1:
        raise ValueError("n_z must be >= 1")
    hidden = tuple(hidden)
    cond = obs_dim + n_z
    specs = {
        "actor": MlpSpec(cond, hidden, n_actions, activation),
        "critic_ex": MlpSpec(cond, hidden, 1, activation),
        "critic_in": MlpSpec(cond, hidden, 1, activation),
        "discriminator": MlpSpec(obs_dim, hidden, n_z, activation),
    }
    # near-uniform initial action and code distributions
    final = {"actor": 0.01, "critic_ex": 1.0, "critic_in": 1.0, "discriminator": 0.01}
    nets = {k: Net(s, init_params(s, rng, final[k])) for k, s in specs.items()}
    return LatentPolicy(n_z, obs_dim, n_actions, **nets)


def conditioned_input(obs, z, n_z: int) -> np.ndarray:
    """Concatenate observations with one-hot latent codes."""
    obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
    z = np.broadcast_to(np.asarray(z, dtype=np.int64), (obs.shape[0],))
    if np.any(z < 0) or np.any(z >= n_z):
        raise ValueError(f"latent code out of range [0, {n_z})")
    onehot = np.zeros((obs.shape[0], n_z))
    onehot[np.arange(obs.shape[0]), z] = 1.0
    return np.concatenate([obs, onehot], axis=1)


def actor_logits(policy: LatentPolicy, obs, z) -> np.ndarray:
    return policy.actor(conditioned_input(obs, z, policy.n_z))


def act_batch(policy: LatentPolicy, obs, z, rng: np.random.Generator):
    """Sample actions for a batch. Returns ``(actions, log_probs, v_ex, v_in)``."""
    x = conditioned_input(obs, z, policy.n_z)
    actions, logp = categorical_sample_batch(policy.actor(x), rng)
    return actions, logp, policy.critic_ex(x)[:, 0], policy.critic_in(x)[:, 0]


def act(policy: LatentPolicy, obs, z: int, rng: np.random.Generator):
    if not 0 <= int(z) < policy.n_z:
        raise ValueError(f"latent code {z} out of range [0, {policy.n_z})")
    a, lp, vex, vin = act_batch(policy, np.asarray(obs)[None, :], np.array([z]), rng)
    return int(a[0]), float(lp[0]), float(vex[0]), float(vin[0])


def greedy_actions(policy: LatentPolicy, obs, z) -> np.ndarray:
    return actor_logits(policy, obs, z).argmax(axis=1)


def critic_values(policy: LatentPolicy, obs, z):
    x = conditioned_input(obs, z, policy.n_z)
    return policy.critic_ex(x)[:, 0], policy.critic_in(x)[:, 0]


def discriminator_probs(policy: LatentPolicy, obs) -> np.ndarray:
    """q(z | s) for one observation (vector out) or a batch (matrix out)."""
    return softmax_probs(policy.discriminator(obs))


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def policy_to_checkpoint(policy: LatentPolicy, meta: dict | None = None) -> Checkpoint:
    nets = policy.nets()
    info = dict(meta or {})
    info.update(
        n_z=policy.n_z,
        obs_dim=policy.obs_dim,
        n_actions=policy.n_actions,
        specs={
            k: {"input_dim": n.spec.input_dim, "hidden": list(n.spec.hidden),
                "output_dim": n.spec.output_dim, "activation": n.spec.activation}
            for k, n in nets.items()
        },
    )
    return Checkpoint({k: n.params for k, n in nets.items()}, info)


def policy_from_checkpoint(ckpt: Checkpoint) -> LatentPolicy:
    meta = ckpt.meta
    missing = [k for k in NETWORKS if k not in ckpt.sections]
    if missing:
        raise ValueError(f"checkpoint lacks sections {missing}")
    nets = {}
    for k in NETWORKS:
        s = meta["specs"][k]
        spec = MlpSpec(s["input_dim"], tuple(s["hidden"]), s["output_dim"], s["activation"])
        params = ckpt.sections[k]
        if len(params) != spec.n_params:
            raise ValueError(f"section {k!r} does not match its declared network shape")
        nets[k] = Net(spec, params)
    return LatentPolicy(int(meta["n_z"]), int(meta["obs_dim"]), int(meta["n_actions"]), **nets)
