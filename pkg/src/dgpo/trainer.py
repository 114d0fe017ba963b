"""Gated PPO training loop for a latent-conditioned policy.

One iteration:

1. collect ``n_steps`` from every environment; the intrinsic reward of each
   step is computed from the discriminator at the next observation, with the
   discriminator frozen for the whole batch;
2. fold completed-episode discounted returns into the gates;
3. weight the extrinsic and intrinsic streams by the gate coefficients;
4. GAE on the weighted reward against ``v_ex + v_in``;
5. clipped-surrogate update of the actor, regression of each critic to its
   own gated return stream;
6. cross-entropy update of the discriminator on the same batch.

Baselines and ablations only change which intrinsic reward is used and how
the two streams are weighted (see :func:`stream_coefficients`).
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from dgpo import __version__
from dgpo import kernels as K
from dgpo.config import ExperimentConfig
from dgpo.envs import make_core, optimal_return, write_trajectories
from dgpo.gates import GateState, delta_from_step, gate_record, update_gates
from dgpo.metrics import evaluate_policy
from dgpo.nn import (
    AdamState,
    NonFiniteError,
    ParamVector,
    adam_step,
    clip_global_norm,
    log_softmax,
    mlp_backward_cache,
    mlp_forward_cache,
    save_checkpoint,
)
from dgpo.policy import (
    LatentPolicy,
    act_batch,
    conditioned_input,
    critic_values,
    discriminator_probs,
    make_policy,
    policy_to_checkpoint,
)

logger = logging.getLogger(__name__)

PAIRWISE, DIAYN, NONE = "pairwise", "diayn", "none"


class TrainingError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Intrinsic rewards
# ---------------------------------------------------------------------------

def intrinsic_reward(q_probs, z: int, floor: float = 1e-8) -> float:
    """Log-odds of code ``z`` against its strongest rival at one state (always <= 0)."""
    q = np.asarray(q_probs, dtype=np.float64)
    if q.size == 1:
        logger.warning("intrinsic reward with a single code is defined as 0")
        return 0.0
    if not 0 <= z < q.size:
        raise ValueError(f"latent code {z} out of range [0, {q.size})")
    return float(K.intrinsic_rewards(q[None, :], np.array([z], dtype=np.int64), floor)[0])


def diayn_reward(q_probs, z: int, n_z: int, floor: float = 1e-8) -> float:
    """``ln q(z|s) - ln p(z)`` under the uniform prior."""
    q = np.asarray(q_probs, dtype=np.float64)
    return float(math.log(max(q[z], floor)) + math.log(n_z))


def batch_intrinsic(kind: str, q, z, floor: float) -> np.ndarray:
    z = np.asarray(z, dtype=np.int64)
    if kind == NONE or q.shape[1] == 1:
        return np.zeros(z.shape[0])
    if kind == PAIRWISE:
        return K.intrinsic_rewards(np.ascontiguousarray(q), z, floor)
    if kind == DIAYN:
        return np.log(np.maximum(q[np.arange(z.size), z], floor)) + math.log(q.shape[1])
    raise ValueError(f"unknown intrinsic reward {kind!r}")


def intrinsic_kind(algo: str) -> str:
    if algo == "ppo":
        return NONE
    if algo in ("diayn", "smerl", "dgpo_mi_metric"):
        return DIAYN
    return PAIRWISE


def stream_coefficients(algo: str, mask_d, mask_r, alpha: float):
    """Per-code weights ``(c_ext, c_int)`` on the extrinsic and intrinsic streams."""
    mask_d = np.asarray(mask_d, dtype=np.float64)
    mask_r = np.asarray(mask_r, dtype=np.float64)
    one = np.ones_like(mask_d)
    if algo == "ppo":
        return one, 0.0 * one
    if algo == "diayn":
        return one, alpha * one
    if algo == "smerl":
        return one, alpha * mask_r
    if algo == "dgpo_no_stage1":
        mask_d = one
    elif algo == "dgpo_no_stage2":
        mask_r = 0.0 * one
    return mask_d, (1.0 - mask_d) + mask_r


# ---------------------------------------------------------------------------
# Rollouts
# ---------------------------------------------------------------------------

class LatentVecEnv:
    """``n`` copies of one task, each carrying its own latent code and return tallies."""

    def __init__(self, core, n: int, n_z: int, gamma: float, assignment: str = "round_robin",
                 rng: np.random.Generator | None = None):
        self.core = core
        self.n = n
        self.n_z = n_z
        self.gamma = gamma
        self.assignment = assignment
        self.rng = rng
        self.px, self.py = core.initial_positions(n)
        self.t = np.zeros(n, dtype=np.int64)
        self.next_code = 0
        self.z = np.array([self._draw() for _ in range(n)], dtype=np.int64)
        self.codes_assigned = np.bincount(self.z, minlength=n_z)
        self.ret_ext = np.zeros(n)
        self.ret_int = np.zeros(n)
        self.ret_raw = np.zeros(n)
        self.discount = np.ones(n)

    def _draw(self) -> int:
        if self.assignment == "iid":
            return int(self.rng.integers(self.n_z))
        code = self.next_code % self.n_z
        self.next_code += 1
        return code

    def observe(self) -> np.ndarray:
        return self.core.observe(self.px, self.py, self.t)

    def reset_done(self, done: np.ndarray) -> None:
        for i in np.flatnonzero(done):
            self.z[i] = self._draw()
            self.codes_assigned[self.z[i]] += 1
        px0, py0 = self.core.initial_positions(self.n)
        self.px = np.where(done, px0, self.px)
        self.py = np.where(done, py0, self.py)
        self.t = np.where(done, 0, self.t)
        self.ret_ext[done] = 0.0
        self.ret_int[done] = 0.0
        self.ret_raw[done] = 0.0
        self.discount[done] = 1.0


@dataclass
class RolloutBuffer:
    obs: np.ndarray          # (T, N, obs_dim)
    next_obs: np.ndarray     # (T, N, obs_dim), pre-reset at episode ends
    action: np.ndarray       # (T, N)
    log_prob: np.ndarray
    r_ext: np.ndarray
    r_int: np.ndarray
    z: np.ndarray
    done: np.ndarray
    v_ex: np.ndarray
    v_in: np.ndarray
    last_v_ex: np.ndarray    # (N,) bootstrap values at the cut
    last_v_in: np.ndarray
    last_z: np.ndarray
    episode_ext_returns: list = field(default_factory=list)
    episode_int_returns: list = field(default_factory=list)
    episode_z: list = field(default_factory=list)
    episode_undiscounted: list = field(default_factory=list)

    def __len__(self) -> int:
        return self.action.size


def absorbing_factor(steps_taken, horizon: int, gamma: float):
    """Discounted weight of a reward repeated from ``steps_taken`` up to ``horizon``."""
    remaining = horizon - np.asarray(steps_taken, dtype=np.float64) + 1.0
    if gamma == 1.0:
        return remaining
    return (1.0 - gamma ** remaining) / (1.0 - gamma)


def collect_rollouts(policy: LatentPolicy, envs: LatentVecEnv, n_steps: int, rng: np.random.Generator,
                     intrinsic: str = PAIRWISE, prob_floor: float = 1e-8,
                     absorbing: bool = False) -> RolloutBuffer:
    """Step every environment ``n_steps`` times with the current policy.

    With ``absorbing`` set, an episode that ends by reaching a goal before the
    horizon is treated as sitting in its terminal state for the remaining
    steps: the terminal intrinsic reward is scaled by the discounted length
    of that tail. Extrinsic rewards are never altered.
    """
    n, d = envs.n, envs.core.obs_dim
    shape = (n_steps, n)
    buf = RolloutBuffer(
        obs=np.zeros((n_steps, n, d)), next_obs=np.zeros((n_steps, n, d)),
        action=np.zeros(shape, dtype=np.int64), log_prob=np.zeros(shape),
        r_ext=np.zeros(shape), r_int=np.zeros(shape), z=np.zeros(shape, dtype=np.int64),
        done=np.zeros(shape), v_ex=np.zeros(shape), v_in=np.zeros(shape),
        last_v_ex=np.zeros(n), last_v_in=np.zeros(n), last_z=np.zeros(n, dtype=np.int64),
    )
    obs = envs.observe()
    for t in range(n_steps):
        z = envs.z.copy()
        a, logp, vex, vin = act_batch(policy, obs, z, rng)
        try:
            nx, ny, r, done, reached = envs.core.move(envs.px, envs.py, a, envs.t)
        except Exception as exc:
            raise TrainingError(f"environment step {t} failed: {exc}") from exc
        envs.px, envs.py = nx, ny
        envs.t = envs.t + 1
        next_obs = envs.core.observe(nx, ny, envs.t)
        r_int = batch_intrinsic(intrinsic, discriminator_probs(policy, next_obs), z, prob_floor)
        if absorbing and reached.any():
            r_int = np.where(reached, r_int * absorbing_factor(envs.t, envs.core.horizon, envs.gamma), r_int)

        buf.obs[t], buf.next_obs[t] = obs, next_obs
        buf.action[t], buf.log_prob[t] = a, logp
        buf.r_ext[t], buf.r_int[t] = r, r_int
        buf.z[t], buf.done[t] = z, done
        buf.v_ex[t], buf.v_in[t] = vex, vin

        envs.ret_ext += envs.discount * r
        envs.ret_int += envs.discount * r_int
        envs.ret_raw += r
        envs.discount *= envs.gamma
        for i in np.flatnonzero(done):
            buf.episode_ext_returns.append(float(envs.ret_ext[i]))
            buf.episode_int_returns.append(float(envs.ret_int[i]))
            buf.episode_z.append(int(z[i]))
            buf.episode_undiscounted.append(float(envs.ret_raw[i]))
        if done.any():
            envs.reset_done(done)
        obs = envs.observe()
    buf.last_z = envs.z.copy()
    buf.last_v_ex, buf.last_v_in = critic_values(policy, obs, buf.last_z)
    return buf


# ---------------------------------------------------------------------------
# Advantages
# ---------------------------------------------------------------------------

def compute_gae(rewards, values, dones, gamma: float, lam: float, last_value=None):
    """Generalized advantage estimation. Arrays are ``(T,)`` or ``(T, N)``.

    ``dones[t]`` marks that the episode ended after step ``t``; ``last_value``
    bootstraps the step after the final one. Returns ``(advantages, returns)``.
    """
    if not (0.0 <= gamma <= 1.0 and 0.0 <= lam <= 1.0):
        raise ValueError(f"gamma and lambda must lie in [0, 1], got {gamma}, {lam}")
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    if not rewards.shape == values.shape == dones.shape:
        raise ValueError("rewards, values and dones must share a shape")
    flat = rewards.ndim == 1
    if flat:
        rewards, values, dones = rewards[:, None], values[:, None], dones[:, None]
    if last_value is None:
        last_value = np.zeros(rewards.shape[1])
    last_value = np.atleast_1d(np.asarray(last_value, dtype=np.float64))
    adv = K.gae(np.ascontiguousarray(rewards), np.ascontiguousarray(values),
                np.ascontiguousarray(dones), last_value, float(gamma), float(lam))
    ret = adv + values
    if flat:
        return adv[:, 0], ret[:, 0]
    return adv, ret


def _ungated(values, coef):
    # value estimate of the raw stream when the critic tracks coef * stream
    coef = np.asarray(coef, dtype=np.float64)
    return np.where(coef > 0, values / np.where(coef > 0, coef, 1.0), 0.0)


# ---------------------------------------------------------------------------
# Updates
# ---------------------------------------------------------------------------

def ppo_update(policy: LatentPolicy, batch: dict, advantages, targets_ex, targets_in,
               config: ExperimentConfig, optim: dict, rng: np.random.Generator) -> dict:
    """Clipped-surrogate PPO over shuffled minibatches; mutates ``policy`` and ``optim``.

    ``batch`` holds flat arrays ``obs``, ``z``, ``action``, ``log_prob``.
    """
    x_all = conditioned_input(batch["obs"], batch["z"], policy.n_z)
    actions = batch["action"]
    old_logp = batch["log_prob"]
    adv = np.asarray(advantages, dtype=np.float64)
    n = adv.size
    mb_size = max(1, n // config.n_minibatches)
    eps, c_v, c_e = config.clip_eps, config.vf_coef, config.ent_coef
    sums = {"policy_loss": 0.0, "value_loss_ex": 0.0, "value_loss_in": 0.0, "entropy": 0.0,
            "clip_fraction": 0.0, "approx_kl": 0.0}
    count = 0
    for _ in range(config.n_epochs):
        perm = rng.permutation(n)
        for start in range(0, n, mb_size):
            idx = perm[start:start + mb_size]
            if idx.size == 0:
                continue
            b = idx.size
            x = x_all[idx]
            a = actions[idx]
            A = adv[idx]
            rows = np.arange(b)

            logits, cache_pi = mlp_forward_cache(policy.actor.spec, policy.actor.params, x)
            logp_all = log_softmax(logits)
            p = np.exp(logp_all)
            logp = logp_all[rows, a]
            ratio = np.exp(logp - old_logp[idx])
            clipped = np.clip(ratio, 1.0 - eps, 1.0 + eps)
            surrogate = np.minimum(ratio * A, clipped * A)
            ent = -(p * logp_all).sum(axis=1)
            pi_loss = -surrogate.mean()

            v_ex, cache_ex = mlp_forward_cache(policy.critic_ex.spec, policy.critic_ex.params, x)
            v_in, cache_in = mlp_forward_cache(policy.critic_in.spec, policy.critic_in.params, x)
            err_ex = v_ex[:, 0] - targets_ex[idx]
            err_in = v_in[:, 0] - targets_in[idx]
            vl_ex = float(np.mean(err_ex ** 2))
            vl_in = float(np.mean(err_in ** 2))
            loss = pi_loss + c_v * (vl_ex + vl_in) - c_e * ent.mean()
            if not math.isfinite(loss):
                raise TrainingError(
                    f"non-finite PPO loss (policy {pi_loss}, v_ex {vl_ex}, v_in {vl_in}, "
                    f"max |ratio| {np.max(np.abs(ratio))})"
                )

            active = ~(((A > 0) & (ratio > 1.0 + eps)) | ((A < 0) & (ratio < 1.0 - eps)))
            g_logp = -(ratio * A * active) / b
            onehot = np.zeros_like(p)
            onehot[rows, a] = 1.0
            g_logits = g_logp[:, None] * (onehot - p)
            # d(-c_e * mean H)/d logits = c_e / b * p * (log p + H)
            g_logits += (c_e / b) * p * (logp_all + ent[:, None])

            g_actor, _ = mlp_backward_cache(policy.actor.spec, policy.actor.params, cache_pi, g_logits)
            g_ex, _ = mlp_backward_cache(policy.critic_ex.spec, policy.critic_ex.params, cache_ex,
                                         (2.0 * c_v / b) * err_ex[:, None])
            g_in, _ = mlp_backward_cache(policy.critic_in.spec, policy.critic_in.params, cache_in,
                                         (2.0 * c_v / b) * err_in[:, None])
            clip_global_norm([g_actor, g_ex, g_in], config.max_grad_norm)
            for name, grad in (("actor", g_actor), ("critic_ex", g_ex), ("critic_in", g_in)):
                net = getattr(policy, name)
                try:
                    net.params, optim[name] = adam_step(optim[name], net.params, grad)
                except NonFiniteError as exc:
                    raise TrainingError(f"{name}: {exc}") from exc

            sums["policy_loss"] += pi_loss
            sums["value_loss_ex"] += vl_ex
            sums["value_loss_in"] += vl_in
            sums["entropy"] += float(ent.mean())
            sums["clip_fraction"] += float(np.mean(np.abs(ratio - 1.0) > eps))
            sums["approx_kl"] += float(np.mean(old_logp[idx] - logp))
            count += 1
    return {k: v / max(count, 1) for k, v in sums.items()}


def discriminator_update(policy: LatentPolicy, obs, z, config: ExperimentConfig, optim: dict,
                         rng: np.random.Generator) -> float:
    """Cross-entropy training of q(z|s) on ``(obs, z)`` pairs; returns the mean loss."""
    obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
    z = np.asarray(z, dtype=np.int64)
    n = z.size
    mb_size = max(1, n // config.n_minibatches)
    net = policy.discriminator
    total, count = 0.0, 0
    for _ in range(config.disc_epochs):
        perm = rng.permutation(n)
        for start in range(0, n, mb_size):
            idx = perm[start:start + mb_size]
            b = idx.size
            logits, cache = mlp_forward_cache(net.spec, net.params, obs[idx])
            logp = log_softmax(logits)
            rows = np.arange(b)
            loss = float(-logp[rows, z[idx]].mean())
            g = np.exp(logp)
            g[rows, z[idx]] -= 1.0
            grad, _ = mlp_backward_cache(net.spec, net.params, cache, g / b)
            clip_global_norm([grad], config.max_grad_norm)
            net.params, optim["discriminator"] = adam_step(optim["discriminator"], net.params, grad)
            total += loss
            count += 1
    return total / max(count, 1)


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainStats:
    iteration: int
    policy_loss: float
    value_loss_ex: float
    value_loss_in: float
    discriminator_loss: float
    entropy: float
    mean_ext_return: float
    mean_int_return: float
    mean_episode_return: float
    n_episodes: int
    env_steps: int
    mask_d: int
    mask_r: int
    j_ext_ema: float
    j_div_ema: float
    m_div: float | None = None
    coverage: int | None = None
    eval_return: float | None = None
    mask_d_per_latent: list | None = None
    mask_r_per_latent: list | None = None
    wall_time: float = 0.0

    def record(self) -> dict:
        """Deterministic fields only (wall time is kept out of the metrics stream)."""
        rec = asdict(self)
        rec.pop("wall_time")
        return {k: v for k, v in rec.items() if v is not None}


class Trainer:
    """Owns the policy, optimiser states, gates and environments of one run."""

    def __init__(self, config: ExperimentConfig):
        self.config = cfg = config
        self.core = make_core(cfg.env)
        init_ss, roll_ss, upd_ss, env_ss = np.random.SeedSequence(cfg.seed).spawn(4)
        self.policy = make_policy(self.core.obs_dim, self.core.n_actions, cfg.n_z,
                                  np.random.default_rng(init_ss), cfg.hidden, cfg.activation)
        self.rollout_rng = np.random.default_rng(roll_ss)
        self.update_rng = np.random.default_rng(upd_ss)
        self.optim = {
            name: AdamState.for_params(net.params, lr=cfg.disc_lr if name == "discriminator" else cfg.lr)
            for name, net in self.policy.nets().items()
        }
        self.intrinsic = intrinsic_kind(cfg.algo)
        if cfg.n_z == 1 and self.intrinsic != NONE:
            logger.warning("n_z = 1: intrinsic reward is identically 0, training reduces to PPO")
        self.j_opt = optimal_return(self.core, cfg.gamma)
        self.r_target = cfg.r_target if cfg.r_target is not None else cfg.r_target_frac * self.j_opt
        self.delta = delta_from_step(cfg.delta_step, cfg.gamma, self.core.horizon)
        gate = GateState(delta=self.delta, r_target=self.r_target,
                         ema_momentum=cfg.ema_momentum, hysteresis=cfg.hysteresis)
        self.gates = [gate] * (cfg.n_z if cfg.per_latent_masks else 1)
        self.envs = LatentVecEnv(self.core, cfg.n_envs, cfg.n_z, cfg.gamma, cfg.latent_assignment,
                                 np.random.default_rng(env_ss))
        self.iteration = 0
        self.env_steps = 0

    # masks indexed by latent code
    def masks(self):
        n_z = self.config.n_z
        d = np.array([g.mask_d for g in self.gates], dtype=np.float64)
        r = np.array([g.mask_r for g in self.gates], dtype=np.float64)
        if d.size == 1:
            d, r = np.repeat(d, n_z), np.repeat(r, n_z)
        return d, r

    def _update_gates(self, buf: RolloutBuffer) -> None:
        ext = np.asarray(buf.episode_ext_returns)
        intr = np.asarray(buf.episode_int_returns)
        if len(self.gates) == 1:
            self.gates = [update_gates(self.gates[0], ext, intr)]
            return
        zs = np.asarray(buf.episode_z, dtype=np.int64)
        self.gates = [update_gates(g, ext[zs == k], intr[zs == k]) for k, g in enumerate(self.gates)]

    def step(self) -> TrainStats:
        cfg = self.config
        t0 = time.perf_counter()
        buf = collect_rollouts(self.policy, self.envs, cfg.n_steps, self.rollout_rng,
                               self.intrinsic, cfg.prob_floor, cfg.absorbing_intrinsic)
        self.env_steps += len(buf)
        self._update_gates(buf)
        mask_d, mask_r = self.masks()
        c_ext_z, c_int_z = stream_coefficients(cfg.algo, mask_d, mask_r, cfg.alpha)
        c_ext, c_int = c_ext_z[buf.z], c_int_z[buf.z]
        last_c_ext, last_c_int = c_ext_z[buf.last_z], c_int_z[buf.last_z]

        # for the gated algorithms this equals compose_total_reward(r_ext, r_int, mask_d, mask_r)
        r_total = c_ext * buf.r_ext + c_int * buf.r_int

        adv, _ = compute_gae(r_total, buf.v_ex + buf.v_in, buf.done, cfg.gamma, cfg.gae_lambda,
                             buf.last_v_ex + buf.last_v_in)
        _, ret_ext = compute_gae(buf.r_ext, _ungated(buf.v_ex, c_ext), buf.done, cfg.gamma,
                                 cfg.gae_lambda, _ungated(buf.last_v_ex, last_c_ext))
        _, ret_int = compute_gae(buf.r_int, _ungated(buf.v_in, c_int), buf.done, cfg.gamma,
                                 cfg.gae_lambda, _ungated(buf.last_v_in, last_c_int))
        target_ex = (c_ext * ret_ext).ravel()
        target_in = (c_int * ret_int).ravel()

        adv = adv.ravel()
        if adv.size > 1:
            adv = (adv - adv.mean()) / (adv.std() + 1e-8)
        batch = {
            "obs": buf.obs.reshape(-1, buf.obs.shape[-1]),
            "z": buf.z.ravel(),
            "action": buf.action.ravel(),
            "log_prob": buf.log_prob.ravel(),
        }
        pstats = ppo_update(self.policy, batch, adv, target_ex, target_in, cfg, self.optim,
                            self.update_rng)
        disc_obs = buf.next_obs if cfg.disc_on_next_obs else buf.obs
        disc_loss = discriminator_update(self.policy, disc_obs.reshape(-1, disc_obs.shape[-1]),
                                         batch["z"], cfg, self.optim, self.update_rng)
        self.iteration += 1

        n_ep = len(buf.episode_ext_returns)
        g = self.gates
        stats = TrainStats(
            iteration=self.iteration,
            policy_loss=pstats["policy_loss"],
            value_loss_ex=pstats["value_loss_ex"],
            value_loss_in=pstats["value_loss_in"],
            discriminator_loss=disc_loss,
            entropy=pstats["entropy"],
            mean_ext_return=float(np.mean(buf.episode_ext_returns)) if n_ep else math.nan,
            mean_int_return=float(np.mean(buf.episode_int_returns)) if n_ep else math.nan,
            mean_episode_return=float(np.mean(buf.episode_undiscounted)) if n_ep else math.nan,
            n_episodes=n_ep,
            env_steps=self.env_steps,
            mask_d=int(all(x.mask_d for x in g)),
            mask_r=int(all(x.mask_r for x in g)),
            j_ext_ema=float(np.mean([x.j_ext_ema for x in g])),
            j_div_ema=float(np.mean([x.j_div_ema for x in g])),
        )
        if len(g) > 1:
            stats.mask_d_per_latent = [int(x.mask_d) for x in g]
            stats.mask_r_per_latent = [int(x.mask_r) for x in g]
        for k in ("policy_loss", "value_loss_ex", "value_loss_in", "discriminator_loss", "entropy"):
            if not math.isfinite(getattr(stats, k)):
                raise TrainingError(f"iteration {self.iteration}: {k} is not finite")
        if cfg.eval_every and (self.iteration % cfg.eval_every == 0 or self.iteration == cfg.iterations):
            rep = evaluate_policy(self.policy, self.core, cfg.eval_episodes)
            stats.m_div = rep.m_div if cfg.n_z >= 2 else None
            stats.coverage = rep.coverage
            stats.eval_return = rep.mean_return
        stats.wall_time = time.perf_counter() - t0
        return stats

    def checkpoint(self):
        cfg = self.config
        return policy_to_checkpoint(self.policy, {
            "env": cfg.env, "algo": cfg.algo, "seed": cfg.seed,
            "iteration": self.iteration, "version": __version__,
            "config": cfg.to_text(),
        })


@dataclass
class RunResult:
    run_dir: Path
    policy: LatentPolicy
    stats: list
    report: object


def train(config: ExperimentConfig, run_dir=None, progress: bool = False) -> RunResult:
    """Full training run; writes config snapshot, metrics, checkpoints and an eval report."""
    run_dir = Path(run_dir if run_dir is not None else config.output_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.txt").write_text(config.to_text())
    (run_dir / "VERSION").write_text(f"dgpo {__version__}\nkernels {K.BACKEND}\n")
    ckpt_dir = run_dir / "checkpoints"
    trainer = Trainer(config)
    save_checkpoint(ckpt_dir / "iter_00000.dgpo", trainer.checkpoint())
    stats = []
    with open(run_dir / "metrics.jsonl", "w") as metrics, open(run_dir / "timing.jsonl", "w") as timing, \
            open(run_dir / "gates.jsonl", "w") as gates:
        for _ in range(config.iterations):
            s = trainer.step()
            stats.append(s)
            metrics.write(json.dumps(s.record()) + "\n")
            for k, g in enumerate(trainer.gates):
                rec = gate_record(s.iteration, g)
                if len(trainer.gates) > 1:
                    rec["latent"] = k
                gates.write(json.dumps(rec) + "\n")
            timing.write(json.dumps({"iteration": s.iteration, "wall_time": s.wall_time}) + "\n")
            if config.checkpoint_every and s.iteration % config.checkpoint_every == 0:
                save_checkpoint(ckpt_dir / f"iter_{s.iteration:05d}.dgpo", trainer.checkpoint())
            if progress and (s.iteration % 10 == 0 or s.iteration == 1):
                logger.info(
                    "iter %d ext %.3f int %.3f mask_d %d mask_r %d m_div %s cov %s",
                    s.iteration, s.mean_ext_return, s.mean_int_return, s.mask_d, s.mask_r,
                    s.m_div, s.coverage,
                )
    save_checkpoint(ckpt_dir / "final.dgpo", trainer.checkpoint())
    report, episodes = evaluate_policy(trainer.policy, trainer.core, config.eval_episodes,
                                       seed=config.seed, return_episodes=True)
    report.meta = {"algo": config.algo, "seed": config.seed, "iteration": trainer.iteration}
    (run_dir / "report.txt").write_text(report.to_text())
    traj = run_dir / "trajectories.jsonl"
    traj.unlink(missing_ok=True)
    write_trajectories(traj, episodes)
    return RunResult(run_dir, trainer.policy, stats, report)
