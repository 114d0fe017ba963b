"""Diversity and return measurements for a trained latent policy."""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np

from dgpo import kernels as K
from dgpo.envs import embed_trajectory, make_core, optimal_return, solution_coverage
from dgpo.policy import LatentPolicy, act_batch, greedy_actions

DIST_FLOOR = 1e-6


def m_div(embeddings) -> float:
    """Mean log pairwise distance, ``(1/n) * sum_{i<j} ln max(|e_i - e_j|, 1e-6)``."""
    emb = np.asarray(embeddings, dtype=np.float64)
    if emb.ndim != 2 or emb.shape[0] < 2:
        raise ValueError("m_div needs at least two embeddings of equal length")
    d = K.pairwise_distances(np.ascontiguousarray(emb))
    iu = np.triu_indices(emb.shape[0], k=1)
    return float(np.log(np.maximum(d[iu], DIST_FLOOR)).sum() / emb.shape[0])


@dataclass(frozen=True)
class Normalization:
    """Bounds that map raw return and M_Div onto [0, 1]."""

    j_rand: float
    j_opt: float
    div_min: float
    div_max: float

    def __post_init__(self):
        if not self.j_rand < self.j_opt:
            raise ValueError(f"need j_rand < j_opt, got {self.j_rand} and {self.j_opt}")
        if not self.div_min < self.div_max:
            raise ValueError(f"need div_min < div_max, got {self.div_min} and {self.div_max}")


def _unit(value, lo, hi):
    return min(max((value - lo) / (hi - lo), 0.0), 1.0)


def harmonic(rew: float, div: float) -> float:
    if rew + div == 0.0:
        return 0.0
    return 2.0 * rew * div / (rew + div)


def f_score(mean_return: float, mdiv: float, normalization: Normalization) -> float:
    rew = _unit(mean_return, normalization.j_rand, normalization.j_opt)
    div = _unit(mdiv, normalization.div_min, normalization.div_max)
    return harmonic(rew, div)


# ---------------------------------------------------------------------------
# Greedy evaluation
# ---------------------------------------------------------------------------

@dataclass
class DiversityReport:
    env: str
    n_z: int
    embeddings: np.ndarray
    pairwise_distances: np.ndarray
    m_div: float
    coverage: int
    per_latent_mean_return: np.ndarray
    f_score: float = math.nan
    meta: dict = field(default_factory=dict)

    @property
    def mean_return(self) -> float:
        return float(np.mean(self.per_latent_mean_return))

    def to_text(self) -> str:
        lines = [f"{k} = {v}" for k, v in self.meta.items()]
        lines += [
            f"env = {self.env}",
            f"n_z = {self.n_z}",
            f"m_div = {self.m_div!r}",
            f"coverage = {self.coverage}",
            f"f_score = {self.f_score!r}",
            f"mean_return = {self.mean_return!r}",
            "per_latent_mean_return = " + ",".join(repr(float(v)) for v in self.per_latent_mean_return),
            "[distance_matrix]",
        ]
        for row in self.pairwise_distances:
            lines.append(" ".join(repr(float(v)) for v in row))
        return "\n".join(lines) + "\n"


def read_report(text: str) -> dict:
    """Parse :meth:`DiversityReport.to_text` output back into a dict."""
    out: dict = {}
    head, _, matrix = text.partition("[distance_matrix]")
    for line in head.splitlines():
        if "=" in line:
            k, v = (s.strip() for s in line.split("=", 1))
            out[k] = v
    rows = [r.split() for r in matrix.strip().splitlines() if r.strip()]
    out["distance_matrix"] = np.array([[float(v) for v in r] for r in rows])
    for k in ("m_div", "f_score", "mean_return"):
        if k in out:
            out[k] = float(out[k])
    for k in ("coverage", "n_z"):
        if k in out:
            out[k] = int(out[k])
    if "per_latent_mean_return" in out:
        out["per_latent_mean_return"] = np.array([float(v) for v in out["per_latent_mean_return"].split(",")])
    return out


def run_episodes(policy, core, z, rng=None, greedy=True, action_fn=None):
    """Play one episode per entry of ``z`` in lockstep.

    ``action_fn(obs, z, rng)`` overrides the policy when given.
    Returns per-episode positions, rewards and lengths as padded arrays.
    """
    z = np.asarray(z, dtype=np.int64)
    n, horizon = z.shape[0], core.horizon
    px, py = core.initial_positions(n)
    t = np.zeros(n, dtype=np.int64)
    alive = np.ones(n, dtype=bool)
    xs = np.zeros((n, horizon), dtype=px.dtype)
    ys = np.zeros((n, horizon), dtype=py.dtype)
    rewards = np.zeros((n, horizon))
    lengths = np.zeros(n, dtype=np.int64)
    for step in range(horizon):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        obs = core.observe(px[idx], py[idx], t[idx])
        if action_fn is not None:
            a = np.asarray(action_fn(obs, z[idx], rng), dtype=np.int64)
        elif greedy:
            a = greedy_actions(policy, obs, z[idx])
        else:
            a = act_batch(policy, obs, z[idx], rng)[0]
        nx, ny, r, done, _ = core.move(px[idx], py[idx], a, t[idx])
        px[idx], py[idx] = nx, ny
        t[idx] += 1
        xs[idx, step], ys[idx, step] = nx, ny
        rewards[idx, step] = r
        lengths[idx] = step + 1
        alive[idx[done]] = False
    return xs, ys, rewards, lengths


def evaluate_policy(policy: LatentPolicy, core, episodes_per_latent: int = 8, normalization=None,
                    seed: int = 0, return_episodes: bool = False):
    """Greedy rollouts per latent; embeddings are averaged over a latent's episodes."""
    if isinstance(core, str):
        core = make_core(core)
    n_z = policy.n_z
    z = np.repeat(np.arange(n_z), episodes_per_latent)
    xs, ys, rewards, lengths = run_episodes(policy, core, z)
    embs = np.stack([
        embed_trajectory(core, np.stack([xs[i, :lengths[i]], ys[i, :lengths[i]]], axis=1))
        for i in range(z.size)
    ])
    per_latent = embs.reshape(n_z, episodes_per_latent, -1).mean(axis=1)
    returns = rewards.sum(axis=1).reshape(n_z, episodes_per_latent).mean(axis=1)
    dist = K.pairwise_distances(np.ascontiguousarray(per_latent))
    mdiv = m_div(per_latent) if n_z >= 2 else math.nan
    if normalization is None:
        normalization = default_normalization(core.name, n_z)
    report = DiversityReport(
        env=core.name,
        n_z=n_z,
        embeddings=per_latent,
        pairwise_distances=dist,
        m_div=mdiv,
        coverage=solution_coverage(per_latent, core),
        per_latent_mean_return=returns,
    )
    report.f_score = f_score(report.mean_return, mdiv, normalization) if n_z >= 2 else math.nan
    if not return_episodes:
        return report
    episodes = []
    for i in range(z.size):
        n = int(lengths[i])
        episodes.append({
            "seed": seed,
            "latent": int(z[i]),
            "step": list(range(1, n + 1)),
            "x": [float(v) for v in xs[i, :n]],
            "y": [float(v) for v in ys[i, :n]],
            "reward": [float(v) for v in rewards[i, :n]],
            "done": [False] * (n - 1) + [True],
        })
    return report, episodes


# ---------------------------------------------------------------------------
# Normalisation bounds
# ---------------------------------------------------------------------------

@functools.lru_cache(maxsize=None)
def random_policy_return(env: str, n_episodes: int = 1000, seed: int = 0) -> float:
    """Mean undiscounted return of uniformly random actions."""
    core = make_core(env)
    rng = np.random.default_rng(seed)

    def uniform(obs, z, rng):
        return rng.integers(core.n_actions, size=obs.shape[0])

    _, _, rewards, _ = run_episodes(None, core, np.zeros(n_episodes, dtype=np.int64), rng,
                                    action_fn=uniform)
    return float(rewards.sum(axis=1).mean())


def reference_embeddings(env: str, n_z: int) -> np.ndarray:
    """Embeddings of the known optimal strategies dealt round-robin to ``n_z`` codes."""
    core = make_core(env)
    from dgpo.envs import rollout_actions

    sols = [embed_trajectory(core, rollout_actions(core, acts)[0]) for acts in core.optimal_actions()]
    return np.stack([sols[i % len(sols)] for i in range(n_z)])


def default_normalization(env: str, n_z: int) -> Normalization:
    """Single-run bounds: random vs optimal return; collapsed vs reference diversity."""
    core = make_core(env)
    pairs = n_z * (n_z - 1) / 2
    div_min = pairs * math.log(DIST_FLOOR) / max(n_z, 1)
    div_max = m_div(reference_embeddings(env, n_z)) if n_z >= 2 else div_min + 1.0
    if div_max <= div_min:
        div_max = div_min + 1.0
    return Normalization(random_policy_return(env), optimal_return(core), div_min, div_max)


def cross_run_normalization(env: str, m_divs) -> Normalization:
    """Bounds for comparing a set of runs: diversity is min-max scaled across them."""
    core = make_core(env)
    lo, hi = float(np.min(m_divs)), float(np.max(m_divs))
    if hi <= lo:
        hi = lo + 1e-9
    return Normalization(random_policy_return(env), optimal_return(core), lo, hi)


# ---------------------------------------------------------------------------
# Occupancy-based diversity oracle
# ---------------------------------------------------------------------------

def occupancy_kl_oracle(policy, env, n_z: int, n_episodes: int, rng: np.random.Generator,
                        gamma: float = 0.99, smoothing: float = 1e-3):
    """Monte-Carlo check of the pairwise-minimum occupancy KL against its posterior bound.

    ``policy`` is a :class:`LatentPolicy` (sampled stochastically) or a callable
    ``f(obs, z, rng) -> actions``. Returns ``(div_estimate, lower_bound_estimate)``.
    """
    core = make_core(env) if isinstance(env, str) else env
    if not core.discrete:
        raise ValueError(f"occupancy oracle needs a discrete-state environment, got {core.name!r}")
    if n_z < 2:
        raise ValueError("occupancy oracle needs n_z >= 2")
    if n_episodes < 1000:
        raise ValueError("occupancy oracle needs n_episodes >= 1000")
    if callable(policy) and not isinstance(policy, LatentPolicy):
        action_fn, pol = policy, None
    else:
        action_fn, pol = None, policy
    rho = np.empty((n_z, core.n_cells))
    for code in range(n_z):
        z = np.full(n_episodes, code, dtype=np.int64)
        xs, ys, _, lengths = run_episodes(pol, core, z, rng, greedy=False, action_fn=action_fn)
        # visited states are s_0 (start) followed by the post-step positions
        sx, sy = core.initial_positions(n_episodes)
        cells = core.cell_index(np.concatenate([sx[:, None], xs], axis=1),
                                np.concatenate([sy[:, None], ys], axis=1))
        counts = K.discounted_visits(np.ascontiguousarray(cells), lengths + 1, gamma, core.n_cells)
        p = counts / counts.sum() + smoothing
        rho[code] = p / p.sum()
    kl = np.array([[np.sum(rho[a] * np.log(rho[a] / rho[b])) for b in range(n_z)] for a in range(n_z)])
    np.fill_diagonal(kl, np.inf)
    div = float(kl.min(axis=1).mean())
    # posterior under a uniform prior; expectation over s ~ rho(.|z)
    post = rho / rho.sum(axis=0, keepdims=True)
    bound = 0.0
    for code in range(n_z):
        own = post[code]
        others = np.delete(post, code, axis=0)
        worst = np.log(own / (own + others.max(axis=0)))
        bound += float(rho[code] @ worst) / n_z
    return div, bound
