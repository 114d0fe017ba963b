"""Two small tasks with a known, finite set of equally good strategies.

``FourGoals``: a point agent starts at the origin with goals at (+-1, 0) and
(0, +-1); any goal is optimal, so there are four solutions.

``TwoPaths``: a 7x7 grid whose direct route is walled off; the shortest path
detours either left or right of the wall, so there are two solutions.

Each task comes as a batched core (:class:`FourGoalsCore`, :class:`TwoPathsCore`)
that steps many independent copies through :mod:`dgpo.kernels`, and a single
instance wrapper with a ``reset``/``step`` interface built on that core.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from dgpo import kernels as K

ENV_NAMES = ("four_goals", "two_paths")


@dataclass
class StepResult:
    obs: np.ndarray
    reward: float
    done: bool
    info: dict = field(default_factory=dict)


class FourGoalsCore:
    name = "four_goals"
    horizon = 32
    n_actions = 8
    obs_dim = 11
    discrete = False
    n_solutions = 4
    # embeddings use raw coordinates
    position_scale = 1.0

    def initial_positions(self, n: int):
        return np.zeros(n), np.zeros(n)

    def observe(self, px, py, t):
        px = np.asarray(px, dtype=np.float64)
        py = np.asarray(py, dtype=np.float64)
        obs = np.empty((px.shape[0], self.obs_dim))
        obs[:, 0] = px
        obs[:, 1] = py
        for g, (gx, gy) in enumerate(K.GOALS):
            obs[:, 2 + 2 * g] = (gx - px) / 1.25
            obs[:, 3 + 2 * g] = (gy - py) / 1.25
        obs[:, -1] = np.asarray(t, dtype=np.float64) / self.horizon
        return obs

    def move(self, px, py, actions, t):
        return K.four_goals_move(
            np.asarray(px, dtype=np.float64), np.asarray(py, dtype=np.float64),
            np.asarray(actions, dtype=np.int64), np.asarray(t, dtype=np.int64), self.horizon,
        )

    def embed_xy(self, px, py):
        return np.stack([np.asarray(px, float), np.asarray(py, float)], axis=-1)

    def reward_at(self, x: float, y: float) -> tuple[float, bool]:
        """Reward and goal flag for an agent that has just arrived at ``(x, y)``."""
        d = float(np.min(np.hypot(x - K.GOALS[:, 0], y - K.GOALS[:, 1])))
        hit = d < K.GOAL_RADIUS
        return -d + (K.GOAL_BONUS if hit else 0.0), hit

    def optimal_actions(self):
        """One open-loop optimal action sequence per goal (straight lines E, W, N, S)."""
        steps = int(round(1.0 / K.STEP))
        return [[0] * steps, [4] * steps, [2] * steps, [6] * steps]


class TwoPathsCore:
    name = "two_paths"
    horizon = 40
    n_actions = 4
    obs_dim = 5
    discrete = True
    n_solutions = 2
    start = (3, 0)
    goal = K.GOAL_CELL
    position_scale = 1.0 / (K.GRID - 1)

    def initial_positions(self, n: int):
        return np.full(n, self.start[0], dtype=np.int64), np.full(n, self.start[1], dtype=np.int64)

    def observe(self, px, py, t):
        s = self.position_scale
        px = np.asarray(px, dtype=np.float64)
        py = np.asarray(py, dtype=np.float64)
        obs = np.empty((px.shape[0], self.obs_dim))
        obs[:, 0] = px * s
        obs[:, 1] = py * s
        obs[:, 2] = (self.goal[0] - px) * s
        obs[:, 3] = (self.goal[1] - py) * s
        obs[:, 4] = np.asarray(t, dtype=np.float64) / self.horizon
        return obs

    def move(self, px, py, actions, t):
        return K.two_paths_move(
            np.asarray(px, dtype=np.int64), np.asarray(py, dtype=np.int64),
            np.asarray(actions, dtype=np.int64), np.asarray(t, dtype=np.int64), self.horizon,
        )

    def embed_xy(self, px, py):
        s = self.position_scale
        return np.stack([np.asarray(px, float) * s, np.asarray(py, float) * s], axis=-1)

    @staticmethod
    def is_wall(x: int, y: int) -> bool:
        return x == K.WALL_X and K.WALL_Y0 <= y <= K.WALL_Y1

    def cell_index(self, px, py):
        return np.asarray(py, dtype=np.int64) * K.GRID + np.asarray(px, dtype=np.int64)

    @property
    def n_cells(self) -> int:
        return K.GRID * K.GRID

    def optimal_actions(self):
        up, _down, left, right = range(4)
        rise = self.goal[1] - self.start[1]
        return [[left] + [up] * rise + [right], [right] + [up] * rise + [left]]


CORES = {"four_goals": FourGoalsCore, "two_paths": TwoPathsCore}


def make_core(name: str):
    try:
        return CORES[name]()
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; choose from {ENV_NAMES}") from None


class _SingleEnv:
    """One environment instance over a batched core of size 1."""

    core_cls = None

    def __init__(self):
        self.core = self.core_cls()
        self.horizon = self.core.horizon
        self.n_actions = self.core.n_actions
        self.obs_dim = self.core.obs_dim
        self.seed = None
        self._pos = None
        self._t = 0
        self._done = True

    @property
    def position(self) -> tuple[float, float]:
        return float(self._pos[0][0]), float(self._pos[1][0])

    def reset(self, seed=None) -> np.ndarray:
        # the start state is fixed; the seed is only recorded
        self.seed = seed
        self._pos = self.core.initial_positions(1)
        self._t = 0
        self._done = False
        return self.core.observe(*self._pos, [0])[0]

    def set_state(self, x, y, t: int = 0) -> np.ndarray:
        """Place the agent directly (used for probes and tests)."""
        dtype = np.int64 if self.core.discrete else np.float64
        self._pos = (np.array([x], dtype=dtype), np.array([y], dtype=dtype))
        self._t = int(t)
        self._done = False
        return self.core.observe(*self._pos, [self._t])[0]

    def step(self, action) -> StepResult:
        if self._pos is None or self._done:
            raise RuntimeError("step() called on a finished episode; call reset() first")
        if isinstance(action, (bool, np.bool_)) or int(action) != action:
            raise ValueError(f"action must be an integer, got {action!r}")
        if not 0 <= int(action) < self.n_actions:
            raise ValueError(f"action {action} out of range [0, {self.n_actions})")
        nx, ny, r, done, reached = self.core.move(
            self._pos[0], self._pos[1], np.array([int(action)]), np.array([self._t])
        )
        self._pos = (nx, ny)
        self._t += 1
        self._done = bool(done[0])
        obs = self.core.observe(nx, ny, [self._t])[0]
        return StepResult(
            obs, float(r[0]), self._done,
            {"position": self.position, "reached": bool(reached[0]), "t": self._t},
        )


class FourGoals(_SingleEnv):
    core_cls = FourGoalsCore


class TwoPaths(_SingleEnv):
    core_cls = TwoPathsCore


def make_env(name: str) -> _SingleEnv:
    envs = {"four_goals": FourGoals, "two_paths": TwoPaths}
    if name not in envs:
        raise ValueError(f"unknown environment {name!r}; choose from {ENV_NAMES}")
    return envs[name]()


# ---------------------------------------------------------------------------
# Oracles on the task structure
# ---------------------------------------------------------------------------

def bfs_distances(start=TwoPathsCore.start):
    """Breadth-first shortest-path lengths on the TwoPaths grid (walls excluded)."""
    dist = {start: 0}
    queue = deque([start])
    while queue:
        x, y = queue.popleft()
        for dx, dy in K.GRID_MOVES:
            nx, ny = x + int(dx), y + int(dy)
            if not (0 <= nx < K.GRID and 0 <= ny < K.GRID) or TwoPathsCore.is_wall(nx, ny):
                continue
            if (nx, ny) not in dist:
                dist[(nx, ny)] = dist[(x, y)] + 1
                queue.append((nx, ny))
    return dist


def rollout_actions(core, actions):
    """Play an open-loop action list from the start; returns (positions, rewards, done)."""
    px, py = core.initial_positions(1)
    positions, rewards = [], []
    done = False
    for t, a in enumerate(actions):
        px, py, r, d, _ = core.move(px, py, np.array([a]), np.array([t]))
        positions.append((float(px[0]), float(py[0])))
        rewards.append(float(r[0]))
        if d[0]:
            done = True
            break
    return positions, rewards, done


def optimal_return(core, gamma: float | None = None) -> float:
    """Return of an optimal strategy (undiscounted when ``gamma`` is None)."""
    _, rewards, done = rollout_actions(core, core.optimal_actions()[0])
    assert done, "optimal action sequence must terminate"
    g = 1.0 if gamma is None else gamma
    return float(sum(r * g ** t for t, r in enumerate(rewards)))


# ---------------------------------------------------------------------------
# Behaviour embeddings
# ---------------------------------------------------------------------------

def behavior_embedding(trajectory, horizon: int) -> np.ndarray:
    """Concatenate per-step ``(x, y)`` and pad to ``horizon`` steps with the last position."""
    traj = np.asarray(trajectory, dtype=np.float64)
    if traj.size == 0:
        raise ValueError("trajectory is empty")
    traj = traj.reshape(-1, 2)
    if traj.shape[0] > horizon:
        raise ValueError(f"trajectory has {traj.shape[0]} steps, horizon is {horizon}")
    pad = np.repeat(traj[-1:], horizon - traj.shape[0], axis=0)
    return np.concatenate([traj, pad]).ravel()


def embed_trajectory(core, positions) -> np.ndarray:
    """Embedding of raw environment positions, normalised the way ``core`` requires."""
    xy = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
    return behavior_embedding(core.embed_xy(xy[:, 0], xy[:, 1]), core.horizon)


def solution_coverage(embeddings, core) -> int:
    """Number of distinct solutions used by a set of per-latent embeddings.

    FourGoals: distinct nearest goals of the terminal positions.
    TwoPaths: distinct detour sides, by majority sign of ``x - wall`` over the episode.
    """
    emb = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    if core.name == "four_goals":
        ends = emb[:, -2:]
        d = np.hypot(ends[:, None, 0] - K.GOALS[None, :, 0], ends[:, None, 1] - K.GOALS[None, :, 1])
        return int(np.unique(d.argmin(axis=1)).size)
    sides = set()
    for row in emb:
        x = row[0::2] / core.position_scale
        sign = np.sign(np.round(x) - K.WALL_X)
        vote = int(np.sign(sign.sum()))
        if vote != 0:
            sides.add(vote)
    return len(sides)


def write_trajectories(path, records) -> None:
    """Append episode records (dicts with seed, latent, step, x, y, reward, done)."""
    with open(path, "a") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
