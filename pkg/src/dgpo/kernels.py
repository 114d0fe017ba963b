"""Hot inner loops, each in a numba and a pure-numpy flavour.

The ``_nb_*`` functions are compiled with numba, the ``_np_*`` functions are
vectorised numpy. The unprefixed public names are bound to one or the other
according to :data:`dgpo._accel.USE_NUMBA`. Both flavours are kept importable
so the tests can check them against each other and the benchmark can time
them side by side.
"""

from __future__ import annotations

import math

import numpy as np

from dgpo._accel import USE_NUMBA, njit

# FourGoals geometry: goals E, W, N, S; eight compass moves starting at E, CCW.
GOALS = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
_S = math.sqrt(0.5)
COMPASS = np.array(
    [[1.0, 0.0], [_S, _S], [0.0, 1.0], [-_S, _S],
     [-1.0, 0.0], [-_S, -_S], [0.0, -1.0], [_S, -_S]]
)
STEP = 0.1
BOUND = 1.5
GOAL_RADIUS = 0.1
GOAL_BONUS = 5.0

# TwoPaths grid: 7x7, x = column, y = row; wall occupies x == 3, 1 <= y <= 5.
GRID = 7
WALL_X = 3
WALL_Y0, WALL_Y1 = 1, 5
GOAL_CELL = (3, 6)
# up, down, left, right
GRID_MOVES = np.array([[0, 1], [0, -1], [-1, 0], [1, 0]], dtype=np.int64)
STEP_COST = -0.02
GOAL_REWARD = 1.0


# ---------------------------------------------------------------------------
# FourGoals dynamics
# ---------------------------------------------------------------------------

def _np_four_goals_move(px, py, actions, t, horizon):
    d = COMPASS[actions]
    nx = np.clip(px + STEP * d[:, 0], -BOUND, BOUND)
    ny = np.clip(py + STEP * d[:, 1], -BOUND, BOUND)
    dist = np.sqrt((nx[:, None] - GOALS[None, :, 0]) ** 2 + (ny[:, None] - GOALS[None, :, 1]) ** 2)
    nearest = dist.min(axis=1)
    reached = nearest < GOAL_RADIUS
    reward = -nearest + GOAL_BONUS * reached
    done = reached | (t + 1 >= horizon)
    return nx, ny, reward, done, reached


@njit
def _nb_four_goals_move(px, py, actions, t, horizon):
    n = px.shape[0]
    nx = np.empty(n)
    ny = np.empty(n)
    reward = np.empty(n)
    done = np.empty(n, dtype=np.bool_)
    reached = np.empty(n, dtype=np.bool_)
    for i in range(n):
        a = actions[i]
        x = px[i] + STEP * COMPASS[a, 0]
        y = py[i] + STEP * COMPASS[a, 1]
        x = min(max(x, -BOUND), BOUND)
        y = min(max(y, -BOUND), BOUND)
        best = np.inf
        for g in range(GOALS.shape[0]):
            dx = x - GOALS[g, 0]
            dy = y - GOALS[g, 1]
            dd = math.sqrt(dx * dx + dy * dy)
            if dd < best:
                best = dd
        hit = best < GOAL_RADIUS
        nx[i] = x
        ny[i] = y
        reward[i] = -best + (GOAL_BONUS if hit else 0.0)
        reached[i] = hit
        done[i] = hit or (t[i] + 1 >= horizon)
    return nx, ny, reward, done, reached


# ---------------------------------------------------------------------------
# TwoPaths dynamics
# ---------------------------------------------------------------------------

def _np_two_paths_move(x, y, actions, t, horizon):
    m = GRID_MOVES[actions]
    cx = x + m[:, 0]
    cy = y + m[:, 1]
    blocked = (cx < 0) | (cx >= GRID) | (cy < 0) | (cy >= GRID)
    blocked |= (cx == WALL_X) & (cy >= WALL_Y0) & (cy <= WALL_Y1)
    nx = np.where(blocked, x, cx)
    ny = np.where(blocked, y, cy)
    reached = (nx == GOAL_CELL[0]) & (ny == GOAL_CELL[1])
    reward = STEP_COST + GOAL_REWARD * reached
    done = reached | (t + 1 >= horizon)
    return nx, ny, reward, done, reached


@njit
def _nb_two_paths_move(x, y, actions, t, horizon):
    n = x.shape[0]
    nx = np.empty(n, dtype=np.int64)
    ny = np.empty(n, dtype=np.int64)
    reward = np.empty(n)
    done = np.empty(n, dtype=np.bool_)
    reached = np.empty(n, dtype=np.bool_)
    for i in range(n):
        a = actions[i]
        cx = x[i] + GRID_MOVES[a, 0]
        cy = y[i] + GRID_MOVES[a, 1]
        blocked = cx < 0 or cx >= GRID or cy < 0 or cy >= GRID
        if cx == WALL_X and cy >= WALL_Y0 and cy <= WALL_Y1:
            blocked = True
        if blocked:
            cx = x[i]
            cy = y[i]
        hit = cx == GOAL_CELL[0] and cy == GOAL_CELL[1]
        nx[i] = cx
        ny[i] = cy
        reward[i] = STEP_COST + (GOAL_REWARD if hit else 0.0)
        reached[i] = hit
        done[i] = hit or (t[i] + 1 >= horizon)
    return nx, ny, reward, done, reached


# ---------------------------------------------------------------------------
# Generalized advantage estimation over (T, N) arrays
# ---------------------------------------------------------------------------

def _np_gae(rewards, values, dones, last_values, gamma, lam):
    n_steps = rewards.shape[0]
    adv = np.zeros_like(rewards)
    running = np.zeros_like(last_values)
    next_values = last_values
    for t in range(n_steps - 1, -1, -1):
        live = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_values * live - values[t]
        running = delta + gamma * lam * live * running
        adv[t] = running
        next_values = values[t]
    return adv


@njit
def _nb_gae(rewards, values, dones, last_values, gamma, lam):
    n_steps, n_envs = rewards.shape
    adv = np.zeros((n_steps, n_envs))
    for j in range(n_envs):
        running = 0.0
        next_value = last_values[j]
        for t in range(n_steps - 1, -1, -1):
            live = 1.0 - dones[t, j]
            delta = rewards[t, j] + gamma * next_value * live - values[t, j]
            running = delta + gamma * lam * live * running
            adv[t, j] = running
            next_value = values[t, j]
    return adv


# ---------------------------------------------------------------------------
# Pairwise-minimum intrinsic reward over a batch of posteriors
# ---------------------------------------------------------------------------

def _np_intrinsic_rewards(q, z, floor):
    q = np.maximum(q, floor)
    rows = np.arange(q.shape[0])
    own = q[rows, z]
    rivals = q.copy()
    rivals[rows, z] = -np.inf
    # log(a / (a + b)) is decreasing in b, so the min sits at the strongest rival
    worst = rivals.max(axis=1)
    return np.log(own / (own + worst))


@njit
def _nb_intrinsic_rewards(q, z, floor):
    n, k = q.shape
    out = np.empty(n)
    for i in range(n):
        own = max(q[i, z[i]], floor)
        best = np.inf
        for j in range(k):
            if j == z[i]:
                continue
            other = max(q[i, j], floor)
            val = math.log(own / (own + other))
            if val < best:
                best = val
        out[i] = best
    return out


# ---------------------------------------------------------------------------
# Discounted visitation counts on a discrete state space
# ---------------------------------------------------------------------------

def _np_discounted_visits(cells, lengths, gamma, n_cells):
    n_ep, horizon = cells.shape
    steps = np.arange(horizon)
    mask = steps[None, :] < lengths[:, None]
    weights = np.broadcast_to(gamma ** steps, (n_ep, horizon))
    out = np.zeros(n_cells)
    np.add.at(out, cells[mask], weights[mask])
    return out


@njit
def _nb_discounted_visits(cells, lengths, gamma, n_cells):
    out = np.zeros(n_cells)
    for e in range(cells.shape[0]):
        w = 1.0
        for t in range(lengths[e]):
            out[cells[e, t]] += w
            w *= gamma
    return out


# ---------------------------------------------------------------------------
# Pairwise Euclidean distances between rows
# ---------------------------------------------------------------------------

def _np_pairwise_distances(x):
    diff = x[:, None, :] - x[None, :, :]
    return np.sqrt((diff * diff).sum(axis=-1))


@njit
def _nb_pairwise_distances(x):
    n, d = x.shape
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            s = 0.0
            for k in range(d):
                diff = x[i, k] - x[j, k]
                s += diff * diff
            out[i, j] = math.sqrt(s)
            out[j, i] = out[i, j]
    return out


NUMPY_KERNELS = {
    "four_goals_move": _np_four_goals_move,
    "two_paths_move": _np_two_paths_move,
    "gae": _np_gae,
    "intrinsic_rewards": _np_intrinsic_rewards,
    "discounted_visits": _np_discounted_visits,
    "pairwise_distances": _np_pairwise_distances,
}
NUMBA_KERNELS = {
    "four_goals_move": _nb_four_goals_move,
    "two_paths_move": _nb_two_paths_move,
    "gae": _nb_gae,
    "intrinsic_rewards": _nb_intrinsic_rewards,
    "discounted_visits": _nb_discounted_visits,
    "pairwise_distances": _nb_pairwise_distances,
}

_active = NUMBA_KERNELS if USE_NUMBA else NUMPY_KERNELS
BACKEND = "numba" if USE_NUMBA else "numpy"

four_goals_move = _active["four_goals_move"]
two_paths_move = _active["two_paths_move"]
gae = _active["gae"]
intrinsic_rewards = _active["intrinsic_rewards"]
discounted_visits = _active["discounted_visits"]
pairwise_distances = _active["pairwise_distances"]
