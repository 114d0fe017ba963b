"""Running return estimates and the two indicator gates that pick the objective.

``mask_d`` is on once the smoothed discounted intrinsic return reaches the
diversity threshold ``delta``; ``mask_r`` is on once the smoothed discounted
extrinsic return reaches ``r_target``. Together they set the coefficients of
the extrinsic and intrinsic reward streams:

    c_ext = mask_d
    c_int = (1 - mask_d) + mask_r
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GateState:
    delta: float
    r_target: float
    ema_momentum: float = 0.9
    # relative band: a mask switches off only below threshold - hysteresis * |threshold|
    hysteresis: float = 0.05
    j_ext_ema: float = math.nan
    j_div_ema: float = math.nan
    mask_d: bool = False
    mask_r: bool = False
    n_updates: int = 0

    def __post_init__(self):
        if not 0.0 <= self.ema_momentum < 1.0:
            raise ValueError("ema_momentum must lie in [0, 1)")
        if self.hysteresis < 0:
            raise ValueError("hysteresis must be >= 0")


def delta_from_step(delta_step: float, gamma: float, horizon: int) -> float:
    """Convert a per-step diversity level into a discounted-return threshold."""
    if gamma == 1.0:
        return delta_step * horizon
    return delta_step * (1.0 - gamma ** horizon) / (1.0 - gamma)


def _latch(on: bool, value: float, threshold: float, band: float) -> bool:
    if on:
        return value >= threshold - band
    return value >= threshold


def update_gates(state: GateState, episode_ext_returns, episode_int_returns) -> GateState:
    """Fold one batch of completed-episode discounted returns into the gates."""
    ext = np.asarray(episode_ext_returns, dtype=np.float64)
    intr = np.asarray(episode_int_returns, dtype=np.float64)
    if ext.size == 0 or intr.size == 0:
        logger.warning("gate update skipped: no completed episodes in this batch")
        return state
    m = state.ema_momentum
    if state.n_updates == 0:
        j_ext, j_div = float(ext.mean()), float(intr.mean())
    else:
        j_ext = m * state.j_ext_ema + (1.0 - m) * float(ext.mean())
        j_div = m * state.j_div_ema + (1.0 - m) * float(intr.mean())
    mask_d = _latch(state.mask_d, j_div, state.delta, state.hysteresis * abs(state.delta))
    mask_r = _latch(state.mask_r, j_ext, state.r_target, state.hysteresis * abs(state.r_target))
    return replace(
        state, j_ext_ema=j_ext, j_div_ema=j_div, mask_d=mask_d, mask_r=mask_r,
        n_updates=state.n_updates + 1,
    )


def gate_coefficients(mask_d, mask_r):
    """Coefficients ``(c_ext, c_int)`` on the two reward streams; accepts arrays."""
    d = np.asarray(mask_d, dtype=np.float64)
    r = np.asarray(mask_r, dtype=np.float64)
    c_ext = d
    c_int = (1.0 - d) + r
    if c_ext.ndim == 0:
        return float(c_ext), float(c_int)
    return c_ext, c_int


def compose_total_reward(r_ext, r_int, mask_d, mask_r):
    c_ext, c_int = gate_coefficients(mask_d, mask_r)
    return c_ext * r_ext + c_int * r_int


def gated_value_targets(returns_ext, returns_int, mask_d, mask_r):
    """Critic regression targets: each return stream times its gate coefficient."""
    returns_ext = np.asarray(returns_ext, dtype=np.float64)
    returns_int = np.asarray(returns_int, dtype=np.float64)
    if returns_ext.shape != returns_int.shape:
        raise ValueError(f"return arrays differ in shape: {returns_ext.shape} vs {returns_int.shape}")
    c_ext, c_int = gate_coefficients(mask_d, mask_r)
    return c_ext * returns_ext, c_int * returns_int


def gate_record(iteration: int, state: GateState) -> dict:
    return {
        "iteration": iteration,
        "j_ext_ema": state.j_ext_ema,
        "j_div_ema": state.j_div_ema,
        "mask_d": int(state.mask_d),
        "mask_r": int(state.mask_r),
    }
