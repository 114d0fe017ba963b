"""Experiment configuration in ``key = value`` text form."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, fields
from pathlib import Path

from dgpo.envs import ENV_NAMES

logger = logging.getLogger(__name__)

ALGOS = ("dgpo", "ppo", "diayn", "smerl", "dgpo_no_stage1", "dgpo_no_stage2", "dgpo_mi_metric")
ABLATIONS = ("dgpo", "dgpo_no_stage1", "dgpo_no_stage2", "dgpo_mi_metric")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    env: str = "four_goals"
    algo: str = "dgpo"
    n_z: int = 4
    seed: int = 0
    iterations: int = 500
    output_dir: str = "runs/default"

    # PPO
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    n_epochs: int = 4
    n_minibatches: int = 4
    ent_coef: float = 0.01
    vf_coef: float = 0.5
    max_grad_norm: float = 0.5
    lr: float = 1e-3
    n_envs: int = 16
    n_steps: int = 128
    hidden: tuple = (64, 64)
    activation: str = "tanh"

    # discriminator
    disc_lr: float = 3e-3
    disc_epochs: int = 4
    # train q(z|s) on next observations, the states the intrinsic reward is read at
    disc_on_next_obs: bool = True
    # a goal-terminated episode keeps earning its terminal intrinsic reward until the horizon
    absorbing_intrinsic: bool = True

    # gates
    delta_step: float = -0.1
    r_target_frac: float = 0.9
    r_target: float | None = None
    ema_momentum: float = 0.9
    hysteresis: float = 0.05
    per_latent_masks: bool = False

    # baselines
    alpha: float = 0.1

    latent_assignment: str = "round_robin"
    prob_floor: float = 1e-8

    # bookkeeping
    checkpoint_every: int = 100
    eval_every: int = 10
    eval_episodes: int = 8

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.env not in ENV_NAMES:
            raise ConfigError(f"env must be one of {ENV_NAMES}, got {self.env!r}")
        if self.algo not in ALGOS:
            raise ConfigError(f"algo must be one of {ALGOS}, got {self.algo!r}")
        if self.n_z < 1:
            raise ConfigError("n_z must be >= 1")
        if not (0.0 <= self.gamma <= 1.0 and 0.0 <= self.gae_lambda <= 1.0):
            raise ConfigError("gamma and gae_lambda must lie in [0, 1]")
        if self.latent_assignment not in ("round_robin", "iid"):
            raise ConfigError("latent_assignment must be round_robin or iid")
        for name in ("iterations", "n_envs", "n_steps", "n_epochs", "n_minibatches", "disc_epochs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.activation not in ("tanh", "relu"):
            raise ConfigError("activation must be tanh or relu")

    @property
    def ppo_equivalent(self) -> bool:
        return self.algo == "ppo" or (self.algo.startswith("dgpo") and self.n_z == 1)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            lines.append(f"{f.name} = {_format(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    def replace(self, **kw) -> ExperimentConfig:
        return dataclasses.replace(self, **kw)


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _coerce(name: str, raw: str):
    raw = raw.strip()
    kind = {f.name: f.type for f in fields(ExperimentConfig)}[name]
    if raw.lower() in ("none", "auto") and "None" in str(kind):
        return None
    if kind in ("int",):
        return int(raw)
    if kind.startswith("float"):
        return float(raw)
    if kind == "bool":
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if kind == "tuple":
        return tuple(int(v) for v in raw.split(",") if v.strip())
    return raw


def parse_assignments(lines, source: str = "<config>") -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment. Unknown keys are errors."""
    known = {f.name for f in fields(ExperimentConfig)}
    out = {}
    for lineno, line in enumerate(lines, 1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line.strip()!r}")
        key, value = (s.strip() for s in text.split("=", 1))
        if key not in known:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r} in line {line.strip()!r}")
        try:
            out[key] = _coerce(key, value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key!r}: {exc}") from None
    return out


def load_config(path=None, overrides=()) -> ExperimentConfig:
    values = {}
    if path is not None:
        p = Path(path)
        values.update(parse_assignments(p.read_text().splitlines(), str(p)))
    values.update(parse_assignments(overrides, "--set"))
    cfg = ExperimentConfig(**values)
    if cfg.algo.startswith("dgpo") and cfg.n_z == 1:
        logger.warning("algo=%s with n_z=1 has no competing codes; this run is equivalent to PPO", cfg.algo)
    return cfg
