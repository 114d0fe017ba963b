"""``dgpo`` command line: train, eval, sweep and plot-data.

Exit status is 0 on success, 1 for usage errors (bad flags, config keys,
paths or mismatched checkpoints) and 2 when a run fails at runtime.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from dgpo.config import ABLATIONS, ConfigError, ExperimentConfig, load_config
from dgpo.envs import make_core, write_trajectories
from dgpo.metrics import evaluate_policy
from dgpo.nn import load_checkpoint
from dgpo.policy import policy_from_checkpoint

logger = logging.getLogger("dgpo")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
LOG_LEVELS = {"debug": logging.DEBUG, "info": logging.INFO, "warn": logging.WARNING}


class UsageError(Exception):
    pass


def _setup_logging() -> None:
    name = os.environ.get("DGPO_LOG_LEVEL", "info").lower()
    if name not in LOG_LEVELS:
        raise UsageError(f"DGPO_LOG_LEVEL must be one of {sorted(LOG_LEVELS)}, got {name!r}")
    logging.basicConfig(level=LOG_LEVELS[name], format="%(levelname)s %(name)s: %(message)s")


def _config(args) -> ExperimentConfig:
    if args.config is not None and not Path(args.config).is_file():
        raise UsageError(f"config file not found: {args.config}")
    try:
        return load_config(args.config, args.set)
    except ConfigError as exc:
        raise UsageError(str(exc)) from None


def _parse_seeds(text: str) -> list[int]:
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"--seeds expects comma-separated integers, got {text!r}") from None
    if not seeds:
        raise UsageError("--seeds needs at least one seed")
    return seeds


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    from dgpo.trainer import train

    cfg = _config(args)
    out = Path(args.out) if args.out else Path(cfg.output_dir)
    result = train(cfg, out, progress=True)
    rep = result.report
    logger.info("finished %s: coverage %d, m_div %s, mean return %.4f", out, rep.coverage,
                rep.m_div, rep.mean_return)
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def check_compatible(meta: dict, cfg: ExperimentConfig) -> None:
    """Reject a checkpoint whose task or network shapes disagree with ``cfg``."""
    core = make_core(cfg.env)
    problems = []
    if meta.get("env") not in (None, cfg.env):
        problems.append(f"env {meta['env']!r} != {cfg.env!r}")
    if int(meta["n_z"]) != cfg.n_z:
        problems.append(f"n_z {meta['n_z']} != {cfg.n_z}")
    if int(meta["obs_dim"]) != core.obs_dim or int(meta["n_actions"]) != core.n_actions:
        problems.append(f"network sized for obs_dim {meta['obs_dim']}, n_actions {meta['n_actions']}; "
                        f"{cfg.env} needs {core.obs_dim}, {core.n_actions}")
    hidden = meta["specs"]["actor"]["hidden"]
    if tuple(hidden) != tuple(cfg.hidden):
        problems.append(f"hidden {tuple(hidden)} != {tuple(cfg.hidden)}")
    if problems:
        raise UsageError("checkpoint does not match config: " + "; ".join(problems))


def evaluate_checkpoint(path, episodes: int, seed: int = 0, cfg: ExperimentConfig | None = None):
    """Load a checkpoint and return ``(report, episodes)`` for its greedy policy."""
    try:
        ckpt = load_checkpoint(path)
        policy = policy_from_checkpoint(ckpt)
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot load checkpoint {path}: {exc}") from None
    meta = ckpt.meta
    if cfg is not None:
        check_compatible(meta, cfg)
    env = cfg.env if cfg is not None else meta.get("env")
    if env is None:
        raise UsageError(f"checkpoint {path} does not record its env; pass --config or --set env=...")
    report, eps = evaluate_policy(policy, make_core(env), episodes, seed=seed, return_episodes=True)
    report.meta = {k: meta[k] for k in ("algo", "seed", "iteration") if k in meta}
    report.meta["checkpoint"] = str(path)
    return report, eps


def cmd_eval(args) -> int:
    cfg = _config(args) if (args.config or args.set) else None
    if args.episodes < 1:
        raise UsageError("--episodes must be >= 1")
    ckpt = Path(args.checkpoint)
    if not ckpt.is_file():
        raise UsageError(f"checkpoint not found: {ckpt}")
    report, episodes = evaluate_checkpoint(ckpt, args.episodes, args.seed, cfg)
    out = Path(args.out) if args.out else ckpt.parent.parent / "eval"
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.txt").write_text(report.to_text())
    traj = out / "trajectories.jsonl"
    traj.unlink(missing_ok=True)
    write_trajectories(traj, episodes)
    print(report.to_text(), end="")
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

def stage_transition(mask_d) -> int | None:
    """First iteration (1-based) at which ``mask_d`` is on."""
    for i, m in enumerate(mask_d, 1):
        if m:
            return i
    return None


def _run_seed(cfg: ExperimentConfig, run_dir: str) -> dict:
    from dgpo.trainer import train

    try:
        result = train(cfg, run_dir)
    except Exception as exc:  # one failed seed must not sink the sweep
        logging.getLogger("dgpo.sweep").error("%s seed %d failed: %s", cfg.algo, cfg.seed, exc)
        return {"algo": cfg.algo, "seed": cfg.seed, "status": "failed", "error": str(exc),
                "run_dir": run_dir}
    rep = result.report
    return {
        "algo": cfg.algo, "seed": cfg.seed, "status": "ok", "run_dir": run_dir,
        "coverage": rep.coverage, "m_div": rep.m_div, "f_score": rep.f_score,
        "mean_return": rep.mean_return,
        "stage_transition": stage_transition([s.mask_d for s in result.stats]),
    }


def _mean_stderr(values) -> tuple[float, float]:
    v = np.asarray([x for x in values if x is not None and math.isfinite(x)], dtype=np.float64)
    if v.size == 0:
        return math.nan, math.nan
    se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    return float(v.mean()), se


def aggregate(rows: list[dict]) -> dict:
    """Per-algo summary of a sweep: coverage list plus mean/stderr of return and M_Div."""
    out = {}
    for algo in dict.fromkeys(r["algo"] for r in rows):
        mine = [r for r in rows if r["algo"] == algo]
        ok = [r for r in mine if r["status"] == "ok"]
        ret_m, ret_se = _mean_stderr([r["mean_return"] for r in ok])
        div_m, div_se = _mean_stderr([r["m_div"] for r in ok])
        out[algo] = {
            "seeds": [r["seed"] for r in mine],
            "failed_seeds": [r["seed"] for r in mine if r["status"] != "ok"],
            "coverage": [r["coverage"] for r in ok],
            "stage_transition": [r["stage_transition"] for r in ok],
            "mean_return": ret_m, "stderr_return": ret_se,
            "m_div": div_m, "stderr_m_div": div_se,
        }
    return out


def aggregate_text(summary: dict, rows: list[dict]) -> str:
    lines = []
    for algo, s in summary.items():
        lines.append(f"[{algo}]")
        lines.append(f"mean_return = {s['mean_return']!r} +- {s['stderr_return']!r}")
        lines.append(f"m_div = {s['m_div']!r} +- {s['stderr_m_div']!r}")
        for r in (r for r in rows if r["algo"] == algo):
            if r["status"] == "ok":
                lines.append(f"seed {r['seed']}: coverage = {r['coverage']}, m_div = {r['m_div']!r}, "
                             f"mean_return = {r['mean_return']!r}, stage_transition = {r['stage_transition']}")
            else:
                lines.append(f"seed {r['seed']}: FAILED ({r['error']})")
    return "\n".join(lines) + "\n"


def run_sweep(cfg: ExperimentConfig, seeds, out, algos=None, workers: int = 1) -> dict:
    """Train every (algo, seed) pair into ``out/<algo>/seed_<n>`` and write the aggregate."""
    out = Path(out)
    algos = list(algos or [cfg.algo])
    jobs = [(cfg.replace(algo=a, seed=s), str(out / a / f"seed_{s}")) for a in algos for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_seed, *zip(*jobs)))
    else:
        rows = [_run_seed(c, d) for c, d in jobs]
    summary = aggregate(rows)
    out.mkdir(parents=True, exist_ok=True)
    (out / "aggregate.json").write_text(json.dumps({"runs": rows, "summary": summary}, indent=2))
    (out / "aggregate.txt").write_text(aggregate_text(summary, rows))
    return {"runs": rows, "summary": summary}


def cmd_sweep(args) -> int:
    cfg = _config(args)
    seeds = _parse_seeds(args.seeds)
    if args.workers < 1:
        raise UsageError("--workers must be >= 1")
    out = Path(args.out) if args.out else Path(cfg.output_dir)
    result = run_sweep(cfg, seeds, out, ABLATIONS if args.ablation else None, args.workers)
    print((out / "aggregate.txt").read_text(), end="")
    failed = [r for r in result["runs"] if r["status"] != "ok"]
    return EXIT_RUNTIME if failed else EXIT_OK


# ---------------------------------------------------------------------------
# plot-data
# ---------------------------------------------------------------------------

def _read_jsonl(path: Path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def export_plot_data(run_dir, out=None) -> list[Path]:
    """Write ``curves.csv`` and ``traces.csv`` for a finished run; returns the paths written."""
    run_dir = Path(run_dir)
    metrics = run_dir / "metrics.jsonl"
    if not metrics.is_file():
        raise UsageError(f"{run_dir} has no metrics.jsonl")
    records = _read_jsonl(metrics)
    if not records:
        raise UsageError(f"{metrics} is empty")
    out = Path(out) if out else run_dir / "plot_data"
    out.mkdir(parents=True, exist_ok=True)
    written = []
    curves = out / "curves.csv"
    with open(curves, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "return", "m_div", "mask_d", "mask_r"])
        for r in records:
            w.writerow([r["iteration"], r.get("mean_episode_return", ""), r.get("m_div", ""),
                        r["mask_d"], r["mask_r"]])
    written.append(curves)
    traj = run_dir / "trajectories.jsonl"
    if traj.is_file():
        traces = out / "traces.csv"
        with open(traces, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["latent", "episode", "step", "x", "y", "reward"])
            counts: dict[int, int] = {}
            for ep in _read_jsonl(traj):
                k = ep["latent"]
                idx = counts.get(k, 0)
                counts[k] = idx + 1
                for step, x, y, rew in zip(ep["step"], ep["x"], ep["y"], ep["reward"]):
                    w.writerow([k, idx, step, x, y, rew])
        written.append(traces)
    else:
        logger.warning("%s has no trajectories.jsonl; skipping per-latent traces", run_dir)
    return written


def cmd_plotdata(args) -> int:
    for path in export_plot_data(args.run_dir, args.out):
        print(path)
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dgpo", description="Train and evaluate latent-conditioned diverse policies (DGPO)")
    sub = parser.add_subparsers(dest="command", required=True)

    def config_flags(p):
        p.add_argument("--config", metavar="PATH", help="key = value config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config key (repeatable)")

    p = sub.add_parser("train", help="train one run")
    config_flags(p)
    p.add_argument("--out", metavar="DIR", help="run directory (default: output_dir from config)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="greedy evaluation of a checkpoint")
    p.add_argument("checkpoint")
    config_flags(p)
    p.add_argument("--episodes", type=int, default=8, help="episodes per latent code")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", metavar="DIR")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="train several seeds (and optionally the ablation matrix)")
    config_flags(p)
    p.add_argument("--seeds", default="1,2,3,4,5")
    p.add_argument("--out", metavar="DIR")
    p.add_argument("--ablation", action="store_true", help="run " + ", ".join(ABLATIONS))
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("plot-data", help="export CSV tables from a run directory")
    p.add_argument("run_dir")
    p.add_argument("--out", metavar="DIR")
    p.set_defaults(func=cmd_plotdata)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        _setup_logging()
        return args.func(args)
    except UsageError as exc:
        print(f"dgpo: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:
        logger.error("%s failed: %s", args.command, exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
