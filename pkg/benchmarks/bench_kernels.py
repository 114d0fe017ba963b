"""Time the numba kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat 200] [--train-iters 5]

Per-kernel timings run in this process (both flavours are importable side by
side). The end-to-end row runs a few training iterations in a subprocess per
backend, because the backend is fixed at import time by ``DGPO_NUMBA``.
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from dgpo import kernels as K


def make_inputs(rng: np.random.Generator) -> dict:
    n, steps = 16, 128
    q = rng.dirichlet(np.ones(4), size=n * steps)
    return {
        "four_goals_move": (rng.uniform(-1.5, 1.5, n), rng.uniform(-1.5, 1.5, n),
                            rng.integers(0, 8, n), rng.integers(0, 32, n), 32),
        "two_paths_move": (rng.integers(0, 7, n), rng.integers(0, 7, n),
                           rng.integers(0, 4, n), rng.integers(0, 40, n), 40),
        "gae": (rng.normal(size=(steps, n)), rng.normal(size=(steps, n)),
                (rng.random((steps, n)) < 0.05).astype(np.float64), rng.normal(size=n), 0.99, 0.95),
        "intrinsic_rewards": (q, rng.integers(0, 4, n * steps), 1e-8),
        "discounted_visits": (rng.integers(0, 49, (1000, 41)), rng.integers(1, 42, 1000), 0.99, 49),
        "pairwise_distances": (rng.normal(size=(8, 64)),),
    }


def time_call(fn, args, repeat: int) -> float:
    fn(*args)  # compile / warm caches
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn(*args)
    return (time.perf_counter() - t0) / repeat


def train_seconds(backend_flag: str, iters: int) -> float:
    code = (
        "import time\n"
        "from dgpo.config import ExperimentConfig\n"
        "from dgpo.trainer import Trainer\n"
        f"tr = Trainer(ExperimentConfig(iterations={iters}, eval_every=0))\n"
        "tr.step()\n"
        "t0 = time.perf_counter()\n"
        f"for _ in range({iters}): tr.step()\n"
        f"print((time.perf_counter() - t0) / {iters})\n"
    )
    env = dict(os.environ, DGPO_NUMBA=backend_flag)
    out = subprocess.run([sys.executable, "-c", code], env=env, check=True, capture_output=True, text=True)
    return float(out.stdout.strip().splitlines()[-1])


def main(argv=None) -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=200)
    parser.add_argument("--train-iters", type=int, default=5, help="0 skips the end-to-end row")
    args = parser.parse_args(argv)

    inputs = make_inputs(np.random.default_rng(0))
    print(f"{'kernel':<22}{'numpy (us)':>12}{'numba (us)':>12}{'speedup':>10}")
    for name, call_args in inputs.items():
        t_np = time_call(K.NUMPY_KERNELS[name], call_args, args.repeat)
        t_nb = time_call(K.NUMBA_KERNELS[name], call_args, args.repeat)
        print(f"{name:<22}{t_np * 1e6:>12.1f}{t_nb * 1e6:>12.1f}{t_np / t_nb:>9.1f}x")
    if args.train_iters:
        t_np = train_seconds("0", args.train_iters)
        t_nb = train_seconds("1", args.train_iters)
        print(f"{'train iteration':<22}{t_np * 1e6:>12.0f}{t_nb * 1e6:>12.0f}{t_np / t_nb:>9.1f}x")


if __name__ == "__main__":
    main()
