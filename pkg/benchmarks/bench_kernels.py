"""Compare the compiled kernels with the pure-Python fallback.

Run: python3 benchmarks/bench_kernels.py [--repeat N]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from findbench import _kernels_py, kernels, strings
from findbench.interpreters.strings import SEED_PROBES


def _time(fn, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cases():
    ops = strings.all_ops()
    prog = strings.StringProgram((ops[7], ops[40]))
    inputs = list(SEED_PROBES)
    outputs = [strings.eval_string(prog, s) for s in inputs]
    rng = np.random.default_rng(0)
    xs = np.sort(rng.uniform(-3, 3, 10_000))
    ys = np.sin(xs)
    w1, b1 = rng.normal(size=64), rng.normal(size=64)
    w2, c = rng.normal(size=64) / 8, 0.0
    return {
        "consistent_pairs": lambda m: m.consistent_pairs(ops, inputs, outputs),
        "consistent_singles": lambda m: m.consistent_singles(ops, inputs, outputs),
        # one training run's worth of epochs is thousands of these calls
        "mlp_loss_grad x200": lambda m: [m.mlp_loss_grad(xs, ys, w1, b1, w2, c) for _ in range(200)],
    }


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    compiled = kernels.compiled_backend()
    print(f"selected backend: {kernels.BACKEND}")
    print(f"{'kernel':<22} {'cython s':>10} {'python s':>10} {'speedup':>8}")
    for name, call in cases().items():
        py = _time(lambda: call(_kernels_py), args.repeat)
        if compiled is None:
            print(f"{name:<22} {'n/a':>10} {py:>10.4f} {'n/a':>8}")
            continue
        cy = _time(lambda: call(compiled), args.repeat)
        print(f"{name:<22} {cy:>10.4f} {py:>10.4f} {py / cy:>7.1f}x")


if __name__ == "__main__":
    main()
