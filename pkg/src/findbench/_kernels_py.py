"""Pure-Python/numpy implementations of the hot loops.

The compiled module ``findbench._kernels`` exposes the same functions with the
same argument conventions; ``findbench.kernels`` picks one at import time.
"""

from __future__ import annotations

import numpy as np

from findbench.strings import StringOp, apply_op


def active_ranges(xs: np.ndarray, w1: np.ndarray, b1: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Index range [lo, hi) of sorted ``xs`` where each hidden unit is active (w*x + b > 0)."""
    n = xs.shape[0]
    h = w1.shape[0]
    lo = np.zeros(h, dtype=np.int64)
    hi = np.zeros(h, dtype=np.int64)
    for j in range(h):
        w, b = w1[j], b1[j]
        if w > 0:
            lo[j] = np.searchsorted(xs, -b / w, side="right")
            hi[j] = n
        elif w < 0:
            hi[j] = np.searchsorted(xs, -b / w, side="left")
        elif b > 0:
            hi[j] = n
    return lo, hi


def mlp_loss_grad(xs, ys, w1, b1, w2, c: float):
    """Mean squared error of a 1-input ReLU net and its gradient.

    ``xs`` must be sorted ascending. Instead of the dense N x H activation
    matrix, the prediction is written as ``slope(x) * x + icpt(x) + c`` whose
    piecewise-constant coefficients change only at the H kinks; both the
    forward pass and the per-unit gradient sums then reduce to prefix sums.
    Cost is O(N + H log N) per call.
    """
    n = xs.shape[0]
    lo, hi = active_ranges(xs, w1, b1)
    dslope = np.zeros(n + 1)
    dicpt = np.zeros(n + 1)
    vs = w2 * w1
    vi = w2 * b1
    np.add.at(dslope, lo, vs)
    np.add.at(dicpt, lo, vi)
    np.add.at(dslope, hi, -vs)
    np.add.at(dicpt, hi, -vi)
    slope = np.cumsum(dslope[:n])
    icpt = np.cumsum(dicpt[:n])
    r = slope * xs + icpt + c - ys
    loss = float(np.cumsum(r * r)[-1] / n)
    e = 2.0 * r / n
    E = np.concatenate(([0.0], np.cumsum(e)))
    EX = np.concatenate(([0.0], np.cumsum(e * xs)))
    S = E[hi] - E[lo]
    SX = EX[hi] - EX[lo]
    gw2 = w1 * SX + b1 * S
    gw1 = w2 * SX
    gb1 = w2 * S
    gc = float(E[n])
    return loss, gw1, gb1, gw2, gc


def consistent_pairs(ops: list[StringOp], inputs: list[str], outputs: list[str]) -> list[tuple[int, int]]:
    """All (i, j) with ops[j](ops[i](x)) == y for every observed (x, y)."""
    out = []
    for i, f in enumerate(ops):
        mids = [apply_op(f, x) for x in inputs]
        for j, g in enumerate(ops):
            for m, y in zip(mids, outputs):
                if apply_op(g, m) != y:
                    break
            else:
                out.append((i, j))
    return out


def consistent_singles(ops: list[StringOp], inputs: list[str], outputs: list[str]) -> list[int]:
    return [i for i, f in enumerate(ops) if all(apply_op(f, x) == y for x, y in zip(inputs, outputs))]


def apply_batch(ops: list[StringOp], s: str) -> list[str]:
    return [apply_op(op, s) for op in ops]
