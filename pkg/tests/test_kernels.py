from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from findbench import _kernels_py, kernels
from findbench.strings import all_ops, apply_op

OPS = all_ops()
compiled = kernels.compiled_backend()
needs_compiled = pytest.mark.skipif(compiled is None, reason="compiled kernels not built")

words = st.text(alphabet="abcdefghijklmnopqrstuvwxyzAE", min_size=0, max_size=9)


def _dense_loss(xs, ys, w1, b1, w2, c):
    h = np.maximum(0.0, np.outer(xs, w1) + b1)
    r = h @ w2 + c - ys
    return float(np.mean(r * r))


def _net(seed, n=300, h=12):
    rng = np.random.default_rng(seed)
    xs = np.sort(rng.uniform(-3, 3, n))
    ys = np.sin(xs) + rng.normal(0, 0.1, n)
    return xs, ys, rng.normal(size=h), rng.normal(size=h), rng.normal(size=h), float(rng.normal())


@pytest.mark.parametrize("backend", [_kernels_py, compiled], ids=["python", "compiled"])
def test_loss_matches_dense_and_gradient_matches_finite_differences(backend):
    if backend is None:
        pytest.skip("compiled kernels not built")
    xs, ys, w1, b1, w2, c = _net(0)
    loss, gw1, gb1, gw2, gc = backend.mlp_loss_grad(xs, ys, w1, b1, w2, c)
    assert loss == pytest.approx(_dense_loss(xs, ys, w1, b1, w2, c), rel=1e-10)
    eps = 1e-6
    for name, arr, grad in (("w1", w1, gw1), ("b1", b1, gb1), ("w2", w2, gw2)):
        for j in range(arr.size):
            up, dn = arr.copy(), arr.copy()
            up[j] += eps
            dn[j] -= eps
            args = {"w1": w1, "b1": b1, "w2": w2}
            fd = (_dense_loss(xs, ys, **{**args, name: up}, c=c) - _dense_loss(xs, ys, **{**args, name: dn}, c=c)) / (2 * eps)
            assert grad[j] == pytest.approx(fd, rel=1e-4, abs=1e-6)
    fd_c = (_dense_loss(xs, ys, w1, b1, w2, c + eps) - _dense_loss(xs, ys, w1, b1, w2, c - eps)) / (2 * eps)
    assert gc == pytest.approx(fd_c, rel=1e-4, abs=1e-6)


@needs_compiled
@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_mlp_backends_agree(seed):
    args = _net(seed, n=200, h=9)
    a = _kernels_py.mlp_loss_grad(*args)
    b = compiled.mlp_loss_grad(*args)
    assert a[0] == pytest.approx(b[0], rel=1e-9, abs=1e-12)
    for ga, gb in zip(a[1:], b[1:]):
        np.testing.assert_allclose(ga, gb, rtol=1e-8, atol=1e-10)


@needs_compiled
@settings(max_examples=60, deadline=None)
@given(words)
def test_apply_batch_agrees_with_apply_op(s):
    expected = [apply_op(op, s) for op in OPS]
    assert _kernels_py.apply_batch(OPS, s) == expected
    assert compiled.apply_batch(OPS, s) == expected


@needs_compiled
@settings(max_examples=25, deadline=None)
@given(st.lists(st.text(alphabet="abcde", min_size=1, max_size=6), min_size=1, max_size=3),
       st.integers(0, len(OPS) - 1), st.integers(0, len(OPS) - 1), st.booleans())
def test_consistency_search_agrees(inputs, i, j, compose):
    sub = OPS[: min(len(OPS), 40)] + [OPS[i], OPS[j]]
    f, g = OPS[i], OPS[j]
    outputs = [apply_op(g, apply_op(f, x)) if compose else apply_op(f, x) for x in inputs]
    pairs_py = _kernels_py.consistent_pairs(sub, inputs, outputs)
    pairs_c = [tuple(p) for p in compiled.consistent_pairs(sub, inputs, outputs)]
    assert pairs_py == pairs_c
    singles_py = _kernels_py.consistent_singles(sub, inputs, outputs)
    assert singles_py == list(compiled.consistent_singles(sub, inputs, outputs))
    if compose:
        assert (len(sub) - 2, len(sub) - 1) in pairs_py
    else:
        assert len(sub) - 2 in singles_py


def test_backend_flag_is_reported():
    assert kernels.BACKEND in ("cython", "python")
    if compiled is not None and kernels.BACKEND == "cython":
        assert kernels.consistent_pairs is compiled.consistent_pairs


def test_pure_python_override_selects_fallback():
    import os
    import subprocess
    import sys

    env = {**os.environ, "FINDBENCH_PURE_PYTHON": "1"}
    out = subprocess.run([sys.executable, "-c", "from findbench import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
