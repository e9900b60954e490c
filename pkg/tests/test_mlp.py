from __future__ import annotations

import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from findbench import mlp, numeric
from findbench.mlp import ApproximationError, MlpWeights, forward, train_approximation
from findbench.numeric import Atom


def _zero_net(width=8, y_mean=3.0, y_scale=2.0, c=0.5) -> MlpWeights:
    z = np.zeros(width)
    return MlpWeights(z, z, z, c, 0.0, 1.0, y_mean, y_scale)


def test_zero_net_outputs_destandardized_bias():
    assert np.all(forward(_zero_net(), [-5.0, 0.0, 7.0]) == 3.0 + 2.0 * 0.5)


def test_constant_is_learned():
    w = train_approximation(Atom("constant", 1.0, 5.0), seed=0)
    assert w.train_nmse < 1e-4


def test_relu_is_learned():
    w = train_approximation(Atom("relu", 1.0, 0.0, {"leak": 0.0}), seed=0)
    assert w.train_nmse < 1e-3


def test_linear_mean_abs_error_on_grid():
    w = train_approximation(Atom("linear", 2.0, 3.0), seed=1)
    inside = numeric.GRID[np.abs(numeric.GRID) < 100]
    assert float(np.mean(np.abs(forward(w, inside) - (2 * inside + 3)))) < 0.5


def test_forward_deterministic():
    w = train_approximation(Atom("sin", 10.0, 0.0, {"period": 60.0, "phase": 0.0}), seed=2, epochs=200)
    assert np.array_equal(forward(w, numeric.GRID), forward(w, numeric.GRID))


def test_training_reproducible_and_recorded_nmse_recomputes():
    e = Atom("tanh", 5.0, 1.0, {"center": 10.0, "width": 20.0})
    a = train_approximation(e, seed=3, epochs=500)
    b = train_approximation(e, seed=3, epochs=500)
    assert a == b
    assert abs(mlp.recompute_nmse(a, e) - a.train_nmse) < 1e-9


def test_too_few_defined_points_rejected():
    # x**-0.5 is defined on roughly half the domain: 150 draws leave fewer than 100
    with pytest.raises(ApproximationError, match="at least 100"):
        mlp.training_points(Atom("power", 1.0, 0.0, {"p": -0.5}), np.random.default_rng(0), 150)


def test_undefined_targets_excluded():
    x, y = mlp.training_points(Atom("logarithm", 1.0, 0.0), np.random.default_rng(0), 1000)
    assert x.size == 1000 and np.all(x > 0) and np.all(np.isfinite(y))


def test_sidecar_round_trip(tmp_path):
    w = train_approximation(Atom("linear", 1.0, 0.0), seed=0, epochs=50)
    mlp.save_weights(w, tmp_path / "w.json", provenance={"seed": 1})
    assert mlp.load_weights(tmp_path / "w.json") == w
    with pytest.raises(ApproximationError):
        mlp.load_weights(tmp_path / "missing.json")


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.floats(-150, 150), st.floats(0.01, 5))
def test_piecewise_affine_between_kinks(seed, x0, span):
    rng = np.random.default_rng(seed)
    w = MlpWeights(rng.normal(size=16), rng.normal(size=16), rng.normal(size=16), 0.1, 2.0, 40.0, 1.0, 3.0)
    z_kinks = -w.b1 / np.where(w.w1 == 0, np.inf, w.w1)
    kinks = np.sort(z_kinks * w.x_scale + w.x_mean)
    lo, hi = x0, x0 + span
    if np.any((kinks > lo) & (kinks < hi)):
        return
    xs = np.array([lo, (lo + hi) / 2, hi])
    ys = forward(w, xs)
    assert ys[1] == pytest.approx((ys[0] + ys[2]) / 2, rel=1e-9, abs=1e-9)


def test_training_time_budget():
    t0 = time.perf_counter()
    train_approximation(Atom("gaussian", 20.0, 0.0, {"mu": 10.0, "sigma": 15.0}), seed=0)
    assert time.perf_counter() - t0 < 30
