"""Two-layer ReLU network approximations of numeric functions."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from findbench import kernels, numeric
from findbench.numeric import NumericExpr

log = logging.getLogger(__name__)

DOMAIN = (-100.0, 100.0)
WEIGHTS_FORMAT = 1


class ApproximationError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class MlpWeights:
    """``y = y_mean + y_scale * (w2 . relu(w1 * z + b1) + c)`` with ``z = (x - x_mean) / x_scale``."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    c: float
    x_mean: float
    x_scale: float
    y_mean: float
    y_scale: float
    epochs: int = 0
    train_nmse: float = math.nan
    seed: int = 0

    @property
    def width(self) -> int:
        return int(self.w1.shape[0])

    def __post_init__(self) -> None:
        for name in ("w1", "b1", "w2"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not (self.w1.shape == self.b1.shape == self.w2.shape and self.w1.ndim == 1):
            raise ApproximationError("weight vectors must share one hidden width")
        vals = np.concatenate([self.w1, self.b1, self.w2, [self.c, self.x_mean, self.x_scale, self.y_mean, self.y_scale]])
        if not np.all(np.isfinite(vals)):
            raise ApproximationError("weights must be finite")

    def __eq__(self, other) -> bool:
        if not isinstance(other, MlpWeights):
            return NotImplemented
        return to_json(self) == to_json(other)


def forward(weights: MlpWeights, x) -> np.ndarray:
    """Network output for each input; total and finite for finite ``x``."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    z = (x - weights.x_mean) / weights.x_scale
    hidden = np.maximum(0.0, np.outer(z, weights.w1) + weights.b1)
    return weights.y_mean + weights.y_scale * (hidden @ weights.w2 + weights.c)


def _nmse(pred: np.ndarray, y: np.ndarray) -> float:
    denom = float(np.mean(y * y))
    err = float(np.mean((pred - y) ** 2))
    if denom == 0.0:
        return 0.0 if err == 0.0 else math.inf
    return err / denom


def training_points(expr: NumericExpr, rng: np.random.Generator, n_points: int) -> tuple[np.ndarray, np.ndarray]:
    """``n_points`` uniform draws from the defined part of the training domain."""
    xs, ys = [], []
    have = 0
    for attempt in range(200):
        x = rng.uniform(DOMAIN[0], DOMAIN[1], n_points)
        y = numeric.evaluate(expr, x)
        ok = ~np.isnan(y)
        if attempt == 0 and ok.sum() < 100:
            raise ApproximationError(
                f"only {int(ok.sum())} of {n_points} sample points are defined on {DOMAIN}; need at least 100"
            )
        xs.append(x[ok])
        ys.append(y[ok])
        have += int(ok.sum())
        if have >= n_points:
            break
    return np.concatenate(xs)[:n_points], np.concatenate(ys)[:n_points]


def train_approximation(
    expr: NumericExpr,
    seed: int,
    width: int = 64,
    epochs: int = 10_000,
    lr: float = 1e-3,
    tol: float = 1e-5,
    n_points: int = 10_000,
    check_every: int = 25,
) -> MlpWeights:
    """Full-batch Adam on standardized data, stopping early once training NMSE < ``tol``."""
    rng = np.random.default_rng(seed)
    x, y = training_points(expr, rng, n_points)
    order = np.argsort(x, kind="stable")
    x, y = x[order], y[order]

    x_mean, x_scale = float(x.mean()), float(x.std())
    y_mean, y_scale = float(y.mean()), float(y.std())
    if x_scale == 0.0:
        x_scale = 1.0
    if y_scale == 0.0:
        y_scale = 1.0
    z = np.ascontiguousarray((x - x_mean) / x_scale)
    t = np.ascontiguousarray((y - y_mean) / y_scale)
    # standardized MSE -> NMSE in original units
    to_nmse = y_scale**2 / float(np.mean(y * y)) if np.any(y != 0) else 1.0

    # kinks spread uniformly over the data, random orientation
    kinks = rng.uniform(z[0], z[-1], width)
    w1 = rng.choice([-1.0, 1.0], width) * rng.uniform(0.5, 2.0, width)
    b1 = -w1 * kinks
    w2 = rng.normal(0.0, 1.0 / math.sqrt(width), width)
    c = 0.0

    params = [w1, b1, w2, np.array([c])]
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    done = 0
    for epoch in range(1, epochs + 1):
        loss, gw1, gb1, gw2, gc = kernels.mlp_loss_grad(z, t, params[0], params[1], params[2], float(params[3][0]))
        if (epoch - 1) % check_every == 0 and loss * to_nmse < tol:
            break
        grads = (gw1, gb1, gw2, np.array([gc]))
        bc1 = 1.0 - beta1**epoch
        bc2 = 1.0 - beta2**epoch
        for p, g, mm, vv in zip(params, grads, m, v):
            mm *= beta1
            mm += (1.0 - beta1) * g
            vv *= beta2
            vv += (1.0 - beta2) * g * g
            p -= lr * (mm / bc1) / (np.sqrt(vv / bc2) + eps)
        done = epoch

    weights = MlpWeights(
        w1=params[0], b1=params[1], w2=params[2], c=float(params[3][0]),
        x_mean=x_mean, x_scale=x_scale, y_mean=y_mean, y_scale=y_scale,
        epochs=done, seed=seed,
    )
    nmse = _nmse(forward(weights, x), y)
    log.debug("trained width-%d net in %d epochs, nmse %.3g", width, done, nmse)
    return _with_nmse(weights, nmse)


def _with_nmse(w: MlpWeights, nmse: float) -> MlpWeights:
    return MlpWeights(w.w1, w.b1, w.w2, w.c, w.x_mean, w.x_scale, w.y_mean, w.y_scale, w.epochs, nmse, w.seed)


def recompute_nmse(weights: MlpWeights, expr: NumericExpr, n_points: int = 10_000) -> float:
    """Training NMSE recomputed from the seed: redraws the exact training set."""
    x, y = training_points(expr, np.random.default_rng(weights.seed), n_points)
    return _nmse(forward(weights, x), y)


# ---------------------------------------------------------------------------
# weight sidecars


def to_json(w: MlpWeights) -> dict:
    return {
        "format": WEIGHTS_FORMAT,
        "width": w.width,
        "w1": [float(v) for v in w.w1],
        "b1": [float(v) for v in w.b1],
        "w2": [float(v) for v in w.w2],
        "c": float(w.c),
        "x_mean": w.x_mean,
        "x_scale": w.x_scale,
        "y_mean": w.y_mean,
        "y_scale": w.y_scale,
        "epochs": w.epochs,
        "train_nmse": w.train_nmse,
        "seed": w.seed,
    }


def from_json(obj: dict) -> MlpWeights:
    if obj.get("format") != WEIGHTS_FORMAT:
        raise ApproximationError(f"unsupported weights format {obj.get('format')!r}")
    return MlpWeights(
        w1=np.array(obj["w1"]), b1=np.array(obj["b1"]), w2=np.array(obj["w2"]), c=float(obj["c"]),
        x_mean=float(obj["x_mean"]), x_scale=float(obj["x_scale"]),
        y_mean=float(obj["y_mean"]), y_scale=float(obj["y_scale"]),
        epochs=int(obj["epochs"]), train_nmse=float(obj["train_nmse"]), seed=int(obj["seed"]),
    )


def save_weights(w: MlpWeights, path: str | Path, provenance: dict | None = None) -> None:
    obj = to_json(w)
    if provenance:
        obj["provenance"] = provenance
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, sort_keys=True) + "\n")


def load_weights(path: str | Path) -> MlpWeights:
    try:
        obj = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ApproximationError(f"{path}: {exc}") from exc
    return from_json(obj)
