"""Observation-noise classification and residual-run change detection."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

#: pooled standard deviation below which repeats are not treated as observation noise
NOISE_FLOOR = 0.2
#: per-sample log-likelihood margin the uniform model must win by
UNIFORM_MARGIN = 0.01


@dataclass(frozen=True)
class NoiseVerdict:
    kind: str  # none | normal | uniform | poisson | unknown
    scale: float = 0.0  # sigma, half-width or rate
    mean: float = 0.0  # offset the noise adds on average

    @property
    def noisy(self) -> bool:
        return self.kind not in ("none",)


def _on_lattice(groups: list[np.ndarray]) -> bool:
    for g in groups:
        d = g - g[0]
        tol = max(1e-9, 64 * np.finfo(np.float64).eps * float(np.max(np.abs(g))))
        if np.any(np.abs(d - np.round(d)) > tol):
            return False
    return True


def uniform_vs_normal(groups: list[np.ndarray]) -> float:
    """Log-likelihood ratio (uniform minus normal) per sample, locations fitted per group."""
    n = sum(len(g) for g in groups)
    resid = np.concatenate([g - g.mean() for g in groups])
    s2 = float(np.sum(resid**2)) / n
    if s2 <= 0:
        return 0.0
    ll_normal = -0.5 * n * (math.log(2 * math.pi * s2) + 1)
    m = min(len(g) for g in groups)
    half = max(float(g.max() - g.min()) / 2 for g in groups) * (m + 1) / (m - 1)
    ll_uniform = -n * math.log(2 * half)
    return (ll_uniform - ll_normal) / n


def classify_noise(groups: list[np.ndarray]) -> NoiseVerdict:
    """Classify repeated observations; each group holds repeats at one input."""
    groups = [np.asarray(g, dtype=np.float64) for g in groups if len(g) >= 2]
    if not groups:
        return NoiseVerdict("unknown")
    n = sum(len(g) for g in groups)
    dof = n - len(groups)
    var = sum(float(np.sum((g - g.mean()) ** 2)) for g in groups) / max(dof, 1)
    sd = math.sqrt(var)
    if sd < NOISE_FLOOR:
        return NoiseVerdict("none")
    if _on_lattice(groups):
        return NoiseVerdict("poisson", var, var)
    if min(len(g) for g in groups) >= 5 and uniform_vs_normal(groups) > UNIFORM_MARGIN:
        half = max(float(g.max() - g.min()) / 2 for g in groups)
        m = min(len(g) for g in groups)
        return NoiseVerdict("uniform", half * (m + 1) / (m - 1))
    return NoiseVerdict("normal", sd)


def residual_runs(x: np.ndarray, resid: np.ndarray, k: float = 3.0, min_run: int = 3) -> list[tuple[float, float]]:
    """Maximal runs (in sorted ``x`` order) where |resid| > k * median absolute residual.

    Returns the x-extent of every run of at least ``min_run`` consecutive points.
    """
    order = np.argsort(x, kind="stable")
    xs = np.asarray(x, dtype=np.float64)[order]
    r = np.abs(np.asarray(resid, dtype=np.float64)[order])
    mad = float(np.median(r))
    thresh = k * mad if mad > 0 else 0.0
    hot = r > thresh
    runs = []
    i = 0
    while i < len(xs):
        if hot[i]:
            j = i
            while j + 1 < len(xs) and hot[j + 1]:
                j += 1
            if j - i + 1 >= min_run:
                runs.append((float(xs[i]), float(xs[j])))
            i = j + 1
        else:
            i += 1
    return runs
