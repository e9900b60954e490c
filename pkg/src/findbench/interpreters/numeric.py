"""Reference interpreter for numeric functions: fixed query plan, then model search.

Query plan (truncated by the budget, so a smaller budget always sees a prefix
of what a larger one sees):

1. a 65-point coarse grid on [-128, 128], step 4;
2. the same grid again: with a deterministic function the repeats agree, so
   disagreement marks either observation noise (large spread everywhere) or a
   corrupted region (small spread around one value);
3. the remaining integers in [-128, 128];
4. 48 seeded off-grid inputs, which separate ceiling/floor from lines;
5. if noisy: two anchors repeated to 25 samples each for the noise verdict;
6. if corrupted: bisection of every clean/corrupted boundary to width 0.5.
"""

from __future__ import annotations

import logging
import math

import numpy as np

from findbench import numeric
from findbench.blackbox import BlackBoxSession, BudgetExceeded
from findbench.interpreters.base import Interpretation
from findbench.interpreters.fitting import Fit, FitData, fit_all, score_expr
from findbench.interpreters.noise import NoiseVerdict, classify_noise
from findbench.numeric import Atom, Compose, NumericExpr

log = logging.getLogger(__name__)

NAME = "numeric-ref"
MIN_BUDGET = 64
COARSE = np.linspace(numeric.GRID_LO, numeric.GRID_HI, 65)
OFFGRID_POINTS = 48
ANCHOR_REPEATS = 25
#: corrupted values scatter with sd 0.1; wider spread among disagreeing repeats means noise
CORRUPTION_SPREAD = 0.2
CORRUPTION_MAX_DIFF = 0.8
BISECT_WIDTH = 0.5


class _Exhausted(Exception):
    pass


class _Recorder:
    """Budget-aware query log over one session."""

    def __init__(self, session: BlackBoxSession, budget: int):
        self.session = session
        self.budget = budget
        self.x: list[float] = []
        self.y: list[float] = []
        self.corrupted: list[tuple[float, float]] = []

    @property
    def used(self) -> int:
        return len(self.x)

    def query(self, xs) -> np.ndarray:
        xs = [float(v) for v in np.atleast_1d(xs)]
        room = self.budget - self.used
        if self.session.remaining is not None:
            room = min(room, self.session.remaining)
        take = xs[:max(room, 0)]
        ys = self.session.query_numbers(take) if take else np.empty(0)
        self.x.extend(take)
        self.y.extend(float(v) for v in ys)
        if len(take) < len(xs):
            raise _Exhausted
        return ys

    def values_at(self, x: float) -> list[float]:
        return [y for xv, y in zip(self.x, self.y) if xv == x]


def offgrid_inputs(seed: int, n: int = OFFGRID_POINTS) -> np.ndarray:
    rng = np.random.default_rng([seed, 11])
    return np.round(rng.uniform(numeric.GRID_LO, numeric.GRID_HI, n), 2)


def _is_corrupted(rec: _Recorder, x: float) -> bool:
    vals = rec.values_at(x)
    need = max(0, 2 - len(vals))
    if need:
        rec.query([x] * need)
        vals = rec.values_at(x)
    a, b = vals[-2], vals[-1]
    return not (math.isnan(a) and math.isnan(b)) and a != b


def _bisect(rec: _Recorder, clean: float, corrupt: float) -> float:
    while abs(corrupt - clean) > BISECT_WIDTH:
        mid = (clean + corrupt) / 2
        if _is_corrupted(rec, mid):
            corrupt = mid
        else:
            clean = mid
    return (clean + corrupt) / 2


def _corrupted_intervals(rec: _Recorder, mask: np.ndarray) -> list[tuple[float, float]]:
    out = []
    n = len(COARSE)
    i = 0
    while i < n:
        if not mask[i]:
            i += 1
            continue
        j = i
        while j + 1 < n and mask[j + 1]:
            j += 1
        left = numeric.GRID_LO if i == 0 else None
        right = numeric.GRID_HI if j == n - 1 else None
        out.append([left, right, i, j])
        i = j + 1
    intervals = []
    for left, right, i, j in out:
        # provisional edges let a budget cut still report something sensible
        lo = left if left is not None else (COARSE[i - 1] + COARSE[i]) / 2
        hi = right if right is not None else (COARSE[j] + COARSE[j + 1]) / 2
        intervals.append((float(lo), float(hi)))
    try:
        for k, (left, right, i, j) in enumerate(out):
            lo, hi = intervals[k]
            if left is None:
                lo = _bisect(rec, float(COARSE[i - 1]), float(COARSE[i]))
                intervals[k] = (lo, hi)
            if right is None:
                hi = _bisect(rec, float(COARSE[j + 1]), float(COARSE[j]))
                intervals[k] = (lo, hi)
    finally:
        rec.corrupted = intervals
    return intervals


def _map_floats(expr: NumericExpr, fn) -> NumericExpr:
    if isinstance(expr, Compose):
        return Compose(expr.op, _map_floats(expr.left, fn), _map_floats(expr.right, fn))
    params = {}
    for k, v in expr.params.items():
        if isinstance(v, tuple):
            params[k] = tuple(fn(float(e)) for e in v)
        elif k == "n":
            params[k] = v
        else:
            params[k] = fn(float(v))
    return Atom(expr.kind, fn(expr.a), fn(expr.b), params)


def tidy(fit: Fit, data: FitData) -> Fit:
    """Round parameters to the fewest decimals that leave the fit essentially unchanged."""
    for decimals in (0, 1, 2, 3, 4, 6, 8):
        try:
            cand = _map_floats(fit.expr, lambda v, d=decimals: float(round(v, d)) + 0.0)
        except numeric.ExprError:
            continue
        if isinstance(cand, Atom) and cand.a == 0:
            continue
        r = score_expr(cand, data)
        if r.mismatch <= fit.mismatch and r.nmse <= fit.nmse * 1.001 + 1e-14:
            return r
    return fit


def _noise_text(v: NoiseVerdict) -> str:
    if not v.noisy or v.kind == "unknown":
        return ""
    pname = {"normal": "sigma", "uniform": "half-width", "poisson": "rate"}[v.kind]
    return f", with additive {v.kind} noise ({pname} {numeric._fmt(round(v.scale, 2))})"


def _interval_text(intervals) -> str:
    return ", ".join(f"[{numeric._fmt(round(a, 2))}, {numeric._fmt(round(b, 2))}]" for a, b in intervals)


def describe_fit(expr: NumericExpr, verdict: NoiseVerdict, intervals, mu: float | None) -> str:
    if isinstance(expr, Compose):
        word = "sum" if expr.op == "sum" else "product"
        left = numeric.FAMILIES[expr.left.kind].noun
        right = numeric.FAMILIES[expr.right.kind].noun
        text = f"{word} of a {left} and a {right}, f(x) = {numeric.formula(expr)}"
    else:
        text = f"{numeric.FAMILIES[expr.kind].noun} f(x) = {numeric.formula(expr)}"
    text += _noise_text(verdict)
    if intervals:
        text += f", corrupted with noise on {_interval_text(intervals)}"
    return text


def interpret_numeric(session: BlackBoxSession, budget: int = 500, seed: int = 0) -> Interpretation:
    if session.category != "numeric":
        raise ValueError("interpret_numeric needs a numeric session")
    if budget < MIN_BUDGET:
        raise ValueError(f"budget must be at least {MIN_BUDGET}")
    rec = _Recorder(session, budget)
    verdict = NoiseVerdict("none")
    mu = None
    partial = False
    try:
        y1 = rec.query(COARSE)
        y2 = rec.query(COARSE)
        both = ~np.isnan(y1) & ~np.isnan(y2)
        jitter = both & (y1 != y2)
        grid = np.arange(numeric.GRID_LO, numeric.GRID_HI + 1)
        rec.query(grid[np.mod(grid, 4) != 0])
        rec.query(offgrid_inputs(seed))
        if jitter.any():
            vals = np.concatenate([y1[jitter], y2[jitter]])
            diffs = np.abs(y1[jitter] - y2[jitter])
            if float(np.std(vals)) < CORRUPTION_SPREAD and float(diffs.max()) < CORRUPTION_MAX_DIFF:
                mu = float(np.mean(vals))
                _corrupted_intervals(rec, jitter)
            else:
                # smallest magnitudes keep the integer-lattice test for poisson noise exact
                defined = np.flatnonzero(both)
                order = defined[np.lexsort((COARSE[defined], np.abs(y1[defined])))]
                anchors = [float(COARSE[i]) for i in order[:2]]
                for a in anchors:
                    rec.query([a] * (ANCHOR_REPEATS - 2))
                verdict = classify_noise([np.array(rec.values_at(a)) for a in anchors])
    except _Exhausted:
        partial = True
    except BudgetExceeded:
        partial = True

    xs = np.array(rec.x)
    ys = np.array(rec.y)
    keep = np.ones(xs.size, dtype=bool)
    for a, b in rec.corrupted:
        keep &= ~((xs >= a - BISECT_WIDTH) & (xs <= b + BISECT_WIDTH))
    if verdict.kind == "poisson":
        ys = ys - verdict.mean
    data = FitData.from_observations(xs[keep], ys[keep])

    if data.x.size == 0:
        fit = score_expr(Atom("constant", 1.0, mu if mu is not None else 0.0, {}), data)
    else:
        floor = 0.0
        if verdict.noisy and verdict.kind != "unknown":
            var = verdict.scale**2 if verdict.kind == "normal" else (
                verdict.scale**2 / 3 if verdict.kind == "uniform" else verdict.scale)
            floor = var * data.x.size / data.energy
        fits = fit_all(data, composition_threshold=max(1e-9, 1.5 * floor))
        fit = tidy(fits[0], data)

    intervals = tuple(rec.corrupted)
    domain = "none"
    if intervals:
        domain = f"values replaced by noise around {numeric._fmt(round(mu, 2))} on {_interval_text(intervals)}"
    return Interpretation(
        id=session.function_id,
        category="numeric",
        description=describe_fit(fit.expr, verdict, intervals, mu),
        domain=domain,
        program=fit.expr,
        noise=verdict.kind,
        noise_scale=round(float(verdict.scale), 6),
        intervals=intervals,
        corruption_value=mu,
        fit_score=fit.nmse,
        queries=rec.used,
        status="partial" if partial else "ok",
        interpreter=NAME,
    )
