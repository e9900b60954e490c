"""Benchmark function recipes: payload, modifier stack, serialization, templates."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from findbench import numeric, strings
from findbench.numeric import GRID, NumericExpr
from findbench.relations import RelationSpec, describe_relation
from findbench.strings import StringProgram

CATEGORIES = ("numeric", "strings", "relations")
NOISE_DISTS = ("normal", "uniform", "poisson")
CORRUPTION_VARIANCE = 0.01


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSpec:
    """Additive observation noise. ``param`` is sigma, half-width or rate."""

    dist: str
    param: float

    def __post_init__(self) -> None:
        if self.dist not in NOISE_DISTS:
            raise SpecError(f"unknown noise distribution {self.dist!r}")
        if not self.param > 0:
            raise SpecError("noise parameter must be positive")

    def draw(self, rng: np.random.Generator, size=None):
        if self.dist == "normal":
            return rng.normal(0.0, self.param, size)
        if self.dist == "uniform":
            return rng.uniform(-self.param, self.param, size)
        return np.asarray(rng.poisson(self.param, size), dtype=np.float64)

    @property
    def mean(self) -> float:
        return self.param if self.dist == "poisson" else 0.0

    @property
    def variance(self) -> float:
        if self.dist == "normal":
            return self.param**2
        if self.dist == "uniform":
            return self.param**2 / 3.0
        return self.param


@dataclass(frozen=True)
class CorruptionSpec:
    """Replacement of values by N(mu, variance) on one side of an interval.

    ``interval`` is ``bounded`` ([lo, hi]), ``right`` ([lo, inf)) or ``left``
    ((-inf, lo]); ``polarity`` says whether the inside or outside is corrupted.
    """

    interval: str
    lo: float
    hi: float | None
    polarity: str
    mu: float
    variance: float = CORRUPTION_VARIANCE

    def __post_init__(self) -> None:
        if self.interval not in ("bounded", "right", "left"):
            raise SpecError(f"unknown interval kind {self.interval!r}")
        if self.polarity not in ("inside", "outside"):
            raise SpecError(f"unknown polarity {self.polarity!r}")
        if self.interval == "bounded":
            if self.hi is None or not 5 <= self.hi - self.lo <= 20 + 1e-9:
                raise SpecError("bounded corruption interval must have width in [5, 20]")
        elif self.hi is not None:
            raise SpecError("half-infinite interval takes no upper endpoint")
        if not -100 <= self.lo <= 100:
            raise SpecError("corruption endpoint must lie in [-100, 100]")

    def inside(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.interval == "bounded":
            return (x >= self.lo) & (x <= self.hi)
        if self.interval == "right":
            return x >= self.lo
        return x <= self.lo

    def corrupted(self, x):
        ins = self.inside(x)
        return ins if self.polarity == "inside" else ~ins

    def segments(self, lo: float = numeric.GRID_LO, hi: float = numeric.GRID_HI) -> list[tuple[float, float]]:
        """Corrupted set clipped to [lo, hi], as a sorted list of closed intervals."""
        if self.interval == "bounded":
            inner = [(self.lo, self.hi)]
        elif self.interval == "right":
            inner = [(self.lo, math.inf)]
        else:
            inner = [(-math.inf, self.lo)]
        if self.polarity == "inside":
            segs = inner
        else:
            segs, cur = [], -math.inf
            for a, b in inner:
                segs.append((cur, a))
                cur = b
            segs.append((cur, math.inf))
        out = []
        for a, b in segs:
            a, b = max(a, lo), min(b, hi)
            if b > a:
                out.append((a, b))
        return out

    def describe(self) -> str:
        if self.interval == "bounded":
            region = f"[{numeric._fmt(self.lo)}, {numeric._fmt(self.hi)}]"
        elif self.interval == "right":
            region = f"[{numeric._fmt(self.lo)}, inf)"
        else:
            region = f"(-inf, {numeric._fmt(self.lo)}]"
        where = "on" if self.polarity == "inside" else "outside"
        return f"corrupted with noise {where} {region}"


@dataclass(frozen=True)
class ApproximationRef:
    """Served by a trained network whose weights live at ``path`` (dataset-relative)."""

    path: str


Modifier = Union[NoiseSpec, CorruptionSpec, ApproximationRef]
Payload = Union[NumericExpr, StringProgram, RelationSpec]


@dataclass(frozen=True)
class FunctionSpec:
    id: str
    category: str
    payload: Payload
    modifiers: tuple = ()
    seed: int = 0
    subcategory: str = "atomic"
    description: str = ""
    domain_note: str = "none"

    def __post_init__(self) -> None:
        if self.category not in CATEGORIES:
            raise SpecError(f"unknown category {self.category!r}")
        kinds = [type(m) for m in self.modifiers]
        for k in (NoiseSpec, CorruptionSpec, ApproximationRef):
            if kinds.count(k) > 1:
                raise SpecError(f"at most one {k.__name__} modifier")
        if self.modifiers and self.category != "numeric":
            raise SpecError("modifiers apply only to numeric functions")

    def _mod(self, kind):
        for m in self.modifiers:
            if isinstance(m, kind):
                return m
        return None

    @property
    def noise(self) -> NoiseSpec | None:
        return self._mod(NoiseSpec)

    @property
    def corruption(self) -> CorruptionSpec | None:
        return self._mod(CorruptionSpec)

    @property
    def approximation(self) -> ApproximationRef | None:
        return self._mod(ApproximationRef)


# ---------------------------------------------------------------------------
# evaluation with modifiers

BaseFn = Callable[[np.ndarray], np.ndarray]


def base_function(spec: FunctionSpec, weights=None) -> BaseFn:
    """Deterministic noiseless, uncorrupted function served for ``spec``."""
    if spec.approximation is not None:
        if weights is None:
            raise SpecError(f"{spec.id}: approximation weights not loaded")
        from findbench.mlp import forward

        return lambda x: forward(weights, x)
    expr = spec.payload
    return lambda x: numeric.evaluate(expr, x)


def query_rng(seed: int, nonce: int, index: int) -> np.random.Generator:
    """Counter-based stream: one independent generator per (seed, nonce, query index)."""
    return np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, nonce, index])


def eval_with_modifiers(
    spec: FunctionSpec, x: float, index: int, nonce: int = 0, base: BaseFn | None = None
) -> float | None:
    """Value of one query: corruption replacement first, then additive noise."""
    if spec.category != "numeric":
        raise SpecError("eval_with_modifiers needs a numeric spec")
    base = base or base_function(spec)
    v = float(base(np.array([x], dtype=np.float64))[0])
    corr, noise = spec.corruption, spec.noise
    if corr is None and noise is None:
        return None if math.isnan(v) else v
    rng = query_rng(spec.seed, nonce, index)
    if corr is not None and bool(corr.corrupted(x)):
        v = float(rng.normal(corr.mu, math.sqrt(corr.variance)))
    if noise is not None and not math.isnan(v):
        v += float(noise.draw(rng))
    return None if math.isnan(v) or math.isinf(v) else v


def truth_function(spec: FunctionSpec) -> BaseFn:
    """Noise-free ground truth used for scoring: the corrupted region is held at its mean.

    An approximated function is scored against the expression its network imitates.
    """
    expr = spec.payload
    base = lambda x: numeric.evaluate(expr, x)  # noqa: E731
    corr = spec.corruption
    if corr is None:
        return base

    def f(x):
        x = np.asarray(x, dtype=np.float64)
        out = np.array(base(x), dtype=np.float64)
        out[corr.corrupted(x)] = corr.mu
        return out

    return f


def grid_mean(expr: NumericExpr) -> float:
    """Mean over the canonical grid, skipping undefined points."""
    vals = numeric.evaluate(expr, GRID)
    vals = vals[~np.isnan(vals)]
    if vals.size == 0:
        raise SpecError("function undefined on the entire grid")
    return float(vals.mean())


# ---------------------------------------------------------------------------
# descriptions


def describe(spec: FunctionSpec) -> str:
    if spec.category == "strings":
        return strings.describe(spec.payload)
    if spec.category == "relations":
        return describe_relation(spec.payload)
    expr = spec.payload
    if isinstance(expr, numeric.Compose):
        word = "sum" if expr.op == "sum" else "product"
        left = numeric.FAMILIES[expr.left.kind].noun
        right = numeric.FAMILIES[expr.right.kind].noun
        text = f"{word} of a {left} and a {right}, f(x) = {numeric.formula(expr)}"
    else:
        text = f"{numeric.FAMILIES[expr.kind].noun} f(x) = {numeric.formula(expr)}"
    if spec.noise is not None:
        n = spec.noise
        pname = {"normal": "sigma", "uniform": "half-width", "poisson": "rate"}[n.dist]
        text += f", with additive {n.dist} noise ({pname} {numeric._fmt(n.param)})"
    if spec.corruption is not None:
        text += ", " + spec.corruption.describe()
    if spec.approximation is not None:
        text += ", approximated by a two-layer ReLU network"
    return text


def domain_note(spec: FunctionSpec) -> str:
    if spec.category == "relations":
        rel = spec.payload
        if rel.tag is None:
            return "none"
        from findbench.relations import default_tables

        return f"returns undefined for {default_tables()[rel.table].tag_phrase(rel.tag)}"
    c = spec.corruption
    if c is None:
        return "none"
    segs = ", ".join(f"[{numeric._fmt(a)}, {numeric._fmt(b)}]" for a, b in c.segments())
    return f"values replaced by noise around {numeric._fmt(round(c.mu, 4))} on {segs}"


# ---------------------------------------------------------------------------
# serialization


def modifier_to_json(m: Modifier) -> dict:
    if isinstance(m, NoiseSpec):
        return {"type": "noise", "dist": m.dist, "param": float(m.param)}
    if isinstance(m, CorruptionSpec):
        return {
            "type": "corruption",
            "interval": m.interval,
            "lo": float(m.lo),
            "hi": None if m.hi is None else float(m.hi),
            "polarity": m.polarity,
            "mu": float(m.mu),
            "variance": float(m.variance),
        }
    return {"type": "approximation", "path": m.path}


def modifier_from_json(obj: dict) -> Modifier:
    t = obj["type"]
    if t == "noise":
        return NoiseSpec(obj["dist"], float(obj["param"]))
    if t == "corruption":
        return CorruptionSpec(
            obj["interval"], float(obj["lo"]), None if obj["hi"] is None else float(obj["hi"]),
            obj["polarity"], float(obj["mu"]), float(obj.get("variance", CORRUPTION_VARIANCE)),
        )
    if t == "approximation":
        return ApproximationRef(obj["path"])
    raise SpecError(f"unknown modifier type {t!r}")


def payload_to_json(category: str, payload: Payload):
    if category == "numeric":
        return numeric.to_json(payload)
    if category == "strings":
        return strings.to_json(payload)
    return payload.to_json()


def payload_from_json(category: str, obj) -> Payload:
    if category == "numeric":
        return numeric.from_json(obj)
    if category == "strings":
        return strings.from_json(obj)
    return RelationSpec.from_json(obj)


def to_record(spec: FunctionSpec, test_set=None) -> dict:
    """Manifest record with the fixed field order."""
    return {
        "id": spec.id,
        "category": spec.category,
        "subcategory": spec.subcategory,
        "ast": payload_to_json(spec.category, spec.payload),
        "modifiers": [modifier_to_json(m) for m in spec.modifiers],
        "seed": spec.seed,
        "description": spec.description,
        "domain_note": spec.domain_note,
        "test_set": test_set,
    }


def from_record(rec: dict) -> FunctionSpec:
    return FunctionSpec(
        id=rec["id"],
        category=rec["category"],
        payload=payload_from_json(rec["category"], rec["ast"]),
        modifiers=tuple(modifier_from_json(m) for m in rec.get("modifiers", [])),
        seed=int(rec.get("seed", 0)),
        subcategory=rec.get("subcategory", "atomic"),
        description=rec.get("description", ""),
        domain_note=rec.get("domain_note", "none"),
    )
