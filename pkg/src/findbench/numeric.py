"""Numeric expression grammar and its evaluation semantics.

Every atomic node computes ``a * g(x; params) + b`` where ``g`` is the
family's native function. Composite nodes combine two atoms from the
restricted composition subset pointwise with ``+`` or ``*``.

Undefined values are represented as ``nan`` in the vectorized path and as
``None`` in the scalar path. All transcendental kinds go through numpy
ufuncs so the scalar and vectorized paths share one math library.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

GRID_LO = -128.0
GRID_HI = 128.0
GRID_POINTS = 513

#: canonical evaluation grid, step 0.5
GRID = np.linspace(GRID_LO, GRID_HI, GRID_POINTS)

COMPOSITION_KINDS = (
    "linear",
    "polynomial",
    "step",
    "relu",
    "constant",
    "ceiling",
    "floor",
    "rectangle",
    "square_wave",
)

COMPOSE_OPS = ("sum", "product")


class ExprError(ValueError):
    """Raised for malformed expression trees."""


@dataclass(frozen=True)
class Atom:
    kind: str
    a: float = 1.0
    b: float = 0.0
    params: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in FAMILIES:
            raise ExprError(f"unknown numeric kind {self.kind!r}")
        fam = FAMILIES[self.kind]
        missing = set(fam.param_names) - set(self.params)
        extra = set(self.params) - set(fam.param_names)
        if missing or extra:
            raise ExprError(f"{self.kind}: bad params (missing {sorted(missing)}, extra {sorted(extra)})")
        if fam.check is not None:
            fam.check(self.params)


@dataclass(frozen=True)
class Compose:
    op: str
    left: Atom
    right: Atom

    def __post_init__(self) -> None:
        if self.op not in COMPOSE_OPS:
            raise ExprError(f"unknown composition operator {self.op!r}")
        for child in (self.left, self.right):
            if not isinstance(child, Atom) or child.kind not in COMPOSITION_KINDS:
                raise ExprError(f"composition child must be an atom from {COMPOSITION_KINDS}")


NumericExpr = Union[Atom, Compose]


# ---------------------------------------------------------------------------
# native functions; each takes a float64 array and returns float64 with nan
# where the expression is undefined


def _poly(x, coeffs):
    out = np.zeros_like(x)
    for c in reversed(coeffs):
        out = out * x + c
    return out


def _g_linear(x):
    return x.copy()


def _g_polynomial(x, coeffs):
    return _poly(x, coeffs)


def _g_absolute(x):
    return np.abs(x)


def _g_root(x, n):
    if n == 3:
        return np.cbrt(x)
    return np.sqrt(x)


def _g_logarithm(x):
    out = np.full_like(x, np.nan)
    pos = x > 0
    out[pos] = np.log(x[pos])
    return out


def _g_step(x, t):
    return np.where(x >= t, 1.0, 0.0)


def _g_relu(x, leak):
    return np.where(x > 0, x, leak * x)


def _g_sigmoid(x, center, width):
    return 1.0 / (1.0 + np.exp(-(x - center) / width))


def _g_tanh(x, center, width):
    return np.tanh((x - center) / width)


def _g_constant(x):
    return np.zeros_like(x)


def _g_power(x, p):
    out = np.full_like(x, np.nan)
    ok = np.ones_like(x, dtype=bool)
    if p < 0:
        ok &= x != 0
    if p != int(p):
        ok &= x >= 0
    out[ok] = np.power(x[ok], p)
    return out


def _g_sin(x, period, phase):
    return np.sin(2.0 * np.pi / period * (x - phase))


def _g_cos(x, period, phase):
    return np.cos(2.0 * np.pi / period * (x - phase))


def _g_tan(x, period, phase):
    t = (x - phase) / period
    k = t - 0.5
    pole = k == np.round(k)
    out = np.tan(np.pi * t)
    out[pole] = np.nan
    return out


def _g_reciprocal(x, shift):
    out = np.full_like(x, np.nan)
    ok = x != shift
    out[ok] = 1.0 / (x[ok] - shift)
    return out


def _g_gaussian(x, mu, sigma):
    return np.exp(-((x - mu) ** 2) / (2.0 * sigma * sigma))


def _t_norm(nu):
    return math.exp(math.lgamma((nu + 1) / 2) - math.lgamma(nu / 2)) / math.sqrt(nu * math.pi)


def _g_student_t(x, mu, nu, width):
    z = (x - mu) / width
    return _t_norm(nu) * np.power(1.0 + z * z / nu, -(nu + 1) / 2)


def _g_rational(x, num, den):
    d = _poly(x, den)
    out = np.full_like(x, np.nan)
    ok = d != 0
    out[ok] = _poly(x[ok], num) / d[ok]
    return out


def _g_rectangle(x, left, right):
    return np.where((x >= left) & (x <= right), 1.0, 0.0)


def _g_square_wave(x, period, phase):
    frac = np.mod((x - phase) / period, 1.0)
    return np.where(frac < 0.5, 1.0, -1.0)


def _g_exponential(x, k):
    return np.exp(k * x)


def _g_ceiling(x):
    return np.ceil(x)


def _g_floor(x):
    return np.floor(x)


def _erf(z):
    from scipy.special import erf

    return erf(z)


def _g_error_function(x, center, width):
    return _erf((x - center) / width)


def _check_poly(p):
    c = p["coeffs"]
    if len(c) < 2 or all(v == 0 for v in c[1:]):
        raise ExprError("polynomial needs degree >= 1")


def _check_rational(p):
    if all(v == 0 for v in p["den"]):
        raise ExprError("rational denominator is identically zero")


def _check_positive(*names):
    def check(p):
        for n in names:
            if not p[n] > 0:
                raise ExprError(f"parameter {n} must be positive")

    return check


def _check_root(p):
    if p["n"] not in (2, 3):
        raise ExprError("root order must be 2 or 3")


@dataclass(frozen=True)
class Family:
    name: str
    fn: Callable
    param_names: tuple = ()
    check: Callable | None = None
    # family output shape in words, used by describe()
    noun: str = ""
    inner: Callable | None = None


def _fmt(v: float) -> str:
    """Compact number formatting: integers without a trailing ``.0``."""
    v = float(v)
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def _shift(var: str, c: float) -> str:
    if c == 0:
        return var
    return f"({var} - {_fmt(c)})" if c > 0 else f"({var} + {_fmt(-c)})"


def _poly_str(coeffs) -> str:
    terms = []
    for power in range(len(coeffs) - 1, -1, -1):
        c = float(coeffs[power])
        if c == 0:
            continue
        mono = "" if power == 0 else ("x" if power == 1 else f"x^{power}")
        mag = _fmt(abs(c))
        body = mag + mono if (mag != "1" or not mono) else mono
        terms.append(("-" if c < 0 else "+", body))
    if not terms:
        return "0"
    sign, body = terms[0]
    out = ("-" if sign == "-" else "") + body
    for sign, body in terms[1:]:
        out += f" {sign} {body}"
    return out


FAMILIES: dict[str, Family] = {
    f.name: f
    for f in [
        Family("linear", _g_linear, (), None, "linear function", lambda p: "x"),
        Family("polynomial", _g_polynomial, ("coeffs",), _check_poly, "polynomial function",
               lambda p: f"({_poly_str(p['coeffs'])})"),
        Family("absolute", _g_absolute, (), None, "absolute value function", lambda p: "|x|"),
        Family("root", _g_root, ("n",), _check_root, "root function",
               lambda p: "sqrt(x)" if p["n"] == 2 else "cbrt(x)"),
        Family("logarithm", _g_logarithm, (), None, "logarithm function", lambda p: "ln(x)"),
        Family("step", _g_step, ("t",), None, "step function",
               lambda p: f"[x >= {_fmt(p['t'])}]"),
        Family("relu", _g_relu, ("leak",), None, "ReLU function",
               lambda p: "relu(x)" if p["leak"] == 0 else f"leaky_relu(x, {_fmt(p['leak'])})"),
        Family("sigmoid", _g_sigmoid, ("center", "width"), _check_positive("width"), "sigmoid function",
               lambda p: f"sigmoid({_shift('x', p['center'])} / {_fmt(p['width'])})"),
        Family("tanh", _g_tanh, ("center", "width"), _check_positive("width"), "hyperbolic tangent function",
               lambda p: f"tanh({_shift('x', p['center'])} / {_fmt(p['width'])})"),
        Family("constant", _g_constant, (), None, "constant function", lambda p: "0"),
        Family("power", _g_power, ("p",), None, "power function", lambda p: f"x^{_fmt(p['p'])}"),
        Family("sin", _g_sin, ("period", "phase"), _check_positive("period"), "sine function",
               lambda p: f"sin(2*pi/{_fmt(p['period'])} * {_shift('x', p['phase'])})"),
        Family("cos", _g_cos, ("period", "phase"), _check_positive("period"), "cosine function",
               lambda p: f"cos(2*pi/{_fmt(p['period'])} * {_shift('x', p['phase'])})"),
        Family("tan", _g_tan, ("period", "phase"), _check_positive("period"), "tangent function",
               lambda p: f"tan(pi/{_fmt(p['period'])} * {_shift('x', p['phase'])})"),
        Family("reciprocal", _g_reciprocal, ("shift",), None, "reciprocal function",
               lambda p: f"1/{_shift('x', p['shift'])}"),
        Family("gaussian", _g_gaussian, ("mu", "sigma"), _check_positive("sigma"), "gaussian bump",
               lambda p: f"exp(-{_shift('x', p['mu'])}^2 / (2*{_fmt(p['sigma'])}^2))"),
        Family("student_t", _g_student_t, ("mu", "nu", "width"), _check_positive("nu", "width"),
               "student-t density",
               lambda p: f"t_pdf({_shift('x', p['mu'])} / {_fmt(p['width'])}; nu={_fmt(p['nu'])})"),
        Family("rational", _g_rational, ("num", "den"), _check_rational, "rational function",
               lambda p: f"({_poly_str(p['num'])}) / ({_poly_str(p['den'])})"),
        Family("rectangle", _g_rectangle, ("left", "right"), None, "rectangle function",
               lambda p: f"[{_fmt(p['left'])} <= x <= {_fmt(p['right'])}]"),
        Family("square_wave", _g_square_wave, ("period", "phase"), _check_positive("period"),
               "square wave",
               lambda p: f"square(2*pi/{_fmt(p['period'])} * {_shift('x', p['phase'])})"),
        Family("exponential", _g_exponential, ("k",), None, "exponential function",
               lambda p: f"exp({_fmt(p['k'])}x)"),
        Family("ceiling", _g_ceiling, (), None, "ceiling function", lambda p: "ceil(x)"),
        Family("floor", _g_floor, (), None, "floor function", lambda p: "floor(x)"),
        Family("error_function", _g_error_function, ("center", "width"), _check_positive("width"),
               "error function",
               lambda p: f"erf({_shift('x', p['center'])} / {_fmt(p['width'])})"),
    ]
}

ATOMIC_KINDS = tuple(k for k in FAMILIES if k not in ("ceiling", "floor"))


def native(kind: str, params: dict, x: np.ndarray) -> np.ndarray:
    """Native family function ``g`` on an array (no scale or bias)."""
    fam = FAMILIES[kind]
    with np.errstate(all="ignore"):
        out = fam.fn(np.asarray(x, dtype=np.float64), **params)
    out = np.asarray(out, dtype=np.float64)
    out[~np.isfinite(out)] = np.nan
    return out


def evaluate(expr: NumericExpr, x) -> np.ndarray:
    """Vectorized evaluation; ``nan`` marks undefined points."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if isinstance(expr, Compose):
        left = evaluate(expr.left, x)
        right = evaluate(expr.right, x)
        with np.errstate(all="ignore"):
            out = left + right if expr.op == "sum" else left * right
    else:
        g = native(expr.kind, expr.params, x)
        if expr.kind == "constant":
            out = np.full_like(x, float(expr.b))
        else:
            with np.errstate(all="ignore"):
                out = expr.a * g + expr.b
    out = np.asarray(out, dtype=np.float64)
    out[~np.isfinite(out)] = np.nan
    return out


def eval_numeric(expr: NumericExpr, x: float) -> float | None:
    v = float(evaluate(expr, [x])[0])
    return None if math.isnan(v) else v


def formula(expr: NumericExpr) -> str:
    """Human-readable formula for the right-hand side of ``f(x) = ...``."""
    if isinstance(expr, Compose):
        sym = "+" if expr.op == "sum" else "*"
        return f"({formula(expr.left)}) {sym} ({formula(expr.right)})"
    if expr.kind == "constant":
        return _fmt(expr.b)
    inner = FAMILIES[expr.kind].inner(expr.params)
    a, b = float(expr.a), float(expr.b)
    if a == 1:
        head = inner
    elif a == -1:
        head = "-" + inner
    elif inner == "x":
        head = f"{_fmt(a)}x"
    else:
        head = f"{_fmt(a)}*{inner}"
    if b == 0:
        return head
    return f"{head} + {_fmt(b)}" if b > 0 else f"{head} - {_fmt(-b)}"


def free_parameters(expr: NumericExpr) -> int:
    """Number of fitted real parameters, for model-selection penalties."""
    if isinstance(expr, Compose):
        return free_parameters(expr.left) + free_parameters(expr.right)
    if expr.kind == "constant":
        return 1
    n = 2
    for name, v in expr.params.items():
        n += len(v) if isinstance(v, (tuple, list)) else 1
    return n


# ---------------------------------------------------------------------------
# serialization


def to_json(expr: NumericExpr) -> dict:
    if isinstance(expr, Compose):
        return {"kind": "compose", "op": expr.op, "children": [to_json(expr.left), to_json(expr.right)]}
    params = {}
    for name in FAMILIES[expr.kind].param_names:
        v = expr.params[name]
        params[name] = [float(c) for c in v] if isinstance(v, (tuple, list)) else float(v)
    return {"kind": expr.kind, "a": float(expr.a), "b": float(expr.b), "params": params}


def from_json(obj: dict) -> NumericExpr:
    if obj["kind"] == "compose":
        left, right = (from_json(c) for c in obj["children"])
        return Compose(obj["op"], left, right)
    params = {}
    for name, v in obj.get("params", {}).items():
        params[name] = tuple(float(c) for c in v) if isinstance(v, list) else float(v)
    if obj["kind"] == "root":
        params["n"] = int(params["n"])
    return Atom(obj["kind"], float(obj["a"]), float(obj["b"]), params)


def to_sexpr(expr: NumericExpr) -> str:
    if isinstance(expr, Compose):
        return f"({expr.op} {to_sexpr(expr.left)} {to_sexpr(expr.right)})"
    parts = [expr.kind, f":a {_fmt(expr.a)}", f":b {_fmt(expr.b)}"]
    for name in FAMILIES[expr.kind].param_names:
        v = expr.params[name]
        if isinstance(v, (tuple, list)):
            parts.append(f":{name} ({' '.join(_fmt(c) for c in v)})")
        else:
            parts.append(f":{name} {_fmt(v)}")
    return "(" + " ".join(parts) + ")"
