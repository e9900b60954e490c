"""Model fitting over the numeric grammar.

Atomic families are fitted by scanning a grid of nonlinear native parameters
and solving scale and bias in closed form for every grid point at once; the
best few grid points are then polished with ``scipy.optimize.least_squares``.
Compositions are searched structure by structure: every composition child is
linear in a small basis once its discrete parameters (step threshold,
rectangle edges, square-wave period and phase) are fixed, so sums reduce to
linear least squares and products to a rank-one bilinear problem.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from itertools import combinations_with_replacement

import numpy as np
from scipy import optimize, special

from findbench import numeric
from findbench.numeric import Atom, Compose, NumericExpr

log = logging.getLogger(__name__)

#: fits at or below this NMSE count as exact for model selection
NMSE_FLOOR = 1e-12
#: multiplicative penalty per free parameter
PARAM_PENALTY = 0.02
#: additive penalty per observed-undefined input where the candidate is defined
UNDEF_PENALTY = 1e-9
SCALE = 128.0

_FAMILY_ORDER = {k: i for i, k in enumerate(numeric.FAMILIES)}


@dataclass
class FitData:
    x: np.ndarray
    y: np.ndarray
    undef: np.ndarray

    @classmethod
    def from_observations(cls, xs, ys) -> FitData:
        """Average repeated inputs; ``nan`` outputs become the undefined set."""
        xs = np.asarray(xs, dtype=np.float64)
        ys = np.asarray(ys, dtype=np.float64)
        defined = ~np.isnan(ys)
        ux, inv = np.unique(xs[defined], return_inverse=True)
        sums = np.zeros(ux.size)
        counts = np.zeros(ux.size)
        np.add.at(sums, inv, ys[defined])
        np.add.at(counts, inv, 1.0)
        undef = np.setdiff1d(np.unique(xs[~defined]), ux)
        return cls(ux, sums / np.maximum(counts, 1), undef)

    @property
    def energy(self) -> float:
        e = float(np.sum(self.y * self.y))
        return e if e > 0 else float(max(len(self.y), 1))


@dataclass(frozen=True)
class Fit:
    expr: NumericExpr
    nmse: float
    k: int
    mismatch: int = 0

    @property
    def score(self) -> float:
        return max(self.nmse, NMSE_FLOOR) * (1.0 + PARAM_PENALTY * self.k) + UNDEF_PENALTY * self.mismatch

    def key(self) -> tuple:
        if isinstance(self.expr, Compose):
            kinds = (100, _FAMILY_ORDER[self.expr.left.kind], _FAMILY_ORDER[self.expr.right.kind])
        else:
            kinds = (_FAMILY_ORDER[self.expr.kind],)
        return (self.score, self.k, kinds, numeric.to_sexpr(self.expr))


def residuals(expr: NumericExpr, data: FitData) -> np.ndarray:
    pred = numeric.evaluate(expr, data.x)
    return np.where(np.isnan(pred), data.y, pred - data.y)


def score_expr(expr: NumericExpr, data: FitData) -> Fit:
    r = residuals(expr, data)
    nmse = float(np.sum(r * r)) / data.energy
    mismatch = 0
    if data.undef.size:
        mismatch = int(np.sum(~np.isnan(numeric.evaluate(expr, data.undef))))
    if not math.isfinite(nmse):
        nmse = math.inf
    return Fit(expr, nmse, numeric.free_parameters(expr), mismatch)


def best(fits: list[Fit]) -> Fit | None:
    fits = [f for f in fits if math.isfinite(f.nmse)]
    return min(fits, key=Fit.key) if fits else None


# ---------------------------------------------------------------------------
# closed-form scale/bias for a stack of candidate shapes


def ab_scan(G: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Least-squares ``y ~ a*g + b`` for every row ``g`` of ``G`` (nan = undefined).

    Undefined entries are excluded from the solve and charged ``y**2``.
    Returns ``(a, b, sse)``; degenerate rows get ``sse = inf``.
    """
    with np.errstate(all="ignore"):
        W = np.isfinite(G)
        Gz = np.where(W, G, 0.0)
        Wf = W.astype(np.float64)
        yy = y * y
        sw = Wf.sum(axis=1)
        sg = Gz.sum(axis=1)
        sy = Wf @ y
        sgg = np.einsum("ij,ij->i", Gz, Gz)
        sgy = Gz @ y
        syy = Wf @ yy
        penalty = (1.0 - Wf) @ yy
        vg = sgg - sg * sg / sw
        cgy = sgy - sg * sy / sw
        a = cgy / vg
        b = (sy - a * sg) / sw
        sse = syy - sy * sy / sw - cgy * cgy / vg + penalty
        bad = (sw < 2) | ~(vg > 1e-12 * np.maximum(sgg, 1e-300)) | ~np.isfinite(sse)
    sse = np.where(bad, np.inf, np.maximum(sse, 0.0))
    return a, b, sse


def _top(sse: np.ndarray, k: int) -> np.ndarray:
    k = min(k, sse.size)
    idx = np.argpartition(sse, k - 1)[:k] if sse.size > k else np.arange(sse.size)
    idx = idx[np.isfinite(sse[idx])]
    return idx[np.lexsort((idx, sse[idx]))]


# ---------------------------------------------------------------------------
# vectorized native shapes for grid scans (rows = parameter settings)


def _col(v) -> np.ndarray:
    return np.asarray(v, dtype=np.float64)[:, None]


def _shape_rows(kind: str, P: dict, x: np.ndarray) -> np.ndarray:
    X = x[None, :]
    with np.errstate(all="ignore"):
        if kind == "sigmoid":
            return 1.0 / (1.0 + np.exp(-(X - _col(P["center"])) / _col(P["width"])))
        if kind == "tanh":
            return np.tanh((X - _col(P["center"])) / _col(P["width"]))
        if kind == "error_function":
            return special.erf((X - _col(P["center"])) / _col(P["width"]))
        if kind == "gaussian":
            s = _col(P["sigma"])
            return np.exp(-((X - _col(P["mu"])) ** 2) / (2.0 * s * s))
        if kind == "student_t":
            nu = _col(P["nu"])
            z = (X - _col(P["mu"])) / _col(P["width"])
            norm = np.exp(special.gammaln((nu + 1) / 2) - special.gammaln(nu / 2)) / np.sqrt(nu * np.pi)
            return norm * np.power(1.0 + z * z / nu, -(nu + 1) / 2)
        if kind == "tan":
            t = (X - _col(P["phase"])) / _col(P["period"])
            out = np.tan(np.pi * t)
            k = t - 0.5
            out[k == np.round(k)] = np.nan
            return out
        if kind == "square_wave":
            frac = np.mod((X - _col(P["phase"])) / _col(P["period"]), 1.0)
            return np.where(frac < 0.5, 1.0, -1.0)
        if kind == "reciprocal":
            d = X - _col(P["shift"])
            out = 1.0 / d
            out[d == 0] = np.nan
            return out
        if kind == "exponential":
            return np.exp(_col(P["k"]) * X)
    raise ValueError(kind)


def _mesh(**axes) -> dict:
    names = list(axes)
    grids = np.meshgrid(*[np.asarray(axes[n], dtype=np.float64) for n in names], indexing="ij")
    return {n: g.ravel() for n, g in zip(names, grids)}


def _periodic_grid(p_lo: float, p_hi: float, phase_step: float) -> dict:
    periods, phases = [], []
    for p in np.arange(p_lo, p_hi + 1e-9, 0.5):
        ph = np.arange(0.0, p - 1e-9, phase_step)
        periods.append(np.full(ph.size, p))
        phases.append(ph)
    return {"period": np.concatenate(periods), "phase": np.round(np.concatenate(phases), 6)}


GRIDS = {
    "sigmoid": lambda: _mesh(center=np.arange(-110, 111), width=np.arange(0.5, 30.01, 0.5)),
    "tanh": lambda: _mesh(center=np.arange(-110, 111), width=np.arange(0.5, 30.01, 0.5)),
    "error_function": lambda: _mesh(center=np.arange(-110, 111), width=np.arange(0.5, 30.01, 0.5)),
    "gaussian": lambda: _mesh(mu=np.arange(-110, 111), sigma=np.arange(1.0, 40.01, 0.5)),
    "student_t": lambda: _mesh(mu=np.arange(-110, 111), nu=[1, 1.5, 2, 3, 4, 6, 10],
                               width=[1, 2, 3, 4, 6, 8, 10, 13, 16, 20]),
    "tan": lambda: _periodic_grid(4.0, 70.0, 0.1),
    "square_wave": lambda: _periodic_grid(2.0, 70.0, 0.1),
    "reciprocal": lambda: {"shift": np.arange(-128.0, 128.01, 0.5)},
    "exponential": lambda: {"k": np.array([k for k in np.round(np.arange(-0.2, 0.2001, 0.005), 6) if k != 0])},
}

_CACHE: dict[str, dict] = {}


def grid(kind: str) -> dict:
    if kind not in _CACHE:
        _CACHE[kind] = GRIDS[kind]()
    return _CACHE[kind]


def _params_at(kind: str, P: dict, i: int) -> dict:
    return {n: float(v[i]) for n, v in P.items()}


def _scan_family(kind: str, data: FitData, top: int = 3, chunk: int = 4096) -> list[tuple[dict, float, float, float]]:
    P = grid(kind)
    n = next(iter(P.values())).size
    results = []
    for s in range(0, n, chunk):
        sub = {k: v[s:s + chunk] for k, v in P.items()}
        G = _shape_rows(kind, sub, data.x)
        a, b, sse = ab_scan(G, data.y)
        for i in _top(sse, top):
            results.append((sse[i], _params_at(kind, sub, i), a[i], b[i]))
    results.sort(key=lambda r: r[0])
    return [(p, a, b, e) for e, p, a, b in results[:top]]


# ---------------------------------------------------------------------------
# atomic families


def _atom(kind: str, a: float, b: float, params: dict) -> Atom | None:
    if not (math.isfinite(a) and math.isfinite(b)) or a == 0:
        return None
    try:
        return Atom(kind, float(a), float(b), params)
    except numeric.ExprError:
        return None


def _simple(kind: str, params: dict, data: FitData) -> list[NumericExpr]:
    g = numeric.native(kind, params, data.x)[None, :]
    a, b, sse = ab_scan(g, data.y)
    e = _atom(kind, a[0], b[0], params)
    return [e] if e is not None and math.isfinite(sse[0]) else []


def _poly_fit(x: np.ndarray, y: np.ndarray, degree: int) -> tuple[float, ...]:
    u = x / SCALE
    V = np.vander(u, degree + 1, increasing=True)
    w, *_ = np.linalg.lstsq(V, y, rcond=None)
    return tuple(float(w[k] / SCALE**k) for k in range(degree + 1))


def fit_polynomial(data: FitData, degrees=range(2, 6)) -> list[NumericExpr]:
    out = []
    for d in degrees:
        if data.x.size <= d:
            continue
        coeffs = _poly_fit(data.x, data.y, d)
        if all(c == 0 for c in coeffs[1:]):
            continue
        out.append(Atom("polynomial", 1.0, 0.0, {"coeffs": coeffs}))
    return out


def fit_relu(data: FitData) -> list[NumericExpr]:
    A = np.column_stack([np.maximum(data.x, 0), np.minimum(data.x, 0), np.ones_like(data.x)])
    w, *_ = np.linalg.lstsq(A, data.y, rcond=None)
    if w[0] == 0:
        return []
    e = _atom("relu", w[0], w[2], {"leak": float(w[1] / w[0])})
    return [e] if e else []


def fit_rational(data: FitData, iterations: int = 4) -> list[NumericExpr]:
    """Linearized fit of ``(N0 + N1 x + N2 x^2) / (d0 + d1 x + x^2)``, reweighted by the denominator."""
    x, y = data.x / SCALE, data.y
    if x.size < 6:
        return []
    wts = np.ones_like(x)
    out = []
    for _ in range(iterations):
        A = np.column_stack([np.ones_like(x), x, x * x, -y, -x * y]) * wts[:, None]
        rhs = y * x * x * wts
        norms = np.linalg.norm(A, axis=0)
        norms[norms == 0] = 1
        sol, *_ = np.linalg.lstsq(A / norms, rhs, rcond=None)
        N0, N1, N2, d0, d1 = sol / norms
        den = d0 + d1 * x + x * x
        wts = 1.0 / np.maximum(np.abs(den), 1e-12)
        # back to unscaled x: den(x) = x^2 + d1*S x + d0*S^2, num scaled by S^2
        S = SCALE
        num = ((N0 - N2 * d0) * S * S, (N1 - N2 * d1) * S)
        dn = (d0 * S * S, d1 * S, 1.0)
        if all(math.isfinite(v) for v in (*num, *dn, N2)):
            e = _atom("rational", 1.0, N2, {"num": num, "den": dn})
            if e is not None:
                out.append(e)
    return out[-1:]


def fit_step(data: FitData, top: int = 3) -> list[NumericExpr]:
    ts = np.unique(data.x)
    G = (data.x[None, :] >= ts[:, None]).astype(np.float64)
    a, b, sse = ab_scan(G, data.y)
    return [e for i in _top(sse, top) if (e := _atom("step", a[i], b[i], {"t": float(ts[i])}))]


def rectangle_scan(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """SSE of ``y ~ a*[x_i <= x <= x_j] + b`` for all index pairs i <= j (x sorted)."""
    n = x.size
    cs = np.concatenate([[0.0], np.cumsum(y)])
    cs2 = np.concatenate([[0.0], np.cumsum(y * y)])
    i, j = np.triu_indices(n)
    n_in = (j - i + 1).astype(np.float64)
    s_in = cs[j + 1] - cs[i]
    q_in = cs2[j + 1] - cs2[i]
    n_out = n - n_in
    s_out = cs[n] - s_in
    q_out = cs2[n] - q_in
    with np.errstate(all="ignore"):
        sse = (q_in - s_in * s_in / n_in) + np.where(n_out > 0, q_out - s_out * s_out / n_out, 0.0)
    sse = np.where(n_out > 0, sse, np.inf)
    return i, j, sse


def fit_rectangle(data: FitData, top: int = 3) -> list[NumericExpr]:
    x, y = data.x, data.y
    if x.size < 3:
        return []
    i, j, sse = rectangle_scan(x, y)
    out = []
    for k in _top(sse, top):
        lo, hi = i[k], j[k]
        inside = np.zeros(x.size, dtype=bool)
        inside[lo:hi + 1] = True
        b = float(y[~inside].mean())
        a = float(y[inside].mean()) - b
        e = _atom("rectangle", a, b, {"left": float(x[lo]), "right": float(x[hi])})
        if e:
            out.append(e)
    return out


def fit_sincos(kind: str, data: FitData, top: int = 2) -> list[NumericExpr]:
    x, y = data.x, data.y
    res = []
    for p in np.arange(2.0, 80.01, 0.5):
        w = 2 * np.pi / p
        A = np.column_stack([np.sin(w * x), np.cos(w * x), np.ones_like(x)])
        sol, *_ = np.linalg.lstsq(A, y, rcond=None)
        sse = float(np.sum((A @ sol - y) ** 2))
        res.append((sse, p, sol))
    res.sort(key=lambda r: r[0])
    out = []
    for _, p, (s, c, b) in res[:top]:
        amp = math.hypot(s, c)
        if amp == 0:
            continue
        w = 2 * np.pi / p
        # s sin(wx) + c cos(wx) = amp sin(w x + phi) = amp cos(w x + phi - pi/2)
        phi = math.atan2(c, s)
        if kind == "cos":
            phi -= math.pi / 2
        phase = (-phi / w) % p
        e = _atom(kind, amp, b, {"period": float(p), "phase": float(phase)})
        if e:
            out.append(e)
    return out


def fit_grid_family(kind: str, data: FitData, top: int = 2) -> list[NumericExpr]:
    return [e for p, a, b, _ in _scan_family(kind, data, top) if (e := _atom(kind, a, b, p))]


POWERS = (-4.0, -3.0, -2.0, -1.0, -0.5, 0.5, 1.5, 2.0, 2.5, 3.0, 4.0, 5.0)


def atomic_candidates(data: FitData) -> list[NumericExpr]:
    out: list[NumericExpr] = []
    out += _simple("linear", {}, data)
    out += fit_polynomial(data)
    out += _simple("absolute", {}, data)
    out += _simple("root", {"n": 2}, data)
    out += _simple("root", {"n": 3}, data)
    out += _simple("logarithm", {}, data)
    out += fit_step(data)
    out += fit_relu(data)
    out.append(Atom("constant", 1.0, float(np.mean(data.y)) if data.y.size else 0.0, {}))
    for p in POWERS:
        out += _simple("power", {"p": p}, data)
    out += fit_sincos("sin", data)
    out += fit_sincos("cos", data)
    out += fit_rational(data)
    out += fit_rectangle(data)
    for kind in ("sigmoid", "tanh", "error_function", "gaussian", "student_t", "tan",
                 "reciprocal", "square_wave", "exponential"):
        out += fit_grid_family(kind, data)
    return out


# ---------------------------------------------------------------------------
# continuous refinement

_CONTINUOUS = {
    "sigmoid": ("center", "width"),
    "tanh": ("center", "width"),
    "error_function": ("center", "width"),
    "gaussian": ("mu", "sigma"),
    "student_t": ("mu", "nu", "width"),
    "sin": ("period", "phase"),
    "cos": ("period", "phase"),
    "tan": ("period", "phase"),
    "exponential": ("k",),
    "power": ("p",),
    "rational": ("num", "den"),
}


def refine_atom(expr: Atom, data: FitData, max_nfev: int = 200) -> Atom:
    """Polish continuous native parameters together with scale and bias."""
    names = _CONTINUOUS.get(expr.kind)
    if not names or data.x.size < 4:
        return expr
    flat, layout = [], []
    for n in names:
        v = expr.params[n]
        if isinstance(v, tuple):
            free = len(v) - (1 if n == "den" else 0)
            flat.extend(v[:free])
            layout.append((n, free, len(v)))
        else:
            flat.append(v)
            layout.append((n, 0, 0))
    x0 = np.array([expr.a, expr.b, *flat], dtype=np.float64)

    def build(theta) -> dict:
        params, i = dict(expr.params), 2
        for n, free, total in layout:
            if total:
                vals = list(theta[i:i + free]) + ([1.0] if n == "den" else [])
                params[n] = tuple(float(v) for v in vals)
                i += free
            else:
                params[n] = float(theta[i])
                i += 1
        return params

    def resid(theta):
        try:
            e = Atom(expr.kind, float(theta[0]), float(theta[1]), build(theta))
        except numeric.ExprError:
            return np.full(data.x.size, 1e6)
        r = residuals(e, data)
        return np.where(np.isfinite(r), r, 1e6)

    try:
        sol = optimize.least_squares(resid, x0, method="trf", max_nfev=max_nfev, x_scale="jac")
    except (ValueError, np.linalg.LinAlgError):
        return expr
    try:
        cand = Atom(expr.kind, float(sol.x[0]), float(sol.x[1]), build(sol.x))
    except numeric.ExprError:
        return expr
    return cand


def fit_atomic(data: FitData, refine_top: int = 4) -> list[Fit]:
    fits = [score_expr(e, data) for e in atomic_candidates(data)]
    fits = [f for f in fits if math.isfinite(f.nmse)]
    fits.sort(key=Fit.key)
    refined = []
    seen = set()
    for f in fits:
        if len(seen) >= refine_top:
            break
        if f.nmse <= NMSE_FLOOR or f.expr.kind not in _CONTINUOUS or f.expr.kind in seen:
            continue
        seen.add(f.expr.kind)
        r = score_expr(refine_atom(f.expr, data), data)
        if r.nmse < f.nmse:
            refined.append(r)
    return sorted(fits + refined, key=Fit.key)


# ---------------------------------------------------------------------------
# compositions

FREE_KINDS = ("polynomial", "relu", "ceiling", "floor")
DISC_KINDS = ("step", "rectangle", "square_wave")
POLY_DEGREE = 5


def free_basis(kind: str, x: np.ndarray) -> np.ndarray:
    """Columns (without the constant) spanning a composition child of ``kind``."""
    u = x / SCALE
    if kind == "polynomial":
        return np.column_stack([u**k for k in range(1, POLY_DEGREE + 1)])
    if kind == "relu":
        return np.column_stack([np.maximum(u, 0), np.minimum(u, 0)])
    if kind == "ceiling":
        return np.ceil(x)[:, None] / SCALE
    if kind == "floor":
        return np.floor(x)[:, None] / SCALE
    raise ValueError(kind)


def disc_values(kind: str, theta: tuple, x: np.ndarray) -> np.ndarray:
    if kind == "step":
        return (x >= theta[0]).astype(np.float64)
    if kind == "rectangle":
        return ((x >= theta[0]) & (x <= theta[1])).astype(np.float64)
    frac = np.mod((x - theta[1]) / theta[0], 1.0)
    return np.where(frac < 0.5, 1.0, -1.0)


def child_expr(kind: str, theta: tuple | None, c: float, w: np.ndarray) -> Atom | None:
    """Grammar atom for a child given its constant ``c`` and basis weights ``w`` (scaled units)."""
    w = np.asarray(w, dtype=np.float64)
    if not (math.isfinite(c) and np.all(np.isfinite(w))):
        return None
    if kind == "polynomial":
        coeffs = [float(c)] + [float(w[k - 1] / SCALE**k) for k in range(1, POLY_DEGREE + 1)]
        scale = max(abs(w).max(initial=0.0), abs(c), 1e-300)
        for k in range(1, POLY_DEGREE + 1):
            if abs(w[k - 1]) < 1e-12 * scale:
                coeffs[k] = 0.0
        while len(coeffs) > 1 and coeffs[-1] == 0.0:
            coeffs.pop()
        if len(coeffs) == 1:
            return Atom("constant", 1.0, coeffs[0], {})
        if len(coeffs) == 2:
            return _atom("linear", coeffs[1], coeffs[0], {})
        return Atom("polynomial", 1.0, 0.0, {"coeffs": tuple(coeffs)})
    if kind == "relu":
        if w[0] == 0:
            return None
        return _atom("relu", w[0] / SCALE, c, {"leak": float(w[1] / w[0])})
    if kind in ("ceiling", "floor"):
        return _atom(kind, w[0] / SCALE, c, {})
    if kind == "step":
        return _atom(kind, w[0], c, {"t": float(theta[0])})
    if kind == "rectangle":
        return _atom(kind, w[0], c, {"left": float(theta[0]), "right": float(theta[1])})
    return _atom(kind, w[0], c, {"period": float(theta[0]), "phase": float(theta[1])})


def _ncols(kind: str) -> int:
    return {"polynomial": POLY_DEGREE, "relu": 2, "ceiling": 1, "floor": 1}.get(kind, 1)


def _basis(kind: str, theta, x: np.ndarray) -> np.ndarray:
    if kind in FREE_KINDS:
        return free_basis(kind, x)
    return disc_values(kind, theta, x)[:, None]


def _sum_scan(Phi: np.ndarray, D: np.ndarray, y: np.ndarray) -> np.ndarray:
    """SSE of ``y ~ [1, Phi] w + a*d`` for every row ``d`` of ``D``."""
    A = np.column_stack([np.ones(y.size), Phi])
    Q, R = np.linalg.qr(A)
    keep = np.abs(np.diag(R)) > 1e-10 * max(np.abs(np.diag(R)).max(), 1e-300)
    Q = Q[:, keep]
    yp = y - Q @ (Q.T @ y)
    DQ = D @ Q
    dd = np.einsum("ij,ij->i", D, D) - np.einsum("ij,ij->i", DQ, DQ)
    dy = D @ yp
    base = float(yp @ yp)
    with np.errstate(all="ignore"):
        sse = base - np.where(dd > 1e-9 * np.maximum(np.einsum("ij,ij->i", D, D), 1e-300), dy * dy / dd, 0.0)
    return np.maximum(sse, 0.0)


def _product_scan(Phi: np.ndarray, masks: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Rank-one product scan: ``y ~ F(x) * v(region)`` with F in span([1, Phi]).

    ``masks`` (K x n) marks region A for each candidate; region B is the rest.
    F is fitted on one region and only a ratio on the other; both
    orientations are tried. Returns (sse, w, ratio_info) for the best one.
    """
    n = y.size
    F = np.column_stack([np.ones(n), Phi])
    m = F.shape[1]
    outer = (F[:, :, None] * F[:, None, :]).reshape(n, m * m)
    Fy = F * y[:, None]
    yy = y * y
    MA = masks.astype(np.float64)
    MB = 1.0 - MA
    best_sse = np.full(masks.shape[0], np.inf)
    best_w = np.zeros((masks.shape[0], m))
    best_info = np.zeros((masks.shape[0], 2))
    ridge = 1e-12 * np.trace(F.T @ F) / m
    for fit_m, other_m, flag in ((MA, MB, 0.0), (MB, MA, 1.0)):
        cnt = fit_m.sum(axis=1)
        N = (fit_m @ outer).reshape(-1, m, m) + ridge * np.eye(m)
        v = fit_m @ Fy
        q = fit_m @ yy
        try:
            w = np.linalg.solve(N, v[:, :, None])[:, :, 0]
        except np.linalg.LinAlgError:
            continue
        sse_fit = q - np.einsum("ij,ij->i", w, v)
        No = (other_m @ outer).reshape(-1, m, m)
        vo = other_m @ Fy
        qo = other_m @ yy
        energy = np.einsum("ij,ijk,ik->i", w, No, w)
        cross = np.einsum("ij,ij->i", w, vo)
        with np.errstate(all="ignore"):
            ratio = np.where(energy > 0, cross / energy, 0.0)
            sse_o = qo - np.where(energy > 0, cross * cross / energy, 0.0)
        sse = np.maximum(sse_fit, 0) + np.maximum(sse_o, 0)
        sse = np.where(cnt >= m + 1, sse, np.inf)
        better = sse < best_sse
        best_sse = np.where(better, sse, best_sse)
        best_w[better] = w[better]
        best_info[better, 0] = ratio[better]
        best_info[better, 1] = flag
    return best_sse, best_w, best_info


def jump_points(x: np.ndarray, y: np.ndarray, k: int = 12) -> np.ndarray:
    """Inputs just after the largest jumps and slope breaks in sorted data."""
    if x.size < 3:
        return np.unique(x)
    dy = np.abs(np.diff(y))
    slope = np.diff(y) / np.diff(x)
    pred = y[1:-1] + slope[:-1] * np.diff(x)[1:]
    curv = np.abs(y[2:] - pred)
    picks = [x[1:][_top(-dy, k)], x[2:][_top(-curv, k)]]
    return np.unique(np.concatenate(picks))


def _disc_candidates(kind: str, data: FitData, step_top: np.ndarray | None = None) -> list[tuple]:
    x = data.x
    if kind == "step":
        return [(float(t),) for t in np.unique(x)]
    if kind == "rectangle":
        ts = np.sort(step_top if step_top is not None else np.unique(x))
        out = []
        for a in range(ts.size):
            for b in range(a + 1, ts.size):
                below = x[x < ts[b]]
                if below.size:
                    out.append((float(ts[a]), float(below.max())))
        return out
    P = _periodic_grid(2.0, 70.0, 0.25)
    return list(zip(P["period"].tolist(), P["phase"].tolist()))


def _local_periodic(theta: tuple) -> list[tuple]:
    p0, c0 = theta
    out = []
    for p in (p0 - 0.5, p0, p0 + 0.5):
        if p <= 0:
            continue
        for c in np.arange(c0 - 0.3, c0 + 0.31, 0.05):
            out.append((float(p), float(round(c % p, 6))))
    return out


def _fit_sum(kinds: tuple, thetas: tuple, data: FitData) -> NumericExpr | None:
    cols = [_basis(k, t, data.x) for k, t in zip(kinds, thetas)]
    A = np.column_stack([np.ones(data.x.size)] + cols)
    w, *_ = np.linalg.lstsq(A, data.y, rcond=None)
    n0 = cols[0].shape[1]
    left = child_expr(kinds[0], thetas[0], w[0], w[1:1 + n0])
    right = child_expr(kinds[1], thetas[1], 0.0, w[1 + n0:])
    if left is None or right is None:
        return None
    return _compose("sum", left, right)


def _compose(op: str, left: Atom, right: Atom) -> NumericExpr | None:
    try:
        return Compose(op, left, right)
    except numeric.ExprError:
        return None


def _fit_product(kinds: tuple, thetas: tuple, data: FitData, init: np.ndarray | None = None,
                 max_nfev: int = 300) -> NumericExpr | None:
    B1 = np.column_stack([np.ones(data.x.size), _basis(kinds[0], thetas[0], data.x)])
    B2 = np.column_stack([np.ones(data.x.size), _basis(kinds[1], thetas[1], data.x)])
    m1, m2 = B1.shape[1], B2.shape[1]
    if init is None:
        T = (B1[:, :, None] * B2[:, None, :]).reshape(data.x.size, m1 * m2)
        Wt, *_ = np.linalg.lstsq(T, data.y, rcond=None)
        U, S, Vt = np.linalg.svd(Wt.reshape(m1, m2))
        init = np.concatenate([U[:, 0] * math.sqrt(S[0]), Vt[0] * math.sqrt(S[0])])

    def resid(p):
        return (B1 @ p[:m1]) * (B2 @ p[m1:]) - data.y

    try:
        sol = optimize.least_squares(resid, init, method="lm", max_nfev=max_nfev * (m1 + m2))
        p = sol.x
    except (ValueError, np.linalg.LinAlgError):
        p = init
    left = child_expr(kinds[0], thetas[0], p[0], p[1:m1])
    right = child_expr(kinds[1], thetas[1], p[m1], p[m1 + 1:])
    if left is None or right is None:
        return None
    return _compose("product", left, right)


def _product_init(kind_free, theta_free, kind_d, w, info) -> np.ndarray:
    """Initial bilinear parameters from a region-ratio scan result."""
    ratio, fitted_on_b = info
    vA, vB = (ratio, 1.0) if fitted_on_b else (1.0, ratio)
    if kind_d == "square_wave":
        c, a = (vA + vB) / 2, (vA - vB) / 2
    else:
        c, a = vB, vA - vB
    return np.concatenate([w, [c, a]])


def composition_candidates(data: FitData, top: int = 2) -> list[NumericExpr]:
    x, y = data.x, data.y
    if x.size < 12:
        return []
    out: list[NumericExpr] = []

    # single-shape scans with a constant partner, used to seed two-shape structures
    step_cands = _disc_candidates("step", data)
    D_step = np.stack([disc_values("step", t, x) for t in step_cands])
    step_sse = _sum_scan(np.zeros((x.size, 0)), D_step, y)
    step_top = np.union1d([step_cands[i][0] for i in _top(step_sse, 10)], jump_points(x, y))
    disc_cache: dict[str, tuple[list, np.ndarray]] = {"step": (step_cands, D_step)}
    rect_cands = _disc_candidates("rectangle", data, step_top)
    if rect_cands:
        disc_cache["rectangle"] = (rect_cands, np.stack([disc_values("rectangle", t, x) for t in rect_cands]))
    sq = _disc_candidates("square_wave", data)
    disc_cache["square_wave"] = (sq, np.stack([disc_values("square_wave", t, x) for t in sq]))

    def scan(op: str, partner_cols: np.ndarray, kind_d: str):
        if kind_d not in disc_cache:
            return []
        cands, D = disc_cache[kind_d]
        if op == "sum":
            sse = _sum_scan(partner_cols, D, y)
            picks = [(cands[i], None) for i in _top(sse, top)]
        else:
            masks = D > 0
            sse, w, info = _product_scan(partner_cols, masks, y)
            picks = [(cands[i], (w[i], info[i])) for i in _top(sse, top)]
        if kind_d == "square_wave" and picks:
            # refine the coarse period/phase grid around the winners
            local = sorted({t for th, _ in picks for t in _local_periodic(th)})
            Dl = np.stack([disc_values("square_wave", t, x) for t in local])
            if op == "sum":
                sse = _sum_scan(partner_cols, Dl, y)
                picks = [(local[i], None) for i in _top(sse, top)]
            else:
                sse, w, info = _product_scan(partner_cols, Dl > 0, y)
                picks = [(local[i], (w[i], info[i])) for i in _top(sse, top)]
        return picks

    # free + free / free * free
    for k1, k2 in combinations_with_replacement(FREE_KINDS, 2):
        if k1 != k2:
            e = _fit_sum((k1, k2), (None, None), data)
            if e is not None:
                out.append(e)
        if not (k1 == k2 == "polynomial"):
            e = _fit_product((k1, k2), (None, None), data)
            if e is not None:
                out.append(e)

    # free with one discrete child
    for kf in FREE_KINDS:
        cols = free_basis(kf, x)
        for kd in DISC_KINDS:
            for theta, _ in scan("sum", cols, kd):
                e = _fit_sum((kf, kd), (None, theta), data)
                if e is not None:
                    out.append(e)
            for theta, (w, info) in scan("product", cols, kd):
                init = _product_init(kf, None, kd, w, info)
                e = _fit_product((kf, kd), (None, theta), data, init)
                if e is not None:
                    out.append(e)

    # two discrete children: seed the first from its constant-partner scan
    for k1, k2 in combinations_with_replacement(DISC_KINDS, 2):
        for theta1, _ in scan("sum", np.zeros((x.size, 0)), k1):
            cols = disc_values(k1, theta1, x)[:, None]
            for theta2, _ in scan("sum", cols, k2):
                e = _fit_sum((k1, k2), (theta1, theta2), data)
                if e is not None:
                    out.append(e)
            for theta2, (w, info) in scan("product", cols, k2):
                init = _product_init(k1, theta1, k2, w, info)
                e = _fit_product((k1, k2), (theta1, theta2), data, init)
                if e is not None:
                    out.append(e)

    # a product of two polynomials is a single higher-degree polynomial
    out += fit_polynomial(data, degrees=range(6, 11))
    return out


def fit_compositions(data: FitData) -> list[Fit]:
    fits = [score_expr(e, data) for e in composition_candidates(data)]
    return sorted((f for f in fits if math.isfinite(f.nmse)), key=Fit.key)


def fit_all(data: FitData, composition_threshold: float = 1e-9) -> list[Fit]:
    """Ranked candidate fits; compositions are searched only if no atom explains the data."""
    fits = fit_atomic(data)
    if not fits or fits[0].nmse > composition_threshold:
        fits = sorted(fits + fit_compositions(data), key=Fit.key)
    return fits
