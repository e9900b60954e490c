"""Seeded sampling of benchmark functions and dataset manifests."""

from __future__ import annotations

import json
import logging
import shutil
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from findbench import __version__, mlp, numeric, strings
from findbench.numeric import ATOMIC_KINDS, COMPOSITION_KINDS, GRID, Atom, Compose, NumericExpr
from findbench.relations import FactTable, RelationSpec, default_tables, load_fact_tables
from findbench.spec import (
    ApproximationRef,
    CorruptionSpec,
    FunctionSpec,
    NoiseSpec,
    describe,
    domain_note,
    from_record,
    grid_mean,
    to_record,
)
from findbench.strings import StringOp, StringProgram

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
MIN_NUMERIC = 5
MIN_STRINGS = 2
SCALE_RANGE = 30
GRID_DESCRIPTOR = {"lo": numeric.GRID_LO, "hi": numeric.GRID_HI, "n": numeric.GRID_POINTS}
CORRUPTED_EXTRA_POINTS = 16
TEST_SET_SIZE = 10
RELATION_CORRUPTED_TESTS = 2


class GenerationError(ValueError):
    pass


def round_half_up(numer: int, denom: int) -> int:
    """round(numer / denom) with halves rounded up, in exact integer arithmetic."""
    return (2 * numer + denom) // (2 * denom)


def numeric_counts(count: int) -> dict[str, int]:
    if count < MIN_NUMERIC:
        raise GenerationError(f"numeric count must be at least {MIN_NUMERIC} so every subcategory is non-empty")
    composed = round_half_up(15 * count, 100)
    atomic = count - composed
    mod = round_half_up(15 * atomic, 100)
    return {
        "atomic": atomic - 3 * mod,
        "noisy": mod,
        "corrupted": mod,
        "approximated": mod,
        "composed": composed,
    }


def string_counts(count: int) -> dict[str, int]:
    if count < MIN_STRINGS:
        raise GenerationError(f"string count must be at least {MIN_STRINGS} so both subcategories are non-empty")
    atomic = round_half_up(30 * count, 100)
    return {"atomic": atomic, "composed": count - atomic}


def _snap(v: float, step: float) -> float:
    out = round(round(v / step) * step, 6)
    return out + 0.0


def _int(rng: np.random.Generator, lo: int, hi: int) -> int:
    return int(rng.integers(lo, hi + 1))


# ---------------------------------------------------------------------------
# numeric sampling


def _poly_coeffs(rng: np.random.Generator, degree: int) -> tuple[float, ...]:
    coeffs = [_snap(rng.uniform(-5, 5), 0.1) for _ in range(degree + 1)]
    while coeffs[-1] == 0:
        coeffs[-1] = _snap(rng.uniform(-5, 5), 0.1)
    return tuple(coeffs)


def _periodic(rng: np.random.Generator, lo: float, hi: float) -> dict:
    period = _snap(rng.uniform(lo, hi), 0.5)
    phase = _snap(rng.uniform(0, period), 0.1)
    if phase >= period:
        phase = 0.0
    return {"period": period, "phase": phase}


def sample_params(kind: str, rng: np.random.Generator) -> dict:
    if kind == "polynomial":
        return {"coeffs": _poly_coeffs(rng, _int(rng, 2, 5))}
    if kind == "root":
        return {"n": int(rng.choice([2, 3]))}
    if kind == "step":
        return {"t": float(_int(rng, -50, 50))}
    if kind == "relu":
        return {"leak": float(rng.choice([0.0, 0.1, 0.2, 0.3]))}
    if kind in ("sigmoid", "tanh", "error_function"):
        return {"center": float(_int(rng, -50, 50)), "width": _snap(rng.uniform(1, 20), 0.5)}
    if kind == "power":
        return {"p": float(rng.choice([-3, -2, 2, 3, 4, 1.5, 2.5]))}
    if kind in ("sin", "cos"):
        return _periodic(rng, 5, 60)
    if kind == "tan":
        return _periodic(rng, 10, 60)
    if kind == "reciprocal":
        return {"shift": float(_int(rng, -50, 50))}
    if kind == "gaussian":
        return {"mu": float(_int(rng, -60, 60)), "sigma": _snap(rng.uniform(2, 30), 0.5)}
    if kind == "student_t":
        return {
            "mu": float(_int(rng, -60, 60)),
            "nu": _snap(rng.uniform(1, 10), 0.5),
            "width": _snap(rng.uniform(2, 20), 0.5),
        }
    if kind == "rational":
        num = (_snap(rng.uniform(-5, 5), 0.1), _snap(rng.uniform(-5, 5), 0.1))
        den = (_snap(rng.uniform(-5, 5), 0.1), _snap(rng.uniform(-5, 5), 0.1), 1.0)
        return {"num": num, "den": den}
    if kind == "rectangle":
        left = _int(rng, -80, 60)
        return {"left": float(left), "right": float(left + _int(rng, 5, 60))}
    if kind == "square_wave":
        return _periodic(rng, 4, 60)
    if kind == "exponential":
        k = 0.0
        while k == 0.0:
            k = _snap(rng.uniform(-0.1, 0.1), 0.005)
        return {"k": k}
    return {}


def sample_atom(kind: str, rng: np.random.Generator) -> Atom:
    params = sample_params(kind, rng)
    a = 0
    while a == 0:
        a = _int(rng, -SCALE_RANGE, SCALE_RANGE)
    b = _int(rng, -SCALE_RANGE, SCALE_RANGE)
    if kind == "constant":
        a = 1
        while b == 0:
            b = _int(rng, -SCALE_RANGE, SCALE_RANGE)
    return Atom(kind, float(a), float(b), params)


def _usable(expr: NumericExpr) -> bool:
    vals = numeric.evaluate(expr, GRID)
    ok = ~np.isnan(vals)
    return bool(ok.any()) and bool(np.any(vals[ok] != 0))


def sample_expr(rng: np.random.Generator, composed: bool, kinds=ATOMIC_KINDS) -> NumericExpr:
    while True:
        if composed:
            left = sample_atom(str(rng.choice(COMPOSITION_KINDS)), rng)
            right = sample_atom(str(rng.choice(COMPOSITION_KINDS)), rng)
            expr: NumericExpr = Compose(str(rng.choice(["sum", "product"])), left, right)
        else:
            expr = sample_atom(str(rng.choice(kinds)), rng)
        if _usable(expr):
            return expr


def sample_noise(rng: np.random.Generator) -> NoiseSpec:
    dist = str(rng.choice(["normal", "uniform", "poisson"]))
    lo, hi = (1.0, 10.0) if dist == "poisson" else (0.5, 5.0)
    return NoiseSpec(dist, _snap(rng.uniform(lo, hi), 0.1))


def sample_corruption(rng: np.random.Generator, expr: NumericExpr) -> CorruptionSpec:
    interval = str(rng.choice(["bounded", "right", "left"]))
    lo = _snap(rng.uniform(-100, 100), 0.1)
    hi = None
    if interval == "bounded":
        hi = _snap(lo + _snap(rng.uniform(5, 20), 0.1), 0.1)
    polarity = str(rng.choice(["inside", "outside"]))
    return CorruptionSpec(interval, lo, hi, polarity, grid_mean(expr))


def _trainable(expr: NumericExpr) -> bool:
    x = np.linspace(mlp.DOMAIN[0], mlp.DOMAIN[1], 2001)[1:-1]
    return int((~np.isnan(numeric.evaluate(expr, x))).sum()) >= 200


def _id_streams(seed: int, idx: int) -> tuple[int, np.random.Generator]:
    spec_seed = int(np.random.SeedSequence([seed, idx, 0]).generate_state(1, np.uint64)[0])
    return spec_seed, np.random.default_rng([seed, idx, 1])


def fid(idx: int) -> str:
    return f"f{idx:05d}"


def _finish(spec: FunctionSpec) -> FunctionSpec:
    return FunctionSpec(
        spec.id, spec.category, spec.payload, spec.modifiers, spec.seed, spec.subcategory,
        describe(spec), domain_note(spec),
    )


def _layout(counts: dict[str, int], seed: int, salt: int) -> list[str]:
    labels = [name for name, n in counts.items() for _ in range(n)]
    order = np.random.default_rng([seed, salt]).permutation(len(labels))
    return [labels[i] for i in order]


def sample_numeric_spec(idx: int, subcategory: str, seed: int) -> FunctionSpec:
    spec_seed, rng = _id_streams(seed, idx)
    if subcategory == "composed":
        expr = sample_expr(rng, composed=True)
    else:
        expr = sample_expr(rng, composed=False)
        if subcategory == "approximated":
            while not _trainable(expr):
                expr = sample_expr(rng, composed=False)
    mods: tuple = ()
    if subcategory == "noisy":
        mods = (sample_noise(rng),)
    elif subcategory == "corrupted":
        mods = (sample_corruption(rng, expr),)
    elif subcategory == "approximated":
        mods = (ApproximationRef(f"weights/{fid(idx)}.json"),)
    return _finish(FunctionSpec(fid(idx), "numeric", expr, mods, spec_seed, subcategory))


# ---------------------------------------------------------------------------
# string sampling


def _probe_strings() -> tuple[str, ...]:
    words = ["apple", "banana", "cherry", "kiwi", "zebra", "queue", "rhythm", "oxygen",
             "jazz", "level", "mississippi", "abc", "xyz", "book", "sky"]
    rng = np.random.default_rng(20240101)
    extra = []
    while len(words) + len(extra) < 50:
        n = int(rng.integers(3, 9))
        extra.append("".join(rng.choice(list(strings.ALPHABET), n)))
    return tuple(words + extra)


#: fixed inputs used to reject programs that act as the identity
PROBE_STRINGS = _probe_strings()

WORDS = (
    "apple", "banana", "cherry", "dog", "elephant", "forest", "garden", "house", "island", "jungle",
    "kitten", "lemon", "mountain", "night", "ocean", "pencil", "queen", "river", "sunset", "tiger",
    "umbrella", "violin", "window", "yellow", "zebra", "bridge", "candle", "dragon", "engine", "flower",
    "guitar", "hammer", "jacket", "ladder", "marble", "needle", "orange", "pepper", "rocket", "silver",
    "thunder", "valley", "wizard", "butter", "castle", "desert", "feather", "glass", "honey", "insect",
)


def _sample_op(rng: np.random.Generator) -> StringOp:
    kinds = [k for k in strings.OP_KINDS if k != "lowercase"]
    kind = str(rng.choice(kinds))
    if kind in ("concatenate", "prepend"):
        n = _int(rng, 1, strings.MAX_AFFIX)
        return StringOp(kind, ("".join(rng.choice(list(strings.ALPHABET), n)),))
    if kind == "replace":
        old, new = rng.choice(list(strings.ALPHABET), 2, replace=False)
        return StringOp(kind, (str(old), str(new)))
    if kind == "rotate_left":
        return StringOp(kind, (int(rng.choice(strings.ROTATIONS)),))
    return StringOp(kind)


def is_identity(prog: StringProgram) -> bool:
    return all(strings.eval_string(prog, s) == s for s in PROBE_STRINGS)


def sample_string_spec(idx: int, subcategory: str, seed: int) -> FunctionSpec:
    spec_seed, rng = _id_streams(seed, idx)
    n_ops = 1 if subcategory == "atomic" else 2
    while True:
        prog = StringProgram(tuple(_sample_op(rng) for _ in range(n_ops)))
        if not is_identity(prog):
            break
    return _finish(FunctionSpec(fid(idx), "strings", prog, (), spec_seed, subcategory))


# ---------------------------------------------------------------------------
# relation specs


def relation_universe(tables: dict[str, FactTable]) -> list[RelationSpec]:
    out = []
    for name in sorted(tables):
        out.append(RelationSpec(name))
        out.extend(RelationSpec(name, tag) for tag in tables[name].corruptions)
    return out


def sample_relation_specs(count: int | None, seed: int, start: int, tables: dict[str, FactTable]) -> list[FunctionSpec]:
    universe = relation_universe(tables)
    if count is None:
        count = len(universe)
    if not 1 <= count <= len(universe):
        raise GenerationError(f"relation count must be between 1 and {len(universe)}")
    keep = sorted(np.random.default_rng([seed, 3]).permutation(len(universe))[:count])
    specs = []
    for k, u in enumerate(keep):
        idx = start + k
        spec_seed, _ = _id_streams(seed, idx)
        rel = universe[u]
        sub = "atomic" if rel.tag is None else "corrupted"
        specs.append(_finish(FunctionSpec(fid(idx), "relations", rel, (), spec_seed, sub)))
    return specs


# ---------------------------------------------------------------------------
# test sets


def numeric_test_set(spec: FunctionSpec) -> dict:
    extra: list[float] = []
    corr = spec.corruption
    if corr is not None:
        rng = np.random.default_rng([spec.seed % 2**63, 7])
        segs = corr.segments()
        lengths = np.array([b - a for a, b in segs])
        for _ in range(CORRUPTED_EXTRA_POINTS):
            s = int(rng.choice(len(segs), p=lengths / lengths.sum()))
            a, b = segs[s]
            extra.append(float(np.clip(_snap(rng.uniform(a, b), 0.01), a, b)))
    return {"grid": dict(GRID_DESCRIPTOR), "extra": extra}


def string_test_set(spec: FunctionSpec) -> list[str]:
    rng = np.random.default_rng([spec.seed % 2**63, 7])
    out: list[str] = []
    words = list(rng.choice(WORDS, 5, replace=False))
    out.extend(str(w) for w in words)
    while len(out) < TEST_SET_SIZE:
        n = int(rng.integers(3, 9))
        s = "".join(rng.choice(list(strings.ALPHABET), n))
        if s not in out:
            out.append(s)
    return out


def relation_test_set(spec: FunctionSpec, tables: dict[str, FactTable]) -> list[str]:
    rel: RelationSpec = spec.payload
    table = tables[rel.table]
    keys = sorted(table.pairs)
    rng = np.random.default_rng([spec.seed % 2**63, 7])
    if rel.tag is None:
        if len(keys) < TEST_SET_SIZE:
            raise GenerationError(f"table {table.name} has fewer than {TEST_SET_SIZE} keys")
        return [keys[i] for i in sorted(rng.choice(len(keys), TEST_SET_SIZE, replace=False))]
    inside = sorted(k for k in keys if table.in_tag(k, rel.tag))
    outside = sorted(k for k in keys if not table.in_tag(k, rel.tag))
    n_out = TEST_SET_SIZE - RELATION_CORRUPTED_TESTS
    if len(inside) < RELATION_CORRUPTED_TESTS or len(outside) < n_out:
        raise GenerationError(f"table {table.name} too small for a {TEST_SET_SIZE}-input test set")
    picked = [inside[i] for i in rng.choice(len(inside), RELATION_CORRUPTED_TESTS, replace=False)]
    picked += [outside[i] for i in rng.choice(len(outside), n_out, replace=False)]
    order = rng.permutation(TEST_SET_SIZE)
    return [picked[i] for i in order]


def make_test_set(spec: FunctionSpec, tables: dict[str, FactTable] | None = None):
    if spec.category == "numeric":
        return numeric_test_set(spec)
    if spec.category == "strings":
        return string_test_set(spec)
    return relation_test_set(spec, tables or default_tables())


# ---------------------------------------------------------------------------
# manifests


@dataclass
class DatasetManifest:
    seed: int
    specs: list[FunctionSpec]
    test_sets: dict[str, object] = field(default_factory=dict)
    counts: dict[str, dict[str, int]] = field(default_factory=dict)
    dataset_id: str = ""
    format_version: int = FORMAT_VERSION

    def __post_init__(self) -> None:
        ids = [s.id for s in self.specs]
        if len(set(ids)) != len(ids):
            raise GenerationError("duplicate function ids")
        self._by_id = {s.id: s for s in self.specs}

    def get(self, function_id: str) -> FunctionSpec:
        try:
            return self._by_id[function_id]
        except KeyError:
            raise KeyError(f"unknown function id {function_id!r}") from None

    def __contains__(self, function_id: str) -> bool:
        return function_id in self._by_id

    def provenance(self) -> dict:
        return {"seed": self.seed, "format_version": self.format_version, "engine_version": __version__}


def sample_numeric_dataset(count: int, seed: int, start: int = 0) -> DatasetManifest:
    counts = numeric_counts(count)
    layout = _layout(counts, seed, 1)
    specs = [sample_numeric_spec(start + i, sub, seed) for i, sub in enumerate(layout)]
    return DatasetManifest(seed, specs, counts={"numeric": counts})


def sample_string_dataset(count: int, seed: int, start: int = 0) -> DatasetManifest:
    counts = string_counts(count)
    layout = _layout(counts, seed, 2)
    specs = [sample_string_spec(start + i, sub, seed) for i, sub in enumerate(layout)]
    return DatasetManifest(seed, specs, counts={"strings": counts})


def sample_relation_dataset(count: int | None, seed: int, start: int = 0,
                            tables: dict[str, FactTable] | None = None) -> DatasetManifest:
    specs = sample_relation_specs(count, seed, start, tables or default_tables())
    counts = {"atomic": 0, "corrupted": 0}
    for s in specs:
        counts[s.subcategory] += 1
    return DatasetManifest(seed, specs, counts={"relations": counts})


def sample_dataset(seed: int, numeric_count: int = 0, string_count: int = 0,
                   relation_count: int | None = 0) -> DatasetManifest:
    """Combined dataset; ids run sequentially across numeric, strings, relations."""
    specs: list[FunctionSpec] = []
    counts: dict[str, dict[str, int]] = {}
    if numeric_count:
        m = sample_numeric_dataset(numeric_count, seed, start=len(specs))
        specs += m.specs
        counts.update(m.counts)
    if string_count:
        m = sample_string_dataset(string_count, seed, start=len(specs))
        specs += m.specs
        counts.update(m.counts)
    if relation_count is None or relation_count:
        m = sample_relation_dataset(relation_count, seed, start=len(specs))
        specs += m.specs
        counts.update(m.counts)
    if not specs:
        raise GenerationError("dataset would be empty")
    return DatasetManifest(seed, specs, counts=counts, dataset_id=f"findbench-{seed}")


def make_test_sets(manifest: DatasetManifest, tables: dict[str, FactTable] | None = None) -> DatasetManifest:
    tables = tables or default_tables()
    manifest.test_sets = {s.id: make_test_set(s, tables) for s in manifest.specs}
    return manifest


def _train_one(args):
    expr_json, seed = args
    return mlp.to_json(mlp.train_approximation(numeric.from_json(expr_json), seed))


def train_weights(manifest: DatasetManifest, jobs: int = 1) -> dict[str, mlp.MlpWeights]:
    """Train every approximated function's network; results keyed by function id."""
    todo = [s for s in manifest.specs if s.approximation is not None]
    work = [(numeric.to_json(s.payload), int(s.seed % 2**63)) for s in todo]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_train_one, work))
    else:
        results = [_train_one(w) for w in work]
    return {s.id: mlp.from_json(r) for s, r in zip(todo, results)}


def _dumps(obj) -> str:
    return json.dumps(obj, ensure_ascii=False, allow_nan=False)


def write_dataset(manifest: DatasetManifest, out_dir: str | Path,
                  weights: dict[str, mlp.MlpWeights] | None = None,
                  tables: dict[str, FactTable] | None = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    prov = manifest.provenance()
    if not manifest.test_sets:
        make_test_sets(manifest, tables)
    meta = {
        "format_version": manifest.format_version,
        "engine_version": __version__,
        "dataset_id": manifest.dataset_id or f"findbench-{manifest.seed}",
        "seed": manifest.seed,
        "counts": manifest.counts,
        "size": len(manifest.specs),
    }
    (out / "dataset.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    with open(out / "manifest.jsonl", "w") as fh:
        for spec in manifest.specs:
            fh.write(_dumps(to_record(spec, manifest.test_sets.get(spec.id))) + "\n")
    for fid_, w in sorted((weights or {}).items()):
        spec = manifest.get(fid_)
        mlp.save_weights(w, out / spec.approximation.path, provenance=prov)
    if any(s.category == "relations" for s in manifest.specs):
        tdir = out / "tables"
        tdir.mkdir(exist_ok=True)
        src = {t.name: t for t in (tables or default_tables()).values()}
        used = sorted({s.payload.table for s in manifest.specs if s.category == "relations"})
        from findbench.relations.tables import DATA_DIR

        for name in used:
            path = DATA_DIR / f"{name}.json"
            if path.exists() and tables is None:
                shutil.copyfile(path, tdir / f"{name}.json")
            else:
                t = src[name]
                obj = {"name": t.name, "input_type": t.input_type, "relation": t.relation,
                       "pairs": dict(t.pairs), "tags": {k: sorted(v) for k, v in t.tags.items()},
                       "tag_text": t.tag_text, "corruptions": list(t.corruptions)}
                (tdir / f"{name}.json").write_text(json.dumps(obj, indent=1) + "\n")
    return out


@dataclass
class Dataset:
    """A dataset directory loaded for execution and evaluation."""

    root: Path
    meta: dict
    manifest: DatasetManifest
    tables: dict[str, FactTable]
    _weights: dict = field(default_factory=dict)

    def spec(self, function_id: str) -> FunctionSpec:
        return self.manifest.get(function_id)

    def test_set(self, function_id: str):
        return self.manifest.test_sets[function_id]

    def weights(self, function_id: str) -> mlp.MlpWeights | None:
        spec = self.spec(function_id)
        if spec.approximation is None:
            return None
        if function_id not in self._weights:
            self._weights[function_id] = mlp.load_weights(self.root / spec.approximation.path)
        return self._weights[function_id]

    def provenance(self) -> dict:
        return {
            "seed": self.meta.get("seed"),
            "format_version": self.meta.get("format_version"),
            "engine_version": __version__,
        }


def load_dataset(path: str | Path) -> Dataset:
    root = Path(path)
    meta_path = root / "dataset.json"
    if not meta_path.exists():
        raise GenerationError(f"{root}: not a dataset directory (missing dataset.json)")
    meta = json.loads(meta_path.read_text())
    specs, tests = [], {}
    with open(root / "manifest.jsonl") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            spec = from_record(rec)
            specs.append(spec)
            tests[spec.id] = rec.get("test_set")
    tdir = root / "tables"
    tables = dict(default_tables())
    if tdir.is_dir():
        tables.update(load_fact_tables(tdir))
    manifest = DatasetManifest(int(meta["seed"]), specs, tests, meta.get("counts", {}),
                               meta.get("dataset_id", ""), int(meta.get("format_version", FORMAT_VERSION)))
    return Dataset(root, meta, manifest, tables)
