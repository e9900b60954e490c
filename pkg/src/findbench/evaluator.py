"""Scoring of interpretations: NMSE, exact match and the three-way unit test."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Protocol

import numpy as np

from findbench import __version__, numeric, strings
from findbench.blackbox import NONE, format_number
from findbench.relations import UNDEFINED, FactTable, default_tables, eval_relation
from findbench.spec import FunctionSpec, truth_function

log = logging.getLogger(__name__)

SUCCESS_NMSE = 0.1
CHANCE = 1.0 / 3.0
UNIT_TEST_TRIALS = 10
#: relative tolerance under which the simulation judge treats two numbers as equal
NUMERIC_MATCH_TOL = 1e-2
DISTRACTOR_ATTEMPTS = 200


class EvaluationError(ValueError):
    pass


# ---------------------------------------------------------------------------
# indicators


def nmse_detail(truth: Callable, candidate: Callable, grid: np.ndarray = numeric.GRID) -> tuple[float, int]:
    """NMSE over ``grid`` and the number of grid points skipped because the truth is undefined."""
    t = np.asarray(truth(grid), dtype=np.float64)
    d = ~np.isnan(t)
    if not d.any():
        raise EvaluationError("truth is undefined on the entire grid")
    t = t[d]
    with np.errstate(all="ignore"):
        c = np.asarray(candidate(grid), dtype=np.float64)[d]
        err = np.where(np.isfinite(c), (t - c) ** 2, t * t)
    num = float(np.sum(err))
    den = float(np.sum(t * t))
    skipped = int(np.sum(~d))
    if den == 0.0:
        return (0.0 if num == 0.0 else math.inf), skipped
    return num / den, skipped


def nmse(truth: Callable, candidate: Callable, grid: np.ndarray = numeric.GRID) -> float:
    return nmse_detail(truth, candidate, grid)[0]


def exact_match(truth: Callable[[str], str], candidate: Callable[[str], str], inputs: list[str]) -> float:
    if len(inputs) == 0:
        raise EvaluationError("exact match needs test inputs")
    hits = 0
    for x in inputs:
        try:
            hits += candidate(x) == truth(x)
        except Exception:  # a crashing candidate simply fails that input
            continue
    return hits / len(inputs)


def interval_iou(a, b, lo: float = numeric.GRID_LO, hi: float = numeric.GRID_HI) -> float:
    """Intersection over union of two finite unions of closed intervals, clipped to [lo, hi]."""

    def norm(iv):
        out: list[tuple[float, float]] = []
        for s, e in sorted((max(lo, s), min(hi, e)) for s, e in iv):
            if e <= s:
                continue
            if out and s <= out[-1][1]:
                out[-1] = (out[-1][0], max(out[-1][1], e))
            else:
                out.append((s, e))
        return out

    A, B = norm(a), norm(b)
    inter = sum(max(0.0, min(e1, e2) - max(s1, s2)) for s1, e1 in A for s2, e2 in B)
    union = sum(e - s for s, e in A) + sum(e - s for s, e in B) - inter
    return 1.0 if union == 0 else inter / union


# ---------------------------------------------------------------------------
# executable views of specs and interpretations


def numeric_candidate(program, intervals=(), value: float | None = None) -> Callable:
    """Vectorized candidate: the program, with reported corrupted intervals held at ``value``."""

    def f(x):
        x = np.asarray(x, dtype=np.float64)
        out = np.full(x.shape, np.nan) if program is None else numeric.evaluate(program, x)
        if value is not None:
            for a, b in intervals:
                out[(x >= a) & (x <= b)] = value
        return out

    return f


def string_runner(program) -> Callable[[str], str]:
    def f(x: str) -> str:
        if program is None:
            return NONE
        try:
            return strings.eval_string(program, x)
        except strings.StringDomainError:
            return NONE

    return f


def relation_runner(program, tables: Mapping[str, FactTable]) -> Callable[[str], str]:
    def f(x: str) -> str:
        if program is None:
            return UNDEFINED
        return eval_relation(program, x, tables)

    return f


def interpretation_runner(it, tables: Mapping[str, FactTable]) -> Callable[[str], str]:
    """Scalar text-in/text-out runner for a structured interpretation (for judges)."""
    if it.category == "numeric":
        f = numeric_candidate(it.program, it.intervals, it.corruption_value)
        return lambda x: format_number(float(f(np.array([float(x)]))[0]))
    if it.category == "strings":
        return string_runner(it.program)
    return relation_runner(it.program, tables)


def spec_runner(spec: FunctionSpec, tables: Mapping[str, FactTable]) -> Callable[[str], str]:
    """Noise-free ground-truth runner on text inputs."""
    if spec.category == "numeric":
        f = truth_function(spec)
        return lambda x: format_number(float(f(np.array([float(x)]))[0]))
    if spec.category == "strings":
        return string_runner(spec.payload)
    return relation_runner(spec.payload, tables)


def outputs_match(category: str, predicted: str, observed: str) -> bool:
    if category != "numeric" or NONE in (predicted, observed):
        return predicted == observed
    p, o = float(predicted), float(observed)
    return abs(p - o) <= NUMERIC_MATCH_TOL * max(1.0, abs(o))


# ---------------------------------------------------------------------------
# unit test


@dataclass
class UnitTestItem:
    description: str
    function_id: str
    candidates: list[tuple[str, str]]
    truth_index: int
    distractor_ids: list[str] = field(default_factory=list)
    verdict: int | None = None
    flagged: bool = False

    def __post_init__(self) -> None:
        if len(self.candidates) != 3 or not 0 <= self.truth_index < 3:
            raise EvaluationError("a unit-test item holds three candidates and one ground truth")

    @property
    def correct(self) -> bool:
        return self.verdict == self.truth_index


class Judge(Protocol):
    name: str

    def __call__(self, item: UnitTestItem) -> int | None: ...


@dataclass
class SimulationJudge:
    """Executes the interpretation's program and picks the unique consistent candidate."""

    runner: Callable[[str], str] | None
    category: str
    name: str = "simulation"

    def __call__(self, item: UnitTestItem) -> int | None:
        if self.runner is None:
            return None
        hits = []
        for i, (x, y) in enumerate(item.candidates):
            try:
                if outputs_match(self.category, self.runner(x), y):
                    hits.append(i)
            except Exception:
                continue
        return hits[0] if len(hits) == 1 else None


@dataclass
class RandomJudge:
    rng: np.random.Generator
    name: str = "random"

    def __call__(self, item: UnitTestItem) -> int | None:
        return int(self.rng.integers(3))


def judge_prompt(item: UnitTestItem) -> str:
    lines = [
        "A function is described as follows:",
        item.description,
        "",
        "Which of these input-output pairs was produced by that function?",
    ]
    for i, (x, y) in enumerate(item.candidates, 1):
        lines.append(f"{i}. input: {x} output: {y}")
    lines.append("Answer with the number of the matching pair.")
    return "\n".join(lines)


_DIGIT = re.compile(r"\d")


def parse_verdict(reply: str) -> int | None:
    """First digit in the reply, as a 0-based index; anything outside 1-3 abstains."""
    m = _DIGIT.search(reply or "")
    if not m:
        return None
    d = int(m.group())
    return d - 1 if 1 <= d <= 3 else None


@dataclass
class EndpointJudge:
    """Single-turn chat judge; ``complete`` maps a message list to the reply text."""

    complete: Callable[[list[dict]], str]
    name: str = "endpoint"

    def __call__(self, item: UnitTestItem) -> int | None:
        try:
            reply = self.complete([{"role": "user", "content": judge_prompt(item)}])
        except Exception as exc:
            log.warning("judge endpoint failed on %s: %s", item.function_id, exc)
            item.flagged = True
            return None
        return parse_verdict(reply)


def _fid_number(fid: str) -> int:
    digits = "".join(c for c in fid if c.isdigit())
    return int(digits) if digits else 0


def sample_inputs(spec: FunctionSpec, test_set, n: int, tables: Mapping[str, FactTable]) -> list[str]:
    """Ground-truth probe inputs drawn from the function's test set, as text."""
    if spec.category != "numeric":
        return [str(x) for x in list(test_set)[:n]]
    extra = list((test_set or {}).get("extra", []))[:2]
    rng = np.random.default_rng([spec.seed % 2**63, 9])
    truth = truth_function(spec)
    defined = numeric.GRID[~np.isnan(truth(numeric.GRID))]
    k = min(n - len(extra), defined.size)
    picks = sorted(rng.choice(defined.size, k, replace=False)) if k > 0 else []
    return [format_number(x) for x in extra + [float(defined[i]) for i in picks]]


def build_items(spec: FunctionSpec, description: str, pool: list[FunctionSpec], test_sets: Mapping,
                tables: Mapping[str, FactTable], seed: int, trials: int = UNIT_TEST_TRIALS) -> list[UnitTestItem]:
    """Unit-test items for ``spec``: one ground-truth pair plus two same-category distractors.

    A distractor pair is redrawn whenever the ground-truth function would also
    produce it, so every item has exactly one correct answer.
    """
    others = [s for s in pool if s.category == spec.category and s.id != spec.id]
    if len(others) < 2:
        raise EvaluationError(f"{spec.id}: need at least two other {spec.category} functions for distractors")
    rng = np.random.default_rng([seed, _fid_number(spec.id), 5])
    truth = spec_runner(spec, tables)
    inputs = sample_inputs(spec, test_sets.get(spec.id), trials, tables)
    items = []
    for t in range(trials):
        x = inputs[t % len(inputs)]
        true_pair = (x, truth(x))
        distractors: list[tuple[str, str]] = []
        dids: list[str] = []
        for _ in range(DISTRACTOR_ATTEMPTS):
            if len(distractors) == 2:
                break
            other = others[int(rng.integers(len(others)))]
            if other.id in dids:
                continue
            o_inputs = sample_inputs(other, test_sets.get(other.id), trials, tables)
            ox = o_inputs[int(rng.integers(len(o_inputs)))]
            pair = (ox, spec_runner(other, tables)(ox))
            if outputs_match(spec.category, truth(ox), pair[1]) or pair in distractors or pair == true_pair:
                continue
            distractors.append(pair)
            dids.append(other.id)
        if len(distractors) < 2:
            raise EvaluationError(f"{spec.id}: could not draw two unambiguous distractors")
        order = rng.permutation(3)
        cands = [true_pair, *distractors]
        shuffled = [cands[i] for i in order]
        items.append(UnitTestItem(description, spec.id, shuffled, int(np.flatnonzero(order == 0)[0]), dids))
    return items


def unit_test(items: list[UnitTestItem], judge: Judge) -> float:
    for item in items:
        try:
            item.verdict = judge(item)
        except Exception as exc:
            log.warning("judge failed on %s: %s", item.function_id, exc)
            item.verdict, item.flagged = None, True
    return sum(item.correct for item in items) / len(items)


# ---------------------------------------------------------------------------
# reports


@dataclass
class EvalRecord:
    id: str
    category: str
    subcategory: str
    indicator: str  # nmse | exact_match | unit_test
    score: float
    success: bool
    extra: dict = field(default_factory=dict)


@dataclass
class EvalReport:
    records: list[EvalRecord]
    aggregates: dict
    meta: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "meta": self.meta,
            "records": [_clean(asdict(r)) for r in self.records],
            "aggregates": self.aggregates,
        }


def _clean(obj):
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def success_for(indicator: str, score: float) -> bool:
    if indicator == "nmse":
        return score < SUCCESS_NMSE
    if indicator == "exact_match":
        return score == 1.0
    if indicator == "unit_test":
        return score > CHANCE
    raise EvaluationError(f"unknown indicator {indicator!r}")


def aggregate_cell(records: list[EvalRecord]) -> dict:
    kinds = {r.indicator for r in records}
    if len(kinds) > 1:
        raise EvaluationError(f"cannot aggregate mixed indicators {sorted(kinds)}")
    n = len(records)
    return {"n": n, "rate": sum(r.success for r in records) / n}


def aggregate(records: list[EvalRecord]) -> dict:
    """Success rates per category, per subcategory, and per indicator; keys sorted."""
    if not records:
        raise EvaluationError("no records to aggregate")
    cells: dict[str, list[EvalRecord]] = {}
    for r in records:
        cells.setdefault(f"{r.category}/all/{r.indicator}", []).append(r)
        cells.setdefault(f"{r.category}/{r.subcategory}/{r.indicator}", []).append(r)
    return {k: aggregate_cell(v) for k, v in sorted(cells.items())}


def report_csv(report: EvalReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    prov = {k: report.meta[k] for k in ("seed", "format_version", "engine_version") if k in report.meta}
    if prov:
        buf.write("# " + " ".join(f"{k}={v}" for k, v in prov.items()) + "\n")
    w.writerow(["category", "subcategory", "indicator", "n", "rate"])
    for key, cell in report.aggregates.items():
        cat, sub, ind = key.split("/")
        w.writerow([cat, sub, ind, cell["n"], f"{cell['rate']:.4f}"])
    return buf.getvalue()


def write_report(report: EvalReport, json_path: str | Path, csv_path: str | Path | None = None) -> None:
    Path(json_path).parent.mkdir(parents=True, exist_ok=True)
    Path(json_path).write_text(json.dumps(report.to_json(), indent=1, sort_keys=True) + "\n")
    if csv_path is not None:
        Path(csv_path).write_text(report_csv(report))


def load_report(path: str | Path) -> EvalReport:
    obj = json.loads(Path(path).read_text())
    recs = [EvalRecord(**{**r, "score": math.nan if r["score"] is None else r["score"]}) for r in obj["records"]]
    return EvalReport(recs, obj["aggregates"], obj.get("meta", {}))


# ---------------------------------------------------------------------------
# whole-run evaluation


def ground_truth_interpretation(spec: FunctionSpec):
    """The generator's own answer, shaped as an interpretation (oracle runs and smoke tests)."""
    from findbench.interpreters.base import Interpretation

    corr = spec.corruption
    noise = spec.noise
    return Interpretation(
        id=spec.id,
        category=spec.category,
        description=spec.description,
        domain=spec.domain_note,
        program=spec.payload,
        noise=noise.dist if noise else "none",
        noise_scale=float(noise.param) if noise else 0.0,
        intervals=tuple(corr.segments()) if corr else (),
        corruption_value=corr.mu if corr else None,
        fit_score=0.0 if spec.category == "numeric" else 1.0,
        interpreter="ground-truth",
    )


def make_judge(name: str, it, tables: Mapping[str, FactTable], seed: int, complete=None) -> Judge:
    if name == "simulation":
        runner = None if it is None or it.program is None else interpretation_runner(it, tables)
        return SimulationJudge(runner, it.category if it else "")
    if name == "random":
        return RandomJudge(np.random.default_rng([seed, 6, _fid_number(it.id) if it else 0]))
    if name == "endpoint":
        if complete is None:
            raise EvaluationError("endpoint judge needs a chat endpoint")
        return EndpointJudge(complete)
    raise EvaluationError(f"unknown judge {name!r}")


def evaluate(dataset, interpretations: Iterable, judge: str = "simulation", seed: int = 0,
             trials: int = UNIT_TEST_TRIALS, complete=None) -> EvalReport:
    """Score every interpretation against its function in ``dataset`` (a Dataset or manifest)."""
    interpretations = list(interpretations)
    if not interpretations:
        raise EvaluationError("no interpretations to evaluate")
    manifest = dataset.manifest if hasattr(dataset, "manifest") else dataset
    tables = getattr(dataset, "tables", None) or default_tables()
    if not manifest.test_sets:
        from findbench.generator import make_test_sets

        make_test_sets(manifest, tables)
    seen = set()
    records: list[EvalRecord] = []
    for it in interpretations:
        if it.id not in manifest:
            raise EvaluationError(f"interpretation for unknown function {it.id!r}")
        if it.id in seen:
            raise EvaluationError(f"duplicate interpretation for {it.id!r}")
        seen.add(it.id)
        spec = manifest.get(it.id)
        if spec.category != it.category:
            raise EvaluationError(f"{it.id}: category {it.category!r} does not match {spec.category!r}")
        records.extend(score_one(spec, it, manifest, tables, judge, seed, trials, complete))
    records.sort(key=lambda r: (r.id, r.indicator))
    meta = {"seed": manifest.seed, "judge": judge, "unit_test_seed": seed, "trials": trials,
            "dataset_id": manifest.dataset_id, "format_version": manifest.format_version,
            "engine_version": __version__}
    return EvalReport(records, aggregate(records), meta)


def score_one(spec: FunctionSpec, it, manifest, tables, judge: str, seed: int, trials: int,
              complete=None) -> list[EvalRecord]:
    out = []
    sub = spec.subcategory
    if spec.category == "numeric":
        truth = truth_function(spec)
        cand = numeric_candidate(it.program, it.intervals, it.corruption_value)
        value, skipped = nmse_detail(truth, cand)
        extra = {"skipped": skipped}
        if spec.corruption is not None:
            extra["iou"] = interval_iou(it.intervals, spec.corruption.segments())
        out.append(EvalRecord(spec.id, "numeric", sub, "nmse", value, success_for("nmse", value), extra))
    else:
        inputs = [str(x) for x in manifest.test_sets[spec.id]]
        truth = spec_runner(spec, tables)
        runner = string_runner(it.program) if spec.category == "strings" else relation_runner(it.program, tables)
        frac = exact_match(truth, runner, inputs)
        out.append(EvalRecord(spec.id, spec.category, sub, "exact_match", frac, success_for("exact_match", frac)))
    items = build_items(spec, it.description, manifest.specs, manifest.test_sets, tables, seed, trials)
    score = unit_test(items, make_judge(judge, it, tables, seed, complete))
    flagged = sum(i.flagged for i in items)
    out.append(EvalRecord(spec.id, spec.category, sub, "unit_test", score, success_for("unit_test", score),
                          {"flagged": flagged} if flagged else {}))
    return out
