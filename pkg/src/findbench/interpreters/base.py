"""Interpretation records and their JSONL storage."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from findbench import numeric, strings
from findbench.relations import RelationSpec

STATUSES = ("ok", "partial", "out_of_grammar", "unknown_relation")
NOISE_KINDS = ("none", "normal", "uniform", "poisson", "unknown")


class InterpretationError(ValueError):
    pass


@dataclass
class Interpretation:
    id: str
    category: str
    description: str
    domain: str = "none"
    program: object = None  # NumericExpr | StringProgram | RelationSpec | None
    noise: str = "none"
    noise_scale: float = 0.0
    intervals: tuple = ()  # reported corrupted intervals (numeric)
    corruption_value: float | None = None
    fit_score: float = math.nan
    queries: int = 0
    status: str = "ok"
    interpreter: str = ""

    def __post_init__(self) -> None:
        if self.status not in STATUSES:
            raise InterpretationError(f"unknown status {self.status!r}")
        if self.noise not in NOISE_KINDS:
            raise InterpretationError(f"unknown noise verdict {self.noise!r}")
        self.intervals = tuple((float(a), float(b)) for a, b in self.intervals)


def program_to_json(category: str, program) -> object:
    if program is None:
        return None
    if category == "numeric":
        return numeric.to_json(program)
    if category == "strings":
        return strings.to_json(program)
    return {"table": program.table, "tag": program.tag}


def program_from_json(category: str, obj) -> object:
    if obj is None:
        return None
    try:
        if category == "numeric":
            return numeric.from_json(obj)
        if category == "strings":
            return strings.from_json(obj)
        return RelationSpec(obj["table"], obj.get("tag"))
    except (KeyError, TypeError, ValueError) as exc:
        raise InterpretationError(f"program does not parse: {exc}") from exc


def _finite(v: float | None):
    if v is None or not math.isfinite(v):
        return None
    return float(v)


def to_record(it: Interpretation) -> dict:
    return {
        "id": it.id,
        "category": it.category,
        "description": it.description,
        "domain": it.domain,
        "code": program_to_json(it.category, it.program),
        "noise": it.noise,
        "noise_scale": it.noise_scale,
        "intervals": [list(iv) for iv in it.intervals],
        "corruption_value": _finite(it.corruption_value),
        "fit_score": _finite(it.fit_score),
        "queries": it.queries,
        "status": it.status,
        "interpreter": it.interpreter,
    }


def from_record(rec: dict) -> Interpretation:
    try:
        cat = rec["category"]
        fit = rec.get("fit_score")
        return Interpretation(
            id=rec["id"],
            category=cat,
            description=rec.get("description", ""),
            domain=rec.get("domain", "none"),
            program=program_from_json(cat, rec.get("code")),
            noise=rec.get("noise", "none"),
            noise_scale=float(rec.get("noise_scale", 0.0)),
            intervals=tuple(tuple(iv) for iv in rec.get("intervals", ())),
            corruption_value=rec.get("corruption_value"),
            fit_score=math.nan if fit is None else float(fit),
            queries=int(rec.get("queries", 0)),
            status=rec.get("status", "ok"),
            interpreter=rec.get("interpreter", ""),
        )
    except (KeyError, TypeError) as exc:
        raise InterpretationError(f"bad interpretation record: {exc}") from exc


def write_jsonl(items: Iterable[Interpretation], path: str | Path, provenance: dict | None = None) -> None:
    recs = [to_record(it) for it in items]
    if provenance is not None:
        recs = [{**r, "provenance": provenance} for r in recs]
    lines = [json.dumps(r, sort_keys=True) for r in recs]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("".join(line + "\n" for line in lines))


def read_jsonl(path: str | Path) -> list[Interpretation]:
    out = []
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InterpretationError(f"{path}: {exc}") from exc
    for n, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            out.append(from_record(json.loads(line)))
        except json.JSONDecodeError as exc:
            raise InterpretationError(f"{path}:{n}: {exc}") from exc
    return out
