"""Interactive query channel to one benchmark function."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from findbench import strings
from findbench.relations import FactTable, default_tables, eval_relation
from findbench.spec import FunctionSpec, base_function, eval_with_modifiers

PREFIX = "Function input - output pairs: "
NONE = "None"


class SessionError(RuntimeError):
    pass


class BudgetExceeded(SessionError):
    pass


class UsageError(ValueError):
    pass


def format_number(v: float | None) -> str:
    """Shortest round-trip decimal; ``None`` for undefined values."""
    if v is None or math.isnan(v) or math.isinf(v):
        return NONE
    return repr(float(v))


def format_pairs(pairs: list[tuple[str, str]]) -> str:
    return PREFIX + "".join(f"({i}, {o})" for i, o in pairs)


def format_entity_scores(pairs: list[tuple[str, float]]) -> str:
    """Entity-style template with four-decimal scores (no scorer ships with the engine)."""
    return PREFIX + "".join(f"({i}, {s:.4f}) " for i, s in pairs)


def parse_pairs(line: str) -> list[tuple[str, str]]:
    """Inverse of ``format_pairs`` for values that contain neither ``)(`` nor a leading ``, ``."""
    line = line.rstrip("\n")
    if not line.startswith(PREFIX):
        raise ValueError(f"not a pairs line: {line!r}")
    body = line[len(PREFIX):]
    if not (body.startswith("(") and body.endswith(")")):
        raise ValueError(f"malformed pairs line: {line!r}")
    out = []
    for chunk in body[1:-1].split(")("):
        i, sep, o = chunk.partition(", ")
        if not sep:
            raise ValueError(f"malformed pair {chunk!r}")
        out.append((i, o))
    return out


def parse_number(s: str) -> float | None:
    try:
        v = float(s)
    except ValueError:
        return None
    return v if math.isfinite(v) else None


@dataclass
class Interaction:
    input: str
    output: str
    timestamp: float = 0.0


@dataclass
class BlackBoxSession:
    spec: FunctionSpec
    budget: int | None = None
    max_inputs_per_call: int | None = None
    nonce: int = 0
    weights: object = None
    tables: Mapping[str, FactTable] | None = None
    transcript: list[Interaction] = field(default_factory=list)

    def __post_init__(self) -> None:
        self._base = None
        if self.spec.category == "numeric":
            self._base = base_function(self.spec, self.weights)

    @property
    def function_id(self) -> str:
        return self.spec.id

    @property
    def category(self) -> str:
        return self.spec.category

    @property
    def count(self) -> int:
        return len(self.transcript)

    @property
    def remaining(self) -> int | None:
        return None if self.budget is None else self.budget - self.count

    def _eval_one(self, raw: str) -> str:
        cat = self.spec.category
        if cat == "numeric":
            x = parse_number(raw.strip())
            if x is None:
                return NONE
            return format_number(eval_with_modifiers(self.spec, x, self.count, self.nonce, self._base))
        if cat == "strings":
            try:
                return strings.eval_string(self.spec.payload, raw)
            except strings.StringDomainError:
                return NONE
        return eval_relation(self.spec.payload, raw, self.tables or default_tables())

    def query_pairs(self, inputs: list[str]) -> list[tuple[str, str]]:
        inputs = [str(i) for i in inputs]
        if not inputs:
            raise UsageError("at least one input is required")
        if self.max_inputs_per_call is not None and len(inputs) > self.max_inputs_per_call:
            raise UsageError(f"at most {self.max_inputs_per_call} inputs per call")
        if self.budget is not None and self.count + len(inputs) > self.budget:
            raise BudgetExceeded(
                f"query budget of {self.budget} exhausted ({self.count} used, {len(inputs)} requested)"
            )
        pairs = []
        for raw in inputs:
            out = self._eval_one(raw)
            self.transcript.append(Interaction(raw, out, time.time()))
            pairs.append((raw, out))
        return pairs

    def query(self, inputs: list[str]) -> str:
        return format_pairs(self.query_pairs(inputs))

    def query_numbers(self, xs) -> np.ndarray:
        """Numeric convenience: query floats, get float64 outputs with nan for ``None``."""
        pairs = self.query_pairs([format_number(float(x)) for x in xs])
        return np.array([np.nan if o == NONE else float(o) for _, o in pairs], dtype=np.float64)

    def transcript_records(self) -> list[dict]:
        return [{"input": t.input, "output": t.output} for t in self.transcript]


def open_session(dataset, function_id: str, budget: int | None = None, nonce: int = 0,
                 max_inputs_per_call: int | None = None) -> BlackBoxSession:
    """Fresh session on ``function_id`` from a loaded dataset (or a bare manifest)."""
    if hasattr(dataset, "manifest"):
        spec = dataset.spec(function_id)
        weights = dataset.weights(function_id)
        tables = dataset.tables
    else:
        spec = dataset.get(function_id)
        weights, tables = None, None
    if budget is not None and budget < 1:
        raise UsageError("budget must be positive")
    return BlackBoxSession(spec, budget, max_inputs_per_call, nonce, weights, tables)
