"""Reference interpreter for string functions: enumerate, filter, then split survivors."""

from __future__ import annotations

import logging

import numpy as np

from findbench import kernels, strings
from findbench.blackbox import NONE, BlackBoxSession
from findbench.interpreters.base import Interpretation
from findbench.strings import StringOp, StringProgram, apply_op, canonical_key

log = logging.getLogger(__name__)

NAME = "string-ref"
MIN_BUDGET = 20
#: fixed opening probes; together they use every letter, repeated letters and both length parities
SEED_PROBES = (
    "the", "quick", "brown", "fox", "jumps", "over", "lazy", "dog",
    "apple", "banana", "mississippi", "zebra",
)
POOL_SIZE = 300


def query_pool(seed: int, n: int = POOL_SIZE) -> list[str]:
    """Seeded candidate inputs for distinguishing queries."""
    rng = np.random.default_rng([seed, 13])
    letters = list(strings.ALPHABET)
    out = []
    for _ in range(n):
        k = int(rng.integers(1, 11))
        out.append("".join(rng.choice(letters, k)))
    return list(dict.fromkeys(out))


def run(prog: StringProgram, s: str) -> str:
    for op in prog.ops:
        s = apply_op(op, s)
    return s


def consistent_programs(inputs: list[str], outputs: list[str], ops: list[StringOp] | None = None) -> list[StringProgram]:
    """Every one- and two-op program over the op universe that reproduces all observations."""
    ops = ops if ops is not None else strings.all_ops()
    singles = [StringProgram((ops[i],)) for i in kernels.consistent_singles(ops, inputs, outputs)]
    pairs = [StringProgram((ops[i], ops[j])) for i, j in kernels.consistent_pairs(ops, inputs, outputs)]
    return singles + pairs


def _split_value(survivors: list[StringProgram], s: str) -> int:
    """Survivors guaranteed to be eliminated whatever the answer: all but the largest class."""
    counts: dict[str, int] = {}
    for p in survivors:
        out = run(p, s)
        counts[out] = counts.get(out, 0) + 1
    return len(survivors) - max(counts.values())


def best_partial(ops: list[StringOp], inputs: list[str], outputs: list[str]) -> tuple[StringProgram, float]:
    """Single op matching the most observations (fallback when nothing fits exactly)."""
    best, score = StringProgram((ops[0],)), -1.0
    for op in ops:
        hits = sum(apply_op(op, x) == y for x, y in zip(inputs, outputs))
        if hits > score:
            best, score = StringProgram((op,)), float(hits)
    return best, score / max(len(inputs), 1)


def interpret_string(session: BlackBoxSession, budget: int = 50, seed: int = 0) -> Interpretation:
    if session.category != "strings":
        raise ValueError("interpret_string needs a strings session")
    if budget < MIN_BUDGET:
        raise ValueError(f"budget must be at least {MIN_BUDGET}")
    if session.remaining is not None:
        budget = min(budget, session.remaining)
    inputs: list[str] = []
    outputs: list[str] = []

    def ask(batch: list[str]) -> None:
        for x, y in session.query_pairs(batch):
            inputs.append(x)
            outputs.append(y)

    ask(list(SEED_PROBES[:budget]))
    ops = strings.all_ops()
    if NONE in outputs:
        survivors: list[StringProgram] = []
    else:
        survivors = consistent_programs(inputs, outputs, ops)
    partial = len(inputs) < len(SEED_PROBES)

    pool = [s for s in query_pool(seed) if s not in inputs]
    while len(survivors) > 1 and len(inputs) < budget and pool:
        gains = [_split_value(survivors, s) for s in pool]
        k = int(np.argmax(gains))
        if gains[k] == 0:
            break
        x = pool.pop(k)
        ask([x])
        y = outputs[-1]
        survivors = [p for p in survivors if run(p, x) == y]

    if survivors:
        prog = min(survivors, key=canonical_key)
        status, score = ("partial" if partial else "ok"), 1.0
    else:
        prog, score = best_partial(ops, inputs, outputs)
        status = "out_of_grammar"
    return Interpretation(
        id=session.function_id,
        category="strings",
        description=strings.describe(prog),
        domain="none",
        program=prog,
        fit_score=score,
        queries=len(inputs),
        status=status,
        interpreter=NAME,
    )
