"""Reference interpreter for relation functions: table matching, then tag probing."""

from __future__ import annotations

import logging
from typing import Mapping

import numpy as np

from findbench.blackbox import BlackBoxSession, BudgetExceeded
from findbench.interpreters.base import Interpretation
from findbench.relations import UNDEFINED, FactTable, RelationSpec, default_tables, describe_relation, probe_lexicon

log = logging.getLogger(__name__)

NAME = "relation-ref"
MIN_AGREEMENT = 0.6
WORDS_PER_TYPE = 4
FOLLOW_UP = 12
PER_TAG = 3
MIN_UNDEFINED_IN_TAG = 2


def table_agreement(table: FactTable, observations: Mapping[str, str]) -> tuple[float, int]:
    """Fraction of defined observations on the table's keys that the table reproduces."""
    hits = total = 0
    for x, y in observations.items():
        want = table.get(x)
        if want is None or y == UNDEFINED:
            continue
        total += 1
        hits += want == y
    return (hits / total if total else 0.0), total


def corrupted_tag(table: FactTable, observations: Mapping[str, str]) -> str | None:
    """Tag with at least two undefined members observed and no undefined key outside it."""
    best = None
    for tag in sorted(table.tags):
        inside = outside = 0
        for x, y in observations.items():
            if table.get(x) is None or y != UNDEFINED:
                continue
            if table.in_tag(x, tag):
                inside += 1
            else:
                outside += 1
        if inside >= MIN_UNDEFINED_IN_TAG and outside == 0:
            key = (-inside, len(table.tags[tag]), tag)
            if best is None or key < best[0]:
                best = (key, tag)
    return best[1] if best else None


def interpret_relation(session: BlackBoxSession, budget: int = 60, seed: int = 0,
                       lexicon: Mapping[str, list[str]] | None = None,
                       tables: Mapping[str, FactTable] | None = None) -> Interpretation:
    if session.category != "relations":
        raise ValueError("interpret_relation needs a relations session")
    tables = tables or session.tables or default_tables()
    lexicon = lexicon if lexicon is not None else probe_lexicon(tables)
    if session.remaining is not None:
        budget = min(budget, session.remaining)
    rng = np.random.default_rng([seed, 17])
    obs: dict[str, str] = {}
    partial = False

    def ask(words: list[str]) -> None:
        words = [w for w in dict.fromkeys(words) if w not in obs][:max(budget - len(obs), 0)]
        if words:
            for x, y in session.query_pairs(words):
                obs[x] = y

    def pick(words, k: int) -> list[str]:
        fresh = [w for w in words if w not in obs]
        if not fresh:
            return []
        idx = rng.permutation(len(fresh))[:k]
        return [fresh[i] for i in sorted(idx)]

    best: tuple | None = None
    try:
        for typ in sorted(lexicon):
            ask(pick(lexicon[typ], WORDS_PER_TYPE))

        def defined_types() -> list[str]:
            return [t for t in sorted(lexicon) if any(obs.get(w, UNDEFINED) != UNDEFINED for w in lexicon[t])]

        # a corrupted or sparse table can answer undefined to every opening probe
        while not defined_types() and len(obs) < budget:
            before = len(obs)
            for typ in sorted(lexicon):
                ask(pick(lexicon[typ], WORDS_PER_TYPE))
            if len(obs) == before:
                break
        for typ in defined_types():
            ask(pick(lexicon[typ], FOLLOW_UP))
        best = _best_table(tables, obs)
        if best is not None:
            table = tables[best[0]]
            for tag in sorted(table.tags):
                ask(pick(sorted(table.tags[tag]), PER_TAG))
    except BudgetExceeded:
        partial = True
    best = _best_table(tables, obs)

    if best is None:
        return Interpretation(
            id=session.function_id, category="relations", description="unknown relation",
            domain="none", program=None, fit_score=0.0, queries=len(obs),
            status="unknown_relation", interpreter=NAME,
        )
    name, agreement = best
    table = tables[name]
    tag = corrupted_tag(table, obs)
    spec = RelationSpec(name, tag)
    domain = "none" if tag is None else f"returns undefined for {table.tag_phrase(tag)}"
    return Interpretation(
        id=session.function_id,
        category="relations",
        description=describe_relation(spec, tables),
        domain=domain,
        program=spec,
        fit_score=agreement,
        queries=len(obs),
        status="partial" if partial else "ok",
        interpreter=NAME,
    )


def _best_table(tables: Mapping[str, FactTable], obs: Mapping[str, str]) -> tuple[str, float] | None:
    scored = []
    for name in sorted(tables):
        agree, n = table_agreement(tables[name], obs)
        if n and agree > MIN_AGREEMENT:
            scored.append((-agree, -n, name))
    if not scored:
        return None
    agree, _, name = min(scored)
    return name, -agree
