from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from findbench import numeric, strings
from findbench.blackbox import BlackBoxSession
from findbench.evaluator import interval_iou, nmse
from findbench.interpreters import interpret_numeric, interpret_relation, interpret_string
from findbench.interpreters.base import from_record, to_record
from findbench.interpreters.noise import classify_noise, residual_runs
from findbench.interpreters.strings import consistent_programs, run
from findbench.numeric import Atom
from findbench.relations import RelationSpec, default_tables, eval_relation
from findbench.spec import CorruptionSpec, FunctionSpec, NoiseSpec, grid_mean, truth_function
from findbench.strings import StringOp, StringProgram, canonical_key


def _numeric(expr, *mods, seed=7):
    return BlackBoxSession(FunctionSpec("t", "numeric", expr, tuple(mods), seed=seed))


def _truth_nmse(spec, it):
    return nmse(truth_function(spec), lambda x: numeric.evaluate(it.program, x))


# ---------------------------------------------------------------------------
# numeric


def test_linear_recovered_to_machine_precision():
    # oracle: ordinary least squares on the canonical grid recovers (2, 3) exactly
    g = numeric.GRID
    slope, icpt = np.polyfit(g, 2 * g + 3, 1)
    assert abs(slope - 2) < 1e-12 and abs(icpt - 3) < 1e-10
    s = _numeric(Atom("linear", 2.0, 3.0))
    it = interpret_numeric(s, budget=500)
    assert it.status == "ok" and it.noise == "none" and it.intervals == ()
    assert _truth_nmse(s.spec, it) < 1e-9


def test_constant_with_normal_noise():
    s = _numeric(Atom("constant", 1.0, 5.0), NoiseSpec("normal", 1.0))
    it = interpret_numeric(s, budget=500)
    assert it.noise == "normal"
    n = it.queries
    value = float(numeric.evaluate(it.program, np.array([0.0]))[0])
    assert abs(value - 5.0) <= 3.0 / math.sqrt(n)


def test_corrupted_interval_recovered():
    expr = Atom("absolute", 1.0, 0.0)
    corr = CorruptionSpec("bounded", 10.0, 20.0, "inside", grid_mean(expr))
    s = _numeric(expr, corr)
    it = interpret_numeric(s, budget=500)
    assert interval_iou(it.intervals, [(10.0, 20.0)]) >= 0.5
    assert it.corruption_value == pytest.approx(corr.mu, abs=0.2)


@pytest.mark.parametrize("budget", [64, 100, 200, 500])
def test_budget_compliance(budget):
    s = _numeric(Atom("sin", 3.0, 1.0, {"period": 40.0, "phase": 1.0}))
    it = interpret_numeric(s, budget=budget)
    assert s.count == it.queries <= budget
    assert (it.status == "partial") == (budget < 370)


def test_budget_below_minimum_rejected():
    with pytest.raises(ValueError):
        interpret_numeric(_numeric(Atom("linear", 1.0, 0.0)), budget=63)


def test_monotone_in_budget(small_ds):
    specs = [s for s in small_ds.manifest.specs
             if s.category == "numeric" and not s.modifiers]
    assert len(specs) >= 5
    budgets = (64, 130, 250, 322, 370, 500)
    for spec in specs:
        scores = [_truth_nmse(spec, interpret_numeric(BlackBoxSession(spec), budget=b)) for b in budgets]
        for lo, hi in zip(scores, scores[1:]):
            assert hi <= lo + 1e-12, (spec.id, scores)


def _groups(dist, param, rng, base):
    n = NoiseSpec(dist, param)
    return [b + n.draw(rng, 25) for b in base]


@pytest.mark.parametrize("dist,param", [("normal", 2.75), ("uniform", 2.75), ("poisson", 5.5)])
def test_noise_classification_power(dist, param):
    rng = np.random.default_rng(2024)
    hits = 0
    for _ in range(100):
        base = rng.uniform(-50, 50, 2).round(3)
        hits += classify_noise(_groups(dist, param, rng, base)).kind == dist
    assert hits >= 90


def test_noiseless_repeats_classified_none():
    assert classify_noise([np.full(25, 3.25), np.full(25, -1.5)]).kind == "none"


def test_residual_runs_oracle():
    x = np.arange(40.0)
    r = np.ones(40)
    r[10:16] = 50.0
    r[30:32] = 50.0  # shorter than the minimum run
    assert residual_runs(x, r) == [(10.0, 15.0)]


# ---------------------------------------------------------------------------
# strings


def _string_session(*ops):
    return BlackBoxSession(FunctionSpec("s", "strings", StringProgram(tuple(ops))))


TEST_WORDS = ["apple", "banana", "kiwi", "zebra", "queue", "abc", "moon", "tree", "xylophone", "a"]


def test_reverse_recovered():
    s = _string_session(StringOp("reverse"))
    it = interpret_string(s, budget=50)
    assert it.program == StringProgram((StringOp("reverse"),))
    assert all(run(it.program, w) == w[::-1] for w in TEST_WORDS)


def test_replace_then_reverse_recovered_extensionally():
    truth = StringProgram((StringOp("replace", ("a", "b")), StringOp("reverse")))
    s = BlackBoxSession(FunctionSpec("s", "strings", truth))
    it = interpret_string(s, budget=50)
    assert it.status == "ok"
    assert all(run(it.program, w) == strings.eval_string(truth, w) for w in TEST_WORDS)


def test_tie_break_is_canonical_minimum():
    s = _string_session(StringOp("capitalize"), StringOp("reverse"))
    it = interpret_string(s, budget=50)
    inputs = [t.input for t in s.transcript]
    outputs = [t.output for t in s.transcript]
    survivors = consistent_programs(inputs, outputs)
    assert survivors and it.program == min(survivors, key=canonical_key)


def _op_strategy():
    simple = [k for k, p in strings.OP_PARAMS.items() if not p and k != "lowercase"]
    return st.one_of(
        st.sampled_from([StringOp(k) for k in simple]),
        st.builds(lambda a, b: StringOp("replace", (a, b)), st.sampled_from("aeiost"), st.sampled_from("xyz")),
        st.builds(lambda k: StringOp("rotate_left", (k,)), st.sampled_from(strings.ROTATIONS)),
        st.builds(lambda s: StringOp("concatenate", (s,)), st.sampled_from(["a", "xy"])),
        st.builds(lambda s: StringOp("prepend", (s,)), st.sampled_from(["b", "qz"])),
    )


@settings(max_examples=25, deadline=None)
@given(st.lists(_op_strategy(), min_size=1, max_size=2))
def test_string_soundness_and_budget(ops):
    s = _string_session(*ops)
    it = interpret_string(s, budget=50)
    assert s.count == it.queries <= 50
    if it.status == "ok":
        assert all(run(it.program, t.input) == t.output for t in s.transcript)


# ---------------------------------------------------------------------------
# relations


def _relation_session(table, tag=None):
    return BlackBoxSession(FunctionSpec("r", "relations", RelationSpec(table, tag)))


def test_uncorrupted_relation_named():
    s = _relation_session("country_capital")
    it = interpret_relation(s, budget=60)
    assert it.program == RelationSpec("country_capital") and it.domain == "none"
    assert s.count <= 60


def test_corrupted_tag_named():
    s = _relation_session("country_capital", "Asia")
    it = interpret_relation(s, budget=60)
    assert it.program == RelationSpec("country_capital", "Asia")
    assert "Asia" in it.domain


def test_disjoint_lexicon_gives_unknown_relation():
    s = _relation_session("country_capital")
    it = interpret_relation(s, budget=60, lexicon={"junk": ["xyzzy", "plugh", "frobozz", "quux"]})
    assert it.status == "unknown_relation" and it.program is None


def test_relation_outputs_agree_with_reported_program():
    s = _relation_session("gemstone_color", "red")
    it = interpret_relation(s, budget=60)
    assert all(eval_relation(it.program, t.input, default_tables()) == t.output for t in s.transcript)


def test_interpretation_record_round_trip():
    it = interpret_numeric(_numeric(Atom("linear", 2.0, 3.0)), budget=100)
    back = from_record(to_record(it))
    assert back.program == it.program and back.status == it.status and back.queries == it.queries
