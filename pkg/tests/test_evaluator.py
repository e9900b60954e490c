from __future__ import annotations

import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from findbench import evaluator, numeric
from findbench.evaluator import (
    EndpointJudge,
    EvalRecord,
    EvaluationError,
    RandomJudge,
    SimulationJudge,
    UnitTestItem,
    aggregate,
    build_items,
    evaluate,
    exact_match,
    ground_truth_interpretation,
    interval_iou,
    load_report,
    nmse,
    parse_verdict,
    relation_runner,
    string_runner,
    unit_test,
    write_report,
)
from findbench.numeric import Atom
from findbench.relations import RelationSpec, default_tables
from findbench.strings import StringOp, StringProgram


def ev(expr):
    return lambda x: numeric.evaluate(expr, x)


def _closed_form_linear_nmse() -> Fraction:
    # exact rational sums over x = k/2, k = -256..256
    xs = [Fraction(k, 2) for k in range(-256, 257)]
    return Fraction(sum(1 for _ in xs)) / sum((2 * x + 3) ** 2 for x in xs)


def test_grid_is_513_points_on_128():
    assert numeric.GRID.size == 513 and numeric.GRID[0] == -128 and numeric.GRID[-1] == 128


def test_linear_offset_nmse_matches_exact_oracle():
    oracle = _closed_form_linear_nmse()
    assert oracle == Fraction(513, 11255049)
    got = nmse(ev(Atom("linear", 2.0, 3.0)), ev(Atom("linear", 2.0, 4.0)))
    assert got == pytest.approx(float(oracle), rel=1e-12)


def test_nmse_identities():
    f = ev(Atom("sin", 4.0, 1.0, {"period": 30.0, "phase": 0.5}))
    assert nmse(f, f) == 0.0
    assert nmse(f, lambda x: np.zeros_like(x)) == pytest.approx(1.0, abs=1e-12)


def test_nmse_skips_truth_undefined_and_penalizes_candidate_undefined():
    truth = ev(Atom("logarithm", 1.0, 0.0))
    value, skipped = evaluator.nmse_detail(truth, truth)
    assert value == 0.0 and skipped == 257
    assert nmse(truth, lambda x: np.full_like(x, np.nan)) == pytest.approx(1.0)


def test_nmse_rejects_everywhere_undefined_truth():
    with pytest.raises(EvaluationError):
        nmse(lambda x: np.full_like(x, np.nan), lambda x: x)


@settings(max_examples=60, deadline=None)
@given(st.floats(-50, 50).filter(lambda c: abs(c) > 1e-3), st.floats(-5, 5), st.floats(-5, 5))
def test_nmse_scale_invariance(c, a, b):
    f = ev(Atom("linear", 1.5, -2.0))
    g = ev(Atom("linear", a, b))
    base = nmse(f, g)
    scaled = nmse(lambda x: c * f(x), lambda x: c * g(x))
    assert scaled == pytest.approx(base, rel=1e-9, abs=1e-12)


REV = StringProgram((StringOp("reverse"),))


def test_exact_match_cases():
    words = ["apple", "cat", "banana", "kiwi", "moon", "tree", "queue", "abc", "zebra", "hello"]
    truth = string_runner(REV)
    assert exact_match(truth, truth, words) == 1.0
    assert exact_match(truth, lambda s: s, words) < 1.0
    almost = lambda s: "wrong" if s == "kiwi" else s[::-1]  # noqa: E731
    frac = exact_match(truth, almost, words)
    assert frac == 0.9 and not evaluator.success_for("exact_match", frac)

    def crashes(s):
        raise RuntimeError

    assert exact_match(truth, crashes, words) == 0.0


def test_interval_iou():
    assert interval_iou([(10, 20)], [(10, 20)]) == 1.0
    assert interval_iou([(10, 20)], [(15, 25)]) == pytest.approx(5 / 15)
    assert interval_iou([], []) == 1.0
    assert interval_iou([(10, 20)], [(30, 40)]) == 0.0


def _item(cands, truth):
    return UnitTestItem("d", "f", list(cands), truth)


def test_simulation_judge_cases():
    judge = SimulationJudge(string_runner(REV), "strings")
    assert judge(_item([("apple", "elppa"), ("apple", "APPLE"), ("cat", "dog")], 0)) == 0
    assert judge(_item([("apple", "elppa"), ("cat", "tac"), ("cat", "dog")], 0)) is None
    assert judge(_item([("apple", "x"), ("cat", "y"), ("cat", "dog")], 0)) is None


def test_country_capital_worked_example():
    judge = SimulationJudge(relation_runner(RelationSpec("country_capital"), default_tables()), "relations")
    item = _item([("Germany", "Berlin"), ("Germany", "Europe"), ("ruby", "red")], 0)
    assert judge(item) == 0


def test_endpoint_judge_parsing():
    item = _item([("a", "1"), ("b", "2"), ("c", "3")], 1)
    assert EndpointJudge(lambda msgs: "2")(item) == 1
    assert parse_verdict("The answer is 3.") == 2
    assert parse_verdict("no idea") is None
    assert parse_verdict("7") is None

    def boom(msgs):
        raise RuntimeError("down")

    assert EndpointJudge(boom)(item) is None and item.flagged


def test_endpoint_prompt_lists_three_labeled_candidates():
    seen = []
    EndpointJudge(lambda msgs: seen.append(msgs) or "1")(_item([("a", "1"), ("b", "2"), ("c", "3")], 0))
    text = seen[0][0]["content"]
    assert "1. input: a output: 1" in text and "3. input: c output: 3" in text


def test_random_judge_near_chance():
    rng = np.random.default_rng(0)
    items = [_item([("a", "1"), ("b", "2"), ("c", "3")], int(rng.integers(3))) for _ in range(10_000)]
    score = unit_test(items, RandomJudge(np.random.default_rng(1)))
    assert abs(score - 1 / 3) <= 0.02


def test_failing_judge_scores_incorrect_and_flags():
    def bad(item):
        raise RuntimeError

    bad.name = "bad"
    items = [_item([("a", "1"), ("b", "2"), ("c", "3")], 0)]
    assert unit_test(items, bad) == 0.0 and items[0].flagged


def test_aggregate_rates_and_partition():
    recs = [EvalRecord(f"f{i}", "strings", "atomic" if i % 2 else "composed", "exact_match", 1.0, i < 2)
            for i in range(4)]
    agg = aggregate(recs)
    assert agg["strings/all/exact_match"] == {"n": 4, "rate": 0.5}
    subs = [v["n"] for k, v in agg.items() if not k.split("/")[1] == "all"]
    assert sum(subs) == len(recs)
    assert aggregate(recs[1:3])["strings/all/exact_match"]["rate"] == 0.5
    assert aggregate([r for r in recs if r.success])["strings/all/exact_match"]["rate"] == 1.0


def test_aggregate_errors():
    with pytest.raises(EvaluationError):
        aggregate([])
    with pytest.raises(EvaluationError, match="mixed"):
        evaluator.aggregate_cell([EvalRecord("a", "n", "atomic", "nmse", 0, True),
                                  EvalRecord("b", "n", "atomic", "unit_test", 0, True)])


def test_unit_test_success_is_strictly_above_chance():
    assert not evaluator.success_for("unit_test", 1 / 3)
    assert evaluator.success_for("unit_test", 0.4)


@pytest.fixture(scope="module")
def truth_report(small_ds):
    its = [ground_truth_interpretation(s) for s in small_ds.manifest.specs]
    return evaluate(small_ds, its, judge="simulation", seed=3)


def test_ground_truth_scores_perfectly(truth_report):
    for r in truth_report.records:
        if r.category != "numeric" or r.indicator == "unit_test":
            assert r.score == 1.0, r
        else:
            assert r.score < 1e-12, r


def test_report_recomputable(truth_report, tmp_path):
    assert aggregate(truth_report.records) == truth_report.aggregates
    write_report(truth_report, tmp_path / "r.json", tmp_path / "r.csv")
    back = load_report(tmp_path / "r.json")
    assert aggregate(back.records) == json.loads((tmp_path / "r.json").read_text())["aggregates"]
    assert (tmp_path / "r.csv").read_text().startswith("# seed=")


def test_distractor_hygiene(small_ds):
    m = small_ds.manifest
    for spec in m.specs:
        items = build_items(spec, "d", m.specs, m.test_sets, small_ds.tables, seed=0)
        assert len(items) == 10
        for it in items:
            assert spec.id not in it.distractor_ids and len(set(it.distractor_ids)) == 2
            assert all(m.get(d).category == spec.category for d in it.distractor_ids)


def test_judge_symmetry_under_candidate_permutation(small_ds):
    m = small_ds.manifest
    perms = [(0, 1, 2), (2, 0, 1), (1, 2, 0), (0, 2, 1)]
    for spec in m.specs[::5]:
        it = ground_truth_interpretation(spec)
        judge = evaluator.make_judge("simulation", it, small_ds.tables, 0)
        items = build_items(spec, "d", m.specs, m.test_sets, small_ds.tables, seed=1)
        scores = set()
        for p in perms:
            permuted = [UnitTestItem(i.description, i.function_id, [i.candidates[k] for k in p],
                                     p.index(i.truth_index)) for i in items]
            scores.add(unit_test(permuted, judge))
        assert len(scores) == 1


def test_evaluate_rejects_bad_input(small_ds):
    spec = small_ds.manifest.specs[0]
    it = ground_truth_interpretation(spec)
    with pytest.raises(EvaluationError):
        evaluate(small_ds, [])
    with pytest.raises(EvaluationError, match="duplicate"):
        evaluate(small_ds, [it, it])
    it.id = "nope"
    with pytest.raises(EvaluationError, match="unknown"):
        evaluate(small_ds, [it])
