from __future__ import annotations

from collections import Counter
from pathlib import Path

import numpy as np
import pytest

from findbench import generator, numeric, strings
from findbench.generator import GenerationError
from findbench.relations import UNDEFINED, default_tables, eval_relation

from conftest import tree_hash


def _subs(m):
    return Counter(s.subcategory for s in m.specs)


@pytest.mark.parametrize("count,want", [
    # hand arithmetic: composed = round(0.15 n); each modifier = round(0.15 * atomics), halves up
    (1000, {"composed": 150, "noisy": 128, "corrupted": 128, "approximated": 128, "atomic": 466}),
    (100, {"composed": 15, "noisy": 13, "corrupted": 13, "approximated": 13, "atomic": 46}),
    (20, {"composed": 3, "noisy": 3, "corrupted": 3, "approximated": 3, "atomic": 8}),
])
def test_numeric_counts_exact(count, want):
    m = generator.sample_numeric_dataset(count, seed=7)
    assert dict(_subs(m)) == want
    assert len(m.specs) == count


def test_string_counts_exact():
    m = generator.sample_string_dataset(1000, seed=7)
    assert dict(_subs(m)) == {"atomic": 300, "composed": 700}


def test_too_small_counts_rejected():
    with pytest.raises(GenerationError, match="at least"):
        generator.sample_numeric_dataset(2, seed=0)
    with pytest.raises(GenerationError):
        generator.sample_string_dataset(1, seed=0)
    with pytest.raises(GenerationError):
        generator.sample_dataset(0)


def test_seed_replay_identical():
    a = generator.sample_dataset(7, numeric_count=100, string_count=50, relation_count=None)
    b = generator.sample_dataset(7, numeric_count=100, string_count=50, relation_count=None)
    assert [generator.to_record(s) for s in a.specs] == [generator.to_record(s) for s in b.specs]
    c = generator.sample_dataset(8, numeric_count=100, string_count=50, relation_count=None)
    assert [generator.to_record(s) for s in a.specs] != [generator.to_record(s) for s in c.specs]


def test_ids_unique_and_padded():
    m = generator.sample_dataset(1, numeric_count=30, string_count=30, relation_count=None)
    ids = [s.id for s in m.specs]
    assert len(set(ids)) == len(ids)
    assert all(len(i) == 6 and i.startswith("f") for i in ids)


def test_parameter_ranges_fuzz():
    m = generator.sample_numeric_dataset(3000, seed=11)
    for s in m.specs:
        atoms = [s.payload] if isinstance(s.payload, numeric.Atom) else [s.payload.left, s.payload.right]
        for a in atoms:
            if a.kind != "constant":
                assert a.a == int(a.a) and a.a != 0 and -30 <= a.a <= 30
            assert a.b == int(a.b) and -30 <= a.b <= 30
            if s.subcategory == "composed":
                assert a.kind in numeric.COMPOSITION_KINDS
            if a.kind == "polynomial":
                assert 2 <= len(a.params["coeffs"]) - 1 <= 5
                assert all(abs(c) <= 5 and round(c * 10) == pytest.approx(c * 10) for c in a.params["coeffs"])
        c = s.corruption
        if c is not None:
            assert -100 <= c.lo <= 100
            if c.interval == "bounded":
                assert 5 <= c.hi - c.lo <= 20
        mods = [type(x) for x in s.modifiers]
        assert len(mods) <= 1  # modifier subsets are disjoint


def test_composed_children_from_restricted_subset():
    m = generator.sample_numeric_dataset(400, seed=2)
    comp = [s for s in m.specs if s.subcategory == "composed"]
    assert comp and all(isinstance(s.payload, numeric.Compose) for s in comp)


def test_independent_of_generation_order():
    # each id draws from its own stream, so regenerating ids in reverse order changes nothing
    m = generator.sample_numeric_dataset(50, seed=4)
    again = {i: generator.sample_numeric_spec(i, m.specs[i].subcategory, 4) for i in reversed(range(50))}
    assert all(generator.to_record(again[i]) == generator.to_record(s) for i, s in enumerate(m.specs))


def test_string_test_sets():
    m = generator.make_test_sets(generator.sample_string_dataset(40, seed=5))
    for s in m.specs:
        ts = m.test_sets[s.id]
        assert len(ts) == 10 and len(set(ts)) == 10
        for x in ts:
            strings.check_input(x)


def test_corrupted_relation_test_sets_have_two_undefined():
    tables = default_tables()
    m = generator.make_test_sets(generator.sample_relation_dataset(None, seed=5))
    corrupted = [s for s in m.specs if s.subcategory == "corrupted"]
    assert corrupted
    for s in m.specs:
        outs = [eval_relation(s.payload, x, tables) for x in m.test_sets[s.id]]
        assert len(outs) == 10
        assert outs.count(UNDEFINED) == (2 if s.subcategory == "corrupted" else 0)


def test_numeric_test_sets():
    m = generator.make_test_sets(generator.sample_numeric_dataset(100, seed=5))
    for s in m.specs:
        ts = m.test_sets[s.id]
        assert ts["grid"] == {"lo": -128.0, "hi": 128.0, "n": 513}
        if s.corruption is None:
            assert ts["extra"] == []
        else:
            assert len(ts["extra"]) == 16
            assert s.corruption.corrupted(np.array(ts["extra"])).all()


def test_written_dataset_is_byte_stable(tmp_path):
    trees = []
    for k in range(2):
        m = generator.sample_dataset(3, numeric_count=10, string_count=5, relation_count=4)
        out = generator.write_dataset(m, tmp_path / str(k), generator.train_weights(m))
        trees.append(tree_hash(out))
    assert trees[0] == trees[1]


def test_parallel_training_matches_serial():
    m = generator.sample_numeric_dataset(20, seed=9)
    serial = generator.train_weights(m, jobs=1)
    parallel = generator.train_weights(m, jobs=2)
    assert serial.keys() == parallel.keys() and all(serial[k] == parallel[k] for k in serial)


def test_load_round_trip(small_dir, small_ds):
    assert len(small_ds.manifest.specs) == 20 + 10 + 33
    assert small_ds.meta["seed"] == 1
    spec = next(s for s in small_ds.manifest.specs if s.approximation is not None)
    assert small_ds.weights(spec.id) is not None
    with pytest.raises(GenerationError):
        generator.load_dataset(small_dir / "weights")
