from __future__ import annotations

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from findbench.relations import (
    UNDEFINED,
    FactTableError,
    RelationSpec,
    default_tables,
    eval_relation,
    load_fact_table,
    load_fact_tables,
    probe_lexicon,
)
from findbench.relations.tables import DATA_DIR

TABLES = default_tables()
CAPITAL = RelationSpec("country_capital")


def test_capital_of_germany():
    assert eval_relation(CAPITAL, "Germany") == "Berlin"


def test_peru_undefined_when_south_america_corrupted():
    assert eval_relation(RelationSpec("country_capital", "South America"), "Peru") == UNDEFINED
    assert eval_relation(CAPITAL, "Peru") == "Lima"


def test_unknown_input_is_undefined():
    assert eval_relation(CAPITAL, "xyzzy") == UNDEFINED
    assert eval_relation(CAPITAL, "") == UNDEFINED


def test_lookup_is_case_and_space_insensitive():
    assert eval_relation(CAPITAL, "gErMaNy") == "Berlin"
    assert eval_relation(CAPITAL, "  united   kingdom ") == eval_relation(CAPITAL, "United Kingdom") != UNDEFINED


def test_shipped_tables_load_and_cover_required_relations():
    names = set(TABLES)
    assert len(names) >= 10
    assert {"country_capital", "country_continent", "city_country", "gemstone_color", "country_language",
            "country_border", "us_city_state", "river_continent", "animal_habitat", "country_flag_colors"} <= names
    assert len(TABLES["country_capital"].pairs) >= 150


def test_every_corruption_tag_is_a_nonempty_subset_of_keys():
    for t in TABLES.values():
        for tag in t.corruptions:
            assert t.tags[tag] and set(t.tags[tag]) <= set(t.pairs)


def test_tag_referencing_missing_key_is_rejected(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"name": "bad", "pairs": {"a": "b"}, "tags": {"t": ["a", "zz"]}}))
    with pytest.raises(FactTableError, match="zz"):
        load_fact_table(p)


def test_schema_violations_are_rejected(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"name": "bad", "pairs": {"a": 1}, "tags": {}}))
    with pytest.raises(FactTableError, match="bad.json"):
        load_fact_table(p)
    p.write_text(json.dumps({"name": "bad", "pairs": {"A": "1", "a": "2"}, "tags": {}}))
    with pytest.raises(FactTableError, match="duplicate"):
        load_fact_table(p)
    p.write_text("{not json")
    with pytest.raises(FactTableError):
        load_fact_table(p)


def test_duplicate_table_names_rejected(tmp_path):
    for n in ("a", "b"):
        (tmp_path / f"{n}.json").write_text(json.dumps({"name": "same", "pairs": {}, "tags": {}}))
    with pytest.raises(FactTableError, match="duplicate table"):
        load_fact_tables(tmp_path)


def test_reload_from_directory_equals_default():
    assert load_fact_tables(DATA_DIR).keys() == TABLES.keys()


CORRUPT = [(name, tag) for name, t in sorted(TABLES.items()) for tag in t.corruptions]


@pytest.mark.parametrize("name,tag", CORRUPT)
def test_corruption_differs_exactly_on_tagged_subdomain(name, tag):
    t = TABLES[name]
    clean, corrupt = RelationSpec(name), RelationSpec(name, tag)
    for k in t.pairs:
        differs = eval_relation(clean, k) != eval_relation(corrupt, k)
        assert differs == (k in t.tags[tag]), k


@settings(max_examples=100, deadline=None)
@given(st.sampled_from(sorted(TABLES["country_capital"].pairs)))
def test_lookup_pure(key):
    assert eval_relation(CAPITAL, key) == eval_relation(CAPITAL, key) == TABLES["country_capital"].pairs[key]


def test_probe_lexicon_is_sorted_union_of_keys():
    lex = probe_lexicon()
    assert all(words == sorted(words) for words in lex.values())
    assert "Germany" in {w for ws in lex.values() for w in ws}
