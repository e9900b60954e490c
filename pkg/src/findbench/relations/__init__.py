"""Fact-table relation functions with optional subdomain corruption."""

from findbench.relations.tables import (
    UNDEFINED,
    FactTable,
    FactTableError,
    RelationSpec,
    default_tables,
    describe_relation,
    eval_relation,
    load_fact_table,
    load_fact_tables,
    probe_lexicon,
)

__all__ = [
    "UNDEFINED",
    "FactTable",
    "FactTableError",
    "RelationSpec",
    "default_tables",
    "describe_relation",
    "eval_relation",
    "load_fact_table",
    "load_fact_tables",
    "probe_lexicon",
]
