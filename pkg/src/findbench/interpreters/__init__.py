"""Reference interpreters that explore a function by querying it."""

from findbench.interpreters.base import Interpretation, read_jsonl, write_jsonl
from findbench.interpreters.numeric import interpret_numeric
from findbench.interpreters.relations import interpret_relation
from findbench.interpreters.strings import interpret_string

INTERPRETERS = {
    "numeric-ref": ("numeric", interpret_numeric),
    "string-ref": ("strings", interpret_string),
    "relation-ref": ("relations", interpret_relation),
}

__all__ = [
    "INTERPRETERS",
    "Interpretation",
    "interpret_numeric",
    "interpret_relation",
    "interpret_string",
    "read_jsonl",
    "write_jsonl",
]
