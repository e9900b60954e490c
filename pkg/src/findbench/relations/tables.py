from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Mapping, Protocol

UNDEFINED = "undefined"
DATA_DIR = Path(__file__).parent / "data"


class FactTableError(ValueError):
    pass


def normalize_key(s: str) -> str:
    return " ".join(s.strip().casefold().split())


@dataclass(frozen=True)
class FactTable:
    name: str
    pairs: Mapping[str, str]
    tags: Mapping[str, frozenset]
    input_type: str = ""
    relation: str = ""
    tag_text: Mapping[str, str] | None = None
    corruptions: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        lookup = {}
        for k, v in self.pairs.items():
            nk = normalize_key(k)
            if nk in lookup:
                raise FactTableError(f"{self.name}: duplicate key {k!r}")
            lookup[nk] = v
        object.__setattr__(self, "_lookup", lookup)
        tag_of = {}
        for tag, keys in self.tags.items():
            for k in keys:
                if k not in self.pairs:
                    raise FactTableError(f"{self.name}: tag {tag!r} references missing key {k!r}")
                tag_of.setdefault(normalize_key(k), set()).add(tag)
        object.__setattr__(self, "_tag_of", tag_of)
        for tag in self.corruptions:
            if not self.tags.get(tag):
                raise FactTableError(f"{self.name}: corruption tag {tag!r} has no members")

    def get(self, key: str) -> str | None:
        return self._lookup.get(normalize_key(key))

    def in_tag(self, key: str, tag: str) -> bool:
        return tag in self._tag_of.get(normalize_key(key), ())

    def tag_phrase(self, tag: str) -> str:
        if self.tag_text and tag in self.tag_text:
            return self.tag_text[tag]
        return f"inputs tagged {tag}"


@dataclass(frozen=True)
class RelationSpec:
    table: str
    tag: str | None = None

    def to_json(self) -> dict:
        return {"table": self.table, "tag": self.tag}

    @classmethod
    def from_json(cls, obj: dict) -> RelationSpec:
        return cls(obj["table"], obj.get("tag"))


def load_fact_table(path: str | Path) -> FactTable:
    path = Path(path)
    try:
        obj = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FactTableError(f"{path}: {exc}") from exc
    for field in ("name", "pairs", "tags"):
        if field not in obj:
            raise FactTableError(f"{path}: missing field {field!r}")
    pairs = obj["pairs"]
    if not isinstance(pairs, dict) or not all(isinstance(k, str) and isinstance(v, str) for k, v in pairs.items()):
        raise FactTableError(f"{path}: pairs must map strings to strings")
    try:
        return FactTable(
            name=obj["name"],
            pairs=dict(pairs),
            tags={t: frozenset(ks) for t, ks in obj["tags"].items()},
            input_type=obj.get("input_type", ""),
            relation=obj.get("relation", ""),
            tag_text=obj.get("tag_text"),
            corruptions=tuple(obj.get("corruptions", ())),
        )
    except FactTableError as exc:
        raise FactTableError(f"{path}: {exc}") from None


def load_fact_tables(path: str | Path) -> dict[str, FactTable]:
    path = Path(path)
    files = sorted(path.glob("*.json")) if path.is_dir() else [path]
    tables = {}
    for f in files:
        t = load_fact_table(f)
        if t.name in tables:
            raise FactTableError(f"{f}: duplicate table name {t.name!r}")
        tables[t.name] = t
    return tables


@lru_cache(maxsize=1)
def default_tables() -> dict[str, FactTable]:
    return load_fact_tables(DATA_DIR)


def eval_relation(spec: RelationSpec, x: str, tables: Mapping[str, FactTable] | None = None) -> str:
    table = (tables or default_tables())[spec.table]
    value = table.get(x)
    if value is None:
        return UNDEFINED
    if spec.tag is not None and table.in_tag(x, spec.tag):
        return UNDEFINED
    return value


def describe_relation(spec: RelationSpec, tables: Mapping[str, FactTable] | None = None) -> str:
    table = (tables or default_tables())[spec.table]
    text = table.relation or f"applies the {table.name} relation"
    if spec.tag is not None:
        text += f", except for {table.tag_phrase(spec.tag)}, where it returns {UNDEFINED}"
    return text


def probe_lexicon(tables: Mapping[str, FactTable] | None = None) -> dict[str, list[str]]:
    """Word lists per input type: the union of table keys sharing that type."""
    lex: dict[str, set] = {}
    for t in (tables or default_tables()).values():
        lex.setdefault(t.input_type or t.name, set()).update(t.pairs)
    return {k: sorted(v) for k, v in sorted(lex.items())}


class EntityScorer(Protocol):
    """Pluggable backend for association-score functions; none ships with the engine."""

    def score(self, x: str) -> float: ...
