"""String operation library and depth-2 string programs.

A program is an ordered tuple of ops; the first op is applied first. Ops are
total on any string (including the empty string an earlier op may produce),
but program inputs are restricted to non-empty lowercase ASCII words.
"""

from __future__ import annotations

import re
import string
from dataclasses import dataclass

ALPHABET = string.ascii_lowercase
VOWELS = frozenset("aeiouAEIOU")
_VALID_INPUT = re.compile(r"[a-z]+")

# op kind -> parameter names
OP_PARAMS: dict[str, tuple[str, ...]] = {
    "capitalize": (),
    "concatenate": ("suffix",),
    "drop_first": (),
    "drop_last": (),
    "duplicate_last": (),
    "lowercase": (),
    "prepend": ("prefix",),
    "remove_duplicates": (),
    "remove_vowels": (),
    "replace": ("old", "new"),
    "reverse": (),
    "rotate_left": ("k",),
    "shift_first": (),
    "shift_last": (),
    "swap_halves": (),
}

OP_KINDS = tuple(sorted(OP_PARAMS))
MAX_AFFIX = 2
ROTATIONS = (1, 2, 3)


class StringDomainError(ValueError):
    """Input outside the engine's string alphabet."""


@dataclass(frozen=True, order=True)
class StringOp:
    kind: str
    args: tuple = ()

    def __post_init__(self) -> None:
        if self.kind not in OP_PARAMS:
            raise ValueError(f"unknown string op {self.kind!r}")
        if len(self.args) != len(OP_PARAMS[self.kind]):
            raise ValueError(f"{self.kind} takes {len(OP_PARAMS[self.kind])} arguments")

    def __str__(self) -> str:
        if not self.args:
            return self.kind
        return f"{self.kind}({', '.join(str(a) for a in self.args)})"


def _shift_char(c: str) -> str:
    if "a" <= c <= "z":
        return chr((ord(c) - 97 + 1) % 26 + 97)
    if "A" <= c <= "Z":
        return chr((ord(c) - 65 + 1) % 26 + 65)
    return c


def apply_op(op: StringOp, s: str) -> str:
    k = op.kind
    if k == "capitalize":
        return s.upper()
    if k == "concatenate":
        return s + op.args[0]
    if k == "drop_first":
        return s[1:]
    if k == "drop_last":
        return s[:-1]
    if k == "duplicate_last":
        return s + s[-1:] if s else s
    if k == "lowercase":
        return s.lower()
    if k == "prepend":
        return op.args[0] + s
    if k == "remove_duplicates":
        return "".join(dict.fromkeys(s))
    if k == "remove_vowels":
        return "".join(c for c in s if c not in VOWELS)
    if k == "replace":
        return s.replace(op.args[0], op.args[1])
    if k == "reverse":
        return s[::-1]
    if k == "rotate_left":
        if not s:
            return s
        r = op.args[0] % len(s)
        return s[r:] + s[:r]
    if k == "shift_first":
        return _shift_char(s[0]) + s[1:] if s else s
    if k == "shift_last":
        return s[:-1] + _shift_char(s[-1]) if s else s
    if k == "swap_halves":
        h = len(s) // 2
        return s[h:] + s[:h]
    raise ValueError(k)


@dataclass(frozen=True, order=True)
class StringProgram:
    ops: tuple[StringOp, ...]

    def __post_init__(self) -> None:
        if len(self.ops) not in (1, 2):
            raise ValueError("string programs have one or two ops")

    def __str__(self) -> str:
        return " -> ".join(str(op) for op in self.ops)


def check_input(s: str) -> None:
    if not isinstance(s, str) or not _VALID_INPUT.fullmatch(s):
        raise StringDomainError(f"input must be a non-empty lowercase a-z string, got {s!r}")


def eval_string(prog: StringProgram, s: str) -> str:
    check_input(s)
    for op in prog.ops:
        s = apply_op(op, s)
    return s


def canonical_key(prog: StringProgram) -> tuple:
    """Tie-break order: size, then op kind, then parameters, op by op."""
    return (len(prog.ops), tuple((op.kind, tuple(str(a) for a in op.args)) for op in prog.ops))


def all_ops(max_affix: int = MAX_AFFIX) -> list[StringOp]:
    """The full bounded op universe, in canonical order."""
    ops: list[StringOp] = []
    affixes = _affixes(max_affix)
    for kind in OP_KINDS:
        if kind in ("concatenate",):
            ops.extend(StringOp(kind, (s,)) for s in affixes)
        elif kind == "prepend":
            ops.extend(StringOp(kind, (s,)) for s in affixes)
        elif kind == "replace":
            ops.extend(StringOp(kind, (a, b)) for a in ALPHABET for b in ALPHABET if a != b)
        elif kind == "rotate_left":
            ops.extend(StringOp(kind, (k,)) for k in ROTATIONS)
        else:
            ops.append(StringOp(kind))
    return ops


def _affixes(max_len: int) -> list[str]:
    out = [""]
    res = []
    for _ in range(max_len):
        out = [p + c for p in out for c in ALPHABET]
        res.extend(out)
    return sorted(res)


# ---------------------------------------------------------------------------
# serialization and descriptions


def op_to_json(op: StringOp) -> dict:
    return {"op": op.kind, "args": list(op.args)}


def to_json(prog: StringProgram) -> list:
    return [op_to_json(op) for op in prog.ops]


def from_json(obj: list) -> StringProgram:
    ops = []
    for item in obj:
        args = tuple(int(a) if item["op"] == "rotate_left" else a for a in item.get("args", []))
        ops.append(StringOp(item["op"], args))
    return StringProgram(tuple(ops))


_OP_TEXT = {
    "capitalize": "converts every letter to uppercase",
    "concatenate": "appends '{0}' to the end",
    "drop_first": "removes the first character",
    "drop_last": "removes the last character",
    "duplicate_last": "repeats the last character once",
    "lowercase": "converts every letter to lowercase",
    "prepend": "adds '{0}' to the front",
    "remove_duplicates": "keeps only the first occurrence of each character",
    "remove_vowels": "deletes all vowels",
    "replace": "replaces every '{0}' with '{1}'",
    "reverse": "reverses the input string",
    "rotate_left": "moves the first {0} character(s) to the end",
    "shift_first": "shifts the first letter one step forward in the alphabet (z wraps to a)",
    "shift_last": "shifts the last letter one step forward in the alphabet (z wraps to a)",
    "swap_halves": "swaps the first and second halves of the string",
}


def describe_op(op: StringOp) -> str:
    return _OP_TEXT[op.kind].format(*op.args)


def describe(prog: StringProgram) -> str:
    if len(prog.ops) == 1:
        return describe_op(prog.ops[0])
    first, second = prog.ops
    return f"first {describe_op(first)}, then {describe_op(second)}"
