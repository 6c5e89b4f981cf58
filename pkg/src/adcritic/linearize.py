"""Deterministic flattening of structured data into prompt-ready text.

Grammar (one row per line):

    kg row     ->  subject | relation | object
    table row  ->  attribute: value

Separator characters occurring inside fields are escaped: ``|`` as ``\\|``,
``:`` as ``\\:``, backslash as ``\\\\``, and newline as ``\\n``, so the
mapping is a bijection and :func:`delinearize` recovers the exact input.
"""

from __future__ import annotations

from dataclasses import dataclass

from .core import StructKind, StructuredData
from .errors import ParseError

_ESCAPES = {"\\": "\\\\", "|": "\\|", ":": "\\:", "\n": "\\n"}
_UNESCAPES = {"\\": "\\", "|": "|", ":": ":", "n": "\n"}


@dataclass(frozen=True, slots=True)
class LinearizedText:
    text: str
    kind: StructKind

    @property
    def lines(self) -> list[str]:
        return self.text.split("\n") if self.text else []


def _escape(field: str) -> str:
    return "".join(_ESCAPES.get(ch, ch) for ch in field)


def _unescape(field: str) -> str:
    out: list[str] = []
    i = 0
    while i < len(field):
        ch = field[i]
        if ch == "\\":
            if i + 1 >= len(field):
                raise ParseError(f"dangling escape in {field!r}")
            nxt = field[i + 1]
            if nxt not in _UNESCAPES:
                raise ParseError(f"unknown escape \\{nxt} in {field!r}")
            out.append(_UNESCAPES[nxt])
            i += 2
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def _split_unescaped(line: str, sep: str, maxsplit: int = -1) -> list[str]:
    """Split on ``sep`` occurrences not preceded by an odd run of backslashes."""
    parts: list[str] = []
    current: list[str] = []
    backslashes = 0
    for ch in line:
        if ch == sep and backslashes % 2 == 0 and maxsplit != 0:
            parts.append("".join(current))
            current = []
            if maxsplit > 0:
                maxsplit -= 1
            continue
        backslashes = backslashes + 1 if ch == "\\" else 0
        current.append(ch)
    parts.append("".join(current))
    return parts


def linearize(s: StructuredData) -> LinearizedText:
    """Render structured rows one per line, preserving input order."""
    if s.kind is StructKind.KG:
        lines = [" | ".join(_escape(f) for f in row) for row in s.rows]
    else:
        lines = [f"{_escape(a)}: {_escape(v)}" for a, v in s.rows]
    return LinearizedText(text="\n".join(lines), kind=s.kind)


def delinearize(t: LinearizedText) -> StructuredData:
    """Inverse of :func:`linearize` for grammar-conformant text."""
    rows: list[tuple[str, ...]] = []
    for line in t.lines:
        if t.kind is StructKind.KG:
            parts = _split_unescaped(line, "|")
            if len(parts) != 3:
                raise ParseError(f"kg line needs 3 fields, got {len(parts)}: {line!r}")
            rows.append(tuple(_unescape(p.strip()) for p in parts))
        else:
            parts = _split_unescaped(line, ":", maxsplit=1)
            if len(parts) != 2:
                raise ParseError(f"table line needs 'attribute: value': {line!r}")
            rows.append(tuple(_unescape(p.strip()) for p in parts))
    return StructuredData(t.kind, tuple(rows))
