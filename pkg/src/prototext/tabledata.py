"""Data model for tables, examples, and sentence corpora, plus JSONL I/O.

File formats (one JSON object per line, UTF-8):

* tables file:  ``{"id": int, "pairs": [[attr, value], ...], "reference": str}``
* corpus file:  ``{"id": int, "text": str}``

All types are immutable after construction and safe to share across
threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

from .errors import DuplicateId, InvalidTable, ParseError, UnknownDocument
from .tokenization import ATTR_DELIM, PAIR_DELIM, tokenize


@dataclass(frozen=True)
class AttributeValuePair:
    """One attribute-value cell of a table."""

    attribute: str
    value: str

    def __post_init__(self):
        if not self.attribute.strip():
            raise InvalidTable("attribute must be non-empty")
        if not self.value.strip():
            raise InvalidTable(f"value for attribute {self.attribute!r} must be non-empty")


@dataclass(frozen=True)
class Table:
    """An ordered sequence of attribute-value pairs."""

    pairs: tuple[AttributeValuePair, ...]

    def __post_init__(self):
        object.__setattr__(self, "pairs", tuple(self.pairs))
        if len(self.pairs) == 0:
            raise InvalidTable("a table needs at least one attribute-value pair")

    @classmethod
    def from_pairs(cls, raw: Iterable[tuple[str, str]]) -> "Table":
        return cls(tuple(AttributeValuePair(a, v) for a, v in raw))


@dataclass(frozen=True)
class Example:
    """A labelled table: the structured input plus its gold sentence."""

    id: int
    table: Table
    reference: str


@dataclass(frozen=True)
class Sentence:
    """A corpus sentence with its token sequence cached at load time."""

    id: int
    text: str
    tokens: tuple[str, ...]

    @classmethod
    def from_text(cls, sid: int, text: str) -> "Sentence":
        return cls(sid, text, tuple(tokenize(text)))


class Corpus:
    """An id-addressable pool of sentences, kept in file order."""

    def __init__(self, sentences: Iterable[Sentence]):
        self.sentences: tuple[Sentence, ...] = tuple(sentences)
        self._by_id: dict[int, Sentence] = {}
        for s in self.sentences:
            if s.id in self._by_id:
                raise DuplicateId(s.id)
            self._by_id[s.id] = s

    def __len__(self) -> int:
        return len(self.sentences)

    def __iter__(self) -> Iterator[Sentence]:
        return iter(self.sentences)

    def __contains__(self, sid: int) -> bool:
        return sid in self._by_id

    def get(self, sid: int) -> Sentence:
        try:
            return self._by_id[sid]
        except KeyError:
            raise UnknownDocument(f"no sentence with id {sid} in corpus") from None


def linearize_table(table: Table) -> list[str]:
    """Serialize a table into the token layout ``attr : value | attr : value``.

    Attribute and value strings go through the shared tokenizer; the
    delimiters are reserved tokens, so segment boundaries stay
    recoverable no matter what the cell text contains.
    """
    if len(table.pairs) == 0:  # unreachable through the Table constructor
        raise InvalidTable("cannot linearize an empty table")
    tokens: list[str] = []
    for i, pair in enumerate(table.pairs):
        if i:
            tokens.append(PAIR_DELIM)
        tokens.extend(tokenize(pair.attribute))
        tokens.append(ATTR_DELIM)
        tokens.extend(tokenize(pair.value))
    return tokens


def _loads_line(line: str, line_no: int, path: str) -> dict:
    try:
        record = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON ({exc.msg})", line_no, path) from None
    if not isinstance(record, dict):
        raise ParseError("record is not a JSON object", line_no, path)
    return record


def _require_id(record: dict, line_no: int, path: str) -> int:
    rid = record.get("id")
    if not isinstance(rid, int) or isinstance(rid, bool) or rid < 0:
        raise ParseError("'id' must be a non-negative integer", line_no, path)
    return rid


def parse_tables_file(path: str | Path) -> list[Example]:
    """Read a tables file; ids are validated unique, order is preserved."""
    examples: list[Example] = []
    seen: set[int] = set()
    spath = str(path)
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            record = _loads_line(line, line_no, spath)
            rid = _require_id(record, line_no, spath)
            if rid in seen:
                raise DuplicateId(rid, spath)
            seen.add(rid)
            pairs = record.get("pairs")
            if not isinstance(pairs, list) or not pairs:
                raise ParseError("'pairs' must be a non-empty array", line_no, spath)
            for p in pairs:
                if (
                    not isinstance(p, list)
                    or len(p) != 2
                    or not all(isinstance(x, str) for x in p)
                ):
                    raise ParseError("each pair must be a [attribute, value] string pair", line_no, spath)
            reference = record.get("reference")
            if not isinstance(reference, str):
                raise ParseError("'reference' must be a string", line_no, spath)
            try:
                table = Table.from_pairs([(a, v) for a, v in pairs])
            except InvalidTable as exc:
                raise ParseError(str(exc), line_no, spath) from None
            examples.append(Example(rid, table, reference))
    return examples


def load_corpus(path: str | Path) -> Corpus:
    """Read a corpus file; tokens are precomputed once per sentence."""
    sentences: list[Sentence] = []
    seen: set[int] = set()
    spath = str(path)
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            record = _loads_line(line, line_no, spath)
            rid = _require_id(record, line_no, spath)
            if rid in seen:
                raise DuplicateId(rid, spath)
            seen.add(rid)
            text = record.get("text")
            if not isinstance(text, str):
                raise ParseError("'text' must be a string", line_no, spath)
            sentences.append(Sentence.from_text(rid, text))
    return Corpus(sentences)


def write_tables_file(path: str | Path, examples: Iterable[Example]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            record = {
                "id": ex.id,
                "pairs": [[p.attribute, p.value] for p in ex.table.pairs],
                "reference": ex.reference,
            }
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def write_corpus(path: str | Path, sentences: Iterable[Sentence]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in sentences:
            fh.write(json.dumps({"id": s.id, "text": s.text}, sort_keys=True) + "\n")
