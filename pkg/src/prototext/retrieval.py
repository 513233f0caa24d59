"""Lexical retrieval: inverted index, Okapi BM25, top-m candidates.

Scoring uses the standard Okapi form with ``k1 = 1.2``, ``b = 0.75`` and
the never-negative idf variant ``ln((N - df + 0.5) / (df + 0.5) + 1)``.
Queries are built from the unique tokens of a linearized table, minus
the reserved layout tokens; documents with zero overlap are never
returned.
"""

from __future__ import annotations

import json
import math
from bisect import bisect_left
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .errors import InvalidConfig, ParseError, UnknownDocument
from .tabledata import Corpus, Table, linearize_table
from .tokenization import RESERVED_TOKENS, tokenize

__all__ = [
    "K1",
    "B",
    "InvertedIndex",
    "CandidateSet",
    "tokenize",
    "build_index",
    "bm25_score",
    "retrieve",
    "filter_leakage",
    "save_index",
    "load_index",
]

K1 = 1.2
B = 0.75

INDEX_FORMAT = "prototext-index"
INDEX_VERSION = 1


@dataclass(frozen=True)
class InvertedIndex:
    """Immutable term -> postings map with the global BM25 statistics.

    Posting lists are ``(sentence id, term frequency)`` pairs with ids
    strictly increasing.
    """

    postings: dict[str, tuple[tuple[int, int], ...]]
    doc_lengths: dict[int, int]
    doc_count: int
    avgdl: float


@dataclass(frozen=True)
class CandidateSet:
    """Retrieval output for one table: ids with scores, best first.

    Entries are ordered by descending score, ties broken by ascending
    sentence id; every score is strictly positive.
    """

    table_id: int
    entries: tuple[tuple[int, float], ...]

    def ids(self) -> list[int]:
        return [sid for sid, _ in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


def build_index(corpus: Corpus) -> InvertedIndex:
    """Index a corpus. An empty corpus yields a valid zero-document index."""
    raw: dict[str, dict[int, int]] = {}
    doc_lengths: dict[int, int] = {}
    for sentence in corpus:
        doc_lengths[sentence.id] = len(sentence.tokens)
        for tok in sentence.tokens:
            raw.setdefault(tok, {}).setdefault(sentence.id, 0)
            raw[tok][sentence.id] += 1
    postings = {
        term: tuple(sorted(by_doc.items()))
        for term, by_doc in sorted(raw.items())
    }
    n = len(doc_lengths)
    avgdl = sum(doc_lengths.values()) / n if n else 0.0
    return InvertedIndex(postings=postings, doc_lengths=doc_lengths, doc_count=n, avgdl=avgdl)


def _idf(index: InvertedIndex, df: int) -> float:
    return math.log((index.doc_count - df + 0.5) / (df + 0.5) + 1.0)


def _tf_in_posting(posting: tuple[tuple[int, int], ...], doc_id: int) -> int:
    pos = bisect_left(posting, (doc_id,))
    if pos < len(posting) and posting[pos][0] == doc_id:
        return posting[pos][1]
    return 0


def bm25_score(index: InvertedIndex, query: Sequence[str], doc_id: int) -> float:
    """Okapi BM25 score of one document for a query.

    Duplicate query terms are collapsed before scoring, keeping first
    occurrence order so the floating-point sum is reproducible.
    """
    if doc_id not in index.doc_lengths:
        raise UnknownDocument(f"document {doc_id} is not indexed")
    dl = index.doc_lengths[doc_id]
    norm = K1 * (1.0 - B + B * dl / index.avgdl) if index.avgdl > 0 else K1
    score = 0.0
    for term in dict.fromkeys(query):
        posting = index.postings.get(term)
        if not posting:
            continue
        tf = _tf_in_posting(posting, doc_id)
        if tf == 0:
            continue
        score += _idf(index, len(posting)) * tf * (K1 + 1.0) / (tf + norm)
    return score


def table_query(table: Table) -> list[str]:
    """Unique linearization tokens of a table, reserved tokens removed."""
    return [t for t in dict.fromkeys(linearize_table(table)) if t not in RESERVED_TOKENS]


def retrieve(index: InvertedIndex, table: Table, m: int, *, table_id: int = 0) -> CandidateSet:
    """Return up to ``m`` positive-scoring documents for a table.

    Term-at-a-time accumulation in query order; per-document sums are
    therefore bit-identical to :func:`bm25_score` on the same query.
    """
    if m < 1:
        raise InvalidConfig(f"m must be >= 1, got {m}")
    acc: dict[int, float] = {}
    for term in table_query(table):
        posting = index.postings.get(term)
        if not posting:
            continue
        idf = _idf(index, len(posting))
        for doc_id, tf in posting:
            dl = index.doc_lengths[doc_id]
            norm = K1 * (1.0 - B + B * dl / index.avgdl)
            acc[doc_id] = acc.get(doc_id, 0.0) + idf * tf * (K1 + 1.0) / (tf + norm)
    ranked = sorted(acc.items(), key=lambda kv: (-kv[1], kv[0]))[:m]
    return CandidateSet(table_id=table_id, entries=tuple(ranked))


def filter_leakage(candidates: CandidateSet, corpus: Corpus, reference: str) -> CandidateSet:
    """Drop candidates whose token sequence equals the reference's.

    Token-level equality makes the filter robust to case and whitespace
    variants of the same sentence. Idempotent.
    """
    ref_tokens = tuple(tokenize(reference))
    kept = tuple(
        (sid, score)
        for sid, score in candidates.entries
        if corpus.get(sid).tokens != ref_tokens
    )
    return CandidateSet(table_id=candidates.table_id, entries=kept)


def write_candidate_sets(path: str | Path, candidate_sets: Sequence[CandidateSet]) -> None:
    """One JSON record per table: ``{"table_id", "candidates": [[id, score]]}``."""
    with open(path, "w", encoding="utf-8") as fh:
        for cands in candidate_sets:
            record = {
                "table_id": cands.table_id,
                "candidates": [[sid, score] for sid, score in cands.entries],
            }
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def read_candidate_sets(path: str | Path) -> list[CandidateSet]:
    sets: list[CandidateSet] = []
    spath = str(path)
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", line_no, spath) from None
            if "table_id" not in record or "candidates" not in record:
                raise ParseError("candidate record missing fields", line_no, spath)
            entries = tuple((int(sid), float(score)) for sid, score in record["candidates"])
            sets.append(CandidateSet(table_id=int(record["table_id"]), entries=entries))
    return sets


def save_index(path: str | Path, index: InvertedIndex) -> None:
    """Persist an index as versioned JSONL; reload is bit-exact."""
    with open(path, "w", encoding="utf-8") as fh:
        header = {
            "format": INDEX_FORMAT,
            "version": INDEX_VERSION,
            "doc_count": index.doc_count,
            "avgdl": index.avgdl,
        }
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        lengths = sorted(index.doc_lengths.items())
        fh.write(json.dumps({"doc_lengths": lengths}) + "\n")
        for term in sorted(index.postings):
            entry = {"term": term, "postings": [list(p) for p in index.postings[term]]}
            fh.write(json.dumps(entry, sort_keys=True) + "\n")


def load_index(path: str | Path) -> InvertedIndex:
    spath = str(path)
    with open(path, encoding="utf-8") as fh:
        try:
            header = json.loads(fh.readline())
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid index header ({exc.msg})", 1, spath) from None
        if header.get("format") != INDEX_FORMAT or header.get("version") != INDEX_VERSION:
            raise ParseError("not a recognized index file", 1, spath)
        lengths_line = json.loads(fh.readline())
        doc_lengths = {int(sid): int(n) for sid, n in lengths_line["doc_lengths"]}
        postings: dict[str, tuple[tuple[int, int], ...]] = {}
        for line_no, line in enumerate(fh, start=3):
            line = line.strip()
            if not line:
                continue
            entry = _load_posting_line(line, line_no, spath)
            postings[entry["term"]] = tuple((int(d), int(tf)) for d, tf in entry["postings"])
    return InvertedIndex(
        postings=postings,
        doc_lengths=doc_lengths,
        doc_count=int(header["doc_count"]),
        avgdl=float(header["avgdl"]),
    )


def _load_posting_line(line: str, line_no: int, path: str) -> dict:
    try:
        entry = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid postings line ({exc.msg})", line_no, path) from None
    if "term" not in entry or "postings" not in entry:
        raise ParseError("postings line missing fields", line_no, path)
    return entry
