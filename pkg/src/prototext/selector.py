"""Trainable prototype selector.

The selector scores a (table, sentence) pair by mean-pooling learned
token embeddings over the concatenated sequence

    [linearize(table); <sep>; sentence]

and applying a linear projection: ``f = w . mean(E[tokens]) + b``. It is
trained with a margin-ranking objective: for each example the reference
must outscore each of k sampled negative candidates by a margin of 1,

    L = sum_j max(0, 1 - f(T, y) + f(T, R_j)),

with gradients computed analytically (the hinge subgradient at exactly
zero slack is taken to be 0). Training is deterministic for a fixed
seed: embeddings start uniform in (-0.1, 0.1), projection and bias at
zero, updates use Adam, and the k negatives are resampled every epoch
from a per-epoch seeded generator.

Scoring and selection never mutate the model, so a trained model can be
shared across threads; training runs single-threaded on its own arrays.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidConfig, InsufficientNegatives, ParseError
from .optim import Adam
from .retrieval import CandidateSet, InvertedIndex, filter_leakage, retrieve
from .tabledata import Corpus, Example, Table, linearize_table
from .tokenization import SEP, UNK, tokenize
from .vocab import Vocabulary

log = logging.getLogger(__name__)

SELECTOR_FORMAT = "prototext-selector"
SELECTOR_VERSION = 1


@dataclass(frozen=True)
class SelectorModel:
    """Mean-pooled embedding scorer: ``f = w . h + b``."""

    vocab: Vocabulary
    embeddings: np.ndarray  # (V, d) float64
    projection: np.ndarray  # (d,) float64
    bias: float

    def __post_init__(self):
        if UNK not in self.vocab or SEP not in self.vocab:
            raise InvalidConfig("selector vocabulary must contain <unk> and <sep>")
        if self.embeddings.ndim != 2 or self.embeddings.shape[0] != len(self.vocab):
            raise InvalidConfig("embedding matrix shape does not match vocabulary")
        if self.embeddings.shape[1] < 1:
            raise InvalidConfig("embedding dimension must be >= 1")
        if not (
            np.all(np.isfinite(self.embeddings))
            and np.all(np.isfinite(self.projection))
            and np.isfinite(self.bias)
        ):
            raise InvalidConfig("selector parameters must be finite")

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]


@dataclass(frozen=True)
class SelectorTrainConfig:
    k: int = 5
    margin: float = 1.0
    learning_rate: float = 1e-2
    epochs: int = 30
    seed: int = 0
    dim: int = 32

    def __post_init__(self):
        if self.k < 1:
            raise InvalidConfig(f"k must be >= 1, got {self.k}")
        if self.margin != 1.0:
            raise InvalidConfig("the ranking margin is fixed at 1")
        if self.learning_rate <= 0:
            raise InvalidConfig("learning rate must be positive")
        if self.epochs < 0:
            raise InvalidConfig("epochs must be >= 0")
        if self.dim < 1:
            raise InvalidConfig("embedding dimension must be >= 1")
        if self.seed < 0:
            raise InvalidConfig("seed must be a non-negative integer")


@dataclass(frozen=True)
class PrototypeSet:
    """The n candidates with the highest selector scores, best first."""

    table_id: int
    entries: tuple[tuple[int, float], ...]
    n: int

    def ids(self) -> list[int]:
        return [sid for sid, _ in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class SelectorGradients:
    embeddings: np.ndarray
    projection: np.ndarray
    bias: float


@dataclass(frozen=True)
class AugmentedRecord:
    """One (table, prototypes, reference) training record for the generator."""

    table_id: int
    table: Table
    prototype_ids: tuple[int, ...]
    prototypes: tuple[str, ...]
    reference: str


def _pair_ids(vocab: Vocabulary, table_ids: Sequence[int], sentence: Sequence[str]) -> list[int]:
    return list(table_ids) + [vocab.sep_id] + vocab.ids(sentence)


def _table_ids(model_vocab: Vocabulary, table: Table) -> list[int]:
    return model_vocab.ids(linearize_table(table))


def _pooled(emb: np.ndarray, ids: Sequence[int]) -> np.ndarray:
    # summing in sorted-id order makes the mean bit-identical under any
    # permutation of the input tokens
    return emb[np.sort(np.asarray(ids, dtype=np.intp))].mean(axis=0)


def encode_pair(model: SelectorModel, table: Table, sentence: Sequence[str]) -> np.ndarray:
    """Mean embedding of ``[linearize(table); <sep>; sentence]``.

    Out-of-vocabulary tokens fall back to the ``<unk>`` row; an empty
    sentence leaves the table and separator positions in the mean.
    """
    ids = _pair_ids(model.vocab, _table_ids(model.vocab, table), sentence)
    return _pooled(model.embeddings, ids)


def score_pair(model: SelectorModel, table: Table, sentence: Sequence[str]) -> float:
    return float(model.projection @ encode_pair(model, table, sentence) + model.bias)


def _score_ids(emb: np.ndarray, w: np.ndarray, b: float, ids: Sequence[int]) -> float:
    return float(w @ _pooled(emb, ids) + b)


def _hinge_terms(
    emb: np.ndarray,
    w: np.ndarray,
    b: float,
    ids_y: Sequence[int],
    ids_negatives: Sequence[Sequence[int]],
) -> tuple[float, list[float]]:
    f_y = _score_ids(emb, w, b, ids_y)
    slacks = [1.0 - f_y + _score_ids(emb, w, b, ids_j) for ids_j in ids_negatives]
    return f_y, slacks


def margin_loss(
    model: SelectorModel,
    table: Table,
    reference: Sequence[str],
    negatives: Sequence[Sequence[str]],
) -> float:
    """Summed hinge loss of the reference against each negative."""
    if len(negatives) == 0:
        raise InvalidConfig("margin loss needs at least one negative")
    t_ids = _table_ids(model.vocab, table)
    ids_y = _pair_ids(model.vocab, t_ids, reference)
    ids_negs = [_pair_ids(model.vocab, t_ids, neg) for neg in negatives]
    _, slacks = _hinge_terms(model.embeddings, model.projection, model.bias, ids_y, ids_negs)
    return sum(max(0.0, s) for s in slacks)


def _loss_and_grads(
    emb: np.ndarray,
    w: np.ndarray,
    b: float,
    ids_y: Sequence[int],
    ids_negs: Sequence[Sequence[int]],
) -> tuple[float, np.ndarray, np.ndarray]:
    """Hinge loss plus analytic gradients w.r.t. embeddings and projection.

    The bias gradient is identically zero because b cancels inside every
    slack term. The embedding gradient for vocabulary row v is
    ``c_v * w`` where c_v accumulates occurrence/length weights over the
    active hinge sequences.
    """
    _, slacks = _hinge_terms(emb, w, b, ids_y, ids_negs)
    loss = 0.0
    d_w = np.zeros_like(w)
    coeff = np.zeros(emb.shape[0])
    h_y = _pooled(emb, ids_y)
    inv_len_y = 1.0 / len(ids_y)
    for ids_j, slack in zip(ids_negs, slacks):
        if slack <= 0.0:
            continue
        loss += slack
        d_w += _pooled(emb, ids_j) - h_y
        np.add.at(coeff, ids_j, 1.0 / len(ids_j))
        np.add.at(coeff, ids_y, -inv_len_y)
    d_emb = np.outer(coeff, w)
    return loss, d_emb, d_w


def margin_loss_grad(
    model: SelectorModel,
    table: Table,
    reference: Sequence[str],
    negatives: Sequence[Sequence[str]],
) -> SelectorGradients:
    """Exact gradients of :func:`margin_loss` for every parameter group."""
    if len(negatives) == 0:
        raise InvalidConfig("margin loss needs at least one negative")
    t_ids = _table_ids(model.vocab, table)
    ids_y = _pair_ids(model.vocab, t_ids, reference)
    ids_negs = [_pair_ids(model.vocab, t_ids, neg) for neg in negatives]
    _, d_emb, d_w = _loss_and_grads(
        model.embeddings, model.projection, model.bias, ids_y, ids_negs
    )
    return SelectorGradients(embeddings=d_emb, projection=d_w, bias=0.0)


TrainExample = tuple[Table, str, CandidateSet]


def train_selector(
    examples: Sequence[TrainExample],
    corpus: Corpus,
    config: SelectorTrainConfig,
) -> tuple[SelectorModel, list[float]]:
    """Fit the selector on (table, reference, candidates) triples.

    Candidates are assumed to be leakage-filtered already. Negatives are
    drawn uniformly without replacement from each example's candidate
    set, reseeded per epoch, and parameters are updated per example with
    Adam. Returns the trained model and the mean loss of each epoch.
    """
    for table, _, cands in examples:
        if len(cands) < config.k:
            raise InsufficientNegatives(
                f"example {cands.table_id} has {len(cands)} candidates, needs k={config.k}"
            )

    vocab = Vocabulary.build(
        [s.tokens for s in corpus]
        + [linearize_table(table) for table, _, _ in examples]
        + [tokenize(ref) for _, ref, _ in examples]
    )
    rng = np.random.default_rng(config.seed)
    emb = rng.uniform(-0.1, 0.1, size=(len(vocab), config.dim))
    w = np.zeros(config.dim)
    b = np.zeros(1)

    table_ids = [vocab.ids(linearize_table(table)) for table, _, _ in examples]
    ref_ids = [
        _pair_ids(vocab, t_ids, tokenize(ref))
        for t_ids, (_, ref, _) in zip(table_ids, examples)
    ]
    sent_ids: dict[int, list[int]] = {}

    def candidate_ids(t_ids: list[int], sid: int) -> list[int]:
        if sid not in sent_ids:
            sent_ids[sid] = vocab.ids(corpus.get(sid).tokens)
        return list(t_ids) + [vocab.sep_id] + sent_ids[sid]

    opt = Adam({"emb": emb, "w": w, "b": b}, lr=config.learning_rate)
    epoch_losses: list[float] = []
    for epoch in range(config.epochs):
        ep_rng = np.random.default_rng([config.seed, epoch])
        total = 0.0
        for i, (table, _, cands) in enumerate(examples):
            picks = ep_rng.choice(len(cands), size=config.k, replace=False)
            ids_negs = [
                candidate_ids(table_ids[i], cands.entries[int(p)][0]) for p in picks
            ]
            loss, d_emb, d_w = _loss_and_grads(emb, w, float(b[0]), ref_ids[i], ids_negs)
            opt.step({"emb": d_emb, "w": d_w, "b": np.zeros(1)})
            total += loss
        epoch_losses.append(total / len(examples) if examples else 0.0)
        log.info("selector epoch %d mean loss %.6f", epoch, epoch_losses[-1])
    return SelectorModel(vocab=vocab, embeddings=emb, projection=w, bias=float(b[0])), epoch_losses


def select_top_n(
    model: SelectorModel,
    table: Table,
    candidates: CandidateSet,
    corpus: Corpus,
    n: int,
) -> PrototypeSet:
    """Pick the min(n, |candidates|) candidates with the highest scores.

    Because the selection objective is a sum of per-sentence scores, the
    maximizing subset is exactly the top-n individual scores; ties break
    toward the lower sentence id.
    """
    if n < 1:
        raise InvalidConfig(f"n must be >= 1, got {n}")
    t_ids = _table_ids(model.vocab, table)
    scored = []
    for sid, _ in candidates.entries:
        ids = _pair_ids(model.vocab, t_ids, corpus.get(sid).tokens)
        scored.append((sid, _score_ids(model.embeddings, model.projection, model.bias, ids)))
    scored.sort(key=lambda e: (-e[1], e[0]))
    return PrototypeSet(table_id=candidates.table_id, entries=tuple(scored[:n]), n=n)


def build_augmented_dataset(
    examples: Sequence[Example],
    index: InvertedIndex,
    model: SelectorModel,
    corpus: Corpus,
    m: int,
    n: int,
) -> list[AugmentedRecord]:
    """Retrieve, leakage-filter, and select prototypes for every example.

    Examples with no surviving candidates get an empty prototype set;
    the generator then conditions on the table alone.
    """
    records: list[AugmentedRecord] = []
    for ex in examples:
        cands = retrieve(index, ex.table, m, table_id=ex.id)
        cands = filter_leakage(cands, corpus, ex.reference)
        if len(cands) == 0:
            chosen: tuple[int, ...] = ()
        else:
            chosen = tuple(select_top_n(model, ex.table, cands, corpus, n).ids())
        records.append(
            AugmentedRecord(
                table_id=ex.id,
                table=ex.table,
                prototype_ids=chosen,
                prototypes=tuple(corpus.get(sid).text for sid in chosen),
                reference=ex.reference,
            )
        )
    return records


def write_augmented_dataset(path: str | Path, records: Iterable[AugmentedRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(
                json.dumps(
                    {
                        "table_id": rec.table_id,
                        "prototype_ids": list(rec.prototype_ids),
                        "prototypes": list(rec.prototypes),
                        "reference": rec.reference,
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def read_augmented_dataset(path: str | Path, examples: Sequence[Example]) -> list[AugmentedRecord]:
    """Join an augmented-dataset file back with its tables file."""
    by_id = {ex.id: ex for ex in examples}
    records: list[AugmentedRecord] = []
    spath = str(path)
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", line_no, spath) from None
            table_id = raw.get("table_id")
            if table_id not in by_id:
                raise ParseError(f"table_id {table_id} not present in tables file", line_no, spath)
            records.append(
                AugmentedRecord(
                    table_id=table_id,
                    table=by_id[table_id].table,
                    prototype_ids=tuple(raw.get("prototype_ids", [])),
                    prototypes=tuple(raw.get("prototypes", [])),
                    reference=raw.get("reference", by_id[table_id].reference),
                )
            )
    return records


def save_selector(path: str | Path, model: SelectorModel) -> None:
    """Write the model as versioned JSON; float64 values survive bit-exactly."""
    payload = {
        "format": SELECTOR_FORMAT,
        "version": SELECTOR_VERSION,
        "tokens": list(model.vocab.tokens),
        "embeddings": model.embeddings.tolist(),
        "projection": model.projection.tolist(),
        "bias": model.bias,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, allow_nan=False)
        fh.write("\n")


def load_selector(path: str | Path) -> SelectorModel:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != SELECTOR_FORMAT or payload.get("version") != SELECTOR_VERSION:
        raise ParseError("not a recognized selector model file", path=str(path))
    return SelectorModel(
        vocab=Vocabulary.from_tokens(payload["tokens"]),
        embeddings=np.array(payload["embeddings"], dtype=np.float64),
        projection=np.array(payload["projection"], dtype=np.float64),
        bias=float(payload["bias"]),
    )
