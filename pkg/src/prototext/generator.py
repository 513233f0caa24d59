"""Conditional autoregressive generator with a content-aware objective.

The model is intentionally small: token embeddings plus learned position
embeddings feed one causal single-head self-attention block (query, key,
value, and output projections), a residual two-layer feed-forward with a
tanh nonlinearity, and a linear projection to vocabulary logits. There
are no bias vectors and no layer normalization, so every parameter is a
matrix and exact reverse-mode gradients stay short enough to audit by
hand. The output projection starts at zero, which makes a freshly
initialized model emit the uniform distribution.

Given a conditioning sequence X = [<bos>; table; <sep>; S_1; ...] and a
target sequence y (reference tokens with <eos> appended), training
minimizes

    L = L_LM + L_CA
    L_LM = -sum_i log p(y_i | y_<i; X)
    L_CA = -sum_i sum_{t in N} log(1 - p(t | y_<i; X))

where N is the set of token types that occur in some prototype but not
in y, minus the reserved layout tokens. 1 - p is clamped at 1e-12 before
the log. L_CA pushes probability away from prototype content the
reference did not use, which is what keeps the generator from copying
irrelevant prototype material.

Inference (next_token_dist, decode_greedy) is read-only on the model and
safe to run concurrently; training mutates the parameter arrays in a
fixed single-threaded update order.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InvalidConfig, InputTooLong, ParseError
from .optim import Adam
from .selector import AugmentedRecord
from .tabledata import Table, linearize_table
from .tokenization import RESERVED_TOKENS, tokenize
from .vocab import Vocabulary

log = logging.getLogger(__name__)

GENERATOR_FORMAT = "prototext-generator"
GENERATOR_VERSION = 1

PARAM_KEYS = (
    "tok_emb",
    "pos_emb",
    "w_query",
    "w_key",
    "w_value",
    "w_attn_out",
    "w_ff_in",
    "w_ff_out",
    "w_out",
)

CA_CLAMP = 1e-12


@dataclass(frozen=True)
class GeneratorTrainConfig:
    learning_rate: float = 3e-3
    epochs: int = 30
    seed: int = 0
    dim: int = 64
    max_context: int = 256
    max_decode_len: int = 64
    ca_enabled: bool = True

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise InvalidConfig("learning rate must be positive")
        if self.epochs < 0:
            raise InvalidConfig("epochs must be >= 0")
        if self.dim < 1 or self.max_context < 2 or self.max_decode_len < 1:
            raise InvalidConfig("model size fields must be positive")
        if self.seed < 0:
            raise InvalidConfig("seed must be a non-negative integer")


@dataclass(frozen=True)
class ConditioningInput:
    """Token ids of [<bos>; table; <sep>; S_1; <sep>; ...] with segment info."""

    ids: tuple[int, ...]
    table_len: int
    prototype_spans: tuple[tuple[int, int], ...]

    def __len__(self) -> int:
        return len(self.ids)


@dataclass(frozen=True)
class GeneratorModel:
    vocab: Vocabulary
    max_context: int
    params: dict[str, np.ndarray]

    def __post_init__(self):
        missing = set(PARAM_KEYS) - set(self.params)
        if missing:
            raise InvalidConfig(f"generator parameters missing: {sorted(missing)}")
        if self.params["tok_emb"].shape[0] != len(self.vocab):
            raise InvalidConfig("token embedding rows do not match the vocabulary")
        if self.params["pos_emb"].shape[0] != self.max_context:
            raise InvalidConfig("position embedding rows do not match max_context")
        for key in PARAM_KEYS:
            if not np.all(np.isfinite(self.params[key])):
                raise InvalidConfig(f"generator parameter {key} is not finite")

    @property
    def dim(self) -> int:
        return self.params["tok_emb"].shape[1]


def init_generator(vocab: Vocabulary, config: GeneratorTrainConfig) -> GeneratorModel:
    """Seeded initialization; the zero output projection makes the
    next-token distribution exactly uniform before any update."""
    rng = np.random.default_rng(config.seed)
    d = config.dim
    v = len(vocab)

    def u(shape):
        return rng.uniform(-0.1, 0.1, size=shape)

    params = {
        "tok_emb": u((v, d)),
        "pos_emb": u((config.max_context, d)),
        "w_query": u((d, d)),
        "w_key": u((d, d)),
        "w_value": u((d, d)),
        "w_attn_out": u((d, d)),
        "w_ff_in": u((d, 2 * d)),
        "w_ff_out": u((2 * d, d)),
        "w_out": np.zeros((d, v)),
    }
    return GeneratorModel(vocab=vocab, max_context=config.max_context, params=params)


def build_conditioning(
    table: Table,
    prototypes: Sequence[Sequence[str]],
    vocab: Vocabulary,
    max_len: int,
) -> ConditioningInput:
    """Assemble the conditioning ids, truncating prototypes to fit.

    The table segment is never truncated; if <bos> plus the linearized
    table alone exceed the budget the input is rejected.
    """
    table_ids = vocab.ids(linearize_table(table))
    ids = [vocab.bos_id] + table_ids
    if len(ids) > max_len:
        raise InputTooLong(
            f"linearized table needs {len(ids)} positions, budget is {max_len}"
        )
    spans = []
    for proto in prototypes:
        ids.append(vocab.sep_id)
        start = len(ids)
        ids.extend(vocab.ids(proto))
        spans.append((start, len(ids)))
    ids = ids[:max_len]
    clipped = tuple(
        (start, min(end, max_len)) for start, end in spans if start < max_len
    )
    return ConditioningInput(ids=tuple(ids), table_len=len(table_ids), prototype_spans=clipped)


def _forward(params: dict[str, np.ndarray], ids: Sequence[int]):
    n = len(ids)
    d = params["tok_emb"].shape[1]
    x0 = params["tok_emb"][list(ids)] + params["pos_emb"][:n]
    q = x0 @ params["w_query"]
    k = x0 @ params["w_key"]
    v = x0 @ params["w_value"]
    scores = (q @ k.T) / math.sqrt(d)
    causal = np.tril(np.ones((n, n), dtype=bool))
    scores = np.where(causal, scores, -np.inf)
    shifted = scores - scores.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    att = expd / expd.sum(axis=1, keepdims=True)
    ctx = att @ v
    x1 = x0 + ctx @ params["w_attn_out"]
    a = np.tanh(x1 @ params["w_ff_in"])
    x2 = x1 + a @ params["w_ff_out"]
    logits = x2 @ params["w_out"]
    cache = (list(ids), x0, q, k, v, att, ctx, x1, a, x2)
    return logits, cache


def _backward(params: dict[str, np.ndarray], cache, d_logits: np.ndarray) -> dict[str, np.ndarray]:
    ids, x0, q, k, v, att, ctx, x1, a, x2 = cache
    n = len(ids)
    d = params["tok_emb"].shape[1]
    grads: dict[str, np.ndarray] = {}

    grads["w_out"] = x2.T @ d_logits
    d_x2 = d_logits @ params["w_out"].T

    d_x1 = d_x2.copy()
    d_a = d_x2 @ params["w_ff_out"].T
    grads["w_ff_out"] = a.T @ d_x2
    d_u = d_a * (1.0 - a * a)
    grads["w_ff_in"] = x1.T @ d_u
    d_x1 += d_u @ params["w_ff_in"].T

    d_ctx = d_x1 @ params["w_attn_out"].T
    grads["w_attn_out"] = ctx.T @ d_x1
    d_x0 = d_x1.copy()

    d_att = d_ctx @ v.T
    d_v = att.T @ d_ctx
    d_scores = att * (d_att - np.sum(d_att * att, axis=1, keepdims=True))
    g = d_scores / math.sqrt(d)
    d_q = g @ k
    d_k = g.T @ q
    d_x0 += d_q @ params["w_query"].T
    d_x0 += d_k @ params["w_key"].T
    d_x0 += d_v @ params["w_value"].T
    grads["w_query"] = x0.T @ d_q
    grads["w_key"] = x0.T @ d_k
    grads["w_value"] = x0.T @ d_v

    grads["tok_emb"] = np.zeros_like(params["tok_emb"])
    np.add.at(grads["tok_emb"], ids, d_x0)
    grads["pos_emb"] = np.zeros_like(params["pos_emb"])
    grads["pos_emb"][:n] = d_x0
    return grads


def _log_softmax(rows: np.ndarray) -> np.ndarray:
    shifted = rows - rows.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def losses_from_ids(
    model: GeneratorModel,
    x_ids: Sequence[int],
    y_ids: Sequence[int],
    negative_ids: Sequence[int] = (),
) -> tuple[float, float]:
    """LM and content-aware loss for one id-level sequence pair."""
    lm, ca, _ = _losses_core(model, x_ids, y_ids, negative_ids, want_grads=False)
    return lm, ca


def loss_and_grads(
    model: GeneratorModel,
    x_ids: Sequence[int],
    y_ids: Sequence[int],
    negative_ids: Sequence[int],
    ca_enabled: bool,
) -> tuple[float, dict[str, np.ndarray]]:
    """Total loss and exact gradients for one training record."""
    lm, ca, grads = component_loss_and_grads(
        model,
        x_ids,
        y_ids,
        negative_ids if ca_enabled else (),
        include_lm=True,
        include_ca=ca_enabled,
    )
    total = lm + ca if ca_enabled else lm
    return total, grads


def component_loss_and_grads(
    model: GeneratorModel,
    x_ids: Sequence[int],
    y_ids: Sequence[int],
    negative_ids: Sequence[int],
    include_lm: bool,
    include_ca: bool,
) -> tuple[float, float, dict[str, np.ndarray]]:
    """Both loss terms plus exact gradients of the selected combination.

    The gradient dict corresponds to ``include_lm * L_LM +
    include_ca * L_CA``, which lets either objective be checked in
    isolation.
    """
    lm, ca, grads = _losses_core(
        model, x_ids, y_ids, negative_ids, want_grads=True,
        include_lm=include_lm, include_ca=include_ca,
    )
    return lm, ca, grads


def _losses_core(
    model: GeneratorModel,
    x_ids: Sequence[int],
    y_ids: Sequence[int],
    negative_ids: Sequence[int],
    want_grads: bool,
    include_lm: bool = True,
    include_ca: bool = True,
):
    if len(y_ids) == 0:
        raise InvalidConfig("target sequence must be non-empty")
    seq = list(x_ids) + list(y_ids)
    if len(seq) > model.max_context:
        raise InputTooLong(
            f"sequence needs {len(seq)} positions, max_context is {model.max_context}"
        )
    logits, cache = _forward(model.params, seq)
    first = len(x_ids) - 1
    rows = logits[first : first + len(y_ids)]
    logp = _log_softmax(rows)
    probs = np.exp(logp)
    targets = np.asarray(list(y_ids))
    r_idx = np.arange(len(y_ids))
    lm = float(-logp[r_idx, targets].sum())

    neg = sorted(set(int(t) for t in negative_ids))
    ca = 0.0
    one_minus = None
    if neg:
        p_neg = probs[:, neg]
        one_minus = 1.0 - p_neg
        ca = float(-np.log(np.maximum(one_minus, CA_CLAMP)).sum())

    if not want_grads:
        return lm, ca, None

    d_rows = np.zeros_like(probs)
    if include_lm:
        d_rows += probs
        d_rows[r_idx, targets] -= 1.0
    if include_ca and neg:
        coef = np.where(one_minus > CA_CLAMP, probs[:, neg] / one_minus, 0.0)
        d_rows[:, neg] += coef
        d_rows -= probs * coef.sum(axis=1, keepdims=True)
    d_logits = np.zeros_like(logits)
    d_logits[first : first + len(y_ids)] = d_rows
    grads = _backward(model.params, cache, d_logits)
    return lm, ca, grads


def negative_token_ids(
    vocab: Vocabulary,
    y_tokens: Sequence[str],
    prototypes: Sequence[Sequence[str]],
) -> list[int]:
    """Vocabulary ids of prototype token types absent from the target.

    Reserved layout tokens never enter the set; out-of-vocabulary
    prototype tokens collapse to <unk>, which is reserved, so they are
    excluded as well. Sorted for deterministic iteration.
    """
    proto_types: set[str] = set()
    for proto in prototypes:
        proto_types.update(proto)
    negatives = proto_types - set(y_tokens)
    reserved_ids = {vocab.id(t) for t in RESERVED_TOKENS if t in vocab}
    ids = {vocab.id(t) for t in negatives} - reserved_ids
    return sorted(ids)


def lm_loss(model: GeneratorModel, cond: ConditioningInput, y: Sequence[str]) -> float:
    """Teacher-forced negative log-likelihood of the target sequence.

    ``y`` is the full target: reference tokens with <eos> appended.
    """
    y_ids = model.vocab.ids(y)
    lm, _ = losses_from_ids(model, cond.ids, y_ids)
    return lm


def ca_loss(
    model: GeneratorModel,
    cond: ConditioningInput,
    y: Sequence[str],
    prototypes: Sequence[Sequence[str]],
) -> float:
    """Unlikelihood penalty on prototype-only token types.

    Exactly zero when every prototype token type also occurs in ``y``
    (the negative set is empty) or when there are no prototypes.
    """
    neg = negative_token_ids(model.vocab, y, prototypes)
    if not neg:
        return 0.0
    y_ids = model.vocab.ids(y)
    _, ca = losses_from_ids(model, cond.ids, y_ids, neg)
    return ca


def total_loss(
    model: GeneratorModel,
    cond: ConditioningInput,
    y: Sequence[str],
    prototypes: Sequence[Sequence[str]],
    ca_enabled: bool,
) -> float:
    y_ids = model.vocab.ids(y)
    neg = negative_token_ids(model.vocab, y, prototypes) if ca_enabled else []
    lm, ca = losses_from_ids(model, cond.ids, y_ids, neg)
    return lm + ca if ca_enabled else lm


def next_token_dist(
    model: GeneratorModel,
    cond: ConditioningInput,
    prefix: Sequence[str],
) -> np.ndarray:
    """Distribution over the vocabulary after consuming X and a prefix."""
    ids = list(cond.ids) + model.vocab.ids(prefix)
    return _dist_for_ids(model, ids)


def _dist_for_ids(model: GeneratorModel, ids: Sequence[int]) -> np.ndarray:
    if len(ids) > model.max_context:
        raise InputTooLong(
            f"sequence needs {len(ids)} positions, max_context is {model.max_context}"
        )
    logits, _ = _forward(model.params, ids)
    return np.exp(_log_softmax(logits[-1:]))[0]


def decode_greedy(model: GeneratorModel, cond: ConditioningInput, max_len: int) -> list[str]:
    """Greedy decoding; stops at <eos> (excluded) or after max_len tokens.

    Argmax ties resolve toward the lowest vocabulary index.
    """
    if len(cond.ids) + max_len > model.max_context:
        raise InputTooLong(
            f"conditioning ({len(cond.ids)}) plus max_len ({max_len}) exceeds "
            f"max_context {model.max_context}"
        )
    ids = list(cond.ids)
    out: list[str] = []
    eos = model.vocab.eos_id
    for _ in range(max_len):
        nxt = int(np.argmax(_dist_for_ids(model, ids)))
        if nxt == eos:
            break
        ids.append(nxt)
        out.append(model.vocab.tokens[nxt])
    return out


def _record_ids(
    vocab: Vocabulary, record: AugmentedRecord, max_context: int
) -> tuple[list[int], list[int], list[int]] | None:
    proto_tokens = [tokenize(p) for p in record.prototypes]
    cond = build_conditioning(record.table, proto_tokens, vocab, max_context)
    y_tokens = tokenize(record.reference)
    y_ids = vocab.ids(y_tokens) + [vocab.eos_id]
    if len(cond.ids) + len(y_ids) > max_context:
        return None
    neg = negative_token_ids(vocab, y_tokens + [vocab.tokens[vocab.eos_id]], proto_tokens)
    return list(cond.ids), y_ids, neg


def train_generator(
    dataset: Sequence[AugmentedRecord],
    config: GeneratorTrainConfig,
    vocab: Vocabulary | None = None,
) -> tuple[GeneratorModel, list[float]]:
    """Train on an augmented dataset; deterministic for a fixed seed.

    Records that do not fit the context window even after prototype
    truncation are skipped with a warning. Returns the model and mean
    per-record loss for each epoch.
    """
    if len(dataset) == 0:
        raise InvalidConfig("generator training needs a non-empty dataset")
    if vocab is None:
        streams: list[list[str]] = []
        for rec in dataset:
            streams.append(linearize_table(rec.table))
            streams.append(tokenize(rec.reference))
            for p in rec.prototypes:
                streams.append(tokenize(p))
        vocab = Vocabulary.build(streams)

    model = init_generator(vocab, config)
    prepared = []
    for rec in dataset:
        ids = _record_ids(vocab, rec, config.max_context)
        if ids is None:
            log.warning(
                "skipping record %d: conditioning plus target exceeds max_context %d",
                rec.table_id,
                config.max_context,
            )
            continue
        prepared.append(ids)
    if not prepared:
        log.warning("no trainable records after length filtering; returning initial model")
        return model, []

    opt = Adam(model.params, lr=config.learning_rate)
    epoch_losses: list[float] = []
    for epoch in range(config.epochs):
        order = np.random.default_rng([config.seed, epoch]).permutation(len(prepared))
        total = 0.0
        for idx in order:
            x_ids, y_ids, neg = prepared[int(idx)]
            loss, grads = loss_and_grads(model, x_ids, y_ids, neg, config.ca_enabled)
            opt.step(grads)
            total += loss
        epoch_losses.append(total / len(prepared))
        log.info("generator epoch %d mean loss %.6f", epoch, epoch_losses[-1])
    return model, epoch_losses


def save_generator(path: str | Path, model: GeneratorModel) -> None:
    payload = {
        "format": GENERATOR_FORMAT,
        "version": GENERATOR_VERSION,
        "max_context": model.max_context,
        "tokens": list(model.vocab.tokens),
        "params": {key: model.params[key].tolist() for key in PARAM_KEYS},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, allow_nan=False)
        fh.write("\n")


def load_generator(path: str | Path) -> GeneratorModel:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != GENERATOR_FORMAT or payload.get("version") != GENERATOR_VERSION:
        raise ParseError("not a recognized generator model file", path=str(path))
    params = {
        key: np.array(values, dtype=np.float64)
        for key, values in payload["params"].items()
    }
    return GeneratorModel(
        vocab=Vocabulary.from_tokens(payload["tokens"]),
        max_context=int(payload["max_context"]),
        params=params,
    )
