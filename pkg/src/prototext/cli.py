"""Command-line interface.

Subcommands mirror the pipeline stages (``index``, ``retrieve``,
``train-selector``, ``select``, ``train-generator``, ``generate``,
``eval``) plus the experiment drivers (``synth``, ``ablate``,
``sweep-n``). Exit codes: 0 success, 1 usage/config error, 2 data
error, 3 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import (
    DataError,
    InvalidConfig,
    InvalidInput,
    StageError,
    UsageError,
)
from .evaluation import evaluate_pairs, sign_test
from .generator import (
    GeneratorTrainConfig,
    build_conditioning,
    decode_greedy,
    load_generator,
    save_generator,
    train_generator,
)
from .pipeline import (
    PipelineConfig,
    VARIANTS,
    load_config,
    run_ablation,
    shared_vocabulary,
    sweep_n,
)
from .retrieval import (
    build_index,
    filter_leakage,
    load_index,
    read_candidate_sets,
    retrieve,
    save_index,
    write_candidate_sets,
)
from .selector import (
    SelectorTrainConfig,
    load_selector,
    read_augmented_dataset,
    save_selector,
    select_top_n,
    train_selector,
    write_augmented_dataset,
    AugmentedRecord,
)
from .synth import SyntheticSpec, synth_benchmark
from .tabledata import load_corpus, parse_tables_file
from .tokenization import tokenize

log = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # noqa: D102 - map argparse failures to exit code 1
        raise UsageError(message)


def _nonneg_int(value: str) -> int:
    try:
        parsed = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {value!r}")
    if parsed < 0:
        raise argparse.ArgumentTypeError("must be non-negative")
    return parsed


def _common_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="JSON config file; explicit flags override it")
    sub.add_argument("--seed", type=_nonneg_int, help="global random seed")
    sub.add_argument("--out-dir", help="directory for run artifacts")


def _dump(path: str, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2, allow_nan=False)
        fh.write("\n")


def _config_section(args, section: str) -> dict:
    if not args.config:
        return {}
    with open(args.config, encoding="utf-8") as fh:
        raw = json.load(fh)
    value = raw.get(section, {})
    if not isinstance(value, dict):
        raise InvalidConfig(f"config section {section!r} must be an object")
    return value


def _selector_config(args) -> SelectorTrainConfig:
    base = _config_section(args, "selector")
    for name, attr in (("k", "k"), ("learning_rate", "lr"), ("epochs", "epochs"),
                       ("dim", "dim")):
        value = getattr(args, attr, None)
        if value is not None:
            base[name] = value
    if args.seed is not None:
        base["seed"] = args.seed
    return SelectorTrainConfig(**base)


def _generator_config(args) -> GeneratorTrainConfig:
    base = _config_section(args, "generator")
    for name, attr in (
        ("learning_rate", "lr"),
        ("epochs", "epochs"),
        ("dim", "dim"),
        ("max_context", "max_context"),
        ("max_decode_len", "max_decode_len"),
        ("ca_enabled", "ca_loss"),
    ):
        value = getattr(args, attr, None)
        if value is not None:
            base[name] = value
    if args.seed is not None:
        base["seed"] = args.seed
    return GeneratorTrainConfig(**base)


def _cmd_synth(args) -> None:
    if not args.out_dir:
        raise UsageError("synth requires --out-dir")
    spec = SyntheticSpec(
        num_entities=args.entities,
        attributes_per_entity=args.attributes,
        corpus_size=args.corpus_size,
        distractor_ratio=args.distractor_ratio,
        vocab_size=args.vocab_size,
        seed=args.seed if args.seed is not None else 13,
    )
    paths = synth_benchmark(spec, args.out_dir)
    for kind, path in paths.items():
        print(f"{kind}: {path}")


def _cmd_index(args) -> None:
    corpus = load_corpus(args.corpus)
    index = build_index(corpus)
    save_index(args.out, index)
    print(f"indexed {index.doc_count} sentences -> {args.out}")


def _cmd_retrieve(args) -> None:
    index = load_index(args.index)
    corpus = load_corpus(args.corpus) if args.corpus else None
    examples = parse_tables_file(args.tables)
    sets = []
    for ex in examples:
        cands = retrieve(index, ex.table, args.m, table_id=ex.id)
        if corpus is not None:
            cands = filter_leakage(cands, corpus, ex.reference)
        sets.append(cands)
    write_candidate_sets(args.out, sets)
    print(f"retrieved candidates for {len(sets)} tables -> {args.out}")


def _cmd_train_selector(args) -> None:
    corpus = load_corpus(args.corpus)
    examples = parse_tables_file(args.tables)
    cand_sets = {c.table_id: c for c in read_candidate_sets(args.candidates)}
    triples = []
    for ex in examples:
        if ex.id not in cand_sets:
            raise InvalidInput(f"no candidates for table {ex.id} in {args.candidates}")
        triples.append((ex.table, ex.reference, cand_sets[ex.id]))
    model, losses = train_selector(triples, corpus, _selector_config(args))
    save_selector(args.out, model)
    print(f"trained selector ({len(losses)} epochs) -> {args.out}")


def _cmd_select(args) -> None:
    model = load_selector(args.model)
    corpus = load_corpus(args.corpus)
    examples = parse_tables_file(args.tables)
    cand_sets = {c.table_id: c for c in read_candidate_sets(args.candidates)}
    records = []
    for ex in examples:
        cands = cand_sets.get(ex.id)
        if cands is None or len(cands) == 0:
            chosen: tuple[int, ...] = ()
        else:
            chosen = tuple(select_top_n(model, ex.table, cands, corpus, args.n).ids())
        records.append(
            AugmentedRecord(
                table_id=ex.id,
                table=ex.table,
                prototype_ids=chosen,
                prototypes=tuple(corpus.get(s).text for s in chosen),
                reference=ex.reference,
            )
        )
    write_augmented_dataset(args.out, records)
    print(f"selected prototypes for {len(records)} tables -> {args.out}")


def _cmd_train_generator(args) -> None:
    examples = parse_tables_file(args.tables)
    records = read_augmented_dataset(args.dataset, examples)
    vocab = None
    if args.corpus:
        vocab = shared_vocabulary(load_corpus(args.corpus), examples)
    model, losses = train_generator(records, _generator_config(args), vocab=vocab)
    save_generator(args.out, model)
    print(f"trained generator ({len(losses)} epochs) -> {args.out}")


def _cmd_generate(args) -> None:
    model = load_generator(args.model)
    examples = parse_tables_file(args.tables)
    if args.dataset:
        records = read_augmented_dataset(args.dataset, examples)
    else:
        records = [
            AugmentedRecord(ex.id, ex.table, (), (), ex.reference) for ex in examples
        ]
    budget = model.max_context - args.max_len
    with open(args.out, "w", encoding="utf-8") as fh:
        for rec in records:
            protos = [tokenize(p) for p in rec.prototypes]
            cond = build_conditioning(rec.table, protos, model.vocab, budget)
            tokens = decode_greedy(model, cond, args.max_len)
            fh.write(
                json.dumps({"output": " ".join(tokens), "table_id": rec.table_id}, sort_keys=True)
                + "\n"
            )
    print(f"generated {len(records)} outputs -> {args.out}")


def _read_outputs(path: str) -> dict[int, str]:
    outputs: dict[int, str] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            outputs[int(record["table_id"])] = str(record.get("output", ""))
    return outputs


def _cmd_eval(args) -> None:
    refs = parse_tables_file(args.ref)
    hyp = _read_outputs(args.hyp)
    missing = [ex.id for ex in refs if ex.id not in hyp]
    if missing:
        raise InvalidInput(f"hypothesis file lacks outputs for tables {missing[:5]}")
    hyp_tokens = [tokenize(hyp[ex.id]) for ex in refs]
    ref_tokens = [tokenize(ex.reference) for ex in refs]
    report = evaluate_pairs(hyp_tokens, ref_tokens)
    payload = {
        "bleu4": report.bleu4,
        "rouge4_f": report.rouge4_f,
        "n": report.pair_count,
    }
    if args.compare:
        other = _read_outputs(args.compare)
        missing = [ex.id for ex in refs if ex.id not in other]
        if missing:
            raise InvalidInput(f"comparison file lacks outputs for tables {missing[:5]}")
        other_tokens = [tokenize(other[ex.id]) for ex in refs]
        other_report = evaluate_pairs(other_tokens, ref_tokens)
        block: dict = {
            "hyp_bleu4": report.bleu4,
            "compare_bleu4": other_report.bleu4,
        }
        try:
            block["rouge4_sign_test_p"] = sign_test(
                report.per_example_rouge4, other_report.per_example_rouge4
            )
        except DataError as exc:
            block["rouge4_sign_test_p"] = None
            block["note"] = str(exc)
        payload["sign_test"] = block
    _dump(args.out, payload)
    print(f"bleu4={report.bleu4:.6f} rouge4_f={report.rouge4_f:.6f} n={report.pair_count}")


def _pipeline_config(args) -> PipelineConfig:
    if not args.config:
        raise UsageError("this command requires --config")
    return load_config(args.config, seed=args.seed, out_dir=args.out_dir)


def _cmd_ablate(args) -> None:
    config = _pipeline_config(args)
    variants = args.variants.split(",") if args.variants else list(VARIANTS)
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else None
    payload = run_ablation(config, variants, seeds)
    for row in payload["rows"]:
        print(
            f"{row['variant']:10s} median BLEU-4 {row['median_bleu4']:.4f} "
            f"median ROUGE-4 {row['median_rouge4_f']:.4f}"
        )
    print(f"report -> {Path(config.out_dir) / 'ablation.json'}")


def _cmd_sweep_n(args) -> None:
    config = _pipeline_config(args)
    n_values = [int(s) for s in args.n_values.split(",")]
    payload = sweep_n(config, n_values)
    for row in payload["rows"]:
        print(f"n={row['n']:3d} BLEU-4 {row['bleu4']:.4f} ROUGE-4 {row['rouge4_f']:.4f}")
    print(f"report -> {Path(config.out_dir) / 'sweep.json'}")


def build_parser() -> _Parser:
    parser = _Parser(prog="prototext", description=__doc__)
    subs = parser.add_subparsers(dest="command", metavar="command")

    def sub(name, handler, help_text):
        p = subs.add_parser(name, help=help_text)
        _common_flags(p)
        p.set_defaults(handler=handler)
        return p

    p = sub("synth", _cmd_synth, "generate the synthetic benchmark files")
    p.add_argument("--entities", type=int, default=50)
    p.add_argument("--attributes", type=int, default=4)
    p.add_argument("--corpus-size", type=int, default=500)
    p.add_argument("--distractor-ratio", type=float, default=0.5)
    p.add_argument("--vocab-size", type=int, default=500)

    p = sub("index", _cmd_index, "build an inverted index from a corpus file")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)

    p = sub("retrieve", _cmd_retrieve, "retrieve top-m candidates for each table")
    p.add_argument("--index", required=True)
    p.add_argument("--tables", required=True)
    p.add_argument("--m", type=int, default=100)
    p.add_argument("--corpus", help="corpus file; enables the reference-leakage filter")
    p.add_argument("--out", required=True)

    p = sub("train-selector", _cmd_train_selector, "train the prototype selector")
    p.add_argument("--corpus", required=True)
    p.add_argument("--tables", required=True)
    p.add_argument("--candidates", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--dim", type=int)

    p = sub("select", _cmd_select, "pick top-n prototypes with a trained selector")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--tables", required=True)
    p.add_argument("--candidates", required=True)
    p.add_argument("--n", type=int, default=3)
    p.add_argument("--out", required=True)

    p = sub("train-generator", _cmd_train_generator, "train the conditional generator")
    p.add_argument("--dataset", required=True, help="augmented dataset JSONL")
    p.add_argument("--tables", required=True)
    p.add_argument("--corpus", help="optional corpus for the shared vocabulary")
    p.add_argument("--out", required=True)
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--max-context", type=int)
    p.add_argument("--max-decode-len", type=int)
    p.add_argument("--ca-loss", action=argparse.BooleanOptionalAction, default=None)

    p = sub("generate", _cmd_generate, "decode outputs for a tables file")
    p.add_argument("--model", required=True)
    p.add_argument("--tables", required=True)
    p.add_argument("--dataset", help="conditioning records; omit for table-only input")
    p.add_argument("--max-len", type=int, default=64)
    p.add_argument("--out", required=True)

    p = sub("eval", _cmd_eval, "score hypotheses against references")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True, help="tables file carrying references")
    p.add_argument("--compare", help="second hypothesis file for a sign test")
    p.add_argument("--out", required=True)

    p = sub("ablate", _cmd_ablate, "run the system-variant ladder")
    p.add_argument("--variants", help="comma-separated subset of " + ",".join(VARIANTS))
    p.add_argument("--seeds", help="comma-separated seeds (default: config seed)")

    p = sub("sweep-n", _cmd_sweep_n, "sweep the prototype count")
    p.add_argument("--n-values", required=True, help="comma-separated n values")

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "handler", None):
            parser.print_help()
            return 1
        args.handler(args)
        return 0
    except (UsageError, InvalidConfig) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        cause = exc.__cause__
        print(f"error: {exc}", file=sys.stderr)
        if isinstance(cause, (UsageError, InvalidConfig)):
            return 1
        if isinstance(cause, DataError):
            return 2
        return 3
    except Exception as exc:  # noqa: BLE001 - last-resort mapping to exit code 3
        print(f"internal error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
