"""Command-line entry points: train, predict, evaluate, analyze, gradcheck.

Exit codes: 0 success, 1 check failure, 2 usage or config error, 3 I/O or
format error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import gradcheck
from .config import TrainConfig, load_config, parse_overrides
from .data import load_examples, training_examples
from .embeddings import Embedder, load_pretrained
from .errors import ConfigError, FormatError
from .evaluation import attention_dump, evaluate_dataset, write_length_csv
from .model import RasorModel
from .span_model import MAX_SPAN_LENGTH
from .trainer import load_checkpoint, restore, save_checkpoint, train_loop

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("rasor")


def _config(args) -> TrainConfig:
    overrides = parse_overrides(args.set)
    if getattr(args, "deterministic", None) is not None:
        overrides["deterministic"] = args.deterministic
    if getattr(args, "workers", None) is not None:
        overrides["workers"] = args.workers
    if args.config:
        return load_config(args.config, overrides)
    return TrainConfig().with_overrides(overrides)


def _store(config: TrainConfig, path):
    return load_pretrained(path, dim=config.embedding_dim, oov_buckets=config.oov_buckets,
                           seed=config.hash_seed)


def _write_text(path, text: str):
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, ensure_ascii=False) + "\n"


def run_train(args) -> int:
    config = _config(args)
    dataset = load_examples(args.data)
    store = _store(config, args.embeddings)
    eval_set = load_examples(args.eval_data) if args.eval_data else None
    os.makedirs(args.out, exist_ok=True)
    lines = []

    def emit(line):
        lines.append(line)
        print(line, flush=True)

    emit(f"event=start objective={config.objective} examples={len(dataset)} "
         f"embedding_warnings={store.warnings}")
    _, counters = training_examples(dataset, config.max_span_length)
    emit(f"event=alignment dropped_unalignable={counters.unalignable} "
         f"dropped_too_long={counters.too_long}")
    meta = {"embeddings": os.path.abspath(args.embeddings)}
    written = 0
    for ckpt in train_loop(config, dataset, store, eval_set, log_fn=emit, meta=meta):
        path = os.path.join(args.out, f"checkpoint-{ckpt.step:06d}.rasor")
        save_checkpoint(ckpt, path)
        save_checkpoint(ckpt, os.path.join(args.out, "latest.rasor"))
        emit(f"event=checkpoint step={ckpt.step} path={os.path.basename(path)}")
        written += 1
    emit(f"event=done checkpoints={written}")
    _write_text(os.path.join(args.out, "train.log"), "\n".join(lines) + "\n")
    return EXIT_OK


def _load_model(args):
    ckpt = load_checkpoint(args.checkpoint)
    emb_path = args.embeddings or ckpt.meta.get("embeddings")
    if not emb_path:
        raise ConfigError("no --embeddings given and the checkpoint does not record a path")
    store = _store(ckpt.config, emb_path)
    model = RasorModel(ckpt.config, Embedder(store, ckpt.config.train_oov))
    restore(model, ckpt)
    return model


def _predict(model, examples):
    predictions, lengths = {}, {}
    for ex in examples:
        if not ex.passage or not ex.question:
            predictions[ex.qid] = ""
            lengths[ex.qid] = 0
            continue
        span, _ = model.predict(ex.question, ex.passage)
        predictions[ex.qid] = ex.span_text(span)
        lengths[ex.qid] = span.length
    return predictions, lengths


def run_predict(args) -> int:
    model = _load_model(args)
    predictions, _ = _predict(model, load_examples(args.data))
    _write_text(args.out, _dump_json(predictions))
    return EXIT_OK


def run_evaluate(args) -> int:
    examples = load_examples(args.data)
    try:
        with open(args.predictions, encoding="utf-8") as fh:
            predictions = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{args.predictions}: malformed JSON ({exc.msg})") from exc
    if not isinstance(predictions, dict):
        raise FormatError(f"{args.predictions}: expected an object mapping question ids to answers")
    _, counters = training_examples(examples, MAX_SPAN_LENGTH)
    report = evaluate_dataset(predictions, examples, counters=counters.as_dict())
    _write_text(args.out, report.to_json())
    print(f"exact_match={report.exact_match:.4f} f1={report.f1:.4f} total={len(report.records)}")
    return EXIT_OK


def run_analyze(args) -> int:
    model = _load_model(args)
    examples = load_examples(args.data)
    os.makedirs(args.out, exist_ok=True)
    predictions, lengths = _predict(model, examples)
    report = evaluate_dataset(predictions, examples, lengths,
                              max_length=model.config.max_span_length)
    write_length_csv(report.length_table, os.path.join(args.out, "lengths.csv"))
    records = [json.dumps(attention_dump(ex, model), ensure_ascii=False)
               for ex in examples if ex.passage and ex.question]
    _write_text(os.path.join(args.out, "attention.jsonl"), "".join(r + "\n" for r in records))
    _write_text(os.path.join(args.out, "report.json"), report.to_json())
    print(f"exact_match={report.exact_match:.4f} f1={report.f1:.4f} attention_records={len(records)}")
    return EXIT_OK


def run_gradcheck(args) -> int:
    config = _config(args)
    objectives = (config.objective,) if args.objective_only else None
    results = gradcheck.run_suite(objectives=objectives or gradcheck.OBJECTIVES, seed=config.seed)
    for r in results:
        print(f"case={r.case} parameter={r.parameter} error={r.error:.3e} "
              f"tolerance={r.tolerance:.0e} status={'pass' if r.passed else 'FAIL'}")
    bad = [r for r in results if not r.passed]
    w = gradcheck.worst(results)
    if bad:
        print(f"gradcheck failed: {len(bad)} of {len(results)} checks; worst case={w.case} "
              f"parameter={w.parameter} error={w.error:.3e}", file=sys.stderr)
        return EXIT_CHECK
    print(f"gradcheck passed: {len(results)} checks; worst error={w.error:.3e} ({w.case} {w.parameter})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rasor", description="Span-based extractive QA.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", help="key=value config file")
            p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                           help="override one config value (repeatable)")
        return p

    train = common(sub.add_parser("train", help="train a model"))
    train.add_argument("--data", required=True)
    train.add_argument("--embeddings", required=True)
    train.add_argument("--out", required=True, help="output directory")
    train.add_argument("--eval-data", help="held-out data for periodic evaluation")
    train.add_argument("--deterministic", action=argparse.BooleanOptionalAction, default=None)
    train.add_argument("--workers", type=int)
    train.set_defaults(func=run_train)

    predict = sub.add_parser("predict", help="write {id: answer} predictions")
    for p in (predict, sub.add_parser("analyze", help="length table and attention dumps")):
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--data", required=True)
        p.add_argument("--embeddings", help="defaults to the path stored in the checkpoint")
        p.add_argument("--out", required=True)
        p.set_defaults(func=run_predict if p is predict else run_analyze)

    evaluate = sub.add_parser("evaluate", help="score predictions with exact match and F1")
    evaluate.add_argument("--predictions", required=True)
    evaluate.add_argument("--data", required=True)
    evaluate.add_argument("--out", required=True, help="report JSON path")
    evaluate.set_defaults(func=run_evaluate)

    check = common(sub.add_parser("gradcheck", help="finite-difference gradient suite"))
    check.add_argument("--objective-only", action="store_true",
                       help="check only the configured objective's composed model")
    check.set_defaults(func=run_gradcheck)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="level=%(levelname)s msg=%(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        name = exc.filename or ""
        print(f"i/o error: {name}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
