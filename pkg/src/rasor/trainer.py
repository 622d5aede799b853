"""ADAM training with step-wise learning-rate decay and a binary checkpoint format."""

from __future__ import annotations

import logging
import math
import os
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

from . import tensor as T
from .config import TrainConfig
from .data import DropCounters, training_examples
from .embeddings import Embedder, EmbeddingStore
from .errors import ConfigError, FormatError, UnreachableGold
from .evaluation import exact_match
from .model import RasorModel

log = logging.getLogger(__name__)

FORMAT_MAGIC = "RASOR-CHECKPOINT"
FORMAT_VERSION = 1
_END_HEADER = b"end-header\n"


@dataclass
class OptimizerState:
    base_lr: float = 0.001
    decay_multiplier: float = 0.95
    decay_interval: int = 10000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    skipped: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    @classmethod
    def create(cls, config: TrainConfig, params: dict) -> "OptimizerState":
        state = cls(config.learning_rate, config.decay_multiplier, config.decay_interval,
                    config.beta1, config.beta2, config.epsilon)
        for name, p in params.items():
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        return state


def effective_lr(state: OptimizerState) -> float:
    return state.base_lr * state.decay_multiplier ** (state.step // state.decay_interval)


def adam_step(state: OptimizerState, params: dict, grads: dict) -> bool:
    """Apply one bias-corrected ADAM update in place.

    Returns False, and counts the skip, when any gradient is non-finite.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            state.skipped += 1
            log.warning("non-finite gradient for %s; skipping update %d", name, state.step + 1)
            return False
    with state.lock:
        lr = effective_lr(state)
        state.step += 1
        t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1 ** t
    c2 = 1 - b2 ** t
    for name, g in grads.items():
        p = params[name]
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        update = lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data -= update.astype(p.data.dtype)
    return True


def clip_gradients(grads: dict, max_norm: float) -> dict:
    if max_norm <= 0:
        return grads
    norm = math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values()))
    if norm <= max_norm:
        return grads
    factor = max_norm / norm
    return {k: g * g.dtype.type(factor) for k, g in grads.items()}


# ---------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    config: TrainConfig
    params: dict                  # name -> ndarray
    optimizer: dict               # step, skipped, m, v
    step: int                     # batches processed
    counters: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION


def _encode_header_value(value) -> str:
    text = repr(value) if isinstance(value, float) else str(value)
    if "\n" in text:
        raise FormatError("checkpoint header values cannot contain newlines")
    return text


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Write atomically: a text header, then raw little-endian float32 tensors."""
    tensors = [(f"param.{k}", v) for k, v in ckpt.params.items()]
    tensors += [(f"adam.m.{k}", v) for k, v in ckpt.optimizer["m"].items()]
    tensors += [(f"adam.v.{k}", v) for k, v in ckpt.optimizer["v"].items()]
    lines = [FORMAT_MAGIC, f"version={ckpt.version}", f"step={ckpt.step}",
             f"optimizer.step={ckpt.optimizer['step']}",
             f"optimizer.skipped={ckpt.optimizer['skipped']}"]
    lines += [f"counter.{k}={_encode_header_value(v)}" for k, v in ckpt.counters.items()]
    lines += [f"metric.{k}={_encode_header_value(v)}" for k, v in ckpt.metrics.items()]
    lines += [f"meta.{k}={_encode_header_value(v)}" for k, v in ckpt.meta.items()]
    lines += [f"config.{line}" for line in ckpt.config.to_text().splitlines()]
    blobs = []
    for name, arr in tensors:
        arr = np.ascontiguousarray(arr, dtype="<f4")
        lines.append(f"tensor={name} {','.join(str(d) for d in arr.shape) or '-'}")
        blobs.append(arr.tobytes())
    header = ("\n".join(lines) + "\n").encode("utf-8") + _END_HEADER
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(header)
        for blob in blobs:
            fh.write(blob)
    os.replace(tmp, path)


def _parse_shape(text: str) -> tuple:
    return () if text == "-" else tuple(int(d) for d in text.split(","))


def load_checkpoint(path, expected: TrainConfig | None = None) -> Checkpoint:
    """Read and fully validate a checkpoint before returning anything.

    Every tensor shape is checked against the config stored in the file and,
    when ``expected`` is given, against that config too.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    cut = raw.find(_END_HEADER)
    if cut < 0:
        raise FormatError(f"{path}: truncated or not a checkpoint (no header terminator)")
    try:
        lines = raw[:cut].decode("utf-8").splitlines()
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path}: header is not UTF-8") from exc
    if not lines or lines[0] != FORMAT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint file")
    scalars, config_values, tensors = {}, {}, []
    for line in lines[1:]:
        key, _, value = line.partition("=")
        if key == "tensor":
            name, _, shape = value.rpartition(" ")
            tensors.append((name, _parse_shape(shape)))
        elif key.startswith("config."):
            config_values[key[len("config."):]] = value
        else:
            scalars[key] = value
    version = int(scalars.get("version", -1))
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: checkpoint format version {version}, expected {FORMAT_VERSION}")
    config = TrainConfig.from_mapping(config_values)
    body = memoryview(raw)[cut + len(_END_HEADER):]
    need = sum(4 * int(np.prod(shape)) for _, shape in tensors)
    if len(body) != need:
        raise FormatError(f"{path}: truncated tensor data ({len(body)} of {need} bytes)")
    arrays, offset = {}, 0
    for name, shape in tensors:
        count = int(np.prod(shape))
        arrays[name] = np.frombuffer(body, dtype="<f4", count=count, offset=offset) \
            .reshape(shape).astype(np.float32)
        offset += 4 * count
    params = {k[len("param."):]: v for k, v in arrays.items() if k.startswith("param.")}
    m = {k[len("adam.m."):]: v for k, v in arrays.items() if k.startswith("adam.m.")}
    v = {k[len("adam.v."):]: v for k, v in arrays.items() if k.startswith("adam.v.")}
    for cfg in (config,) if expected is None else (config, expected):
        _check_shapes(path, cfg, params, m, v)
    counters = {k[len("counter."):]: int(x) for k, x in scalars.items() if k.startswith("counter.")}
    metrics = {k[len("metric."):]: float(x) for k, x in scalars.items() if k.startswith("metric.")}
    meta = {k[len("meta."):]: x for k, x in scalars.items() if k.startswith("meta.")}
    optimizer = {"step": int(scalars.get("optimizer.step", 0)),
                 "skipped": int(scalars.get("optimizer.skipped", 0)), "m": m, "v": v}
    return Checkpoint(config, params, optimizer, int(scalars.get("step", 0)), counters,
                      metrics, meta, version)


def expected_shapes(config: TrainConfig) -> dict:
    dim = config.embedding_dim
    store = EmbeddingStore({"<unk>": 0}, np.zeros((1, dim), dtype=np.float32),
                           oov_buckets=config.oov_buckets if config.train_oov else 1)
    model = RasorModel(config, Embedder(store, config.train_oov))
    return {name: p.shape for name, p in model.named_parameters().items()}


def _check_shapes(path, config, params, m, v):
    want = expected_shapes(config)
    for group, arrays in (("parameter", params), ("adam first moment", m),
                          ("adam second moment", v)):
        for name, shape in want.items():
            if name not in arrays:
                raise FormatError(f"{path}: missing {group} tensor {name}")
            if arrays[name].shape != shape:
                raise FormatError(f"{path}: {group} tensor {name} has shape "
                                  f"{arrays[name].shape}, config expects {shape}")
        extra = set(arrays) - set(want)
        if extra:
            raise FormatError(f"{path}: unexpected {group} tensor {sorted(extra)[0]}")


def restore(model: RasorModel, ckpt: Checkpoint, state: OptimizerState | None = None):
    for name, p in model.named_parameters().items():
        p.data[...] = ckpt.params[name]
    if state is not None:
        state.step = ckpt.optimizer["step"]
        state.skipped = ckpt.optimizer["skipped"]
        for name in state.m:
            state.m[name][...] = ckpt.optimizer["m"][name]
            state.v[name][...] = ckpt.optimizer["v"][name]


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainState:
    """Mutable run state exposed to callers (mostly for logging and tests)."""

    model: RasorModel
    optimizer: OptimizerState
    counters: DropCounters
    step: int = 0
    processed: int = 0
    losses: list = field(default_factory=list)
    unreachable: int = 0


def predict_span_texts(model: RasorModel, examples) -> dict:
    return {ex.qid: ex.span_text(model.predict(ex.question, ex.passage)[0]) for ex in examples}


def evaluate_em(model: RasorModel, examples) -> float:
    return evaluate_metrics(model, examples)["eval_em"]


def evaluate_metrics(model: RasorModel, examples) -> dict:
    """EM over ``examples``; plus the percentage of exactly recovered gold
    spans when every example carries one."""
    hits, spans = 0, 0
    has_gold = all(getattr(ex, "gold", None) is not None for ex in examples)
    for ex in examples:
        span = model.predict(ex.question, ex.passage)[0]
        hits += exact_match(ex.span_text(span), ex.answers)
        spans += has_gold and tuple(span) == tuple(ex.gold)
    n = max(1, len(examples))
    metrics = {"eval_em": 100.0 * hits / n}
    if has_gold:
        metrics["span_accuracy"] = 100.0 * spans / n
    return metrics


def _batches(n: int, batch_size: int, seed: int, step: int):
    per_epoch = math.ceil(n / batch_size)
    epoch, k = divmod(step, per_epoch)
    order = np.random.default_rng([seed, epoch]).permutation(n)
    return order[k * batch_size:(k + 1) * batch_size]


def batches_per_epoch(n: int, batch_size: int) -> int:
    return math.ceil(n / batch_size)


def _example_loss(model, ex, rng):
    out = model.forward(ex.question, ex.passage, training=True, rng=rng)
    return model.loss(out, ex.gold)


def _snapshot(run: TrainState, config: TrainConfig, metrics: dict, meta: dict) -> Checkpoint:
    params = {k: p.data.copy() for k, p in run.model.named_parameters().items()}
    opt = run.optimizer
    optimizer = {"step": opt.step, "skipped": opt.skipped,
                 "m": {k: a.copy() for k, a in opt.m.items()},
                 "v": {k: a.copy() for k, a in opt.v.items()}}
    counters = {**run.counters.as_dict(), "skipped_nonfinite": opt.skipped,
                "unreachable_gold": run.unreachable}
    return Checkpoint(config, params, optimizer, run.step, counters, metrics, dict(meta))


def train_loop(config: TrainConfig, dataset, store: EmbeddingStore, eval_set=None,
               log_fn: Callable[[str], None] | None = None, resume: Checkpoint | None = None,
               meta: dict | None = None, run: list | None = None) -> Iterator[Checkpoint]:
    """Train and yield a checkpoint at every evaluation point and at the end.

    ``eval_set`` defaults to the training examples.  With ``workers > 1``
    and ``deterministic`` off, batches are processed by concurrent threads
    sharing the parameters; checkpoints are then only yielded at the end.
    If ``run`` is a list, the live :class:`TrainState` is appended to it.
    """
    dataset = list(dataset)
    if not dataset:
        raise ConfigError("training set is empty")
    examples, counters = training_examples(dataset, config.max_span_length)
    if not examples:
        raise ConfigError(f"all {len(dataset)} training examples were dropped during alignment")
    model = RasorModel(config, Embedder(store, config.train_oov))
    params = model.named_parameters()
    state = OptimizerState.create(config, params)
    train_state = TrainState(model, state, counters)
    if resume is not None:
        restore(model, resume, state)
        train_state.step = resume.step
    if run is not None:
        run.append(train_state)
    eval_set = examples if eval_set is None else list(eval_set)
    emit = log_fn or (lambda line: None)
    meta = meta or {}

    if config.workers > 1 and not config.deterministic:
        _train_async(config, examples, train_state, emit)
        yield _snapshot(train_state, config, evaluate_metrics(model, eval_set), meta)
        return
    if config.workers > 1:
        log.warning("deterministic mode trains with a single worker; ignoring workers=%d",
                    config.workers)

    while train_state.step < config.max_steps:
        step = train_state.step
        batch = _batches(len(examples), config.batch_size, config.seed, step)
        for p in params.values():
            p.zero_grad()
        total, used = 0.0, 0
        for k in batch:
            rng = np.random.default_rng([config.seed, step, int(k)])
            try:
                loss = _example_loss(model, examples[k], rng)
            except UnreachableGold:
                T.current_graph().clear()
                train_state.unreachable += 1
                continue
            T.backward(loss)
            total += loss.item()
            used += 1
        train_state.processed += len(batch)
        if used:
            scale = 1.0 / used
            grads = {n: p.grad * p.grad.dtype.type(scale) if p.grad is not None
                     else np.zeros_like(p.data) for n, p in params.items()}
            adam_step(state, params, clip_gradients(grads, config.grad_clip))
        train_state.step += 1
        mean_loss = total / used if used else float("nan")
        train_state.losses.append(mean_loss)
        emit(f"step={train_state.step} loss={mean_loss:.6f} lr={effective_lr(state):.8g} "
             f"objective={config.objective} dropped_unalignable={counters.unalignable} "
             f"dropped_too_long={counters.too_long} skipped_nonfinite={state.skipped}")
        last = train_state.step >= config.max_steps
        if train_state.step % config.eval_interval == 0 or last:
            metrics = evaluate_metrics(model, eval_set)
            emit(f"step={train_state.step} " + " ".join(f"{k}={v:.4f}" for k, v in metrics.items()))
            watched = metrics.get(config.early_stop_metric, metrics["eval_em"])
            stop = config.early_stop_em > 0 and watched >= config.early_stop_em
            yield _snapshot(train_state, config, {**metrics, "loss": mean_loss}, meta)
            if stop:
                return


def _train_async(config: TrainConfig, examples, run: TrainState, emit):
    """Hogwild-style workers: private graphs, shared parameters, no locking
    around updates beyond the optimizer's step counter."""
    params = run.model.named_parameters()
    names = list(params)
    leaves = [params[n] for n in names]
    next_step = [run.step]
    counter_lock = threading.Lock()
    errors = []

    def worker():
        try:
            while True:
                with counter_lock:
                    step = next_step[0]
                    if step >= config.max_steps:
                        return
                    next_step[0] += 1
                batch = _batches(len(examples), config.batch_size, config.seed, step)
                acc = None
                used = 0
                for k in batch:
                    rng = np.random.default_rng([config.seed, step, int(k)])
                    try:
                        loss = _example_loss(run.model, examples[k], rng)
                    except UnreachableGold:
                        T.current_graph().clear()
                        continue
                    gs = T.grad(loss, leaves)
                    acc = gs if acc is None else [a + g for a, g in zip(acc, gs)]
                    used += 1
                with counter_lock:
                    run.processed += len(batch)
                    run.step += 1
                if acc is not None:
                    scale = 1.0 / used
                    grads = {n: g * g.dtype.type(scale) for n, g in zip(names, acc)}
                    adam_step(run.optimizer, params, clip_gradients(grads, config.grad_clip))
        except Exception as exc:  # surfaced after join
            errors.append(exc)

    threads = [threading.Thread(target=worker, name=f"rasor-worker-{i}")
               for i in range(config.workers)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        raise errors[0]
    emit(f"step={run.step} processed={run.processed} mode=async workers={config.workers}")
