"""Training/model configuration and its flat ``key=value`` file format.

A value written as ``[a, b, c]`` declares a grid axis; :func:`expand_grid`
turns such a file into one config per combination.
"""

from __future__ import annotations

import dataclasses
import itertools
from dataclasses import dataclass, fields

from .errors import ConfigError

OBJECTIVES = ("span_softmax", "span_logistic", "endpoints", "bio_crf", "membership")
LAYER_GRID = (1, 2, 3)
DECAY_GRID = (0.9, 0.95, 1.0)


@dataclass(frozen=True)
class TrainConfig:
    hidden_dim: int = 50
    ffnn_width: int = 100
    ffnn_depth: int = 1
    dropout: float = 0.1
    dropout_placement: str = "input,recurrent"
    passage_layers: int = 2
    question_layers: int = 2
    learning_rate: float = 0.001
    decay_multiplier: float = 0.95
    decay_interval: int = 10000
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    grad_clip: float = 0.0
    batch_size: int = 4
    objective: str = "span_softmax"
    seed: int = 0
    max_steps: int = 20000
    eval_interval: int = 1000
    early_stop_em: float = 0.0
    early_stop_metric: str = "eval_em"  # or span_accuracy: exact gold-span recovery
    max_span_length: int = 30
    embedding_dim: int = 300
    oov_buckets: int = 5000
    hash_seed: int = 0
    train_oov: bool = False
    ffnn_output_relu: bool = True
    tie_align_ffnn: bool = False
    qindep_layer: str = "top"
    crf_constrained_training: bool = True
    membership_scores: str = "logit"
    workers: int = 1
    deterministic: bool = True
    off_grid: bool = False

    def __post_init__(self):
        validate(self)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    @property
    def placement(self) -> tuple:
        return tuple(p for p in self.dropout_placement.split(",") if p)

    def to_text(self) -> str:
        return "".join(f"{f.name}={format_value(getattr(self, f.name))}\n" for f in fields(self))

    @classmethod
    def from_mapping(cls, values: dict) -> "TrainConfig":
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            kwargs[key] = coerce(known[key], raw)
        return cls(**kwargs)

    def with_overrides(self, overrides: dict) -> "TrainConfig":
        merged = {f.name: getattr(self, f.name) for f in fields(self)}
        merged.update(overrides)
        return TrainConfig.from_mapping(merged)


def validate(cfg: TrainConfig):
    positive = ("hidden_dim", "ffnn_width", "ffnn_depth", "passage_layers", "question_layers",
                "decay_interval", "batch_size", "max_steps", "eval_interval", "max_span_length",
                "embedding_dim", "oov_buckets", "workers")
    for name in positive:
        if getattr(cfg, name) < 1:
            raise ConfigError(f"{name} must be positive, got {getattr(cfg, name)}")
    if not 0 <= cfg.dropout < 1:
        raise ConfigError(f"dropout must be in [0, 1), got {cfg.dropout}")
    if cfg.objective not in OBJECTIVES:
        raise ConfigError(f"objective must be one of {', '.join(OBJECTIVES)}; got {cfg.objective!r}")
    if cfg.learning_rate <= 0 or not 0 <= cfg.beta1 < 1 or not 0 <= cfg.beta2 < 1 or cfg.epsilon <= 0:
        raise ConfigError("invalid ADAM hyperparameters")
    if not 0 < cfg.decay_multiplier <= 1:
        raise ConfigError("decay_multiplier must be in (0, 1]")
    if cfg.grad_clip < 0 or not 0 <= cfg.early_stop_em <= 100:
        raise ConfigError("grad_clip must be >= 0 and early_stop_em in [0, 100]")
    if set(cfg.placement) - {"input", "recurrent"}:
        raise ConfigError(f"dropout_placement accepts input and/or recurrent, got {cfg.dropout_placement!r}")
    if cfg.early_stop_metric not in ("eval_em", "span_accuracy"):
        raise ConfigError("early_stop_metric must be eval_em or span_accuracy")
    if cfg.membership_scores not in ("logit", "prob_centered"):
        raise ConfigError("membership_scores must be logit or prob_centered")
    if cfg.qindep_layer != "top":
        try:
            layer = int(cfg.qindep_layer)
        except ValueError:
            layer = 0
        if not 1 <= layer <= cfg.question_layers:
            raise ConfigError(f"qindep_layer must be 'top' or 1..{cfg.question_layers}")
    if not cfg.off_grid:
        for name in ("passage_layers", "question_layers"):
            if getattr(cfg, name) not in LAYER_GRID:
                raise ConfigError(f"{name}={getattr(cfg, name)} is off the searched grid "
                                  f"{LAYER_GRID}; set off_grid=true to allow it")
        if cfg.decay_multiplier not in DECAY_GRID:
            raise ConfigError(f"decay_multiplier={cfg.decay_multiplier} is off the searched grid "
                              f"{DECAY_GRID}; set off_grid=true to allow it")


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


_TRUE = {"true", "1", "yes", "on"}
_FALSE = {"false", "0", "no", "off"}


def coerce(field: dataclasses.Field, raw):
    kind = field.type if isinstance(field.type, str) else field.type.__name__
    if not isinstance(raw, str):
        if kind == "float" and isinstance(raw, int) and not isinstance(raw, bool):
            return float(raw)
        return raw
    text = raw.strip()
    try:
        if kind == "bool":
            if text.lower() in _TRUE:
                return True
            if text.lower() in _FALSE:
                return False
            raise ValueError(text)
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
    except ValueError:
        raise ConfigError(f"config key {field.name!r}: cannot parse {text!r} as {kind}") from None
    return text


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse ``key=value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        values[key] = value
    return values


def parse_overrides(items) -> dict:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def load_config(path, overrides: dict | None = None) -> TrainConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from exc
    values = parse_config_text(text, str(path))
    values.update(overrides or {})
    for key, value in values.items():
        if isinstance(value, str) and value.startswith("["):
            raise ConfigError(f"{path}: {key} is a grid axis; use expand_grid for grid files")
    return TrainConfig.from_mapping(values)


def expand_grid(text: str, source: str = "<grid>") -> list[TrainConfig]:
    """One config per combination of the ``[a, b, ...]`` valued keys."""
    values = parse_config_text(text, source)
    axes = {}
    for key, value in values.items():
        if value.startswith("[") and value.endswith("]"):
            axes[key] = [v.strip() for v in value[1:-1].split(",") if v.strip()]
            if not axes[key]:
                raise ConfigError(f"{source}: empty grid axis {key!r}")
    fixed = {k: v for k, v in values.items() if k not in axes}
    out = []
    for combo in itertools.product(*axes.values()):
        out.append(TrainConfig.from_mapping({**fixed, **dict(zip(axes, combo))}))
    return out
