"""Run configuration: typed defaults merged with a flat ``section.key=value`` file and flags."""

from __future__ import annotations

import hashlib
from pathlib import Path

from .backbone import BackboneConfig
from .checkins.preprocess import PreprocessConfig
from .checkins.splits import parse_ratio
from .checkins.synthetic import SyntheticSpec
from .htpp import DOMAINS, read_domain_words
from .model import ModelConfig
from .train import TrainConfig

DEFAULTS: dict[str, object] = {
    "data.max_history_days": 120.0,
    "data.min_user_records": 10,
    "data.min_poi_visits": 10,
    "data.session_gap_hours": 24.0,
    "data.max_seq_len": 64,
    "data.split_ratio": "6:2:2",
    "data.seed": 0,
    "synth.users": 50,
    "synth.pois": 200,
    "synth.sequences": 2000,
    "synth.seed": 7,
    "geohash.precision": 6,
    "model.dim": 256,
    "ppel.train_tokens": False,
    "vimn.r": 4,
    "vimn.hidden": 256,
    "vimn.periods": "3600,86400,604800",
    "vimn.delta_unit": "seconds",
    "htpp.K": 4,
    "htpp.aggregation": "sum",
    "htpp.key_loss_weight": 0.1,
    "htpp.train_values": False,
    **{f"htpp.words.{d}": "" for d in DOMAINS},
    "backbone.layers": 4,
    "backbone.heads": 4,
    "backbone.F": 0,
    "backbone.U": 0,
    "backbone.variant": "transformer",
    "backbone.width": 0,
    "heads.components": 16,
    "heads.pooling": "mean",
    "train.learning_rate": 0.001,
    "train.max_epochs": 100,
    "train.patience": 10,
    "train.batch_size": 64,
    "train.seed": 0,
    "train.tp_loss": "mae",
}

UNITS = {"seconds": 1.0, "minutes": 60.0, "hours": 3600.0, "days": 86400.0}


class ConfigError(ValueError):
    pass


def _coerce(key: str, value):
    default = DEFAULTS[key]
    if isinstance(value, str):
        value = value.strip()
    try:
        if isinstance(default, bool):
            if isinstance(value, bool):
                return value
            if str(value).lower() in ("1", "true", "yes", "on"):
                return True
            if str(value).lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {value!r}") from None
    return str(value)


def _canonical_key(key: str) -> str:
    key = key.strip()
    if key in DEFAULTS:
        return key
    if f"data.{key}" in DEFAULTS:
        return f"data.{key}"
    raise ConfigError(f"unknown config key: {key}")


def parse_config_text(text: str) -> dict[str, object]:
    """Parse ``key=value`` lines; ``#`` starts a comment, blank lines are ignored."""
    out = {}
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        key = _canonical_key(key)
        out[key] = _coerce(key, value)
    return out


class RunConfig:
    """Fully resolved flat configuration."""

    def __init__(self, values: dict | None = None):
        self.values = dict(DEFAULTS)
        for k, v in (values or {}).items():
            k = _canonical_key(k)
            self.values[k] = _coerce(k, v)
        self.validate()

    @classmethod
    def load(cls, path=None, overrides: dict | None = None) -> "RunConfig":
        values = parse_config_text(Path(path).read_text(encoding="utf-8")) if path else {}
        values.update(overrides or {})
        return cls(values)

    def __getitem__(self, key):
        return self.values[_canonical_key(key)]

    def with_overrides(self, **kv) -> "RunConfig":
        return RunConfig({**self.values, **{k.replace("__", "."): v for k, v in kv.items()}})

    def dumps(self) -> str:
        return "".join(f"{k}={_fmt(v)}\n" for k, v in sorted(self.values.items()))

    def hash(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()[:16]

    def validate(self):
        try:
            self.preprocess_config()
            self.model_config()
            parse_ratio(self["data.split_ratio"])
        except (ValueError, KeyError) as exc:
            raise ConfigError(str(exc)) from None

    # -- per-module views --

    def preprocess_config(self) -> PreprocessConfig:
        v = self.values
        return PreprocessConfig(
            max_history_days=v["data.max_history_days"],
            min_user_records=v["data.min_user_records"],
            min_poi_visits=v["data.min_poi_visits"],
            session_gap_hours=v["data.session_gap_hours"],
            max_seq_len=v["data.max_seq_len"],
        )

    def split_ratio(self) -> tuple[int, int, int]:
        return parse_ratio(self["data.split_ratio"])

    def synthetic_spec(self) -> SyntheticSpec:
        v = self.values
        return SyntheticSpec(v["synth.users"], v["synth.pois"], v["synth.sequences"], v["synth.seed"])

    def model_config(self) -> ModelConfig:
        v = self.values
        dim = v["model.dim"]
        unit = v["vimn.delta_unit"]
        delta_unit = UNITS[unit] if unit in UNITS else float(unit)
        periods = tuple(float(p) for p in str(v["vimn.periods"]).strip("[]").split(",") if p.strip())
        files = {d: v[f"htpp.words.{d}"] for d in DOMAINS if v[f"htpp.words.{d}"]}
        words = None
        if files:
            from .htpp import default_domain_words
            words = {**default_domain_words(), **read_domain_words(files)}
            words = tuple((d, tuple(words[d])) for d in DOMAINS)
        return ModelConfig(
            dim=dim,
            geohash_precision=v["geohash.precision"],
            train_word_tokens=v["ppel.train_tokens"],
            window=v["vimn.r"],
            hidden=v["vimn.hidden"],
            periods=periods,
            delta_unit=delta_unit,
            prompt_k=v["htpp.K"],
            aggregation=v["htpp.aggregation"],
            key_loss_weight=v["htpp.key_loss_weight"],
            train_prompt_values=v["htpp.train_values"],
            prompt_words=words,
            backbone=BackboneConfig(
                layers=v["backbone.layers"],
                heads=v["backbone.heads"],
                width=v["backbone.width"] or dim,
                frozen_layers=v["backbone.F"],
                attention_unfrozen=v["backbone.U"],
                variant=v["backbone.variant"],
            ),
            mixture_components=v["heads.components"],
            pooling=v["heads.pooling"],
        )

    def train_config(self, task: str, ablations=(), seed: int | None = None) -> TrainConfig:
        v = self.values
        return TrainConfig(
            task=task,
            learning_rate=v["train.learning_rate"],
            max_epochs=v["train.max_epochs"],
            patience=v["train.patience"],
            batch_size=v["train.batch_size"],
            seed=v["train.seed"] if seed is None else seed,
            ablations=frozenset(ablations),
            tp_loss=v["train.tp_loss"],
        )


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)
