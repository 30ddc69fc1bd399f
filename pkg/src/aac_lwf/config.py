"""``key = value`` run configuration with dotted section names.

Example::

    seed = 3
    model.d_model = 32
    model.dilation_schedule = 1, 2
    early_stop.patience = 10
    stream.batch_size = 4
    continual.lambda = 0.85
    sweep.lambdas = 0.7, 0.85, 1.0
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .data.synth import SynthConfig
from .errors import ConfigError
from .model import ModelConfig
from .trainer import ContinualRunConfig, EarlyStopConfig

DEFAULT_LAMBDAS = (0.70, 0.75, 0.80, 0.85, 0.90, 0.95, 1.00)
DEFAULT_BATCH_SIZES = (4, 8, 12)


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_float(text: str):
    return None if text.strip().lower() in ("", "none", "null") else float(text)


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(p) for p in text.replace(",", " ").split())


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(p) for p in text.replace(",", " ").split())


_MODEL_KEYS = {
    "n_mels": int, "d_model": int, "n_temporal_blocks": int, "dilation_schedule": _ints,
    "temporal_kernel": int, "n_tf_blocks": int, "tf_channels": int, "tf_pool": int,
    "n_decoder_blocks": int, "n_heads": int, "d_ff": int, "max_caption_len": int,
    "classifier_temperature": float,
}
_EARLY_KEYS = {"patience": int, "max_epochs": int, "batch_size": int, "alpha": float,
               "seed": int, "target_loss": _opt_float}
_STREAM_KEYS = {"batch_size": ("batch_size", int), "shuffle_seed": ("shuffle_seed", int)}
_CONTINUAL_KEYS = {"lambda": ("lam", float), "distill_temperature": ("distill_temperature", float),
                   "checkpoint_updates": ("checkpoint_updates", _ints), "eval_at_end": ("eval_at_end", _bool),
                   "alpha": ("alpha", float)}
_SYNTH_TYPES = {f.name: float if f.type in (float, "float") else int for f in dataclasses.fields(SynthConfig)}
_SWEEP_KEYS = {"lambdas": _floats, "batch_sizes": _ints}
_PATH_KEYS = ("data", "stream_data", "teacher", "out")


@dataclass
class RunConfig:
    seed: int = 0
    model: dict = field(default_factory=dict)
    early_stop: EarlyStopConfig = field(default_factory=EarlyStopConfig)
    continual: ContinualRunConfig = field(default_factory=ContinualRunConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    sweep_lambdas: tuple[float, ...] = DEFAULT_LAMBDAS
    sweep_batch_sizes: tuple[int, ...] = DEFAULT_BATCH_SIZES
    paths: dict = field(default_factory=dict)

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(vocab_size=vocab_size, **self.model)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "model": {k: (list(v) if isinstance(v, tuple) else v) for k, v in sorted(self.model.items())},
            "early_stop": dataclasses.asdict(self.early_stop),
            "continual": {**dataclasses.asdict(self.continual),
                          "checkpoint_updates": list(self.continual.checkpoint_updates)},
            "synth": dataclasses.asdict(self.synth),
            "sweep_lambdas": list(self.sweep_lambdas),
            "sweep_batch_sizes": list(self.sweep_batch_sizes),
            "paths": dict(sorted(self.paths.items())),
        }

    @classmethod
    def from_dict(cls, d: dict) -> RunConfig:
        model = {k: (tuple(v) if isinstance(v, list) else v) for k, v in d.get("model", {}).items()}
        cont = dict(d.get("continual", {}))
        if "checkpoint_updates" in cont:
            cont["checkpoint_updates"] = tuple(cont["checkpoint_updates"])
        return cls(seed=d.get("seed", 0), model=model, early_stop=EarlyStopConfig(**d.get("early_stop", {})),
                   continual=ContinualRunConfig(**cont), synth=SynthConfig(**d.get("synth", {})),
                   sweep_lambdas=tuple(d.get("sweep_lambdas", DEFAULT_LAMBDAS)),
                   sweep_batch_sizes=tuple(d.get("sweep_batch_sizes", DEFAULT_BATCH_SIZES)),
                   paths=dict(d.get("paths", {})))


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    """Parse the line format; unknown keys and malformed lines are ConfigErrors."""
    seed = None
    model: dict = {}
    early: dict = {}
    cont: dict = {}
    synth: dict = {}
    sweep: dict = {}
    paths: dict = {}
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in seen:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        seen.add(key)
        section, _, name = key.partition(".")
        try:
            if key == "seed":
                seed = int(value)
            elif section == "model" and name in _MODEL_KEYS:
                model[name] = _MODEL_KEYS[name](value)
            elif section == "early_stop" and name in _EARLY_KEYS:
                early[name] = _EARLY_KEYS[name](value)
            elif section == "stream" and name in _STREAM_KEYS:
                field_name, conv = _STREAM_KEYS[name]
                cont[field_name] = conv(value)
            elif section == "continual" and name in _CONTINUAL_KEYS:
                field_name, conv = _CONTINUAL_KEYS[name]
                cont[field_name] = conv(value)
            elif section == "synth" and name in _SYNTH_TYPES:
                synth[name] = _SYNTH_TYPES[name](value)
            elif section == "sweep" and name in _SWEEP_KEYS:
                sweep[name] = _SWEEP_KEYS[name](value)
            elif section == "paths" and name in _PATH_KEYS:
                paths[name] = value
            else:
                raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"{source}:{lineno}: bad value for {key!r}: {exc}") from exc
    try:
        cfg = RunConfig(
            seed=0 if seed is None else seed,
            model=model,
            early_stop=EarlyStopConfig(**early),
            continual=ContinualRunConfig(**cont),
            synth=SynthConfig(**({"seed": seed} if seed is not None else {}) | synth),
            sweep_lambdas=sweep.get("lambdas", DEFAULT_LAMBDAS),
            sweep_batch_sizes=sweep.get("batch_sizes", DEFAULT_BATCH_SIZES),
            paths=paths,
        )
        if model:
            ModelConfig(vocab_size=4, **model)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{source}: {exc}") from exc
    return cfg


def load_config(path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from exc
    return parse_config(text, str(p))
