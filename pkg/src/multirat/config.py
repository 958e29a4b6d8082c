"""Run configuration: strict JSON parsing, resolution, and hashing.

Config files are JSON objects whose keys mirror the dataclass fields
below; unknown keys are a hard error so typos cannot silently change a
run. Exactly one of ``data.synthetic`` / ``data.paths`` must be present.
The config hash is taken over the canonical (key-sorted) resolved dump,
so it is stable under key reordering.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from typing import Optional

from .corpus import SyntheticSpec
from .errors import ConfigError
from .losses import LossWeights
from .model import ModelConfig
from .probe import ProbeSpec
from .training import TrainConfig


@dataclass
class DataPaths:
    train: str = ""
    valid: str = ""
    test: str = ""
    annotations: str = ""
    embeddings: str = ""  # optional; empty means seeded-random table


@dataclass
class DataConfig:
    synthetic: Optional[SyntheticSpec] = None
    paths: Optional[DataPaths] = None

    def validate(self):
        if (self.synthetic is None) == (self.paths is None):
            raise ConfigError("exactly one of data.synthetic / data.paths is required")


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    probe: Optional[ProbeSpec] = None
    probe_seeds: tuple = (0, 1, 2, 3, 4)
    seed: Optional[int] = None  # single knob overriding every component seed
    out_dir: str = "runs/out"

    def resolve(self, seed_override: Optional[int] = None,
                out_override: Optional[str] = None) -> "RunConfig":
        """Apply seed/out overrides and propagate the seed everywhere."""
        cfg = _deep_copy(self)
        if out_override:
            cfg.out_dir = out_override
        seed = seed_override if seed_override is not None else cfg.seed
        if seed is not None:
            cfg.seed = seed
            cfg.train.seed = seed
            cfg.model.seed = seed
            if cfg.data.synthetic is not None:
                cfg.data.synthetic = dataclasses.replace(cfg.data.synthetic, seed=seed)
            if cfg.probe is not None:
                cfg.probe = dataclasses.replace(cfg.probe, seed=seed)
        return cfg

    def to_dict(self) -> dict:
        out = {
            "data": {
                "synthetic": self.data.synthetic.to_dict() if self.data.synthetic else None,
                "paths": dataclasses.asdict(self.data.paths) if self.data.paths else None,
            },
            "model": dataclasses.asdict(self.model),
            "train": dataclasses.asdict(self.train),
            "probe": dataclasses.asdict(self.probe) if self.probe else None,
            "probe_seeds": list(self.probe_seeds),
            "seed": self.seed,
            "out_dir": self.out_dir,
        }
        out["train"]["epochs"] = list(self.train.epochs)
        if self.probe:
            out["probe"]["method_epochs"] = list(self.probe.method_epochs)
        return out

    def hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def _deep_copy(cfg: RunConfig) -> RunConfig:
    return parse_config(json.loads(json.dumps(cfg.to_dict())))


_TUPLE_FIELDS = {"epochs", "split", "method_epochs", "probe_seeds"}


def _build(cls, payload, context):
    if payload is None:
        return None
    if not isinstance(payload, dict):
        raise ConfigError(f"{context}: expected an object")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(payload) - set(names))
    if unknown:
        raise ConfigError(f"{context}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for name, value in payload.items():
        kwargs[name] = _coerce(name, value, f"{context}.{name}")
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{context}: {exc}") from exc


def _coerce(name, value, context):
    if name in _TUPLE_FIELDS and isinstance(value, list):
        return tuple(value)
    if name == "weights" and isinstance(value, dict):
        return _build(LossWeights, value, context)
    return value


def parse_config(payload: dict) -> RunConfig:
    """Build a RunConfig from a decoded JSON object (strict keys)."""
    if not isinstance(payload, dict):
        raise ConfigError("config root must be a JSON object")
    known = {"data", "model", "train", "probe", "probe_seeds", "seed", "out_dir"}
    unknown = sorted(set(payload) - known)
    if unknown:
        raise ConfigError(f"config: unknown key(s) {', '.join(unknown)}")

    data_payload = payload.get("data") or {}
    if not isinstance(data_payload, dict):
        raise ConfigError("config.data: expected an object")
    data_unknown = sorted(set(data_payload) - {"synthetic", "paths"})
    if data_unknown:
        raise ConfigError(f"config.data: unknown key(s) {', '.join(data_unknown)}")
    data = DataConfig(
        synthetic=_build(SyntheticSpec, data_payload.get("synthetic"), "config.data.synthetic"),
        paths=_build(DataPaths, data_payload.get("paths"), "config.data.paths"),
    )

    cfg = RunConfig(
        data=data,
        model=_build(ModelConfig, payload.get("model") or {}, "config.model"),
        train=_build(TrainConfig, payload.get("train") or {}, "config.train"),
        probe=_build(ProbeSpec, payload.get("probe"), "config.probe"),
        probe_seeds=tuple(payload.get("probe_seeds", (0, 1, 2, 3, 4))),
        seed=payload.get("seed"),
        out_dir=payload.get("out_dir", "runs/out"),
    )
    return cfg


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as handle:
            payload = json.load(handle)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return parse_config(payload)
