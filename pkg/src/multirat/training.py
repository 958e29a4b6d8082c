"""Training methods: vanilla, contrastive-only, and the three-stage schedule.

Stage semantics:
  * stage 1: generator + predictor (+ embeddings) trained jointly;
  * stage 2: generator re-initialized and trained alone on the
    contrastive objective, predictor frozen;
  * stage 3: generator frozen, predictor retrained on the joint
    objective.

Freezing is exact: frozen tensors are excluded from the optimizer and
receive no gradients, so their bits never change within the stage.
Optimizer moment state is rebuilt at stage boundaries (the objective
changes, stale moments would be unjustified). Checkpoint selection is
minimum validation loss of the active stage's own objective, with the
stage's starting state included as a candidate.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import autodiff as ad
from .corpus import Document, Vocabulary
from .errors import ConfigError, NumericError
from .losses import (
    CONTRA_ONLY,
    JOINT,
    PREDICTOR_ONLY,
    DEFAULT_TEMPERATURE,
    LossWeights,
    total_loss,
)
from .model import (
    LONG,
    SHORT,
    Model,
    ModelConfig,
    forward_batch,
    pad_batch,
    reinitialize_generator,
)

VANILLA = "vanilla"
CONTRA = "contra"
THREE_STAGE = "3stage"
METHODS = (VANILLA, CONTRA, THREE_STAGE)


@dataclass
class TrainConfig:
    method: str = VANILLA
    mode: str = LONG
    epochs: tuple = (20, 20, 20)
    learning_rate: float = 1e-4
    batch_size: int = 250
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    temperature: float = DEFAULT_TEMPERATURE
    short_stage1_long: bool = True  # schedule rule: short runs start long
    train_embedding: bool = True  # False pins the table in every stage

    def validate(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}")
        if self.mode not in (LONG, SHORT):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if len(self.epochs) != 3 or any(e < 0 for e in self.epochs):
            raise ConfigError("epochs must be three non-negative stage budgets")
        active = 3 if self.method == THREE_STAGE else 1
        if any(e < 1 for e in self.epochs[:active]):
            raise ConfigError("every active stage needs at least one epoch")
        if self.learning_rate <= 0 and self.learning_rate != 0:
            raise ConfigError("learning_rate must be >= 0")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2 (contrastive pairing)")
        self.weights.validate()


@dataclass
class StageState:
    stage: int
    role: str
    frozen: frozenset  # over {"embedding", "generator", "predictor"}

    def trainable_flags(self) -> dict:
        return {g: g not in self.frozen for g in ("embedding", "generator", "predictor")}


@dataclass
class DataSplits:
    train: list[Document]
    valid: list[Document]


class MetricsLog:
    """Collects structured records; optionally mirrors them to a JSONL file."""

    def __init__(self, path=None):
        self.records = []
        self._path = path
        self._handle = open(path, "w", encoding="utf-8") if path else None

    def emit(self, record: dict):
        self.records.append(record)
        if self._handle is not None:
            self._handle.write(json.dumps(record, sort_keys=True) + "\n")
            self._handle.flush()

    def close(self):
        if self._handle is not None:
            self._handle.close()
            self._handle = None


class Adam:
    """Adam over a fixed set of named tensors (beta1=0.9, beta2=0.999, eps=1e-8)."""

    def __init__(self, params: dict, learning_rate: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = dict(params)
        self.lr = learning_rate
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self.t = 0

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        self.t += 1
        correct1 = 1.0 - self.beta1**self.t
        correct2 = 1.0 - self.beta2**self.t
        for name, p in self.params.items():
            if p.grad is None:
                continue  # no gradient path this step; moments untouched
            g = p.grad
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[name] / correct1
            v_hat = self.v[name] / correct2
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _batches(n: int, batch_size: int, rng=None):
    order = np.arange(n) if rng is None else rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def train_epoch(model: Model, docs: list[Document], optimizer: Adam,
                weights: LossWeights, state: StageState, batch_size: int,
                rng, temperature: float, log: Optional[MetricsLog] = None,
                epoch: int = 0) -> dict:
    """One seeded-shuffled pass; returns the mean loss breakdown."""
    if not docs:
        raise ConfigError("training data is empty")
    with_labels = state.role != CONTRA_ONLY
    sums, count = {}, 0
    for step, index in enumerate(_batches(len(docs), batch_size, rng)):
        chunk = [docs[i] for i in index]
        ids, valid, labels = pad_batch(chunk, with_labels=with_labels)
        optimizer.zero_grad()
        out = forward_batch(model, ids, valid)
        loss, breakdown = total_loss(out, labels, weights, state.role, temperature)
        if not np.isfinite(loss.data):
            raise NumericError(
                f"non-finite loss (stage {state.stage}, epoch {epoch}, batch {step})"
            )
        loss.backward()
        optimizer.step()
        if log is not None:
            log.emit({"kind": "step", "stage": state.stage, "epoch": epoch,
                      "step": step, **breakdown})
        for key, value in breakdown.items():
            sums[key] = sums.get(key, 0.0) + value * len(chunk)
        count += len(chunk)
    return {key: value / count for key, value in sums.items()}


def evaluate_loss(model: Model, docs: list[Document], weights: LossWeights,
                  role: str, batch_size: int, temperature: float) -> float:
    """Mean total objective over a split (no gradients, fixed order)."""
    with_labels = role != CONTRA_ONLY
    total, count = 0.0, 0
    for index in _batches(len(docs), batch_size):
        chunk = [docs[i] for i in index]
        ids, valid, labels = pad_batch(chunk, with_labels=with_labels)
        with ad.no_grad():
            out = forward_batch(model, ids, valid)
            loss, _ = total_loss(out, labels, weights, role, temperature)
        total += loss.item() * len(chunk)
        count += len(chunk)
    return total / count


# -- checkpointing -----------------------------------------------------------


@dataclass
class Checkpoint:
    method: str
    mode: str
    stage: int
    epoch: int
    val_loss: float
    config_hash: str
    model_config: ModelConfig
    vocab_tokens: list
    tensors: dict


def config_hash(model_config: ModelConfig, train_config: TrainConfig) -> str:
    """Stable digest of the resolved configuration (key order independent)."""
    payload = {
        "model": dataclasses.asdict(model_config),
        "train": dataclasses.asdict(train_config),
    }
    payload["train"]["epochs"] = list(train_config.epochs)
    canonical = json.dumps(payload, sort_keys=True)
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def snapshot_params(model: Model) -> dict:
    return {name: p.data.copy() for name, p in model.named_parameters().items()}


def restore_params(model: Model, tensors: dict):
    params = model.named_parameters()
    for name, value in tensors.items():
        params[name].data[...] = value


def make_checkpoint(model: Model, vocab: Vocabulary, method: str, stage: int,
                    epoch: int, val_loss: float, digest: str) -> Checkpoint:
    return Checkpoint(
        method=method, mode=model.mode, stage=stage, epoch=epoch,
        val_loss=val_loss, config_hash=digest,
        model_config=replace(model.config),
        vocab_tokens=vocab.tokens(),
        tensors=snapshot_params(model),
    )


def _savez_deterministic(path, arrays: dict):
    """npz writer with a pinned zip timestamp (re-runs are byte-identical)."""
    import io
    import zipfile

    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as archive:
        for name, value in arrays.items():
            buffer = io.BytesIO()
            np.lib.format.write_array(buffer, np.asarray(value))
            info = zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0))
            archive.writestr(info, buffer.getvalue())


def save_checkpoint(checkpoint: Checkpoint, path):
    meta = {
        "method": checkpoint.method,
        "mode": checkpoint.mode,
        "stage": checkpoint.stage,
        "epoch": checkpoint.epoch,
        "val_loss": checkpoint.val_loss,
        "config_hash": checkpoint.config_hash,
        "model_config": dataclasses.asdict(checkpoint.model_config),
        "vocab_tokens": checkpoint.vocab_tokens,
    }
    arrays = {"__meta__": np.array(json.dumps(meta))}
    arrays.update(
        (f"param/{name}", value) for name, value in checkpoint.tensors.items()
    )
    _savez_deterministic(path, arrays)


def load_checkpoint(path) -> Checkpoint:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["__meta__"][()]))
        tensors = {
            key[len("param/"):]: np.array(data[key])
            for key in data.files if key.startswith("param/")
        }
    return Checkpoint(
        method=meta["method"], mode=meta["mode"], stage=meta["stage"],
        epoch=meta["epoch"], val_loss=meta["val_loss"],
        config_hash=meta["config_hash"],
        model_config=ModelConfig(**meta["model_config"]),
        vocab_tokens=meta["vocab_tokens"],
        tensors=tensors,
    )


def model_from_checkpoint(checkpoint: Checkpoint) -> Model:
    """Rebuild the model; forward outputs are bit-identical to save time."""
    model = Model(len(checkpoint.vocab_tokens), checkpoint.model_config,
                  mode=checkpoint.mode)
    restore_params(model, checkpoint.tensors)
    return model


def clone_model(model: Model) -> Model:
    """Independent copy (same architecture, bit-identical parameters)."""
    twin = Model(model.embedding.shape[0], replace(model.config), mode=model.mode)
    restore_params(twin, snapshot_params(model))
    return twin


# -- stage driver -------------------------------------------------------------


def _stage_rng(seed: int, stage: int):
    return np.random.default_rng([seed, stage])


def run_stage(model: Model, splits: DataSplits, config: TrainConfig,
              weights: LossWeights, state: StageState, epochs: int,
              log: Optional[MetricsLog] = None, on_epoch=None) -> tuple:
    """Train one stage; leaves the model at its best-validation state.

    Returns (best_val_loss, best_epoch); epoch 0 is the untrained stage
    start, so the stage can never end worse than it began.
    """
    if not config.train_embedding:
        state = StageState(state.stage, state.role, state.frozen | {"embedding"})
    model.set_trainable(**state.trainable_flags())
    trainable = {
        name: p for name, p in model.named_parameters().items() if p.requires_grad
    }
    optimizer = Adam(trainable, config.learning_rate)
    rng = _stage_rng(config.seed, state.stage)

    def validation():
        return evaluate_loss(model, splits.valid, weights, state.role,
                             config.batch_size, config.temperature)

    best_val = validation()
    best_epoch = 0
    best_state = snapshot_params(model)
    if log is not None:
        log.emit({"kind": "epoch", "stage": state.stage, "epoch": 0,
                  "train": {}, "val_loss": best_val})
    for epoch in range(1, epochs + 1):
        train_means = train_epoch(model, splits.train, optimizer, weights, state,
                                  config.batch_size, rng, config.temperature,
                                  log, epoch)
        val = validation()
        if log is not None:
            log.emit({"kind": "epoch", "stage": state.stage, "epoch": epoch,
                      "train": train_means, "val_loss": val})
        if on_epoch is not None:
            on_epoch(state.stage, epoch, model)
        if val < best_val:
            best_val, best_epoch = val, epoch
            best_state = snapshot_params(model)
    restore_params(model, best_state)
    return best_val, best_epoch


def _finish(model, vocab, config, model_config, stage, epoch, val) -> Checkpoint:
    model.set_trainable(embedding=True, generator=True, predictor=True)
    digest = config_hash(model_config, config)
    return make_checkpoint(model, vocab, config.method, stage, epoch, val, digest)


def run_vanilla(model: Model, splits: DataSplits, config: TrainConfig,
                vocab: Vocabulary, log: Optional[MetricsLog] = None,
                on_epoch=None) -> Checkpoint:
    """Single-stage training on cross entropy plus mask regularizers."""
    config.validate()
    weights = replace(config.weights, contrastive=0.0)
    state = StageState(stage=1, role=JOINT, frozen=frozenset())
    val, epoch = run_stage(model, splits, config, weights, state,
                           config.epochs[0], log, on_epoch)
    return _finish(model, vocab, config, model.config, 1, epoch, val)


def run_contra(model: Model, splits: DataSplits, config: TrainConfig,
               vocab: Vocabulary, log: Optional[MetricsLog] = None,
               on_epoch=None) -> Checkpoint:
    """Single-stage, label-free training on the contrastive objective.

    Document labels are never read; the classifier heads and aggregation
    receive no gradient and stay at their initial values.
    """
    config.validate()
    state = StageState(stage=1, role=CONTRA_ONLY, frozen=frozenset())
    val, epoch = run_stage(model, splits, config, config.weights, state,
                           config.epochs[0], log, on_epoch)
    return _finish(model, vocab, config, model.config, 1, epoch, val)


def run_3stage(model: Model, splits: DataSplits, config: TrainConfig,
               vocab: Vocabulary, log: Optional[MetricsLog] = None,
               on_epoch=None) -> Checkpoint:
    """The three-stage schedule; returns the stage-3 best checkpoint.

    In short mode the first stage runs with a long-mode generator (when
    ``short_stage1_long`` is set); the stage-2 re-initialization then
    draws a short-mode generator. The re-init seed is derived from the
    run seed.
    """
    config.validate()
    stages = [
        StageState(stage=1, role=JOINT, frozen=frozenset()),
        StageState(stage=2, role=CONTRA_ONLY, frozen=frozenset({"predictor", "embedding"})),
        StageState(stage=3, role=PREDICTOR_ONLY, frozen=frozenset({"generator", "embedding"})),
    ]
    run_stage(model, splits, config, config.weights, stages[0], config.epochs[0],
              log, on_epoch)
    reinitialize_generator(model, seed=config.seed + 1_000_001, mode=config.mode)
    run_stage(model, splits, config, config.weights, stages[1], config.epochs[1],
              log, on_epoch)
    val, epoch = run_stage(model, splits, config, config.weights, stages[2],
                           config.epochs[2], log, on_epoch)
    return _finish(model, vocab, config, model.config, 3, epoch, val)


def build_model(vocab_size: int, model_config: ModelConfig, config: TrainConfig,
                embeddings=None) -> Model:
    """Construct the model in the correct starting mode for the method."""
    mode = config.mode
    if config.method == THREE_STAGE and config.mode == SHORT and config.short_stage1_long:
        mode = LONG
    return Model(vocab_size, model_config, mode=mode, embeddings=embeddings)


def run_method(model: Model, splits: DataSplits, config: TrainConfig,
               vocab: Vocabulary, log: Optional[MetricsLog] = None,
               on_epoch=None) -> Checkpoint:
    runner = {VANILLA: run_vanilla, CONTRA: run_contra, THREE_STAGE: run_3stage}
    return runner[config.method](model, splits, config, vocab, log, on_epoch)
