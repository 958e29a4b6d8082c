"""Generator-predictor architecture over the autodiff core.

The generator is a bidirectional recurrent encoder with per-aspect
scoring heads; per-token scores are normalized into a soft distribution
over aspects ("long" mode) or aspects plus a null class ("short" mode).
The predictor applies each aspect's mask row to the token embeddings
multiplicatively, runs a shared bidirectional encoder, mean-pools, and
feeds one binary classifier head per aspect; aspect logits are linearly
aggregated into the overall logit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .corpus import Document, EmbeddingTable
from .errors import NumericError

LONG = "long"
SHORT = "short"


@dataclass
class ModelConfig:
    """Architecture hyperparameters (reference scale by default)."""

    k_aspects: int = 5
    embed_dim: int = 200
    gen_hidden: int = 100
    pred_hidden: int = 100
    tau_mask: float = 1.0
    init_scale: float = 0.1
    seed: int = 0

    def validate(self):
        if self.k_aspects < 1:
            raise ValueError("k_aspects must be >= 1")
        if self.tau_mask <= 0:
            raise ValueError("tau_mask must be positive")


def _uniform(rng, shape, scale) -> Tensor:
    return Tensor(rng.uniform(-scale, scale, size=shape), requires_grad=True)


def _zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


@dataclass
class RnnParams:
    wx: Tensor
    wh: Tensor
    b: Tensor

    @classmethod
    def create(cls, rng, in_dim, hidden, scale):
        return cls(
            wx=_uniform(rng, (in_dim, hidden), scale),
            wh=_uniform(rng, (hidden, hidden), scale),
            b=_zeros(hidden),
        )

    def named(self, prefix):
        return {f"{prefix}.wx": self.wx, f"{prefix}.wh": self.wh, f"{prefix}.b": self.b}


@dataclass
class GeneratorParams:
    """Mask generator; ``mode`` fixes the head count (K or K+1 rows)."""

    mode: str
    k_aspects: int
    fwd: RnnParams
    bwd: RnnParams
    head_w: Tensor
    head_b: Tensor

    @property
    def n_rows(self) -> int:
        return self.k_aspects + (1 if self.mode == SHORT else 0)

    @classmethod
    def create(cls, rng, config: ModelConfig, mode: str):
        if mode not in (LONG, SHORT):
            raise ValueError(f"unknown mode {mode!r}")
        rows = config.k_aspects + (1 if mode == SHORT else 0)
        return cls(
            mode=mode,
            k_aspects=config.k_aspects,
            fwd=RnnParams.create(rng, config.embed_dim, config.gen_hidden, config.init_scale),
            bwd=RnnParams.create(rng, config.embed_dim, config.gen_hidden, config.init_scale),
            head_w=_uniform(rng, (2 * config.gen_hidden, rows), config.init_scale),
            head_b=_zeros(rows),
        )

    def named(self, prefix="generator"):
        out = {}
        out.update(self.fwd.named(f"{prefix}.fwd"))
        out.update(self.bwd.named(f"{prefix}.bwd"))
        out[f"{prefix}.head.w"] = self.head_w
        out[f"{prefix}.head.b"] = self.head_b
        return out


@dataclass
class PredictorParams:
    """Shared encoder, per-aspect classifier heads, linear aggregation."""

    k_aspects: int
    fwd: RnnParams
    bwd: RnnParams
    head_w: Tensor
    head_b: Tensor
    agg_w: Tensor
    agg_b: Tensor

    @classmethod
    def create(cls, rng, config: ModelConfig):
        return cls(
            k_aspects=config.k_aspects,
            fwd=RnnParams.create(rng, config.embed_dim, config.pred_hidden, config.init_scale),
            bwd=RnnParams.create(rng, config.embed_dim, config.pred_hidden, config.init_scale),
            head_w=_uniform(rng, (2 * config.pred_hidden, config.k_aspects), config.init_scale),
            head_b=_zeros(config.k_aspects),
            agg_w=_uniform(rng, (config.k_aspects,), config.init_scale),
            agg_b=_zeros(()),
        )

    def named(self, prefix="predictor"):
        out = {}
        out.update(self.fwd.named(f"{prefix}.fwd"))
        out.update(self.bwd.named(f"{prefix}.bwd"))
        out[f"{prefix}.head.w"] = self.head_w
        out[f"{prefix}.head.b"] = self.head_b
        out[f"{prefix}.agg.w"] = self.agg_w
        out[f"{prefix}.agg.b"] = self.agg_b
        return out


@dataclass
class ModelOutput:
    """Single-document forward results (numpy views)."""

    masks: np.ndarray          # (rows, L) column-stochastic
    embeddings: np.ndarray     # (K, 2h) unit rows
    aspect_logits: np.ndarray  # (K,)
    overall_logit: float


@dataclass
class BatchOutput:
    """Batched forward results as live graph nodes (for losses)."""

    masks: Tensor          # (B, rows, L)
    reps: Tensor           # (B, K, 2h) pre-normalization
    embeddings: Tensor     # (B, K, 2h) unit rows
    aspect_logits: Tensor  # (B, K)
    overall_logit: Tensor  # (B,)
    valid: np.ndarray      # (B, L) float {0,1}
    mode: str


class Model:
    """Embedding table + generator + predictor with grouped parameters."""

    def __init__(self, vocab_size: int, config: ModelConfig, mode: str = LONG,
                 embeddings: Optional[EmbeddingTable] = None):
        config.validate()
        self.config = config
        rng = np.random.default_rng(config.seed)
        if embeddings is not None:
            if embeddings.dim != config.embed_dim:
                raise ValueError("embedding table dim disagrees with config.embed_dim")
            table = np.array(embeddings.matrix, dtype=np.float64)
        else:
            table = rng.uniform(-0.05, 0.05, size=(vocab_size, config.embed_dim))
            table[0] = 0.0  # padding row
        self.embedding = Tensor(table, requires_grad=True)
        self.generator = GeneratorParams.create(rng, config, mode)
        self.predictor = PredictorParams.create(rng, config)

    @property
    def mode(self) -> str:
        return self.generator.mode

    @property
    def k_aspects(self) -> int:
        return self.config.k_aspects

    def named_parameters(self) -> dict:
        out = {"embedding.table": self.embedding}
        out.update(self.generator.named())
        out.update(self.predictor.named())
        return out

    def group(self, name: str) -> dict:
        """Parameters of one group: "embedding" | "generator" | "predictor"."""
        if name == "embedding":
            return {"embedding.table": self.embedding}
        if name == "generator":
            return self.generator.named()
        if name == "predictor":
            return self.predictor.named()
        raise ValueError(f"unknown parameter group {name!r}")

    def set_trainable(self, embedding: bool, generator: bool, predictor: bool):
        for flag, group in ((embedding, "embedding"), (generator, "generator"),
                            (predictor, "predictor")):
            for tensor in self.group(group).values():
                tensor.requires_grad = flag
                tensor.grad = None


def reinitialize_generator(model: Model, seed: int, mode: Optional[str] = None) -> None:
    """Redraw generator parameters from the construction distribution.

    The embedding table and predictor are untouched. ``mode`` switches the
    head layout (used when a schedule changes rationale-length regime at a
    stage boundary).
    """
    rng = np.random.default_rng(seed)
    model.generator = GeneratorParams.create(rng, model.config, mode or model.mode)


# -- batch assembly ---------------------------------------------------------


def pad_batch(docs: list[Document], with_labels: bool = True):
    """Right-pad documents into (ids, valid[, labels]) arrays."""
    max_len = max(doc.length for doc in docs)
    ids = np.zeros((len(docs), max_len), dtype=np.int64)
    valid = np.zeros((len(docs), max_len))
    for i, doc in enumerate(docs):
        ids[i, : doc.length] = doc.tokens
        valid[i, : doc.length] = 1.0
    if not with_labels:
        return ids, valid, None
    labels = np.array([doc.overall_label for doc in docs], dtype=np.float64)
    return ids, valid, labels


# -- forward pieces ---------------------------------------------------------


def embed_batch(model: Model, ids: np.ndarray, valid: np.ndarray) -> Tensor:
    x = ad.embedding_lookup(model.embedding, ids)
    return ad.mul(x, Tensor(valid[:, :, None]))


def birnn(x: Tensor, valid: np.ndarray, fwd: RnnParams, bwd: RnnParams) -> Tensor:
    hf = ad.rnn_sequence(x, valid, fwd.wx, fwd.wh, fwd.b)
    xr = ad.flip(x, axis=1)
    hb = ad.rnn_sequence(xr, valid[:, ::-1], bwd.wx, bwd.wh, bwd.b)
    return ad.concat([hf, ad.flip(hb, axis=1)], axis=2)


def generate_masks_batch(model: Model, x: Tensor, valid: np.ndarray) -> Tensor:
    """Per-token soft distributions over mask rows, shape (B, rows, L)."""
    gen = model.generator
    batch, steps = valid.shape
    states = birnn(x, valid, gen.fwd, gen.bwd)
    flat = ad.reshape(states, (batch * steps, states.shape[2]))
    scores = ad.add(ad.matmul(flat, gen.head_w), gen.head_b)
    scores = ad.mul(scores, 1.0 / model.config.tau_mask)
    probs = ad.softmax_last(ad.reshape(scores, (batch, steps, gen.n_rows)))
    return ad.transpose(probs, (0, 2, 1))


def _mean_pool(states: Tensor, valid: np.ndarray) -> Tensor:
    lengths = valid.sum(axis=1, keepdims=True)
    pooled = ad.tsum(ad.mul(states, Tensor(valid[:, :, None])), axis=1)
    return ad.mul(pooled, Tensor(1.0 / lengths))


def predictor_forward(model: Model, x: Tensor, valid: np.ndarray, masks) -> BatchOutput:
    """Predictor pass for given masks (graph node or constant array).

    The null row of short-mode masks is never encoded; only the first K
    rows gate the embeddings.
    """
    pred = model.predictor
    k = model.k_aspects
    masks = ad.as_tensor(masks)
    batch, steps = valid.shape
    dim = model.config.embed_dim

    rows = masks[:, :k, :]  # (B, K, L)
    gated = ad.mul(
        ad.reshape(x, (batch, 1, steps, dim)),
        ad.reshape(rows, (batch, k, steps, 1)),
    )
    gated = ad.reshape(gated, (batch * k, steps, dim))
    valid_k = np.repeat(valid, k, axis=0)

    states = birnn(gated, valid_k, pred.fwd, pred.bwd)
    reps = ad.reshape(_mean_pool(states, valid_k), (batch, k, states.shape[2]))
    unit = ad.l2_normalize(reps, axis=2)

    head_w = ad.reshape(ad.transpose(pred.head_w, (1, 0)), (1, k, states.shape[2]))
    aspect_logits = ad.add(ad.tsum(ad.mul(reps, head_w), axis=2), pred.head_b)
    overall = ad.add(
        ad.tsum(ad.mul(aspect_logits, ad.reshape(pred.agg_w, (1, k))), axis=1),
        pred.agg_b,
    )
    return BatchOutput(
        masks=masks, reps=reps, embeddings=unit, aspect_logits=aspect_logits,
        overall_logit=overall, valid=valid, mode=model.mode,
    )


def forward_batch(model: Model, ids: np.ndarray, valid: np.ndarray) -> BatchOutput:
    x = embed_batch(model, ids, valid)
    masks = generate_masks_batch(model, x, valid)
    return predictor_forward(model, x, valid, masks)


# -- single-document operations ---------------------------------------------


def generate_masks(model: Model, doc: Document) -> np.ndarray:
    """Soft mask matrix (rows x L) for one document."""
    ids, valid, _ = pad_batch([doc], with_labels=False)
    with ad.no_grad():
        x = embed_batch(model, ids, valid)
        masks = generate_masks_batch(model, x, valid)
    return masks.data[0]

def encode_aspect(model: Model, doc: Document, mask_row: np.ndarray) -> np.ndarray:
    """Pre-normalization rationale representation for one mask row."""
    mask_row = np.asarray(mask_row, dtype=np.float64)
    if mask_row.shape != (doc.length,):
        raise ValueError("mask_row must have one weight per token")
    ids, valid, _ = pad_batch([doc], with_labels=False)
    with ad.no_grad():
        x = embed_batch(model, ids, valid)
        gated = ad.mul(x, Tensor(mask_row[None, :, None]))
        states = birnn(gated, valid, model.predictor.fwd, model.predictor.bwd)
        pooled = _mean_pool(states, valid)
    return pooled.data[0]

def forward(model: Model, doc: Document) -> ModelOutput:
    """Full single-document pass (masks, unit embeddings, logits)."""
    ids, valid, _ = pad_batch([doc], with_labels=False)
    with ad.no_grad():
        out = forward_batch(model, ids, valid)
    return ModelOutput(
        masks=out.masks.data[0],
        embeddings=out.embeddings.data[0],
        aspect_logits=out.aspect_logits.data[0],
        overall_logit=float(out.overall_logit.data[0]),
    )


# -- gradient checking --------------------------------------------------------


def grad_check(loss_fn, params, epsilon: float = 1e-3, samples_per_tensor: int = 4,
               seed: int = 0) -> float:
    """Max discrepancy between analytic gradients and central differences.

    ``loss_fn`` is a zero-argument callable returning a scalar graph node
    that depends on ``params`` (dict or list of tensors). A sampled
    coordinate subset of every tensor is perturbed. Relative error is
    used unless |analytic| < 1e-6, where absolute error applies.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    tensors = list(params.values()) if isinstance(params, dict) else list(params)
    for t in tensors:
        t.grad = None
    loss = loss_fn()
    if not np.isfinite(loss.data):
        raise NumericError("loss is not finite at the evaluation point")
    loss.backward()
    analytic = [None if t.grad is None else t.grad.copy() for t in tensors]

    rng = np.random.default_rng(seed)
    worst = 0.0
    for tensor, grad in zip(tensors, analytic):
        size = tensor.data.size
        if size == 0:
            continue
        count = min(samples_per_tensor, size)
        coords = rng.choice(size, size=count, replace=False)
        flat = tensor.data.reshape(-1)
        for coord in coords:
            original = flat[coord]
            flat[coord] = original + epsilon
            up = loss_fn().item()
            flat[coord] = original - epsilon
            down = loss_fn().item()
            flat[coord] = original
            numeric = (up - down) / (2.0 * epsilon)
            a = 0.0 if grad is None else float(grad.reshape(-1)[coord])
            diff = abs(a - numeric)
            if abs(a) >= 1e-6:
                diff = diff / max(abs(a), abs(numeric))
            worst = max(worst, diff)
    return worst
