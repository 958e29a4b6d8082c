"""Training objectives: cross entropy, aspect-contrastive loss, regularizers.

The contrastive loss treats every per-aspect rationale representation in
a batch as one sample whose class is its aspect index: same-aspect pairs
are pulled together and different-aspect pairs pushed apart. Inner
products are temperature-scaled and log-sum-exp stabilized (mandatory:
the default temperature 0.07 scales logits by ~14x).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError
from .model import SHORT, BatchOutput

DEFAULT_TEMPERATURE = 0.07

JOINT = "joint"
CONTRA_ONLY = "contra_only"
PREDICTOR_ONLY = "predictor_only"
ROLES = (JOINT, CONTRA_ONLY, PREDICTOR_ONLY)


@dataclass
class LossWeights:
    """Mixing weights for the total objective."""

    cross_entropy: float = 1.0
    contrastive: float = 1.0
    length: float = 1.0
    continuity: float = 0.1
    target_selected_fraction: float = 0.8

    def validate(self):
        for name in ("cross_entropy", "contrastive", "length", "continuity"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise ConfigError(f"loss weight {name} must be finite and >= 0")
        if not 0.0 < self.target_selected_fraction <= 1.0:
            raise ConfigError("target_selected_fraction must lie in (0, 1]")


@dataclass
class ContrastiveBatch:
    """Unit embeddings with integer class labels (aspect indices)."""

    embeddings: Tensor
    labels: np.ndarray
    temperature: float = DEFAULT_TEMPERATURE

    def validate(self):
        n = self.embeddings.shape[0]
        if n == 0:
            raise ValueError("contrastive batch is empty")
        if len(self.labels) != n:
            raise ValueError("embeddings and labels disagree in length")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")


def cross_entropy(logit, label) -> Tensor:
    """Stable binary cross entropy from logits; mean over any batch shape."""
    logit = ad.as_tensor(logit)
    label = np.asarray(label, dtype=np.float64)
    per = ad.add(ad.softplus(logit), ad.mul(logit, Tensor(-label)))
    return ad.tmean(per) if per.data.ndim else per


def contrastive_loss(batch: ContrastiveBatch) -> Tensor:
    """Class-supervised contrastive loss over one batch of embeddings.

    For each anchor the log-ratio of a positive's similarity against all
    other samples is averaged over that anchor's positives; anchors with
    no same-class partner contribute zero. The result is the negated sum
    over anchors.
    """
    batch.validate()
    z = ad.as_tensor(batch.embeddings)
    labels = np.asarray(batch.labels)
    n = z.shape[0]
    if n < 2:
        return Tensor(0.0)

    sims = ad.mul(ad.matmul(z, ad.transpose(z, (1, 0))), 1.0 / batch.temperature)
    eye = np.eye(n, dtype=bool)
    # row-wise max over l != i, detached: stabilization shift only
    shift = np.where(eye, -np.inf, sims.data).max(axis=1, keepdims=True)
    exp = ad.mul(ad.texp(ad.add(sims, Tensor(-shift))), Tensor(~eye * 1.0))
    log_denom = ad.add(ad.tlog(ad.tsum(exp, axis=1)), Tensor(shift[:, 0]))

    positives = (~eye) & (labels[:, None] == labels[None, :])
    counts = positives.sum(axis=1)
    anchored = counts > 0
    weights = np.where(
        anchored[:, None], positives / np.maximum(counts, 1)[:, None], 0.0
    )
    pulled = ad.tsum(ad.mul(sims, Tensor(weights)))
    pushed = ad.tsum(ad.mul(log_denom, Tensor(anchored * 1.0)))
    return ad.add(ad.mul(pulled, -1.0), pushed)


def _as_mask_batch(masks, valid):
    masks = ad.as_tensor(masks)
    if masks.data.ndim == 2:
        masks = ad.reshape(masks, (1,) + masks.shape)
    if valid is None:
        valid = np.ones((masks.shape[0], masks.shape[2]))
    return masks, np.asarray(valid, dtype=np.float64)


def length_regularizer(masks, k_aspects: int, target: float, valid=None) -> Tensor:
    """(selected fraction - target)^2, averaged over documents (short mode).

    Selected fraction is one minus the mean null-row mass over a
    document's real tokens.
    """
    masks, valid = _as_mask_batch(masks, valid)
    if masks.shape[1] != k_aspects + 1:
        raise ValueError("length regularizer requires short-mode masks (null row present)")
    lengths = valid.sum(axis=1)
    null_mass = ad.mul(
        ad.tsum(ad.mul(masks[:, k_aspects, :], Tensor(valid)), axis=1),
        Tensor(1.0 / lengths),
    )
    deviation = ad.add(ad.mul(null_mass, -1.0), 1.0 - target)
    return ad.tmean(ad.mul(deviation, deviation))


def continuity_regularizer(masks, valid=None) -> Tensor:
    """Mean squared difference between adjacent mask columns.

    Averaged over rows and the document's valid adjacent pairs, then over
    documents; single-token documents contribute zero.
    """
    masks, valid = _as_mask_batch(masks, valid)
    batch, rows, steps = masks.shape
    if steps < 2:
        return Tensor(0.0)
    diffs = ad.add(masks[:, :, 1:], ad.mul(masks[:, :, :-1], -1.0))
    pair_valid = (valid[:, 1:] * valid[:, :-1])[:, None, :]
    sq = ad.mul(ad.mul(diffs, diffs), Tensor(pair_valid))
    pair_counts = np.maximum(pair_valid[:, 0, :].sum(axis=1), 1.0)
    per_doc = ad.mul(ad.tsum(sq, axis=(1, 2)), Tensor(1.0 / (rows * pair_counts)))
    return ad.tmean(per_doc)


def total_loss(output: BatchOutput, labels, weights: LossWeights, role: str,
               temperature: float = DEFAULT_TEMPERATURE):
    """Weighted stage objective; returns (total node, per-term breakdown).

    Roles: "joint" mixes everything; "contra_only" never touches labels;
    "predictor_only" uses the joint formula (masks come from a frozen
    generator). Breakdown values are the weighted contributions and sum
    to the total exactly.
    """
    if role not in ROLES:
        raise ConfigError(f"unknown stage role {role!r}")
    weights.validate()
    if role == CONTRA_ONLY and weights.contrastive == 0:
        raise ConfigError("contra_only stage requires a nonzero contrastive weight")

    k = output.aspect_logits.shape[1]
    batch = output.aspect_logits.shape[0]
    terms = {}

    if role != CONTRA_ONLY and weights.cross_entropy > 0:
        if labels is None:
            raise ConfigError(f"labels are required for the {role} role")
        ce = cross_entropy(output.overall_logit, labels)
        terms["cross_entropy"] = ad.mul(ce, weights.cross_entropy)
    if weights.contrastive > 0:
        flat = ad.reshape(output.embeddings, (batch * k, output.embeddings.shape[2]))
        contra = contrastive_loss(
            ContrastiveBatch(flat, np.tile(np.arange(k), batch), temperature)
        )
        # per-sample mean keeps the mixing weights batch-size independent
        terms["contrastive"] = ad.mul(contra, weights.contrastive / (batch * k))
    if output.mode == SHORT and weights.length > 0:
        reg = length_regularizer(
            output.masks, k, weights.target_selected_fraction, output.valid
        )
        terms["length"] = ad.mul(reg, weights.length)
    if weights.continuity > 0:
        reg = continuity_regularizer(output.masks, output.valid)
        terms["continuity"] = ad.mul(reg, weights.continuity)

    total = Tensor(0.0)
    for term in terms.values():
        total = ad.add(total, term)
    breakdown = {name: term.item() for name, term in terms.items()}
    for name in ("cross_entropy", "contrastive", "length", "continuity"):
        breakdown.setdefault(name, 0.0)
    breakdown["total"] = total.item()
    return total, breakdown
