"""Executable interlocking probe.

Builds a two-aspect corpus containing a strong signal (the aspect-0
block, fidelity ``p_strong`` to the label) and a single weaker decoy
token (fidelity ``p_weak``), drives the model into the decoy-reading
equilibrium, and measures whether a training method escapes it.

The trap: the generator is pre-trained by mask supervision to select
the decoy (and noise) while hiding both aspect blocks behind the null
row; the predictor is then trained on those selections only. A frozen
trapped predictor scores the informative selection *worse* than the
decoy selection - the operational interlocking signature - because it
has never seen the informative tokens.

Escape is judged on the strong-token selection rate: the fraction of
aspect-0 gold tokens whose hardened mask row is not the null row; a
trial escapes when the final rate exceeds 0.5 (strictly between the
trapped ~0 and the informed ~1 rates; the summary also reports the
neighboring thresholds).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .corpus import CorpusBundle, Document, SyntheticSpec, generate_synthetic, token_role
from .errors import ConfigError
from .losses import LossWeights, cross_entropy
from .model import (
    SHORT,
    Model,
    ModelConfig,
    embed_batch,
    forward_batch,
    generate_masks_batch,
    pad_batch,
    predictor_forward,
)
from .training import (
    THREE_STAGE,
    VANILLA,
    Adam,
    TrainConfig,
    clone_model,
    evaluate_loss,
    run_3stage,
    run_vanilla,
)

DECOY_ROW = 0
SPARE_ROW = 1
STRONG_ROLE = "aspect-0"
DECOY_ROLE = "spurious"


@dataclass(frozen=True)
class ProbeSpec:
    p_strong: float = 0.95
    p_weak: float = 0.75
    corpus_size: int = 500
    trap_epochs: int = 40
    mask_pretrain_epochs: int = 15
    doc_length: int = 16
    tokens_per_aspect: int = 3
    embed_dim: int = 24
    hidden: int = 16
    learning_rate: float = 3e-3
    batch_size: int = 50
    method_epochs: tuple = (6, 10, 10)
    seed: int = 0

    def validate(self):
        if not (0.5 < self.p_weak <= self.p_strong <= 1.0):
            raise ConfigError("need p_strong >= p_weak > 0.5")
        if self.corpus_size < 50:
            raise ConfigError("probe corpus too small to be meaningful")

    @property
    def degenerate(self) -> bool:
        return self.p_strong == self.p_weak

    def synthetic_spec(self, seed: int) -> SyntheticSpec:
        return SyntheticSpec(
            k_aspects=2,
            signal_vocab=6,
            spurious_vocab=4,
            noise_vocab=20,
            p_strong=self.p_strong,
            p_weak=self.p_weak,
            tokens_per_aspect=self.tokens_per_aspect,
            spurious_tokens=1,
            doc_length=self.doc_length,
            corpus_size=self.corpus_size,
            annotated_size=0,
            seed=seed,
        )

    def train_config(self, method: str, seed: int) -> TrainConfig:
        selected = 2 * self.tokens_per_aspect / self.doc_length
        return TrainConfig(
            method=method,
            mode=SHORT,
            epochs=self.method_epochs,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            seed=seed,
            weights=LossWeights(target_selected_fraction=selected),
            short_stage1_long=False,  # the trap lives in short mode
            train_embedding=False,  # isolate generator-predictor dynamics
        )


@dataclass
class ProbeTrap:
    model: Model
    bundle: CorpusBundle
    decoy_rate: float
    trapped_ce: float


@dataclass
class ProbeResult:
    method: str
    seed: int
    escaped: Optional[bool]
    strong_rate: float
    final_ce: float
    rate_history: list = field(default_factory=list)
    degenerate: bool = False


# -- role-based hard masks ----------------------------------------------------


def role_rows(doc: Document, assignment: dict, n_rows: int) -> np.ndarray:
    """Target row per token from its synthetic role (default: null row)."""
    rows = np.full(doc.length, n_rows - 1, dtype=np.int64)
    for t, word in enumerate(doc.raw_tokens):
        role = token_role(word)
        if role in assignment:
            rows[t] = assignment[role]
    return rows


def build_role_masks(docs: list[Document], assignment: dict, n_rows: int,
                     steps: int) -> np.ndarray:
    """Hard one-hot mask batch (B, rows, steps) realizing an assignment."""
    masks = np.zeros((len(docs), n_rows, steps))
    for i, doc in enumerate(docs):
        rows = role_rows(doc, assignment, n_rows)
        masks[i, rows, np.arange(doc.length)] = 1.0
    return masks


def trap_assignment() -> dict:
    """Decoy visible, noise on the spare row, both aspect blocks hidden."""
    return {DECOY_ROLE: DECOY_ROW, "noise": SPARE_ROW}


def informative_assignment() -> dict:
    """The selection the trap hides: aspect blocks visible, decoy hidden."""
    return {"aspect-0": DECOY_ROW, "aspect-1": SPARE_ROW}


# -- trap construction ---------------------------------------------------------


def _pretrain_generator_masks(model: Model, docs: list[Document], assignment: dict,
                              epochs: int, learning_rate: float, batch_size: int,
                              rng) -> None:
    """Supervised mask pre-training: cross entropy against target rows."""
    n_rows = model.generator.n_rows
    params = {**model.generator.named(), "embedding.table": model.embedding}
    model.set_trainable(embedding=True, generator=True, predictor=False)
    optimizer = Adam(params, learning_rate)
    for _ in range(epochs):
        order = rng.permutation(len(docs))
        for start in range(0, len(docs), batch_size):
            chunk = [docs[i] for i in order[start : start + batch_size]]
            ids, valid, _ = pad_batch(chunk, with_labels=False)
            onehot = build_role_masks(chunk, assignment, n_rows, ids.shape[1])
            optimizer.zero_grad()
            x = embed_batch(model, ids, valid)
            masks = generate_masks_batch(model, x, valid)
            picked = ad.tsum(ad.mul(ad.tlog(masks), Tensor(onehot * valid[:, None, :])))
            loss = ad.mul(picked, -1.0 / valid.sum())
            loss.backward()
            optimizer.step()
    model.set_trainable(embedding=True, generator=True, predictor=True)


def ce_at_masks(model: Model, docs: list[Document], masks: np.ndarray) -> float:
    """Cross entropy of the predictor when fed fixed mask matrices."""
    ids, valid, labels = pad_batch(docs)
    with ad.no_grad():
        x = embed_batch(model, ids, valid)
        out = predictor_forward(model, x, valid, masks)
        loss = cross_entropy(out.overall_logit, labels)
    return loss.item()


def retrain_predictor_on_masks(model: Model, docs: list[Document], masks: np.ndarray,
                               epochs: int, learning_rate: float, batch_size: int,
                               rng) -> None:
    """Train only the predictor against fixed selections (trap or oracle)."""
    model.set_trainable(embedding=False, generator=False, predictor=True)
    optimizer = Adam(model.group("predictor"), learning_rate)
    for _ in range(epochs):
        order = rng.permutation(len(docs))
        for start in range(0, len(docs), batch_size):
            index = order[start : start + batch_size]
            chunk = [docs[i] for i in index]
            ids, valid, labels = pad_batch(chunk)
            optimizer.zero_grad()
            x = embed_batch(model, ids, valid)
            out = predictor_forward(model, x, valid, masks[index][:, :, : ids.shape[1]])
            loss = cross_entropy(out.overall_logit, labels)
            loss.backward()
            optimizer.step()
    model.set_trainable(embedding=True, generator=True, predictor=True)


def selection_rate(model: Model, docs: list[Document], role: str,
                   batch_size: int = 128) -> float:
    """Fraction of tokens of a synthetic role selected off the null row."""
    null_row = model.k_aspects  # only meaningful in short mode
    hit = total = 0
    for start in range(0, len(docs), batch_size):
        chunk = docs[start : start + batch_size]
        ids, valid, _ = pad_batch(chunk, with_labels=False)
        with ad.no_grad():
            x = embed_batch(model, ids, valid)
            masks = generate_masks_batch(model, x, valid)
        winners = np.argmax(masks.data, axis=1)
        for i, doc in enumerate(chunk):
            for t, word in enumerate(doc.raw_tokens):
                if token_role(word) == role:
                    total += 1
                    hit += int(winners[i, t] != null_row)
    return hit / total if total else 0.0


def build_trap(spec: ProbeSpec, seed: Optional[int] = None) -> ProbeTrap:
    """Construct the trapped corpus + model pair for one trial seed."""
    spec.validate()
    if spec.degenerate:
        raise ConfigError("p_strong == p_weak: trap and optimum coincide (degenerate)")
    seed = spec.seed if seed is None else seed
    bundle = generate_synthetic(spec.synthetic_spec(seed))
    config = ModelConfig(
        k_aspects=2, embed_dim=spec.embed_dim, gen_hidden=spec.hidden,
        pred_hidden=spec.hidden, seed=seed,
    )
    model = Model(len(bundle.vocab), config, mode=SHORT)
    rng = np.random.default_rng([seed, 101])

    _pretrain_generator_masks(model, bundle.train, trap_assignment(),
                              spec.mask_pretrain_epochs, spec.learning_rate,
                              spec.batch_size, rng)
    ids, valid, _ = pad_batch(bundle.train, with_labels=False)
    trap_masks = build_role_masks(bundle.train, trap_assignment(),
                                  model.generator.n_rows, ids.shape[1])
    retrain_predictor_on_masks(model, bundle.train, trap_masks, spec.trap_epochs,
                               spec.learning_rate, spec.batch_size, rng)

    eval_docs = bundle.valid
    eval_masks = build_role_masks(eval_docs, trap_assignment(),
                                  model.generator.n_rows,
                                  max(d.length for d in eval_docs))
    return ProbeTrap(
        model=model,
        bundle=bundle,
        decoy_rate=selection_rate(model, eval_docs, DECOY_ROLE),
        trapped_ce=ce_at_masks(model, eval_docs, eval_masks),
    )


# -- landscape scan -------------------------------------------------------------


def landscape_scan(model: Model, docs: list[Document], steps: int,
                   start_assignment: Optional[dict] = None,
                   end_assignment: Optional[dict] = None) -> list:
    """Frozen-predictor cross entropy along a straight mask interpolation.

    Endpoints default to the decoy-selection and informative-selection
    mask matrices; alpha runs uniformly over [0, 1] in ``steps`` points.
    """
    if steps < 3:
        raise ValueError("landscape scan needs at least 3 interpolation points")
    n_rows = model.generator.n_rows
    length = max(d.length for d in docs)
    start = build_role_masks(docs, start_assignment or trap_assignment(), n_rows, length)
    end = build_role_masks(docs, end_assignment or informative_assignment(), n_rows, length)
    curve = []
    for alpha in np.linspace(0.0, 1.0, steps):
        blended = (1.0 - alpha) * start + alpha * end
        curve.append((float(alpha), ce_at_masks(model, docs, blended)))
    return curve


# -- probe trials ----------------------------------------------------------------


def run_probe(spec: ProbeSpec, method: str, seed: Optional[int] = None,
              trap: Optional[ProbeTrap] = None) -> ProbeResult:
    """Continue training a trapped model with one method; judge escape.

    A prebuilt ``trap`` may be supplied (it is trained in place; clone it
    when sharing across methods).
    """
    spec.validate()
    seed = spec.seed if seed is None else seed
    if spec.degenerate:
        return ProbeResult(method=method, seed=seed, escaped=None, strong_rate=float("nan"),
                           final_ce=float("nan"), degenerate=True)
    if method not in (VANILLA, THREE_STAGE):
        raise ConfigError(f"probe supports vanilla and 3stage, got {method!r}")

    if trap is None:
        trap = build_trap(spec, seed)
    model, bundle = trap.model, trap.bundle
    config = spec.train_config(method, seed)
    splits = _splits(bundle)
    history = []

    def on_epoch(stage, epoch, live_model):
        history.append(
            {"stage": stage, "epoch": epoch,
             "strong_rate": selection_rate(live_model, bundle.valid, STRONG_ROLE)}
        )

    runner = run_vanilla if method == VANILLA else run_3stage
    runner(model, splits, config, bundle.vocab, on_epoch=on_epoch)

    final_rate = selection_rate(model, bundle.valid, STRONG_ROLE)
    final_ce = evaluate_loss(
        model, bundle.valid, LossWeights(contrastive=0.0, length=0.0, continuity=0.0),
        "joint", spec.batch_size, config.temperature,
    )
    return ProbeResult(
        method=method, seed=seed, escaped=bool(final_rate > 0.5),
        strong_rate=final_rate, final_ce=final_ce, rate_history=history,
    )


def _splits(bundle: CorpusBundle):
    from .training import DataSplits

    return DataSplits(train=bundle.train, valid=bundle.valid)


@dataclass
class ProbeSummary:
    spec: ProbeSpec
    results: list
    escape_rates: dict
    mean_final_ce: dict
    threshold_sensitivity: dict

    def gap(self) -> float:
        return self.escape_rates.get(THREE_STAGE, 0.0) - self.escape_rates.get(VANILLA, 0.0)

    def to_records(self) -> list:
        return [
            {"method": r.method, "seed": r.seed, "escaped": r.escaped,
             "strong_rate": r.strong_rate, "final_ce": r.final_ce,
             "degenerate": r.degenerate}
            for r in self.results
        ]

    def render(self) -> str:
        lines = [f"{'method':>8}  {'escape rate':>11}  {'mean final CE':>13}"]
        for method in sorted(self.escape_rates):
            lines.append(
                f"{method:>8}  {self.escape_rates[method]:>11.2f}  "
                f"{self.mean_final_ce[method]:>13.4f}"
            )
        lines.append(f"escape-rate gap (3stage - vanilla): {self.gap():+.2f}")
        lines.append(
            "threshold sensitivity: "
            + json.dumps(self.threshold_sensitivity, sort_keys=True)
        )
        return "\n".join(lines)


def share_trap(trap: ProbeTrap) -> ProbeTrap:
    """Copy with an independent model (the corpus is shared read-only)."""
    return ProbeTrap(model=clone_model(trap.model), bundle=trap.bundle,
                     decoy_rate=trap.decoy_rate, trapped_ce=trap.trapped_ce)


def run_probe_suite(spec: ProbeSpec, seeds, methods=(VANILLA, THREE_STAGE)) -> ProbeSummary:
    """All (method, seed) trials; each seed's trap is built once and shared."""
    results = []
    for seed in seeds:
        trap = None if spec.degenerate else build_trap(spec, seed)
        for method in methods:
            shared = None if trap is None else share_trap(trap)
            results.append(run_probe(spec, method, seed, trap=shared))
    escape_rates, mean_ce, sensitivity = {}, {}, {}
    for method in methods:
        mine = [r for r in results if r.method == method and not r.degenerate]
        if mine:
            escape_rates[method] = float(np.mean([r.escaped for r in mine]))
            mean_ce[method] = float(np.mean([r.final_ce for r in mine]))
            sensitivity[method] = {
                str(th): float(np.mean([r.strong_rate > th for r in mine]))
                for th in (0.3, 0.5, 0.7)
            }
    return ProbeSummary(
        spec=spec, results=results, escape_rates=escape_rates,
        mean_final_ce=mean_ce, threshold_sensitivity=sensitivity,
    )
