"""Evaluation: accuracy, token F1 under best aspect mapping, lengths.

Soft masks are hardened by per-token argmax (ties toward the lowest row
index; the null row of short-mode masks leaves a token unassigned).
Per-aspect F1 is averaged over documents first (macro); the assignment
of generated rationales to annotated aspects is the one maximizing mean
per-aspect F1. A micro-averaged variant is computed alongside and both
appear in the report.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .corpus import Document
from .errors import DataError
from .model import LONG, Model, forward_batch, pad_batch

BEER_ASPECTS = ("App.", "Aro.", "Pal.", "Tas.", "Ove.")


def harden_masks(masks: np.ndarray, k_aspects: int) -> list[set[int]]:
    """Assign each token to its argmax row; null-row tokens go nowhere."""
    masks = np.asarray(masks)
    rows = masks.shape[0]
    if rows not in (k_aspects, k_aspects + 1):
        raise ValueError(f"mask matrix has {rows} rows for {k_aspects} aspects")
    winners = np.argmax(masks, axis=0)
    return [set(np.flatnonzero(winners == k)) for k in range(k_aspects)]


def token_f1(selected: set, gold: set) -> float:
    """Token-level F1; empty vs empty is a perfect 1.0, one-sided empty is 0."""
    if not selected and not gold:
        return 1.0
    if not selected or not gold:
        return 0.0
    hits = len(selected & gold)
    if hits == 0:
        return 0.0
    precision = hits / len(selected)
    recall = hits / len(gold)
    return 2.0 * precision * recall / (precision + recall)


def macro_f1_matrix(selections: list, golds: list) -> np.ndarray:
    """Document-averaged F1 of every (rationale row, gold aspect) pair."""
    k = len(selections[0])
    kg = len(golds[0])
    matrix = np.zeros((k, kg))
    for sel, gold in zip(selections, golds):
        for r in range(k):
            for a in range(kg):
                matrix[r, a] += token_f1(sel[r], gold[a])
    return matrix / len(selections)


def best_permutation_f1(selections: list, golds: list):
    """Best assignment of rationale rows to annotated aspects.

    Returns (per-aspect F1 list indexed by gold aspect, permutation)
    where permutation[a] is the rationale row mapped to aspect a. All
    K! assignments are scored on the document-averaged F1 matrix; ties
    break toward the lexicographically smallest permutation.
    """
    k = len(selections[0])
    if len(golds[0]) != k:
        raise ValueError("rationale count and annotated aspect count disagree")
    if k > 8:
        raise ValueError(
            "refusing K! enumeration for K > 8; use hungarian_assignment instead"
        )
    matrix = macro_f1_matrix(selections, golds)
    best_perm, best_score = None, -1.0
    for perm in itertools.permutations(range(k)):
        score = float(np.mean([matrix[perm[a], a] for a in range(k)]))
        if score > best_score + 1e-15:
            best_perm, best_score = perm, score
    per_aspect = [float(matrix[best_perm[a], a]) for a in range(k)]
    return per_aspect, best_perm


def hungarian_assignment(selections: list, golds: list):
    """Linear-assignment fallback for large K (no tie-break guarantee)."""
    from scipy.optimize import linear_sum_assignment

    matrix = macro_f1_matrix(selections, golds)
    rows, cols = linear_sum_assignment(-matrix)
    perm = tuple(int(rows[list(cols).index(a)]) for a in range(matrix.shape[1]))
    per_aspect = [float(matrix[perm[a], a]) for a in range(matrix.shape[1])]
    return per_aspect, perm


def micro_f1(selections: list, golds: list, perm) -> list[float]:
    """Corpus-pooled per-aspect F1 under a fixed row-to-aspect mapping."""
    k = len(golds[0])
    scores = []
    for a in range(k):
        hits = sel_total = gold_total = 0
        for sel, gold in zip(selections, golds):
            hits += len(sel[perm[a]] & gold[a])
            sel_total += len(sel[perm[a]])
            gold_total += len(gold[a])
        if sel_total == 0 and gold_total == 0:
            scores.append(1.0)
        elif hits == 0:
            scores.append(0.0)
        else:
            p, r = hits / sel_total, hits / gold_total
            scores.append(2.0 * p * r / (p + r))
    return scores


def average_length(selections: list) -> float:
    """Mean over documents of the mean rationale length across aspects."""
    if not selections:
        return 0.0
    per_doc = [sum(len(s) for s in sel) / len(sel) for sel in selections]
    return float(np.mean(per_doc))


# -- model-level evaluation ---------------------------------------------------


def model_selections(model: Model, docs: list[Document], batch_size: int = 64) -> list:
    """Hardened per-aspect token sets for every document."""
    selections = []
    for start in range(0, len(docs), batch_size):
        chunk = docs[start : start + batch_size]
        ids, valid, _ = pad_batch(chunk, with_labels=False)
        with ad.no_grad():
            out = forward_batch(model, ids, valid)
        for i, doc in enumerate(chunk):
            selections.append(
                harden_masks(out.masks.data[i, :, : doc.length], model.k_aspects)
            )
    return selections


def predicted_labels(model: Model, docs: list[Document], batch_size: int = 64) -> np.ndarray:
    """Hard class predictions: sigmoid(logit) >= 0.5, i.e. logit >= 0."""
    preds = []
    for start in range(0, len(docs), batch_size):
        chunk = docs[start : start + batch_size]
        ids, valid, _ = pad_batch(chunk, with_labels=False)
        with ad.no_grad():
            out = forward_batch(model, ids, valid)
        preds.append(out.overall_logit.data >= 0.0)
    return np.concatenate(preds).astype(int)


def evaluate_accuracy(model: Model, docs: list[Document], labeled: bool = True,
                      batch_size: int = 64) -> Optional[float]:
    """Classification accuracy, or None when the model was trained without labels."""
    if not labeled:
        return None
    labels = np.array([doc.overall_label for doc in docs])
    return float(np.mean(predicted_labels(model, docs, batch_size) == labels))


@dataclass
class EvalReport:
    method: str
    mode: str
    k_aspects: int
    accuracy: Optional[float]
    per_aspect_f1: list[float]
    avg_f1: float
    micro_per_aspect_f1: list[float]
    micro_avg_f1: float
    avg_length_test: float
    avg_length_annotation: float
    permutation: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "mode": self.mode,
            "k_aspects": self.k_aspects,
            "accuracy": self.accuracy,
            "per_aspect_f1": self.per_aspect_f1,
            "avg_f1": self.avg_f1,
            "micro_per_aspect_f1": self.micro_per_aspect_f1,
            "micro_avg_f1": self.micro_avg_f1,
            "avg_length_test": self.avg_length_test,
            "avg_length_annotation": self.avg_length_annotation,
            "permutation": list(self.permutation),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def evaluate_model(model: Model, method: str, test_docs: list[Document],
                   annotated_docs: list[Document], batch_size: int = 64) -> EvalReport:
    """Full report: accuracy on the test set, F1 and lengths on annotations."""
    for doc in annotated_docs:
        if doc.annotations is None or len(doc.annotations) != model.k_aspects:
            raise DataError("annotation set does not cover the model's aspects")
    selections_ann = model_selections(model, annotated_docs, batch_size)
    golds = [doc.annotations for doc in annotated_docs]
    per_aspect, perm = best_permutation_f1(selections_ann, golds)
    micro = micro_f1(selections_ann, golds, perm)
    labeled = method.lower() != "contra"
    accuracy = evaluate_accuracy(model, test_docs, labeled, batch_size) if test_docs else None
    selections_test = model_selections(model, test_docs, batch_size) if test_docs else []
    return EvalReport(
        method=method,
        mode=model.mode,
        k_aspects=model.k_aspects,
        accuracy=accuracy,
        per_aspect_f1=per_aspect,
        avg_f1=float(np.mean(per_aspect)),
        micro_per_aspect_f1=micro,
        micro_avg_f1=float(np.mean(micro)),
        avg_length_test=average_length(selections_test),
        avg_length_annotation=average_length(selections_ann),
        permutation=list(perm),
    )


def render_report(report: EvalReport) -> str:
    """Aligned plain-text table in the usual column order."""
    if report.k_aspects == len(BEER_ASPECTS):
        aspect_names = BEER_ASPECTS
    else:
        aspect_names = tuple(f"A{k}" for k in range(report.k_aspects))
    headers = ["", "Avg. Len.", "Acc.", "Avg. F1", *aspect_names]
    acc = "-" if report.accuracy is None else f"{100 * report.accuracy:.1f}"
    row = [
        f"{report.method}/{report.mode}",
        f"{report.avg_length_test:.1f} / {report.avg_length_annotation:.1f}",
        acc,
        f"{100 * report.avg_f1:.1f}",
        *(f"{100 * v:.1f}" for v in report.per_aspect_f1),
    ]
    widths = [max(len(h), len(r)) for h, r in zip(headers, row)]
    fmt = "  ".join(f"{{:>{w}}}" for w in widths)
    return fmt.format(*headers) + "\n" + fmt.format(*row)
