"""Data ingestion, rating binarization, embeddings, and synthetic corpora.

File formats (UTF-8, one JSON record per line):
  * review file:     {"text": "<space-tokenized words>", "ratings": [r1..rK]}
  * annotation file: same, plus "aspects": [[token_idx, ...] x K]
  * embedding file:  plain text, ``word v1 v2 ... vd`` per line

The last rating is the overall one; it is binarized into the document
label (<= 0.4 negative, >= 0.6 positive, anything strictly between is
dropped).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import DataError

NEGATIVE_MAX = 0.4
POSITIVE_MIN = 0.6

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"


# -- domain types ----------------------------------------------------------


@dataclass
class Document:
    """A tokenized text with its overall label and optional annotations."""

    tokens: list[int]
    raw_tokens: list[str]
    overall_label: Optional[int]
    aspect_ratings: Optional[list[float]] = None
    annotations: Optional[list[set[int]]] = None

    @property
    def length(self) -> int:
        return len(self.tokens)

    def validate(self):
        if len(self.tokens) < 1:
            raise DataError("document must contain at least one token")
        if len(self.tokens) != len(self.raw_tokens):
            raise DataError("token ids and raw tokens disagree in length")
        if self.overall_label is not None and self.overall_label not in (0, 1):
            raise DataError(f"overall_label must be 0 or 1, got {self.overall_label}")
        if self.annotations is not None:
            for k, idx_set in enumerate(self.annotations):
                for idx in idx_set:
                    if not 0 <= idx < len(self.tokens):
                        raise DataError(
                            f"annotation index {idx} out of range for aspect {k} "
                            f"(document length {len(self.tokens)})"
                        )


class Vocabulary:
    """Bijective token <-> id map with reserved padding and unknown ids."""

    def __init__(self, tokens=()):
        self._token_to_id = {PAD_TOKEN: 0, UNK_TOKEN: 1}
        self._id_to_token = [PAD_TOKEN, UNK_TOKEN]
        for token in tokens:
            self.add(token)

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def unk_id(self) -> int:
        return 1

    def __len__(self):
        return len(self._id_to_token)

    def __contains__(self, token):
        return token in self._token_to_id

    def add(self, token: str) -> int:
        if token in self._token_to_id:
            return self._token_to_id[token]
        idx = len(self._id_to_token)
        self._token_to_id[token] = idx
        self._id_to_token.append(token)
        return idx

    def id(self, token: str) -> int:
        return self._token_to_id.get(token, 1)

    def token(self, idx: int) -> str:
        return self._id_to_token[idx]

    def encode(self, words) -> list[int]:
        return [self.id(w) for w in words]

    def tokens(self) -> list[str]:
        """All tokens in id order (including the two specials)."""
        return list(self._id_to_token)

    @classmethod
    def from_token_list(cls, tokens: list[str]) -> "Vocabulary":
        """Rebuild from :meth:`tokens` output (checkpoint round-trip)."""
        if tokens[:2] != [PAD_TOKEN, UNK_TOKEN]:
            raise DataError("token list does not start with the reserved specials")
        return cls(tokens[2:])


@dataclass
class EmbeddingTable:
    """Dense word vectors, one row per vocabulary id."""

    matrix: np.ndarray

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def validate(self, vocab: Vocabulary):
        if self.matrix.shape[0] != len(vocab):
            raise DataError(
                f"embedding rows ({self.matrix.shape[0]}) != vocab size ({len(vocab)})"
            )
        if not np.all(np.isfinite(self.matrix)):
            raise DataError("embedding table contains non-finite values")


# -- rating binarization ---------------------------------------------------


def binarize_rating(rating: float) -> Optional[int]:
    """Two-tailed binarization; mid-range ratings yield None (dropped)."""
    if not 0.0 <= rating <= 1.0:
        raise ValueError(f"rating must lie in [0, 1], got {rating}")
    if rating <= NEGATIVE_MAX:
        return 0
    if rating >= POSITIVE_MIN:
        return 1
    return None


# -- line-delimited record files -------------------------------------------


def _parse_record(line: str, lineno: int, path) -> dict:
    try:
        record = json.loads(line)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}:{lineno}: malformed record: {exc}") from exc
    if not isinstance(record, dict) or "text" not in record:
        raise DataError(f"{path}:{lineno}: record must be an object with a 'text' field")
    return record


def _record_to_document(record: dict, lineno: int, path, vocab: Vocabulary) -> Optional[Document]:
    words = record["text"].split()
    if not words:
        raise DataError(f"{path}:{lineno}: empty text")
    ratings = record.get("ratings")
    if not isinstance(ratings, list) or not ratings:
        raise DataError(f"{path}:{lineno}: missing or empty 'ratings' field")
    try:
        label = binarize_rating(float(ratings[-1]))
    except ValueError as exc:
        raise DataError(f"{path}:{lineno}: {exc}") from exc
    if label is None:
        return None
    return Document(
        tokens=vocab.encode(words),
        raw_tokens=words,
        overall_label=label,
        aspect_ratings=[float(r) for r in ratings],
    )


def load_reviews(path, vocab: Vocabulary) -> list[Document]:
    """Load a review file; records whose overall rating binarizes to None are skipped."""
    documents = []
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            record = _parse_record(line, lineno, path)
            doc = _record_to_document(record, lineno, path, vocab)
            if doc is not None:
                documents.append(doc)
    return documents


def load_annotations(path, vocab: Vocabulary) -> list[Document]:
    """Load an annotation file; every record carries per-aspect token-index lists."""
    documents = []
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            record = _parse_record(line, lineno, path)
            doc = _record_to_document(record, lineno, path, vocab)
            if doc is None:
                continue
            aspects = record.get("aspects")
            if not isinstance(aspects, list):
                raise DataError(f"{path}:{lineno}: missing 'aspects' field")
            doc.annotations = [set(int(i) for i in idxs) for idxs in aspects]
            try:
                doc.validate()
            except DataError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
            documents.append(doc)
    return documents


def write_reviews(path, documents: list[Document], with_annotations: bool = False):
    """Serialize documents in the line-delimited record format."""
    with open(path, "w", encoding="utf-8") as handle:
        for doc in documents:
            record = {"text": " ".join(doc.raw_tokens), "ratings": doc.aspect_ratings}
            if with_annotations:
                record["aspects"] = [sorted(s) for s in doc.annotations]
            handle.write(json.dumps(record) + "\n")


def load_embeddings(path, vocab: Vocabulary, dim: int, seed: int = 0) -> EmbeddingTable:
    """Read a text embedding file; words missing from it get small seeded-uniform rows."""
    rng = np.random.default_rng(seed)
    matrix = rng.uniform(-0.05, 0.05, size=(len(vocab), dim))
    matrix[vocab.pad_id] = 0.0
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            if len(parts) != 1 + dim:
                raise DataError(
                    f"{path}:{lineno}: expected 1 word + {dim} values, got {len(parts)} fields"
                )
            word = parts[0]
            if word in vocab:
                matrix[vocab.id(word)] = [float(v) for v in parts[1:]]
    table = EmbeddingTable(matrix=matrix)
    table.validate(vocab)
    return table


def random_embeddings(vocab: Vocabulary, dim: int, seed: int = 0) -> EmbeddingTable:
    """Fresh seeded-uniform table (no embedding file); padding row is zero."""
    rng = np.random.default_rng(seed)
    matrix = rng.uniform(-0.05, 0.05, size=(len(vocab), dim))
    matrix[vocab.pad_id] = 0.0
    return EmbeddingTable(matrix=matrix)


# -- synthetic corpus -------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a desk-scale multi-aspect corpus.

    Each document carries one contiguous signal block per aspect (token
    polarity agrees with the aspect's latent label with probability
    ``p_strong``), one contiguous spurious block correlated with the
    overall label at ``p_weak``, and uniform noise tokens. The last
    aspect plays the "overall" role: its latent label is the majority of
    the other aspects' labels (ties toward aspect 0) and defines the
    document label, so written corpora reload consistently through
    :func:`load_reviews`.
    """

    k_aspects: int = 5
    signal_vocab: int = 12
    spurious_vocab: int = 6
    noise_vocab: int = 40
    p_strong: float = 0.95
    p_weak: float = 0.75
    tokens_per_aspect: int = 3
    spurious_tokens: int = 2
    doc_length: int = 30
    corpus_size: int = 5000
    annotated_size: int = 300
    split: tuple = (0.8, 0.1, 0.1)
    seed: int = 0

    def validate(self):
        if self.k_aspects < 2:
            raise ValueError("k_aspects must be >= 2")
        if not (0.5 < self.p_weak < self.p_strong <= 1.0):
            raise ValueError("need p_strong > p_weak > 0.5 with p_strong <= 1")
        if min(self.signal_vocab, self.spurious_vocab, self.noise_vocab) < 1:
            raise ValueError("all role vocab sizes must be >= 1")
        fixed = self.k_aspects * self.tokens_per_aspect + self.spurious_tokens
        if self.doc_length < fixed:
            raise ValueError(
                f"doc_length {self.doc_length} too short for {fixed} signal/spurious tokens"
            )
        if len(self.split) != 3 or abs(sum(self.split) - 1.0) > 1e-9:
            raise ValueError("split must be three fractions summing to 1")

    def to_dict(self) -> dict:
        d = self.__dict__.copy()
        d["split"] = list(self.split)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        d = dict(d)
        if "split" in d:
            d["split"] = tuple(d["split"])
        return cls(**d)


@dataclass
class CorpusBundle:
    train: list[Document]
    valid: list[Document]
    test: list[Document]
    annotated: list[Document]
    vocab: Vocabulary
    spec: Optional[SyntheticSpec] = None


def build_synthetic_vocab(spec: SyntheticSpec) -> Vocabulary:
    """Deterministic vocabulary over the three token roles."""
    tokens = []
    for k in range(spec.k_aspects):
        for pol in ("+", "-"):
            tokens.extend(f"a{k}{pol}{i}" for i in range(spec.signal_vocab))
    for pol in ("+", "-"):
        tokens.extend(f"sp{pol}{i}" for i in range(spec.spurious_vocab))
    tokens.extend(f"nz{i}" for i in range(spec.noise_vocab))
    return Vocabulary(tokens)


def _aspect_word(spec, rng, aspect: int, polarity: int) -> str:
    sign = "+" if polarity == 1 else "-"
    return f"a{aspect}{sign}{rng.integers(spec.signal_vocab)}"

def _spurious_word(spec, rng, polarity: int) -> str:
    sign = "+" if polarity == 1 else "-"
    return f"sp{sign}{rng.integers(spec.spurious_vocab)}"

def _noise_word(spec, rng) -> str:
    return f"nz{rng.integers(spec.noise_vocab)}"


def _latent_labels(spec: SyntheticSpec, rng, target_label: int) -> list[int]:
    """Draw aspect labels until the overall (last) aspect equals the target.

    The first K-1 labels are fair coins; the last is their majority with
    ties toward aspect 0, which doubles as the document label.
    """
    while True:
        labels = [int(rng.integers(2)) for _ in range(spec.k_aspects - 1)]
        ones = sum(labels)
        zeros = len(labels) - ones
        overall = labels[0] if ones == zeros else int(ones > zeros)
        if overall == target_label:
            return labels + [overall]


def _make_document(spec: SyntheticSpec, rng, target_label: int, annotated: bool) -> Document:
    labels = _latent_labels(spec, rng, target_label)
    overall = labels[-1]
    segments = []  # (role, words) with role "aspect-k" | "spurious" | "noise"
    for k in range(spec.k_aspects):
        words = []
        for _ in range(spec.tokens_per_aspect):
            polarity = labels[k] if rng.random() < spec.p_strong else 1 - labels[k]
            words.append(_aspect_word(spec, rng, k, polarity))
        segments.append((k, words))
    spurious = []
    for _ in range(spec.spurious_tokens):
        polarity = overall if rng.random() < spec.p_weak else 1 - overall
        spurious.append(_spurious_word(spec, rng, polarity))
    segments.append(("spurious", spurious))
    n_noise = spec.doc_length - spec.k_aspects * spec.tokens_per_aspect - spec.spurious_tokens
    segments.extend(("noise", [_noise_word(spec, rng)]) for _ in range(n_noise))

    order = rng.permutation(len(segments))
    words, spans = [], {}
    for seg_idx in order:
        role, seg_words = segments[seg_idx]
        spans[role] = set(range(len(words), len(words) + len(seg_words)))
        words.extend(seg_words)

    ratings = [0.8 if y == 1 else 0.2 for y in labels]
    annotations = [spans[k] for k in range(spec.k_aspects)] if annotated else None
    return Document(
        tokens=[],  # filled by the caller once the vocab exists
        raw_tokens=words,
        overall_label=overall,
        aspect_ratings=ratings,
        annotations=annotations,
    )


def generate_synthetic(spec: SyntheticSpec) -> CorpusBundle:
    """Generate balanced train/valid/test splits plus an annotated set.

    Deterministic given ``spec.seed``: one sequential RNG stream drives
    every draw. Labels alternate 0/1 over document index, so class
    balance is exact to within one document per split.
    """
    spec.validate()
    vocab = build_synthetic_vocab(spec)
    rng = np.random.default_rng(spec.seed)

    def make(count, annotated):
        docs = []
        for i in range(count):
            doc = _make_document(spec, rng, target_label=i % 2, annotated=annotated)
            doc.tokens = vocab.encode(doc.raw_tokens)
            docs.append(doc)
        return docs

    n_train = int(spec.corpus_size * spec.split[0])
    n_valid = int(spec.corpus_size * spec.split[1])
    n_test = spec.corpus_size - n_train - n_valid
    return CorpusBundle(
        train=make(n_train, annotated=False),
        valid=make(n_valid, annotated=False),
        test=make(n_test, annotated=False),
        annotated=make(spec.annotated_size, annotated=True),
        vocab=vocab,
        spec=spec,
    )


def token_role(word: str) -> str:
    """Role of a synthetic token: "aspect-k", "spurious", or "noise"."""
    if word.startswith("a") and ("+" in word or "-" in word):
        sep = "+" if "+" in word else "-"
        return f"aspect-{word[1:].split(sep)[0]}"
    if word.startswith("sp"):
        return "spurious"
    return "noise"
