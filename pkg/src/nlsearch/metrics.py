"""Field-level similarity metrics and per-query scoring.

Exact match applies to every field, Jaccard to categorical fields, cosine
and semantic similarity to free-text fields. A field absent from both ground
truth and prediction scores 1 on all its metrics; a field present in only
one scores 0. The query average is the plain mean of every metric value, so
free-text fields weigh three times as much as integer bounds simply because
they contribute three numbers.
"""

from __future__ import annotations

import hashlib
import math
import re
import threading
from collections import Counter
from dataclasses import dataclass
from typing import Any, Mapping, Protocol, Sequence

import numpy as np

from .entities import Bounds, SearchEntityDocument
from .errors import ContractViolation, EmbeddingError
from .schema import FieldKind, FieldSpec, MetricKind, SchemaRegistry

__all__ = [
    "MetricKind", "FieldScore", "QueryScore", "ScoringUnit", "EmbeddingProvider",
    "HashedTrigramEmbedding", "exact_match", "jaccard", "cosine_sim", "semantic_sim",
    "score_field", "score_query", "scoring_units", "default_embedding_provider",
    "flatten_text", "tokenize",
]

_TOKEN = re.compile(r"[^\W_]+")


def tokenize(text: str) -> list[str]:
    """Lowercase word tokens; whitespace, punctuation and underscores separate."""
    return _TOKEN.findall(text.lower())


def flatten_text(value: str | Sequence[str]) -> str:
    """One lowercase text per value; lists become their sorted elements joined by spaces."""
    if isinstance(value, str):
        return value.lower()
    return " ".join(sorted(v.lower() for v in value))


def _normalize(value: Any) -> Any:
    if isinstance(value, bool):
        raise ContractViolation("booleans are not field values")
    if isinstance(value, str):
        return ("s", value.lower())
    if isinstance(value, int):
        return ("i", value)
    if isinstance(value, (list, tuple, set, frozenset)):
        return ("l", tuple(sorted(_normalize(v) for v in value)))
    if isinstance(value, Mapping):
        return ("m", tuple(sorted((k.lower(), _normalize(v)) for k, v in value.items())))
    raise ContractViolation(f"unsupported field value {value!r}")


def _shape(norm: Any) -> Any:
    tag, body = norm
    if tag == "l":
        return ("l",)
    if tag == "m":
        return ("m",)
    return (tag,)


def exact_match(a: Any, b: Any) -> int:
    """1 if the values agree after lowercasing strings and sorting lists, else 0."""
    na, nb = _normalize(a), _normalize(b)
    if _shape(na) != _shape(nb):
        raise ContractViolation(f"cannot compare {type(a).__name__} with {type(b).__name__}")
    return int(na == nb)


def jaccard(a, b) -> float:
    """|a ∩ b| / |a ∪ b| over lowercased elements; two empty sets score 1."""
    sa = {x.lower() for x in a}
    sb = {x.lower() for x in b}
    union = sa | sb
    if not union:
        return 1.0
    return len(sa & sb) / len(union)


def _tf_cosine(ta: list[str], tb: list[str]) -> float:
    va, vb = Counter(ta), Counter(tb)
    if not va or not vb:
        return 0.0
    dot = sum(count * vb[tok] for tok, count in va.items())
    na = sum(c * c for c in va.values())
    nb = sum(c * c for c in vb.values())
    return min(1.0, dot / math.sqrt(na * nb))


def cosine_sim(a: str | Sequence[str], b: str | Sequence[str]) -> float:
    """Cosine between term-frequency vectors; 0 when either side has no tokens.

    Lists are flattened with :func:`flatten_text`. Texts that are equal after
    flattening score 1 even if they contain no tokens.
    """
    fa, fb = flatten_text(a), flatten_text(b)
    if fa == fb:
        return 1.0
    return _tf_cosine(tokenize(fa), tokenize(fb))


class EmbeddingProvider(Protocol):
    dimension: int

    def embed(self, text: str) -> np.ndarray: ...


class HashedTrigramEmbedding:
    """Deterministic offline embedding.

    Each token is split into character trigrams (with ``#`` padding); each
    trigram is hashed with a seeded BLAKE2b and expanded into a Gaussian
    vector. A token's vector is the normalized sum of its trigram vectors,
    and a text's vector is the mean of its token vectors. The empty text maps
    to the zero vector.
    """

    def __init__(self, seed: int = 0, dimension: int = 64):
        self.seed = seed
        self.dimension = dimension
        self._key = seed.to_bytes(8, "little", signed=True)
        self._cache: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()

    def _trigram_vector(self, gram: str) -> np.ndarray:
        digest = hashlib.blake2b(gram.encode("utf-8"), key=self._key, digest_size=16).digest()
        rng = np.random.default_rng(int.from_bytes(digest, "little"))
        return rng.standard_normal(self.dimension)

    def _token_vector(self, token: str) -> np.ndarray:
        with self._lock:
            cached = self._cache.get(token)
        if cached is not None:
            return cached
        padded = f"#{token}#"
        grams = [padded[i:i + 3] for i in range(max(1, len(padded) - 2))]
        vec = np.sum([self._trigram_vector(g) for g in grams], axis=0)
        vec = vec / np.linalg.norm(vec)
        vec.setflags(write=False)
        with self._lock:
            self._cache[token] = vec
        return vec

    def embed(self, text: str) -> np.ndarray:
        tokens = tokenize(text)
        if not tokens:
            return np.zeros(self.dimension)
        return np.mean([self._token_vector(t) for t in tokens], axis=0)


def default_embedding_provider(seed: int = 0) -> HashedTrigramEmbedding:
    return HashedTrigramEmbedding(seed=seed, dimension=64)


def semantic_sim(a: str | Sequence[str], b: str | Sequence[str], provider: EmbeddingProvider) -> float:
    """Cosine of the two embeddings, clamped to [0, 1].

    Equal texts score 1 without calling the provider; a zero vector on either
    side scores 0. Provider exceptions surface as :class:`EmbeddingError`.
    """
    fa, fb = flatten_text(a), flatten_text(b)
    if fa == fb:
        return 1.0
    try:
        va = np.asarray(provider.embed(fa), dtype=float)
        vb = np.asarray(provider.embed(fb), dtype=float)
    except EmbeddingError:
        raise
    except Exception as exc:
        raise EmbeddingError(f"embedding failed: {exc}") from exc
    if va.shape != vb.shape:
        raise EmbeddingError(f"embedding dimensions differ: {va.shape} vs {vb.shape}")
    na, nb = float(np.linalg.norm(va)), float(np.linalg.norm(vb))
    if na == 0.0 or nb == 0.0:
        return 0.0
    cos = float(np.dot(va, vb)) / (na * nb)
    return min(1.0, max(0.0, cos))


# --------------------------------------------------------------------------
# scoring units


@dataclass(frozen=True)
class ScoringUnit:
    """A scored slot: a registry field, or one side of an integer bound pair."""

    name: str
    label: str
    kind: FieldKind
    field: str
    side: str | None = None

    @property
    def metrics(self) -> tuple[MetricKind, ...]:
        return self.kind.metrics

    def value(self, doc: SearchEntityDocument) -> Any:
        if self.field not in doc:
            return None
        value = doc[self.field]
        if self.side is not None:
            return value.get(self.side)
        return value


def scoring_units(schema: SchemaRegistry) -> tuple[ScoringUnit, ...]:
    units = []
    for spec in schema:
        if spec.kind is FieldKind.INTEGER:
            for side, key in zip(("min", "max"), spec.wire_keys):
                units.append(ScoringUnit(key, f"{spec.label} {side.title()}", spec.kind, spec.name, side))
        else:
            units.append(ScoringUnit(spec.name, spec.label, spec.kind, spec.name))
    return tuple(units)


@dataclass(frozen=True)
class FieldScore:
    field: str
    scores: Mapping[MetricKind, float]


@dataclass(frozen=True)
class QueryScore:
    field_scores: tuple[FieldScore, ...]
    average: float

    def values(self) -> list[float]:
        return [v for fs in self.field_scores for v in fs.scores.values()]

    def get(self, field: str, metric: MetricKind | str) -> float:
        for fs in self.field_scores:
            if fs.field == field:
                return fs.scores[MetricKind(metric)]
        raise KeyError(field)


def _as_set(value: Any) -> list[str]:
    if isinstance(value, str):
        return [value]
    if isinstance(value, Mapping):
        return [f"{sub}:{v}" for sub, items in value.items() for v in items]
    return list(value)


def score_field(
    unit: ScoringUnit | FieldSpec,
    gt: Any,
    pred: Any,
    provider: EmbeddingProvider | None = None,
) -> FieldScore:
    """Score one field or bound unit. ``None`` means the value is absent."""
    if isinstance(unit, FieldSpec):
        if unit.kind is FieldKind.INTEGER:
            raise ContractViolation("score integer fields per bound unit; see scoring_units()")
        unit = ScoringUnit(unit.name, unit.label, unit.kind, unit.name)
    metrics = unit.metrics
    if isinstance(gt, Bounds) or isinstance(pred, Bounds):
        raise ContractViolation("pass a single bound value, not a Bounds pair")
    if gt is None and pred is None:
        return FieldScore(unit.name, {m: 1.0 for m in metrics})
    if gt is None or pred is None:
        return FieldScore(unit.name, {m: 0.0 for m in metrics})

    scores: dict[MetricKind, float] = {}
    if unit.kind is FieldKind.CATEGORICAL:
        sa, sb = _as_set(gt), _as_set(pred)
        scores[MetricKind.EXACT] = float(exact_match(sa, sb))
        scores[MetricKind.JACCARD] = jaccard(sa, sb)
    elif unit.kind is FieldKind.FREE_TEXT:
        scores[MetricKind.EXACT] = float(exact_match(gt, pred))
        scores[MetricKind.COSINE] = cosine_sim(gt, pred)
        if provider is None:
            raise ContractViolation("free-text scoring needs an embedding provider")
        scores[MetricKind.SEMANTIC] = semantic_sim(gt, pred, provider)
    else:
        scores[MetricKind.EXACT] = float(exact_match(gt, pred))
    return FieldScore(unit.name, scores)


def score_query(
    gt: SearchEntityDocument,
    pred: SearchEntityDocument,
    schema: SchemaRegistry,
    provider: EmbeddingProvider | None = None,
    *,
    present_only: bool = False,
) -> QueryScore:
    """Score every unit of the registry and average all metric values.

    With ``present_only`` the units absent from both documents are skipped
    (an empty pair of documents then averages to 1).
    """
    field_scores = []
    for unit in scoring_units(schema):
        g, p = unit.value(gt), unit.value(pred)
        if present_only and g is None and p is None:
            continue
        field_scores.append(score_field(unit, g, p, provider))
    values = [v for fs in field_scores for v in fs.scores.values()]
    average = math.fsum(values) / len(values) if values else 1.0
    return QueryScore(tuple(field_scores), average)
