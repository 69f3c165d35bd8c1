"""Offline evaluation: ground-truth coverage ("precision"), high-relevance
rate, and retrieval-efficiency recall@K over simulated embedding recall,
plus the deterministic hash embedder those metrics and the simulator share.
"""

from __future__ import annotations

import hashlib
import json
import logging
from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .models import (
    FrequencyClass,
    Item,
    ItemKind,
    Query,
    RagContext,
    normalize_text,
)

logger = logging.getLogger(__name__)

MIN_EMBED_DIM = 8


def embed(text: str, dim: int = 64) -> np.ndarray:
    """Deterministic unit vector for a text: character bigrams and trigrams
    of the normalized text are signed-hashed into dim buckets, then
    L2-normalized. Degenerate texts (too short or fully cancelled) fall back
    to a one-hot bucket so the result is always a unit vector.
    """
    if dim < MIN_EMBED_DIM:
        raise ValueError(f"dim must be >= {MIN_EMBED_DIM}, got {dim}")
    norm_text = normalize_text(text)
    vec = np.zeros(dim, dtype=np.float64)
    for n in (2, 3):
        for i in range(len(norm_text) - n + 1):
            gram = norm_text[i : i + n]
            h = int.from_bytes(
                hashlib.blake2b(gram.encode("utf-8"), digest_size=8).digest(), "big"
            )
            vec[(h >> 1) % dim] += 1.0 if h & 1 == 0 else -1.0
    length = float(np.linalg.norm(vec))
    if length == 0.0:
        h = int.from_bytes(
            hashlib.blake2b(norm_text.encode("utf-8"), digest_size=8).digest(), "big"
        )
        vec[:] = 0.0
        vec[h % dim] = 1.0
        return vec
    return vec / length


class HashEmbedder:
    """Callable embed() wrapper with a per-instance text cache."""

    def __init__(self, dim: int = 64):
        if dim < MIN_EMBED_DIM:
            raise ValueError(f"dim must be >= {MIN_EMBED_DIM}, got {dim}")
        self.dim = dim
        self._cache: dict[str, np.ndarray] = {}

    def __call__(self, text: str) -> np.ndarray:
        cached = self._cache.get(text)
        if cached is None:
            cached = embed(text, self.dim)
            self._cache[text] = cached
        return cached


@dataclass(frozen=True)
class BenchEntryI:
    query: Query
    ground_truth: frozenset[str]

    def __post_init__(self) -> None:
        object.__setattr__(self, "ground_truth", frozenset(self.ground_truth))
        if not self.ground_truth:
            raise ValueError(f"query {self.query.id!r} has empty ground truth")


@dataclass(frozen=True)
class BenchmarkI:
    """Queries with ground-truth rewrite sets for coverage scoring."""

    entries: tuple[BenchEntryI, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "entries", tuple(self.entries))


@dataclass(frozen=True)
class BenchEntryII:
    query: Query
    candidates: tuple[Item, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "candidates", tuple(self.candidates))

    def clicked_ids(self) -> set[str]:
        return {item.id for item in self.candidates if item.clicked}


@dataclass(frozen=True)
class BenchmarkII:
    """Queries with click-labeled candidate sets for recall scoring."""

    entries: tuple[BenchEntryII, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "entries", tuple(self.entries))


def load_benchmark_i(path: str | Path) -> BenchmarkI:
    """JSONL loader; one line per query with keys query, frequency_class,
    restaurants, cuisines, ground_truth. Query ids are the normalized texts."""
    entries = []
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            text = row["query"]
            query = Query(
                id=normalize_text(text),
                text=text,
                frequency_class=FrequencyClass(row["frequency_class"]),
                rag_context=RagContext(
                    restaurants=tuple(dict.fromkeys(row.get("restaurants", ()))),
                    cuisines=tuple(dict.fromkeys(row.get("cuisines", ()))),
                ),
            )
            truth = frozenset(normalize_text(g) for g in row["ground_truth"])
            if not truth:
                raise ValueError(f"{path}:{lineno}: empty ground_truth")
            entries.append(BenchEntryI(query=query, ground_truth=truth))
    return BenchmarkI(tuple(entries))


def load_benchmark_ii(path: str | Path) -> BenchmarkII:
    """JSONL loader; one line per query with keys query and candidates.
    Entries without any clicked candidate are skipped with a warning."""
    entries = []
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            text = row["query"]
            candidates = tuple(
                Item(
                    id=c["id"],
                    kind=ItemKind(c.get("kind", "restaurant")),
                    title=c["title"],
                    clicked=bool(c.get("clicked", False)),
                    purchased=bool(c.get("purchased", False)),
                )
                for c in row["candidates"]
            )
            if not any(c.clicked for c in candidates):
                logger.warning("%s:%d: no clicked candidate, entry skipped", path, lineno)
                continue
            query = Query(
                id=normalize_text(text),
                text=text,
                frequency_class=FrequencyClass(row.get("frequency_class", "tail")),
            )
            entries.append(BenchEntryII(query=query, candidates=candidates))
    return BenchmarkII(tuple(entries))


def _normalized_set(values: Iterable[str]) -> set[str]:
    return {normalize_text(v) for v in values}


def precision_coverage_per_query(
    generated: Mapping[str, Iterable[str]], bench: BenchmarkI
) -> dict[str, float]:
    """Per-query coverage of the ground truth by generated rewrites,
    matching exactly after normalization. Missing queries score 0."""
    known = {entry.query.id for entry in bench.entries}
    unknown = set(generated) - known
    if unknown:
        raise ValueError(f"generated rewrites for unknown queries: {sorted(unknown)}")
    per_query = {}
    for entry in bench.entries:
        rewrites = _normalized_set(generated.get(entry.query.id, ()))
        per_query[entry.query.id] = len(rewrites & entry.ground_truth) / len(entry.ground_truth)
    return per_query


def precision_coverage(generated: Mapping[str, Iterable[str]], bench: BenchmarkI) -> float:
    """Unweighted mean of per-query ground-truth coverage."""
    per_query = precision_coverage_per_query(generated, bench)
    return sum(per_query.values()) / len(per_query) if per_query else 0.0


def relevance_labels(
    pairs: Sequence[tuple[Query, str]], oracle: Callable[[Query, str], str]
) -> list[str]:
    return [oracle(query, rewrite) for query, rewrite in pairs]


def relevance_rate(
    pairs: Sequence[tuple[Query, str]], oracle: Callable[[Query, str], str]
) -> float:
    """Fraction of (query, rewrite) pairs the oracle grades High."""
    if not pairs:
        return 0.0
    labels = relevance_labels(pairs, oracle)
    return sum(label == "High" for label in labels) / len(labels)


SCORE_DECIMALS = 12


def score_candidates(
    rewrites: Sequence[str],
    candidates: Sequence[Item],
    embedder: Callable[[str], np.ndarray],
) -> np.ndarray:
    """Score each candidate as its max inner product over the rewrites.

    Scores are canonicalized to 12 decimals so that mathematically tied
    candidates (e.g. identical titles, or a title equal to a rewrite) rank
    by item id irrespective of floating-point accumulation order.
    """
    rewrite_matrix = np.stack([embedder(r) for r in rewrites])
    title_matrix = np.stack([embedder(item.title) for item in candidates])
    return np.round((title_matrix @ rewrite_matrix.T).max(axis=1), SCORE_DECIMALS)


def recall_at_k_per_query(
    rewrites: Mapping[str, Sequence[str]],
    bench: BenchmarkII,
    ks: Sequence[int],
    embedder: Callable[[str], np.ndarray],
) -> tuple[dict[int, dict[str, float]], list[str]]:
    """Per-query recall@K using max-over-rewrites scoring with top-K cut
    by score descending, item id ascending. Queries without rewrites fall
    back to the origin query text and are returned as flagged ids."""
    if not ks or any(k < 1 for k in ks):
        raise ValueError(f"ks must be positive, got {ks}")
    per_query: dict[int, dict[str, float]] = {k: {} for k in ks}
    fallbacks: list[str] = []
    for entry in bench.entries:
        texts = list(rewrites.get(entry.query.id, ()))
        if not texts:
            texts = [entry.query.text]
            fallbacks.append(entry.query.id)
        scores = score_candidates(texts, entry.candidates, embedder)
        order = sorted(
            range(len(entry.candidates)),
            key=lambda i: (-scores[i], entry.candidates[i].id),
        )
        clicked = entry.clicked_ids()
        for k in ks:
            top = {entry.candidates[i].id for i in order[:k]}
            per_query[k][entry.query.id] = len(top & clicked) / len(clicked)
    return per_query, fallbacks


def recall_at_k(
    rewrites: Mapping[str, Sequence[str]],
    bench: BenchmarkII,
    ks: Sequence[int],
    embedder: Callable[[str], np.ndarray],
) -> dict[int, float]:
    """Mean recall@K over benchmark queries."""
    per_query, _ = recall_at_k_per_query(rewrites, bench, ks, embedder)
    return {
        k: (sum(values.values()) / len(values) if values else 0.0)
        for k, values in per_query.items()
    }


@dataclass(frozen=True)
class EvalReport:
    """All three offline metrics for one rewrite source, with per-query
    breakdowns that reproduce the aggregates by unweighted mean."""

    precision: float
    relevance_high_rate: float
    recall_at: dict[int, float]
    per_query: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "relevance_high_rate": self.relevance_high_rate,
            "recall_at": {str(k): v for k, v in self.recall_at.items()},
            "per_query": self.per_query,
            "metadata": self.metadata,
        }


def build_eval_report(
    generated: Mapping[str, Sequence[str]],
    bench_i: BenchmarkI | None,
    bench_ii: BenchmarkII | None,
    relevance_oracle: Callable[[Query, str], str],
    embedder: Callable[[str], np.ndarray],
    ks: Sequence[int] = (1, 5, 10),
    source_name: str = "rewrites",
) -> EvalReport:
    """Assemble the full report for one rewrite source. Relevance pairs are
    every generated rewrite against its benchmark-I query."""
    per_query: dict = {}
    metadata: dict = {
        "source": source_name,
        "precision_aggregation": "per-query-mean",
    }
    precision = 0.0
    relevance = 0.0
    recall: dict[int, float] = {int(k): 0.0 for k in ks}
    if bench_i is not None:
        known = {entry.query.id for entry in bench_i.entries}
        coverage = precision_coverage_per_query(
            {qid: rw for qid, rw in generated.items() if qid in known}, bench_i
        )
        precision = sum(coverage.values()) / len(coverage) if coverage else 0.0
        per_query["precision"] = coverage
        pairs = [
            (entry.query, rewrite)
            for entry in bench_i.entries
            for rewrite in generated.get(entry.query.id, ())
        ]
        labels = relevance_labels(pairs, relevance_oracle)
        relevance = (
            sum(label == "High" for label in labels) / len(labels) if labels else 0.0
        )
        per_query["relevance_labels"] = [
            {"query_id": query.id, "rewrite": rewrite, "label": label}
            for (query, rewrite), label in zip(pairs, labels)
        ]
    if bench_ii is not None:
        recall_breakdown, fallbacks = recall_at_k_per_query(generated, bench_ii, ks, embedder)
        recall = {
            k: (sum(v.values()) / len(v) if v else 0.0) for k, v in recall_breakdown.items()
        }
        per_query["recall"] = {str(k): v for k, v in recall_breakdown.items()}
        metadata["recall_fallback_queries"] = fallbacks
    return EvalReport(
        precision=precision,
        relevance_high_rate=relevance,
        recall_at=recall,
        per_query=per_query,
        metadata=metadata,
    )


def format_report_table(reports: Mapping[str, EvalReport]) -> str:
    """Plain-text metric table, one row per rewrite source."""
    ks = sorted({k for report in reports.values() for k in report.recall_at})
    header = ["source", "precision", "relevance"] + [f"top{k}" for k in ks]
    rows = [header]
    for name, report in reports.items():
        rows.append(
            [name, f"{report.precision:.4f}", f"{report.relevance_high_rate:.4f}"]
            + [f"{report.recall_at.get(k, 0.0):.4f}" for k in ks]
        )
    widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)) for row in rows]
    return "\n".join(lines)
