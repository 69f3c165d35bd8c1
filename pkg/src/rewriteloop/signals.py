"""Click-signal labeling and the rewrite vocabulary.

A clicked exposure whose provenance is rewrite channels only yields a
level-1 signal per rewrite (the rewrite's unique contribution); a clicked
exposure with mixed provenance yields level-2 signals. Any signal promotes
the rewrite to positive. The vocabulary is the single mutable store of the
loop; every update returns a new value, callers serialize writes.
"""

from __future__ import annotations

import json
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

from .models import RewriteRecord, RewriteState, SourceKind, normalize_text
from .simulate import ExposureEvent


class SignalLevel(str, Enum):
    LEVEL1 = "level1"
    LEVEL2 = "level2"


class UnknownRewriteError(KeyError):
    """A signal label referenced a rewrite absent from the vocabulary."""


@dataclass(frozen=True)
class SignalLabel:
    query_id: str
    rewrite_text: str
    level: SignalLevel
    item_id: str


@dataclass(frozen=True)
class Vocabulary:
    """All rewrite records keyed by (query_id, text), plus the current
    iteration index. Treated as immutable; updates return new values."""

    records: dict[tuple[str, str], RewriteRecord] = field(default_factory=dict)
    iteration: int = 0

    def get(self, query_id: str, text: str) -> RewriteRecord | None:
        return self.records.get((query_id, text))

    def positives(self) -> list[RewriteRecord]:
        return [r for r in self.records.values() if r.state is RewriteState.POSITIVE]

    def non_retired(self) -> list[RewriteRecord]:
        return [r for r in self.records.values() if r.state is not RewriteState.RETIRED]

    def for_query(self, query_id: str) -> list[RewriteRecord]:
        return [r for r in self.records.values() if r.query_id == query_id]

    def with_iteration(self, iteration: int) -> "Vocabulary":
        if iteration < self.iteration:
            raise ValueError(
                f"iteration may not decrease: {self.iteration} -> {iteration}"
            )
        return Vocabulary(dict(self.records), iteration)


def make_candidate(
    query_id: str,
    text: str,
    source: SourceKind,
    iteration: int,
    source_iteration: int | None = None,
) -> RewriteRecord:
    """Build a fresh candidate record with normalized text and zero signals."""
    return RewriteRecord(
        query_id=query_id,
        text=normalize_text(text),
        source=source,
        state=RewriteState.CANDIDATE,
        first_iteration=iteration,
        last_seen_iteration=iteration,
        source_iteration=source_iteration,
    )


def label_signals(events: Iterable[ExposureEvent]) -> list[SignalLabel]:
    """Derive signal labels from exposure events.

    Only clicked events with at least one rewrite channel emit labels:
    level-1 per rewrite when every channel is a rewrite channel, level-2 per
    rewrite when provenance is mixed. Rewrites within one event are emitted
    in sorted order for determinism.
    """
    labels: list[SignalLabel] = []
    for event in events:
        if not event.clicked:
            continue
        rewrites = sorted({c.rewrite for c in event.channels if c.is_rewrite})
        if not rewrites:
            continue
        only_rewrites = all(c.is_rewrite for c in event.channels)
        level = SignalLevel.LEVEL1 if only_rewrites else SignalLevel.LEVEL2
        labels.extend(
            SignalLabel(event.query_id, rewrite, level, event.item_id)
            for rewrite in rewrites
        )
    return labels


def update_vocabulary(vocab: Vocabulary, labels: Sequence[SignalLabel]) -> Vocabulary:
    """Apply signal labels: bump level counts and promote to positive.

    Raises UnknownRewriteError when a label references a missing or retired
    record. Counts never decrease and positives never demote.
    """
    records = dict(vocab.records)
    for label in labels:
        key = (label.query_id, label.rewrite_text)
        record = records.get(key)
        if record is None or record.state is RewriteState.RETIRED:
            raise UnknownRewriteError(
                f"no active record for query {label.query_id!r} "
                f"rewrite {label.rewrite_text!r}"
            )
        records[key] = replace(
            record,
            level1_count=record.level1_count + (label.level is SignalLevel.LEVEL1),
            level2_count=record.level2_count + (label.level is SignalLevel.LEVEL2),
            state=RewriteState.POSITIVE,
        )
    return Vocabulary(records, vocab.iteration)


def carryover_filter(vocab: Vocabulary) -> Vocabulary:
    """Iteration-boundary sweep: retire candidates from prior iterations,
    keep positives as the carryover deployment set, keep fresh candidates.
    Idempotent within one boundary."""
    records = {}
    for key, record in vocab.records.items():
        if record.state is RewriteState.POSITIVE:
            records[key] = replace(record, source=SourceKind.CARRYOVER, source_iteration=None)
        elif (
            record.state is RewriteState.CANDIDATE
            and record.first_iteration < vocab.iteration
        ):
            records[key] = replace(record, state=RewriteState.RETIRED)
        else:
            records[key] = record
    return Vocabulary(records, vocab.iteration)


def insert_candidates(vocab: Vocabulary, candidates: Sequence[RewriteRecord]) -> Vocabulary:
    """Add deduplicated candidates; a retired tombstone at the same key is
    revived as a candidate, keeping its original first_iteration."""
    records = dict(vocab.records)
    for candidate in candidates:
        existing = records.get(candidate.key)
        if existing is None:
            records[candidate.key] = candidate
        elif existing.state is RewriteState.RETIRED:
            records[candidate.key] = replace(
                candidate,
                first_iteration=existing.first_iteration,
                last_seen_iteration=max(
                    existing.last_seen_iteration, candidate.last_seen_iteration
                ),
            )
        else:
            raise ValueError(
                f"candidate {candidate.key} already active; run dedup first"
            )
    return Vocabulary(records, vocab.iteration)


def touch_deployed(
    vocab: Vocabulary, keys: Iterable[tuple[str, str]], iteration: int
) -> Vocabulary:
    """Mark records as deployed this iteration (bumps last_seen_iteration)."""
    records = dict(vocab.records)
    for key in keys:
        record = records[key]
        if record.last_seen_iteration < iteration:
            records[key] = replace(record, last_seen_iteration=iteration)
    return Vocabulary(records, vocab.iteration)


def dedup_and_stats(
    new_candidates: Sequence[RewriteRecord], vocab: Vocabulary
) -> tuple[list[RewriteRecord], float]:
    """Drop candidates already active in the vocabulary and report the
    unique portion of this iteration's deployment.

    Candidates are first self-deduplicated by (query_id, text) keeping the
    first occurrence. The portion is unique / (unique + carried positives);
    0.0 when nothing would be deployed at all.
    """
    self_deduped: dict[tuple[str, str], RewriteRecord] = {}
    for candidate in new_candidates:
        self_deduped.setdefault(candidate.key, candidate)
    active_keys = {r.key for r in vocab.non_retired()}
    unique = [c for c in self_deduped.values() if c.key not in active_keys]
    deployed_carryover = len(vocab.positives())
    denominator = len(unique) + deployed_carryover
    portion = len(unique) / denominator if denominator else 0.0
    return unique, portion


_RECORD_FIELDS = (
    "query_id",
    "text",
    "source",
    "state",
    "level1_count",
    "level2_count",
    "first_iteration",
    "last_seen_iteration",
    "source_iteration",
)


def record_to_dict(record: RewriteRecord) -> dict:
    return {
        "query_id": record.query_id,
        "text": record.text,
        "source": record.source.value,
        "state": record.state.value,
        "level1_count": record.level1_count,
        "level2_count": record.level2_count,
        "first_iteration": record.first_iteration,
        "last_seen_iteration": record.last_seen_iteration,
        "source_iteration": record.source_iteration,
    }


def record_from_dict(row: Mapping) -> RewriteRecord:
    return RewriteRecord(
        query_id=row["query_id"],
        text=row["text"],
        source=SourceKind(row["source"]),
        state=RewriteState(row["state"]),
        level1_count=int(row["level1_count"]),
        level2_count=int(row["level2_count"]),
        first_iteration=int(row["first_iteration"]),
        last_seen_iteration=int(row["last_seen_iteration"]),
        source_iteration=row.get("source_iteration"),
    )


def save_vocabulary(vocab: Vocabulary, path: str | Path) -> None:
    """Write one record per JSONL line, sorted by key for stable diffs."""
    with open(path, "w", encoding="utf-8") as handle:
        for key in sorted(vocab.records):
            handle.write(
                json.dumps(record_to_dict(vocab.records[key]), ensure_ascii=False) + "\n"
            )


def load_vocabulary(path: str | Path, iteration: int = 0) -> Vocabulary:
    records: dict[tuple[str, str], RewriteRecord] = {}
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line:
                record = record_from_dict(json.loads(line))
                records[record.key] = record
    return Vocabulary(records, iteration)


def write_signals(labels: Sequence[SignalLabel], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for label in labels:
            handle.write(
                json.dumps(
                    {
                        "query_id": label.query_id,
                        "rewrite": label.rewrite_text,
                        "level": label.level.value,
                        "item_id": label.item_id,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def read_signals(path: str | Path) -> list[SignalLabel]:
    labels = []
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line:
                row = json.loads(line)
                labels.append(
                    SignalLabel(
                        query_id=row["query_id"],
                        rewrite_text=row["rewrite"],
                        level=SignalLevel(row["level"]),
                        item_id=row["item_id"],
                    )
                )
    return labels
