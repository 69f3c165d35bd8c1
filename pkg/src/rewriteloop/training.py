"""Builders for the three post-training sample types (rewrite generation,
rewrite quality, relevance) and their JSONL export.

Assistant outputs follow fixed grammars so downstream consumers can parse
them back: the generation sample reuses the brace-delimited generation
format, quality samples emit "Output: {1.<Yes|No>. 2.<Yes|No>}", and
relevance samples emit "Output: {1.<L>. 2.<L> 3. <L>}".
"""

from __future__ import annotations

import json
import random
import re
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .gateway import AuxLabel, AuxTask
from .models import Query, RewriteRecord, RewriteState, SearchIntent
from .prompting import (
    GenerationOutput,
    QUALITY_INSTRUCTION,
    RELEVANCE_INSTRUCTION,
    build_generation_user,
    build_instruction,
    render_generation_output,
)

PROVENANCE_ONLINE = "online-signal"
PROVENANCE_AUX = "aux-llm"
PROVENANCE_RULE = "rule-oracle"

QUALITY_ARITY = 2
RELEVANCE_ARITY = 3


class TaskType(str, Enum):
    REWRITE_GENERATION = "rewrite_generation"
    REWRITE_QUALITY = "rewrite_quality"
    RELEVANCE = "relevance"


class NoPositivesError(ValueError):
    """A generation sample was requested for a query without positives."""


class BadArityError(ValueError):
    def __init__(self, expected: int, got: int):
        super().__init__(f"expected {expected} entries, got {got}")
        self.expected = expected
        self.got = got


@dataclass(frozen=True)
class TrainingSample:
    task: TaskType
    instruction: str
    user: str
    assistant: str
    provenance: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "provenance", dict(self.provenance))
        if not self.provenance:
            raise ValueError("provenance must be non-empty")


@dataclass(frozen=True)
class QualityEntry:
    """One labeled (query, context, rewrite) judgment."""

    query_text: str
    context_names: tuple[str, ...]
    rewrite: str
    label: str
    source: str = PROVENANCE_RULE

    def __post_init__(self) -> None:
        object.__setattr__(self, "context_names", tuple(self.context_names))
        if self.label not in ("Yes", "No"):
            raise ValueError(f"quality label must be Yes/No, got {self.label!r}")


@dataclass(frozen=True)
class QualityPair:
    entries: tuple[QualityEntry, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "entries", tuple(self.entries))
        if len(self.entries) != QUALITY_ARITY:
            raise BadArityError(QUALITY_ARITY, len(self.entries))


@dataclass(frozen=True)
class RelevanceEntry:
    """One labeled (query, restaurant, cuisine) judgment."""

    query_text: str
    restaurant: str
    cuisine: str
    label: str
    source: str = PROVENANCE_RULE

    def __post_init__(self) -> None:
        if self.label not in ("High", "Low", "None"):
            raise ValueError(f"relevance label must be High/Low/None, got {self.label!r}")


@dataclass(frozen=True)
class RelevanceTriple:
    entries: tuple[RelevanceEntry, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "entries", tuple(self.entries))
        if len(self.entries) != RELEVANCE_ARITY:
            raise BadArityError(RELEVANCE_ARITY, len(self.entries))


@dataclass(frozen=True)
class DroppedEntry:
    """A relevance entry excluded because the two labelers disagreed."""

    query_text: str
    restaurant: str
    cuisine: str
    primary_label: str
    aux_label: str


_SANITIZE_RE = re.compile(r"[\"'“”‘’{}]")


def _sanitize(text: str) -> str:
    return _SANITIZE_RE.sub("", text).strip()


def order_positives(records: Sequence[RewriteRecord]) -> list[RewriteRecord]:
    """Efficiency order for positives: level-1 count desc, level-2 count
    desc, then text."""
    return sorted(records, key=lambda r: (-r.level1_count, -r.level2_count, r.text))


def build_generation_sample(
    query: Query,
    positive_rewrites: Sequence[RewriteRecord],
    typo_label: AuxLabel,
    intent_label: SearchIntent,
    typo_source: str = PROVENANCE_RULE,
    intent_source: str = PROVENANCE_RULE,
) -> TrainingSample:
    """Generation task sample: the standard generation instruction and user
    section, with the assistant output rebuilt around the query's positive
    rewrites. A typo verdict turns the top positive into the correction."""
    if not positive_rewrites:
        raise NoPositivesError(f"query {query.id!r} has no positive rewrites")
    for record in positive_rewrites:
        if record.state is not RewriteState.POSITIVE:
            raise ValueError(f"record {record.key} is not positive")
    if typo_label.task is not AuxTask.TYPO:
        raise ValueError(f"expected a typo label, got task {typo_label.task.value}")
    ordered = order_positives(positive_rewrites)
    correction = ordered[0].text if typo_label.value == "yes" else None
    if correction is not None:
        meaning = _sanitize(f"{query.text} is likely a typo of {correction}")
    else:
        meaning = _sanitize(f"user searches for {query.text}")
    output = GenerationOutput(
        query_meaning=meaning,
        correction=correction,
        intent=intent_label,
        rewrites=tuple(r.text for r in ordered),
    )
    return TrainingSample(
        task=TaskType.REWRITE_GENERATION,
        instruction=build_instruction(n_rewrites=len(ordered)),
        user=build_generation_user(query, include_explanation=False),
        assistant="Output: " + render_generation_output(output),
        provenance={
            "typo": typo_source,
            "intent": intent_source,
            "rewrites": PROVENANCE_ONLINE,
        },
    )


def build_quality_sample(entries: Sequence[QualityEntry]) -> TrainingSample:
    """Quality task sample over a group of two judgments."""
    pair = QualityPair(tuple(entries))
    lines = [
        f"Query{i}: {e.query_text}; "
        f"Associated restaurant/Cuisine{i}:{', '.join(e.context_names)}; "
        f"Rewrite{i}: {e.rewrite}"
        for i, e in enumerate(pair.entries, start=1)
    ]
    assistant = "Output: {1.%s. 2.%s}" % (pair.entries[0].label, pair.entries[1].label)
    return TrainingSample(
        task=TaskType.REWRITE_QUALITY,
        instruction=QUALITY_INSTRUCTION,
        user="\n\n".join(lines),
        assistant=assistant,
        provenance={str(i): e.source for i, e in enumerate(pair.entries, start=1)},
    )


def build_relevance_sample(entries: Sequence[RelevanceEntry]) -> TrainingSample:
    """Relevance task sample over a group of three judgments."""
    triple = RelevanceTriple(tuple(entries))
    lines = [
        f"Query{i}: {e.query_text}; Restaurant{i}: {e.restaurant}; Cuisine{i}: {e.cuisine}"
        for i, e in enumerate(triple.entries, start=1)
    ]
    assistant = "Output: {1.%s. 2.%s 3. %s}" % tuple(e.label for e in triple.entries)
    return TrainingSample(
        task=TaskType.RELEVANCE,
        instruction=RELEVANCE_INSTRUCTION,
        user="\n\n".join(lines),
        assistant=assistant,
        provenance={str(i): e.source for i, e in enumerate(triple.entries, start=1)},
    )


def assign_quality_labels(
    query: Query,
    rewrites: Sequence[RewriteRecord],
    aux: Callable[[Query, str], str],
    aux_source: str = PROVENANCE_RULE,
) -> list[QualityEntry]:
    """Label a query's rewrites: positives are "Yes" straight from the
    online signal, the rest are judged by the auxiliary labeler. Retired
    records never reach training data."""
    entries = []
    for record in rewrites:
        if record.state is RewriteState.RETIRED:
            continue
        if record.state is RewriteState.POSITIVE:
            label, source = "Yes", PROVENANCE_ONLINE
        else:
            label, source = aux(query, record.text), aux_source
        entries.append(
            QualityEntry(
                query_text=query.text,
                context_names=query.rag_context.names,
                rewrite=record.text,
                label=label,
                source=source,
            )
        )
    return entries


def filter_relevance_agreement(
    rows: Sequence[tuple[str, str, str]],
    primary: Callable[[str, str, str], str],
    aux: Callable[[str, str, str], str],
    agreed_source: str = PROVENANCE_RULE,
) -> tuple[list[RelevanceEntry], list[DroppedEntry]]:
    """Label (query, restaurant, cuisine) rows with both labelers and keep
    only agreements; disagreements are reported, not raised."""
    kept: list[RelevanceEntry] = []
    dropped: list[DroppedEntry] = []
    for query_text, restaurant, cuisine in rows:
        primary_label = primary(query_text, restaurant, cuisine)
        aux_label = aux(query_text, restaurant, cuisine)
        if primary_label == aux_label:
            kept.append(
                RelevanceEntry(query_text, restaurant, cuisine, primary_label, agreed_source)
            )
        else:
            dropped.append(
                DroppedEntry(query_text, restaurant, cuisine, primary_label, aux_label)
            )
    return kept, dropped


def group_quality_pairs(
    entries: Sequence[QualityEntry], rng: random.Random
) -> list[TrainingSample]:
    """Shuffle and chunk into samples of two; a leftover entry is dropped."""
    pool = list(entries)
    rng.shuffle(pool)
    return [
        build_quality_sample(pool[i : i + QUALITY_ARITY])
        for i in range(0, len(pool) - QUALITY_ARITY + 1, QUALITY_ARITY)
    ]


def group_relevance_triples(
    entries: Sequence[RelevanceEntry], rng: random.Random
) -> list[TrainingSample]:
    """Shuffle and chunk into samples of three; leftovers are dropped."""
    pool = list(entries)
    rng.shuffle(pool)
    return [
        build_relevance_sample(pool[i : i + RELEVANCE_ARITY])
        for i in range(0, len(pool) - RELEVANCE_ARITY + 1, RELEVANCE_ARITY)
    ]


_QUALITY_ASSISTANT_RE = re.compile(r"^Output: \{1\.(Yes|No)\. 2\.(Yes|No)\}$")
_RELEVANCE_ASSISTANT_RE = re.compile(
    r"^Output: \{1\.(High|Low|None)\. 2\.(High|Low|None) 3\. (High|Low|None)\}$"
)


def parse_quality_assistant(assistant: str) -> tuple[str, str]:
    m = _QUALITY_ASSISTANT_RE.match(assistant)
    if m is None:
        raise ValueError(f"assistant does not match the quality grammar: {assistant!r}")
    return m.group(1), m.group(2)


def parse_relevance_assistant(assistant: str) -> tuple[str, str, str]:
    m = _RELEVANCE_ASSISTANT_RE.match(assistant)
    if m is None:
        raise ValueError(f"assistant does not match the relevance grammar: {assistant!r}")
    return m.group(1), m.group(2), m.group(3)


def sample_to_dict(sample: TrainingSample) -> dict:
    return {
        "task": sample.task.value,
        "instruction": sample.instruction,
        "user": sample.user,
        "assistant": sample.assistant,
    }


def write_training_samples(samples: Sequence[TrainingSample], path: str | Path) -> None:
    with open(path, "a", encoding="utf-8") as handle:
        for sample in samples:
            handle.write(json.dumps(sample_to_dict(sample), ensure_ascii=False) + "\n")
