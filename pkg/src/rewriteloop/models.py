"""Core data types shared across the pipeline: queries, rewrite records,
catalog items, frequency classes, and text normalization."""

from __future__ import annotations

import unicodedata
from dataclasses import dataclass, field
from enum import Enum


class EmptyTextError(ValueError):
    """A text normalized to the empty string."""


class FrequencyClass(str, Enum):
    HIGH = "high"
    MID = "mid"
    TAIL = "tail"


class RewriteDirection(str, Enum):
    KEYWORD_EXTRACTION = "keyword_extraction"
    CORRECTION = "correction"
    ALIAS_SYNONYM = "alias_synonym"
    MAIN_DISH = "main_dish"
    LOW_RELEVANCE = "low_relevance"


class SearchIntent(str, Enum):
    CUISINE = "Cuisine"
    RESTAURANT = "Restaurant"
    NEITHER = "Neither"


class SourceKind(str, Enum):
    PUBLIC_LLM = "public"
    POST_TRAINED = "posttrained"
    CARRYOVER = "carryover"


class RewriteState(str, Enum):
    CANDIDATE = "candidate"
    POSITIVE = "positive"
    RETIRED = "retired"


class ItemKind(str, Enum):
    RESTAURANT = "restaurant"
    CUISINE = "cuisine"


def normalize_text(raw: str) -> str:
    """Canonicalize a query or rewrite for identity comparisons.

    Unicode NFC, surrounding whitespace trimmed, internal whitespace runs
    collapsed to single spaces, ASCII letters lower-cased. Non-ASCII
    characters (e.g. CJK) are left untouched. Idempotent.

    Raises EmptyTextError when nothing survives normalization.
    """
    text = unicodedata.normalize("NFC", raw)
    text = " ".join(text.split())
    text = "".join(c.lower() if c.isascii() else c for c in text)
    if not text:
        raise EmptyTextError(f"text is empty after normalization: {raw!r}")
    return text


def is_normalized(text: str) -> bool:
    """True when text is a fixpoint of normalize_text."""
    try:
        return normalize_text(text) == text
    except EmptyTextError:
        return False


@dataclass(frozen=True)
class FrequencyThresholds:
    """Absolute search-count cut points separating high/mid/tail queries."""

    high_min: int
    mid_min: int

    def __post_init__(self) -> None:
        if not self.high_min > self.mid_min >= 1:
            raise ValueError(
                f"thresholds must satisfy high_min > mid_min >= 1, "
                f"got high_min={self.high_min}, mid_min={self.mid_min}"
            )


def classify_frequency(observed_count: int, thresholds: FrequencyThresholds) -> FrequencyClass:
    """Map a search-log occurrence count to its frequency class.

    High when count >= high_min, Mid when mid_min <= count < high_min,
    Tail otherwise. Total over non-negative counts.
    """
    if observed_count < 0:
        raise ValueError(f"observed_count must be >= 0, got {observed_count}")
    if observed_count >= thresholds.high_min:
        return FrequencyClass.HIGH
    if observed_count >= thresholds.mid_min:
        return FrequencyClass.MID
    return FrequencyClass.TAIL


@dataclass(frozen=True)
class RagContext:
    """Restaurants and cuisines historically interacted under a query,
    most-interacted first."""

    restaurants: tuple[str, ...] = ()
    cuisines: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "restaurants", tuple(self.restaurants))
        object.__setattr__(self, "cuisines", tuple(self.cuisines))
        for label, names in (("restaurants", self.restaurants), ("cuisines", self.cuisines)):
            if any(not n for n in names):
                raise ValueError(f"{label} entries must be non-empty")
            if len(set(names)) != len(names):
                raise ValueError(f"{label} entries must be duplicate-free: {names}")

    @property
    def names(self) -> tuple[str, ...]:
        return self.restaurants + self.cuisines

    def is_empty(self) -> bool:
        return not self.restaurants and not self.cuisines


@dataclass(frozen=True)
class Query:
    """A search query with its frequency class and associated context."""

    id: str
    text: str
    frequency_class: FrequencyClass
    observed_count: int = 0
    rag_context: RagContext = field(default_factory=RagContext)

    def __post_init__(self) -> None:
        normalize_text(self.text)  # raises EmptyTextError on blank queries
        if self.observed_count < 0:
            raise ValueError(f"observed_count must be >= 0, got {self.observed_count}")

    @classmethod
    def from_count(
        cls,
        id: str,
        text: str,
        observed_count: int,
        thresholds: FrequencyThresholds,
        rag_context: RagContext | None = None,
    ) -> "Query":
        return cls(
            id=id,
            text=text,
            frequency_class=classify_frequency(observed_count, thresholds),
            observed_count=observed_count,
            rag_context=rag_context or RagContext(),
        )


@dataclass(frozen=True)
class RewriteRecord:
    """Lifecycle state of one rewrite for one query inside the vocabulary.

    Identity is (query_id, text) with text already normalized. A record is
    Positive exactly when it has collected at least one click signal.
    """

    query_id: str
    text: str
    source: SourceKind
    state: RewriteState
    level1_count: int = 0
    level2_count: int = 0
    first_iteration: int = 0
    last_seen_iteration: int = 0
    source_iteration: int | None = None

    def __post_init__(self) -> None:
        if not is_normalized(self.text):
            raise ValueError(f"rewrite text must be normalized: {self.text!r}")
        if self.level1_count < 0 or self.level2_count < 0:
            raise ValueError("signal counts must be non-negative")
        if self.first_iteration > self.last_seen_iteration:
            raise ValueError(
                f"first_iteration {self.first_iteration} > "
                f"last_seen_iteration {self.last_seen_iteration}"
            )
        has_signal = self.level1_count + self.level2_count >= 1
        if (self.state is RewriteState.POSITIVE) != has_signal:
            raise ValueError(
                f"state {self.state.value} inconsistent with signal counts "
                f"({self.level1_count}, {self.level2_count})"
            )
        if self.source is SourceKind.POST_TRAINED and self.source_iteration is None:
            raise ValueError("post-trained records must carry source_iteration")

    @property
    def key(self) -> tuple[str, str]:
        return (self.query_id, self.text)

    @property
    def signal_count(self) -> int:
        return self.level1_count + self.level2_count


@dataclass(frozen=True)
class Item:
    """One retrievable catalog entry (restaurant or cuisine) with replayed
    interaction flags."""

    id: str
    kind: ItemKind
    title: str
    clicked: bool = False
    purchased: bool = False

    def __post_init__(self) -> None:
        if not self.title:
            raise ValueError(f"item {self.id} has empty title")
        if self.purchased and not self.clicked:
            raise ValueError(f"item {self.id}: purchased implies clicked")
