"""Serving-path simulator: per-channel retrieval, merge with channel
provenance, and exposure with click replay from labeled logs.

All ordering is deterministic: scores descending, ties broken by item id
ascending, so independent oracles can reproduce results exactly.
"""

from __future__ import annotations

import json
import logging
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .models import Item, ItemKind, is_normalized, normalize_text

logger = logging.getLogger(__name__)


class ChannelKind(str, Enum):
    ORIGIN = "origin"
    REWRITE = "rewrite"
    EMBEDDING = "embedding"
    U2I = "u2i"


@dataclass(frozen=True)
class Channel:
    """One retrieval channel; rewrite channels carry the exact normalized
    rewrite they serve."""

    kind: ChannelKind
    rewrite: str | None = None

    def __post_init__(self) -> None:
        if self.kind is ChannelKind.REWRITE:
            if self.rewrite is None or not is_normalized(self.rewrite):
                raise ValueError(f"rewrite channel needs a normalized rewrite: {self.rewrite!r}")
        elif self.rewrite is not None:
            raise ValueError(f"{self.kind.value} channel must not carry a rewrite")

    @property
    def is_rewrite(self) -> bool:
        return self.kind is ChannelKind.REWRITE


ORIGIN_QUERY = Channel(ChannelKind.ORIGIN)
EMBEDDING = Channel(ChannelKind.EMBEDDING)
U2I = Channel(ChannelKind.U2I)


def rewrite_channel(rewrite_text: str) -> Channel:
    return Channel(ChannelKind.REWRITE, normalize_text(rewrite_text))


def encode_channel(channel: Channel) -> str:
    if channel.is_rewrite:
        return f"rewrite:{channel.rewrite}"
    return channel.kind.value


def decode_channel(encoded: str) -> Channel:
    if encoded.startswith("rewrite:"):
        return Channel(ChannelKind.REWRITE, encoded[len("rewrite:"):])
    return Channel(ChannelKind(encoded))


class Scored(NamedTuple):
    item_id: str
    score: float


@dataclass(frozen=True)
class RetrievalResult:
    """One merged item with every channel that retrieved it and its best
    channel score."""

    item_id: str
    channels: frozenset[Channel]
    score: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "channels", frozenset(self.channels))
        if not self.channels:
            raise ValueError(f"result {self.item_id} has no channels")


@dataclass(frozen=True)
class ExposureEvent:
    """One exposed item with full retrieval provenance and replayed
    click/purchase flags."""

    query_id: str
    item_id: str
    channels: frozenset[Channel]
    clicked: bool
    purchased: bool
    rank: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "channels", frozenset(self.channels))
        if self.rank < 0:
            raise ValueError(f"rank must be >= 0, got {self.rank}")
        if self.purchased and not self.clicked:
            raise ValueError(f"event for {self.item_id}: purchased implies clicked")


def _ranked(scored: list[Scored], limit: int) -> list[Scored]:
    scored.sort(key=lambda s: (-s.score, s.item_id))
    return scored[:limit]


def retrieve_lexical(text: str, candidates: Sequence[Item], limit: int) -> list[Scored]:
    """Substring/token match against normalized titles.

    Score is 2 plus overlap for a substring hit, 1 plus overlap for a shared
    token, where overlap is the fraction of query tokens present in the
    title. Non-matching items are dropped.
    """
    if limit < 1:
        raise ValueError(f"limit must be >= 1, got {limit}")
    query = normalize_text(text)
    query_tokens = set(query.split())
    scored: list[Scored] = []
    for item in candidates:
        title = normalize_text(item.title)
        overlap = len(query_tokens & set(title.split())) / len(query_tokens)
        if query in title:
            scored.append(Scored(item.id, 2.0 + overlap))
        elif overlap > 0:
            scored.append(Scored(item.id, 1.0 + overlap))
    return _ranked(scored, limit)


def retrieve_embedding(
    text: str,
    candidates: Sequence[Item],
    limit: int,
    embedder: Callable[[str], np.ndarray],
) -> list[Scored]:
    """Inner-product retrieval between the embedded text and embedded titles.

    Scores are canonicalized to 12 decimals so mathematical ties break by
    item id regardless of accumulation order.
    """
    if limit < 1:
        raise ValueError(f"limit must be >= 1, got {limit}")
    query_vec = embedder(text)
    scored = [
        Scored(item.id, round(float(np.dot(query_vec, embedder(item.title))), 12))
        for item in candidates
    ]
    return _ranked(scored, limit)


def retrieve_u2i(
    key: str, u2i_map: Mapping[str, Sequence[str]], limit: int
) -> list[Scored]:
    """Behavior-channel stub: a configured fixed item list per key, scored 1.0."""
    if limit < 1:
        raise ValueError(f"limit must be >= 1, got {limit}")
    return [Scored(item_id, 1.0) for item_id in u2i_map.get(key, ())[:limit]]


def merge_and_attribute(
    per_channel: Mapping[Channel, Sequence[Scored]], expose_limit: int
) -> list[RetrievalResult]:
    """Union per-channel results, attribute every contributing channel to
    each item, keep the max score, and truncate to the exposure depth.

    Insensitive to channel ordering: attribution and max are commutative.
    """
    if expose_limit < 1:
        raise ValueError(f"expose_limit must be >= 1, got {expose_limit}")
    channels_by_item: dict[str, set[Channel]] = {}
    score_by_item: dict[str, float] = {}
    for channel, scored_list in per_channel.items():
        for scored in scored_list:
            channels_by_item.setdefault(scored.item_id, set()).add(channel)
            best = score_by_item.get(scored.item_id)
            if best is None or scored.score > best:
                score_by_item[scored.item_id] = scored.score
    merged = [
        RetrievalResult(item_id, frozenset(chs), score_by_item[item_id])
        for item_id, chs in channels_by_item.items()
    ]
    merged.sort(key=lambda r: (-r.score, r.item_id))
    return merged[:expose_limit]


def expose_with_replay(
    query_id: str,
    merged: Sequence[RetrievalResult],
    click_log: Mapping[str, tuple[bool, bool]],
) -> list[ExposureEvent]:
    """Turn merged results into exposure events, replaying click/purchase
    flags from the log (absent items count as unclicked)."""
    events = []
    for rank, result in enumerate(merged):
        clicked, purchased = click_log.get(result.item_id, (False, False))
        events.append(
            ExposureEvent(
                query_id=query_id,
                item_id=result.item_id,
                channels=result.channels,
                clicked=clicked,
                purchased=purchased,
                rank=rank,
            )
        )
    return events


def load_items(path: str | Path) -> list[Item]:
    """Read a catalog / click log: one item per JSONL line with keys
    id, kind, title, clicked, purchased. Rejects purchase-without-click."""
    items = []
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            try:
                items.append(
                    Item(
                        id=row["id"],
                        kind=ItemKind(row["kind"]),
                        title=row["title"],
                        clicked=bool(row.get("clicked", False)),
                        purchased=bool(row.get("purchased", False)),
                    )
                )
            except (KeyError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: bad item record: {exc}") from exc
    return items


def click_log_from_items(items: Sequence[Item]) -> dict[str, tuple[bool, bool]]:
    return {item.id: (item.clicked, item.purchased) for item in items}


def event_to_dict(event: ExposureEvent) -> dict:
    return {
        "query_id": event.query_id,
        "item_id": event.item_id,
        "channels": sorted(encode_channel(c) for c in event.channels),
        "clicked": event.clicked,
        "purchased": event.purchased,
        "rank": event.rank,
    }


def event_from_dict(row: Mapping) -> ExposureEvent:
    return ExposureEvent(
        query_id=row["query_id"],
        item_id=row["item_id"],
        channels=frozenset(decode_channel(c) for c in row["channels"]),
        clicked=bool(row["clicked"]),
        purchased=bool(row["purchased"]),
        rank=int(row["rank"]),
    )


def write_events(events: Sequence[ExposureEvent], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for event in events:
            handle.write(json.dumps(event_to_dict(event), ensure_ascii=False) + "\n")


def read_events(path: str | Path) -> list[ExposureEvent]:
    events = []
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line:
                events.append(event_from_dict(json.loads(line)))
    return events
