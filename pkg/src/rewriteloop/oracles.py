"""Deterministic rule-based labelers standing in for production relevance,
quality, typo, and query-understanding services so the whole pipeline runs
offline. Each is pluggable: swap in an LLM-backed labeler via the gateway.
"""

from __future__ import annotations

import difflib
from collections.abc import Iterable, Sequence

from .models import EmptyTextError, SearchIntent, normalize_text

_TYPO_SIMILARITY_CUTOFF = 0.8


def _norm(text: str) -> str | None:
    try:
        return normalize_text(text)
    except EmptyTextError:
        return None


def _tokens(text: str) -> set[str]:
    return set(text.split())


def _normalized_names(names: Iterable[str]) -> list[str]:
    out = []
    for name in names:
        n = _norm(name)
        if n is not None:
            out.append(n)
    return out


def quality_label(query_text: str, context_names: Sequence[str], rewrite: str) -> str:
    """Judge a rewrite "Yes"/"No" against its query and context.

    "No" when the rewrite is empty or equals the query after normalization;
    "Yes" when it matches a full context name or any single token of one;
    "No" otherwise.
    """
    r = _norm(rewrite)
    if r is None:
        return "No"
    q = _norm(query_text)
    if q is not None and r == q:
        return "No"
    vocab: set[str] = set()
    for name in _normalized_names(context_names):
        vocab.add(name)
        vocab.update(_tokens(name))
    return "Yes" if r in vocab else "No"


def relevance_label(text: str, restaurants: Sequence[str], cuisines: Sequence[str]) -> str:
    """Grade text against listed names: "High" on an exact match or a
    token-subset of one name, "Low" on any shared token, else "None"."""
    t = _norm(text)
    if t is None:
        return "None"
    t_tokens = _tokens(t)
    names = _normalized_names(restaurants) + _normalized_names(cuisines)
    for name in names:
        if t == name or t_tokens <= _tokens(name):
            return "High"
    for name in names:
        if t_tokens & _tokens(name):
            return "Low"
    return "None"


def intent_label(text: str, restaurants: Sequence[str], cuisines: Sequence[str]) -> SearchIntent:
    """Infer search intent: cuisine match wins over restaurant match."""
    t = _norm(text)
    if t is None:
        return SearchIntent.NEITHER
    t_tokens = _tokens(t)

    def matches(names: Sequence[str]) -> bool:
        return any(
            t == name or t_tokens <= _tokens(name) for name in _normalized_names(names)
        )

    if matches(cuisines):
        return SearchIntent.CUISINE
    if matches(restaurants):
        return SearchIntent.RESTAURANT
    return SearchIntent.NEITHER


def typo_label(query_text: str, context_names: Sequence[str]) -> str:
    """Flag a query "yes" (typo) when it shares no token with the context
    names yet sits within edit similarity 0.8 of one of them."""
    q = _norm(query_text)
    if q is None:
        return "no"
    vocab: set[str] = set()
    for name in _normalized_names(context_names):
        vocab.add(name)
        vocab.update(_tokens(name))
    if _tokens(q) & vocab:
        return "no"
    near = difflib.get_close_matches(q, sorted(vocab), n=1, cutoff=_TYPO_SIMILARITY_CUTOFF)
    return "yes" if near else "no"
