import random

import pytest
from hypothesis import given, settings, strategies as st

from rewriteloop.evaluation import HashEmbedder, embed
from rewriteloop.models import Item, ItemKind
from rewriteloop.simulate import (
    Channel,
    ChannelKind,
    EMBEDDING,
    ExposureEvent,
    ORIGIN_QUERY,
    Scored,
    decode_channel,
    encode_channel,
    expose_with_replay,
    load_items,
    merge_and_attribute,
    retrieve_embedding,
    retrieve_lexical,
    retrieve_u2i,
    rewrite_channel,
)


def items(*titles: str) -> list[Item]:
    return [
        Item(id=f"i{n:02d}", kind=ItemKind.RESTAURANT, title=title)
        for n, title in enumerate(titles)
    ]


def test_lexical_substring_containment():
    got = retrieve_lexical("wonton", items("Wonton King", "Pizza Hut"), limit=10)
    assert [s.item_id for s in got] == ["i00"]


def test_lexical_token_overlap_clause():
    got = retrieve_lexical("beef noodles", items("noodles house"), limit=10)
    assert [s.item_id for s in got] == ["i00"]
    assert got[0].score == pytest.approx(1.5)  # shared token, half the query covered


def test_lexical_no_match_is_empty():
    assert retrieve_lexical("zzz", items("Wonton King", "Pizza Hut"), limit=10) == []


def test_lexical_substring_outranks_token_match():
    got = retrieve_lexical("wonton soup", items("soup palace", "wonton soup house"), limit=10)
    assert [s.item_id for s in got] == ["i01", "i00"]
    assert got[0].score == pytest.approx(3.0)


def test_embedding_self_title_scores_max():
    candidates = items("wonton soup", "pizza margherita")
    got = retrieve_embedding("wonton soup", candidates, limit=10, embedder=HashEmbedder(32))
    assert got[0].item_id == "i00"
    assert got[0].score == pytest.approx(1.0, abs=1e-6)


def test_embedding_matches_brute_force_sort():
    rng = random.Random(11)
    titles = [
        " ".join(rng.choice(["wonton", "beef", "soup", "tea", "rice", "pork"]) for _ in range(2))
        for _ in range(20)
    ]
    candidates = items(*titles)
    embedder = HashEmbedder(32)
    got = retrieve_embedding("beef soup", candidates, limit=20, embedder=embedder)
    query_vec = embed("beef soup", 32)
    expected = sorted(
        (Scored(c.id, float(query_vec @ embed(c.title, 32))) for c in candidates),
        key=lambda s: (-s.score, s.item_id),
    )
    assert [s.item_id for s in got] == [s.item_id for s in expected]


def test_embedding_truncates_to_limit():
    got = retrieve_embedding("tea", items("a b", "c d", "e f"), limit=1, embedder=HashEmbedder(32))
    assert len(got) == 1


def test_merge_unions_channels():
    r = rewrite_channel("r")
    merged = merge_and_attribute(
        {ORIGIN_QUERY: [Scored("x", 1.0)], r: [Scored("x", 2.0)]}, expose_limit=10
    )
    assert len(merged) == 1
    assert merged[0].channels == frozenset({ORIGIN_QUERY, r})
    assert merged[0].score == pytest.approx(2.0)


def test_merge_disjoint_cardinality():
    a = [Scored(f"a{i}", 1.0 + i) for i in range(3)]
    b = [Scored(f"b{i}", 1.0 + i) for i in range(4)]
    merged = merge_and_attribute(
        {ORIGIN_QUERY: a, rewrite_channel("r"): b}, expose_limit=10
    )
    assert len(merged) == 7


def test_merge_attribution_matches_brute_force():
    rng = random.Random(3)
    channels = [ORIGIN_QUERY, EMBEDDING, rewrite_channel("a"), rewrite_channel("b")]
    per_channel = {
        ch: [Scored(f"i{rng.randrange(30):02d}", rng.random()) for _ in range(rng.randrange(1, 25))]
        for ch in channels
    }
    merged = merge_and_attribute(per_channel, expose_limit=100)
    for result in merged:
        expected_channels = {
            ch
            for ch, scored in per_channel.items()
            if any(s.item_id == result.item_id for s in scored)
        }
        expected_score = max(
            s.score
            for scored in per_channel.values()
            for s in scored
            if s.item_id == result.item_id
        )
        assert result.channels == frozenset(expected_channels)
        assert result.score == pytest.approx(expected_score)


@settings(max_examples=50)
@given(st.permutations(list(range(4))), st.integers(min_value=1, max_value=12))
def test_merge_is_channel_order_independent(order, expose_limit):
    channels = [ORIGIN_QUERY, EMBEDDING, rewrite_channel("a"), rewrite_channel("b")]
    rng = random.Random(7)
    lists = [
        [Scored(f"i{rng.randrange(10):02d}", round(rng.random(), 3)) for _ in range(6)]
        for _ in channels
    ]
    base = merge_and_attribute(dict(zip(channels, lists)), expose_limit)
    permuted = merge_and_attribute(
        {channels[i]: lists[i] for i in order}, expose_limit
    )
    assert base == permuted


def test_merge_truncation_keeps_top_scores():
    per_channel = {ORIGIN_QUERY: [Scored(f"i{n:02d}", float(n)) for n in range(10)]}
    merged = merge_and_attribute(per_channel, expose_limit=3)
    assert [r.item_id for r in merged] == ["i09", "i08", "i07"]
    kept = {r.score for r in merged}
    assert min(kept) >= 7.0


def test_expose_replay_lookup_and_ranks():
    merged = merge_and_attribute(
        {ORIGIN_QUERY: [Scored("a", 2.0), Scored("b", 1.0)]}, expose_limit=10
    )
    events = expose_with_replay("q1", merged, {"a": (True, False)})
    assert [(e.item_id, e.clicked, e.rank) for e in events] == [
        ("a", True, 0),
        ("b", False, 1),
    ]


def test_expose_empty_merged():
    assert expose_with_replay("q1", [], {}) == []


def test_click_log_ingestion_rejects_purchase_without_click(tmp_path):
    path = tmp_path / "items.jsonl"
    path.write_text(
        '{"id": "a", "kind": "cuisine", "title": "wonton", "clicked": false, "purchased": true}\n',
        encoding="utf-8",
    )
    with pytest.raises(ValueError):
        load_items(path)


def test_u2i_stub():
    got = retrieve_u2i("u1", {"u1": ("a", "b", "c")}, limit=2)
    assert got == [Scored("a", 1.0), Scored("b", 1.0)]
    assert retrieve_u2i("u2", {"u1": ("a",)}, limit=5) == []


def test_channel_encoding_round_trip():
    for channel in (ORIGIN_QUERY, EMBEDDING, rewrite_channel("beef noodles")):
        assert decode_channel(encode_channel(channel)) == channel


def test_rewrite_channel_requires_normalized_text():
    assert rewrite_channel("  Beef  Noodles ").rewrite == "beef noodles"
    with pytest.raises(ValueError):
        Channel(ChannelKind.REWRITE, " x ")
    with pytest.raises(ValueError):
        Channel(ChannelKind.ORIGIN, "x")


def test_exposure_event_invariants():
    with pytest.raises(ValueError):
        ExposureEvent(
            query_id="q",
            item_id="i",
            channels=frozenset({ORIGIN_QUERY}),
            clicked=False,
            purchased=True,
            rank=0,
        )
    with pytest.raises(ValueError):
        ExposureEvent(
            query_id="q",
            item_id="i",
            channels=frozenset({ORIGIN_QUERY}),
            clicked=True,
            purchased=False,
            rank=-1,
        )
