import json
import random

import pytest

from conftest import split_golden
from rewriteloop.gateway import AuxLabel, AuxTask
from rewriteloop.models import (
    FrequencyClass,
    Query,
    RagContext,
    RewriteState,
    SearchIntent,
    SourceKind,
)
from rewriteloop.oracles import quality_label, relevance_label
from rewriteloop.prompting import parse_generation_output
from rewriteloop.signals import make_candidate
from rewriteloop.training import (
    BadArityError,
    NoPositivesError,
    PROVENANCE_AUX,
    PROVENANCE_ONLINE,
    PROVENANCE_RULE,
    QualityEntry,
    RelevanceEntry,
    TaskType,
    assign_quality_labels,
    build_generation_sample,
    build_quality_sample,
    build_relevance_sample,
    filter_relevance_agreement,
    group_quality_pairs,
    group_relevance_triples,
    order_positives,
    parse_quality_assistant,
    parse_relevance_assistant,
    sample_to_dict,
    write_training_samples,
)


def positive(query_id, text, level1=1, level2=0):
    record = make_candidate(query_id, text, SourceKind.PUBLIC_LLM, 0)
    from dataclasses import replace

    return replace(
        record, state=RewriteState.POSITIVE, level1_count=level1, level2_count=level2
    )


QUALITY_ENTRIES = (
    QualityEntry(
        query_text="wonton",
        context_names=("wonton king", "wonton soup"),
        rewrite="wonton soup",
        label="Yes",
        source=PROVENANCE_ONLINE,
    ),
    QualityEntry(
        query_text="spicy",
        context_names=("hotpot house",),
        rewrite="pizza",
        label="No",
        source=PROVENANCE_RULE,
    ),
)

RELEVANCE_ENTRIES = (
    RelevanceEntry("big pork bone", "northeast kitchen", "braised pork bones", "Low"),
    RelevanceEntry("wonton", "wonton king", "wonton soup", "High"),
    RelevanceEntry("milk tea", "sushi house", "salmon sushi", "None"),
)


def test_generation_sample_matches_golden(wontom_query):
    sample = build_generation_sample(
        query=wontom_query,
        positive_rewrites=[positive("q-wontom", "wonton")],
        typo_label=AuxLabel(AuxTask.TYPO, "yes"),
        intent_label=SearchIntent.CUISINE,
    )
    golden = split_golden("sample_generation.txt")
    assert sample.instruction == golden["instruction"]
    assert sample.user == golden["user"]
    assert sample.assistant == golden["assistant"]
    assert sample.provenance["rewrites"] == PROVENANCE_ONLINE


def test_generation_sample_correction_comes_from_top_positive(wontom_query):
    sample = build_generation_sample(
        query=wontom_query,
        positive_rewrites=[positive("q-wontom", "wonton")],
        typo_label=AuxLabel(AuxTask.TYPO, "yes"),
        intent_label=SearchIntent.CUISINE,
    )
    parsed = parse_generation_output(sample.assistant)
    assert parsed.correction == "wonton"
    assert parsed.rewrites == ("wonton",)


def test_generation_sample_without_positives_raises(wontom_query):
    with pytest.raises(NoPositivesError):
        build_generation_sample(
            query=wontom_query,
            positive_rewrites=[],
            typo_label=AuxLabel(AuxTask.TYPO, "no"),
            intent_label=SearchIntent.NEITHER,
        )


def test_generation_sample_orders_by_signal_strength(wontom_query):
    records = [
        positive("q-wontom", "weak", level1=0, level2=1),
        positive("q-wontom", "strong", level1=3, level2=0),
        positive("q-wontom", "middle", level1=1, level2=5),
    ]
    assert [r.text for r in order_positives(records)] == ["strong", "middle", "weak"]
    sample = build_generation_sample(
        query=wontom_query,
        positive_rewrites=records,
        typo_label=AuxLabel(AuxTask.TYPO, "no"),
        intent_label=SearchIntent.NEITHER,
    )
    parsed = parse_generation_output(sample.assistant)
    assert parsed.rewrites == ("strong", "middle", "weak")
    assert parsed.correction is None


def test_quality_sample_matches_golden():
    sample = build_quality_sample(QUALITY_ENTRIES)
    golden = split_golden("sample_quality.txt")
    assert sample.instruction == golden["instruction"]
    assert sample.user == golden["user"]
    assert sample.assistant == golden["assistant"]
    assert sample.provenance == {"1": PROVENANCE_ONLINE, "2": PROVENANCE_RULE}


def test_quality_sample_both_good():
    entries = (QUALITY_ENTRIES[0], QUALITY_ENTRIES[0])
    assert build_quality_sample(entries).assistant == "Output: {1.Yes. 2.Yes}"


def test_quality_sample_arity_guard():
    with pytest.raises(BadArityError):
        build_quality_sample(QUALITY_ENTRIES + (QUALITY_ENTRIES[0],))


def test_relevance_sample_matches_golden():
    sample = build_relevance_sample(RELEVANCE_ENTRIES)
    golden = split_golden("sample_relevance.txt")
    assert sample.instruction == golden["instruction"]
    assert sample.user == golden["user"]
    assert sample.assistant == golden["assistant"]


def test_relevance_sample_all_high():
    entries = tuple(
        RelevanceEntry(e.query_text, e.restaurant, e.cuisine, "High")
        for e in RELEVANCE_ENTRIES
    )
    assert build_relevance_sample(entries).assistant == "Output: {1.High. 2.High 3. High}"


def test_relevance_sample_arity_guard():
    with pytest.raises(BadArityError):
        build_relevance_sample(RELEVANCE_ENTRIES[:2])


def test_agreement_filter_drops_disagreements():
    rows = [
        ("wonton", "wonton king", "wonton soup"),
        ("milk tea", "sushi house", "salmon sushi"),
    ]
    primary = lambda q, r, c: relevance_label(q, [r], [c])
    aux = lambda q, r, c: "None"  # disagrees on the first row (rule says High)
    kept, dropped = filter_relevance_agreement(rows, primary, aux)
    assert [e.query_text for e in kept] == ["milk tea"]
    assert len(dropped) == 1
    assert dropped[0].primary_label == "High"
    assert dropped[0].aux_label == "None"


def test_assign_quality_positive_bypasses_aux(wontom_query):
    calls = []

    def aux(query, rewrite):
        calls.append(rewrite)
        return "No"

    records = [
        positive("q-wontom", "wonton"),
        make_candidate("q-wontom", "noodle", SourceKind.PUBLIC_LLM, 0),
    ]
    entries = assign_quality_labels(wontom_query, records, aux, aux_source=PROVENANCE_AUX)
    assert [(e.rewrite, e.label, e.source) for e in entries] == [
        ("wonton", "Yes", PROVENANCE_ONLINE),
        ("noodle", "No", PROVENANCE_AUX),
    ]
    assert calls == ["noodle"]


def test_assign_quality_skips_retired(wontom_query):
    from dataclasses import replace

    retired = replace(
        make_candidate("q-wontom", "stale", SourceKind.PUBLIC_LLM, 0),
        state=RewriteState.RETIRED,
    )
    entries = assign_quality_labels(
        wontom_query, [retired], lambda q, r: "Yes"
    )
    assert entries == []


def test_assign_quality_empty_input(wontom_query):
    assert assign_quality_labels(wontom_query, [], lambda q, r: "Yes") == []


def test_assign_quality_rule_oracle_consistency(wontom_query):
    aux = lambda q, r: quality_label(q.text, q.rag_context.names, r)
    records = [make_candidate("q-wontom", "wonton soup", SourceKind.PUBLIC_LLM, 0)]
    entries = assign_quality_labels(wontom_query, records, aux)
    assert entries[0].label == quality_label(
        "wontom", ("wonton king", "wonton soup"), "wonton soup"
    )


def test_grouping_sample_counts_floor():
    rng = random.Random(0)
    entries = [QUALITY_ENTRIES[0]] * 7
    assert len(group_quality_pairs(entries, rng)) == 3
    triples = [RELEVANCE_ENTRIES[0]] * 8
    assert len(group_relevance_triples(triples, rng)) == 2


def test_grouping_deterministic_for_seed():
    entries = [
        QualityEntry(f"q{i}", ("ctx",), f"r{i}", "Yes" if i % 2 else "No")
        for i in range(10)
    ]
    first = [s.user for s in group_quality_pairs(entries, random.Random(42))]
    second = [s.user for s in group_quality_pairs(entries, random.Random(42))]
    assert first == second


def test_assistant_strings_reparse_under_grammar():
    rng = random.Random(1)
    quality_samples = group_quality_pairs([QUALITY_ENTRIES[0], QUALITY_ENTRIES[1]] * 3, rng)
    for sample in quality_samples:
        labels = parse_quality_assistant(sample.assistant)
        assert set(labels) <= {"Yes", "No"}
    relevance_samples = group_relevance_triples(list(RELEVANCE_ENTRIES) * 2, rng)
    for sample in relevance_samples:
        labels = parse_relevance_assistant(sample.assistant)
        assert set(labels) <= {"High", "Low", "None"}


def test_reparse_rejects_wrong_shape():
    with pytest.raises(ValueError):
        parse_quality_assistant("Output: {1.Yes 2.No}")
    with pytest.raises(ValueError):
        parse_relevance_assistant("Output: {1.Low. 2.High 3.None}")


def test_export_jsonl_schema(tmp_path, wontom_query):
    sample = build_generation_sample(
        query=wontom_query,
        positive_rewrites=[positive("q-wontom", "wonton")],
        typo_label=AuxLabel(AuxTask.TYPO, "yes"),
        intent_label=SearchIntent.CUISINE,
    )
    path = tmp_path / "generation.jsonl"
    write_training_samples([sample], path)
    row = json.loads(path.read_text(encoding="utf-8").strip())
    assert set(row) == {"task", "instruction", "user", "assistant"}
    assert row["task"] == TaskType.REWRITE_GENERATION.value
    assert sample_to_dict(sample) == row
