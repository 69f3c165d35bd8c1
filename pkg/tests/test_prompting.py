import pytest
from hypothesis import given, strategies as st

from conftest import read_golden, split_golden
from rewriteloop.models import (
    FrequencyClass,
    Query,
    RagContext,
    RewriteDirection,
    SearchIntent,
    normalize_text,
)
from rewriteloop.prompting import (
    ALL_DIRECTIONS,
    EmptyRewritesError,
    GenerationOutput,
    GenerationRequest,
    InvalidFieldError,
    MissingFieldError,
    NoStructureError,
    build_generation_prompt,
    category_explanation,
    parse_generation_output,
    render_generation_output,
)

PAPER_TEMPLATE_DIRECTIONS = frozenset(ALL_DIRECTIONS - {RewriteDirection.CORRECTION})


def test_category_explanations_are_distinct():
    texts = {category_explanation(c) for c in FrequencyClass}
    assert len(texts) == 3


def test_high_explanation_opening():
    assert category_explanation(FrequencyClass.HIGH).startswith("This query is commonly used")


def test_mid_explanation_opening():
    assert category_explanation(FrequencyClass.MID).startswith(
        "This query may be a local food"
    )


def test_tail_explanation_opening():
    assert category_explanation(FrequencyClass.TAIL).startswith(
        "It is highly possible that the query"
    )


def test_tail_prompt_matches_golden(tail_query):
    golden = split_golden("prompt_tail.txt")
    bundle = build_generation_prompt(
        GenerationRequest(query=tail_query, n_rewrites=10, directions=PAPER_TEMPLATE_DIRECTIONS)
    )
    assert bundle.instruction == golden["instruction"]
    assert bundle.user == golden["user"]


def test_high_user_matches_golden():
    query = Query(
        id="q-snack",
        text="snack",
        frequency_class=FrequencyClass.HIGH,
        rag_context=RagContext(restaurants=("snack bar",), cuisines=("potato chips",)),
    )
    bundle = build_generation_prompt(GenerationRequest(query=query))
    assert bundle.user == read_golden("prompt_user_high.txt")


def test_mid_user_matches_golden():
    query = Query(
        id="q-xjd",
        text="Xijiade",
        frequency_class=FrequencyClass.MID,
        rag_context=RagContext(restaurants=("xijiade dumplings",), cuisines=("dumplings",)),
    )
    bundle = build_generation_prompt(GenerationRequest(query=query))
    assert bundle.user == read_golden("prompt_user_mid.txt")


def test_prompt_contains_query_and_every_context_entry(tail_query):
    bundle = build_generation_prompt(GenerationRequest(query=tail_query))
    assert tail_query.text in bundle.user
    for name in tail_query.rag_context.names:
        assert name in bundle.user


def test_prompt_deterministic(tail_query):
    req = GenerationRequest(query=tail_query, n_rewrites=7)
    assert build_generation_prompt(req) == build_generation_prompt(req)


def test_directions_subset_changes_instruction(tail_query):
    one = build_generation_prompt(
        GenerationRequest(
            query=tail_query, directions=frozenset({RewriteDirection.MAIN_DISH})
        )
    )
    assert "Main Dish" in one.instruction
    assert "Key word extraction" not in one.instruction


def test_empty_directions_rejected(tail_query):
    with pytest.raises(ValueError):
        GenerationRequest(query=tail_query, directions=frozenset())


def test_parse_correction_example():
    raw = (
        '{"Query meaning": "misspelled wonton", "Correction": "Wonton", '
        '"Search intent": "Cuisine", "Rewrite": "wonton, wonton soup"}'
    )
    out = parse_generation_output(raw)
    assert out.query_meaning == "misspelled wonton"
    assert out.correction == "Wonton"
    assert out.intent is SearchIntent.CUISINE
    assert out.rewrites == ("wonton", "wonton soup")


def test_parse_none_sentinel_and_duplicate_collapse():
    raw = (
        '{"Query meaning": "x", "Correction": "None", '
        '"Search intent": "Neither", "Rewrite": "a, a, A"}'
    )
    out = parse_generation_output(raw)
    assert out.correction is None
    assert out.rewrites == ("a",)


def test_parse_no_structure():
    with pytest.raises(NoStructureError):
        parse_generation_output("no braces here")


def test_parse_missing_field():
    raw = '{"Query meaning": "x", "Search intent": "Neither", "Rewrite": "a"}'
    with pytest.raises(MissingFieldError) as exc:
        parse_generation_output(raw)
    assert exc.value.field_name == "Correction"


def test_parse_empty_rewrites():
    raw = (
        '{"Query meaning": "x", "Correction": "None", '
        '"Search intent": "Neither", "Rewrite": " , ,"}'
    )
    with pytest.raises(EmptyRewritesError):
        parse_generation_output(raw)


def test_parse_bad_intent():
    raw = (
        '{"Query meaning": "x", "Correction": "None", '
        '"Search intent": "Pizza", "Rewrite": "a"}'
    )
    with pytest.raises(InvalidFieldError):
        parse_generation_output(raw)


def test_parse_tolerates_chatter_curly_quotes_fullwidth_commas():
    raw = (
        "Sure, here you go:\n"
        "{“Query meaning”: “x”, “Correction”: “None”, "
        "“Search intent”: “Cuisine”, "
        "“Rewrite”: “wonton，wonton soup”}\n"
        "Hope this helps!"
    )
    out = parse_generation_output(raw)
    assert out.rewrites == ("wonton", "wonton soup")
    assert out.intent is SearchIntent.CUISINE


def test_strict_mode_rejects_chatter():
    canonical = (
        '{"Query meaning": "x", "Correction": "None", '
        '"Search intent": "Neither", "Rewrite": "a"}'
    )
    assert parse_generation_output(canonical, strict=True).rewrites == ("a",)
    with pytest.raises(NoStructureError):
        parse_generation_output("note " + canonical, strict=True)


_plain = st.text(
    alphabet=st.characters(
        whitelist_categories=("Ll", "Lu", "Nd"),
        whitelist_characters=" ",
        max_codepoint=0x2FFF,
    ),
    min_size=1,
    max_size=24,
).filter(lambda s: s.strip())

_rewrite = st.text(
    alphabet=st.sampled_from("abcdefghijklmnopqrstuvwxyz"), min_size=1, max_size=10
)


@given(
    meaning=_plain,
    correction=st.one_of(st.none(), _plain.filter(lambda s: s.strip().lower() != "none")),
    intent=st.sampled_from(list(SearchIntent)),
    rewrites=st.lists(_rewrite, min_size=1, max_size=6, unique=True),
)
def test_render_parse_round_trip(meaning, correction, intent, rewrites):
    output = GenerationOutput(
        query_meaning=meaning.strip(),
        correction=correction.strip() if correction else None,
        intent=intent,
        rewrites=tuple(rewrites),
    )
    parsed = parse_generation_output(render_generation_output(output))
    assert parsed == output


@given(
    rewrites=st.lists(
        st.text(min_size=1, max_size=12).filter(
            lambda s: not set(s) & set("\"'“”‘’,，")
        ),
        min_size=1,
        max_size=5,
    )
)
def test_parsed_rewrites_are_normalization_fixpoints(rewrites):
    raw = (
        '{"Query meaning": "x", "Correction": "None", "Search intent": "Neither", '
        f'"Rewrite": "{", ".join(rewrites)}"}}'
    )
    try:
        out = parse_generation_output(raw)
    except EmptyRewritesError:
        return
    for rewrite in out.rewrites:
        assert normalize_text(rewrite) == rewrite
