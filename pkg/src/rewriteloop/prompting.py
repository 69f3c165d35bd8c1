"""Generation-prompt construction and structured-output parsing.

The instruction walks the model through three steps (meaning + correction,
intent choice, rewrites by direction) and pins a brace-delimited output
format; the user section carries the query, its associated restaurant and
cuisine names, and a frequency-class-specific explanation block.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from . import prompts
from .models import (
    EmptyTextError,
    FrequencyClass,
    Query,
    RewriteDirection,
    SearchIntent,
    is_normalized,
    normalize_text,
)

DEFAULT_N_REWRITES = 10

GENERATION_INSTRUCTION_TEMPLATE = prompts.load("generation_instruction.txt").rstrip("\n")
GENERATION_USER_TEMPLATE = prompts.load("generation_user.txt").rstrip("\n")
QUALITY_INSTRUCTION = prompts.load("quality_instruction.txt").rstrip("\n")
RELEVANCE_INSTRUCTION = prompts.load("relevance_instruction.txt").rstrip("\n")

TYPO_INSTRUCTION = (
    "You are a query analysis expert for a food delivery platform. Determine whether "
    "the user search query contains a typo, i.e. wrongly written words, judging from "
    'the associated restaurant and cuisine names. Respond with "yes" or "no".'
)

_EXPLANATIONS = {
    FrequencyClass.HIGH: prompts.load("explanation_high.txt").rstrip("\n"),
    FrequencyClass.MID: prompts.load("explanation_mid.txt").rstrip("\n"),
    FrequencyClass.TAIL: prompts.load("explanation_tail.txt").rstrip("\n"),
}


@dataclass(frozen=True)
class DirectionCard:
    """One rewrite direction: its definition, worked cases, and the bullet
    line injected into the generation instruction."""

    definition: str
    positive_cases: tuple[str, ...]
    negative_cases: tuple[str, ...]
    prompt_line: str


DIRECTION_CARDS: dict[RewriteDirection, DirectionCard] = {
    RewriteDirection.KEYWORD_EXTRACTION: DirectionCard(
        definition=(
            "Extract the core content from the query, which must be entirely "
            "contained within the query"
        ),
        positive_cases=("Animal cream birthday cake -> cake, birthday cake",),
        negative_cases=("Linwei's Chuan -> barbecue",),
        prompt_line=(
            "- Key word extraction: Extract the core content from the query, "
            "which must be fully contained within the query;"
        ),
    ),
    RewriteDirection.CORRECTION: DirectionCard(
        definition="Rewrite the query to use correct wording.",
        positive_cases=("Wontom -> Wonton",),
        negative_cases=("HK -> HK style Cafe",),
        prompt_line=(
            '- Correction: Rewrite the query to use correct wording, for example '
            '"Wontom" to "Wonton";'
        ),
    ),
    RewriteDirection.ALIAS_SYNONYM: DirectionCard(
        definition="Rewrite the query to commonly used wording.",
        positive_cases=("kfc -> Kentucky Fried Chicken",),
        negative_cases=("kfc -> McDonald",),
        prompt_line=(
            "- Alias & Synonyms: To search for more similar dishes, the terms "
            "should be short and common, and should not directly use the provided "
            "dish names;"
        ),
    ),
    RewriteDirection.MAIN_DISH: DirectionCard(
        definition=(
            "Rewrite the query to cuisine that are short, common, and highly "
            "related to the original query; cannot directly use the provided query."
        ),
        positive_cases=("Daifuku Spicy Kimchi -> Kimchi Soup, Spicy Pickled Cabbage",),
        negative_cases=("Daifuku Spicy Kimchi -> Bibimbap",),
        prompt_line=(
            '- Main Dish: For example, "burger", "cake", "noodles". Note that dish '
            "category terms should be specific and not too general or vague;"
        ),
    ),
    RewriteDirection.LOW_RELEVANCE: DirectionCard(
        definition="Rewrite the query to similar cuisine.",
        positive_cases=("Big Pork Bone -> Steak",),
        negative_cases=("Big Pork Bone -> Northeast Braised Pork Bones",),
        prompt_line=(
            "- Related cuisine (Low Relevance): The rewrite should be short, common, "
            "and highly related to the original query, and should not directly use "
            "the provided restaurant and cuisine names;"
        ),
    ),
}

# Canonical ordering of direction bullet lines inside the instruction.
DIRECTION_ORDER: tuple[RewriteDirection, ...] = (
    RewriteDirection.KEYWORD_EXTRACTION,
    RewriteDirection.CORRECTION,
    RewriteDirection.ALIAS_SYNONYM,
    RewriteDirection.MAIN_DISH,
    RewriteDirection.LOW_RELEVANCE,
)

ALL_DIRECTIONS: frozenset[RewriteDirection] = frozenset(DIRECTION_ORDER)


class OutputParseError(ValueError):
    """Base class for generation-output parse failures."""


class NoStructureError(OutputParseError):
    """No brace-delimited block found in the raw output."""


class MissingFieldError(OutputParseError):
    def __init__(self, field_name: str):
        super().__init__(f"required field not found: {field_name!r}")
        self.field_name = field_name


class EmptyRewritesError(OutputParseError):
    """The rewrite list normalized to empty."""


class InvalidFieldError(OutputParseError):
    def __init__(self, field_name: str, value: str):
        super().__init__(f"field {field_name!r} has out-of-vocabulary value {value!r}")
        self.field_name = field_name
        self.value = value


@dataclass(frozen=True)
class PromptBundle:
    """Instruction/user pair sent to a completion endpoint."""

    instruction: str
    user: str

    def __post_init__(self) -> None:
        if not self.instruction or not self.user:
            raise ValueError("instruction and user sections must be non-empty")


@dataclass(frozen=True)
class GenerationRequest:
    query: Query
    n_rewrites: int = DEFAULT_N_REWRITES
    directions: frozenset[RewriteDirection] = ALL_DIRECTIONS

    def __post_init__(self) -> None:
        if self.n_rewrites < 1:
            raise ValueError(f"n_rewrites must be >= 1, got {self.n_rewrites}")
        object.__setattr__(self, "directions", frozenset(self.directions))
        if not self.directions:
            raise ValueError("directions must be non-empty")


@dataclass(frozen=True)
class GenerationOutput:
    """Parsed model answer: meaning summary, optional correction, intent,
    and rewrites ordered from most to least efficient."""

    query_meaning: str
    correction: str | None
    intent: SearchIntent
    rewrites: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        object.__setattr__(self, "rewrites", tuple(self.rewrites))
        if not self.rewrites:
            raise ValueError("rewrites must be non-empty")
        if len(set(self.rewrites)) != len(self.rewrites):
            raise ValueError(f"rewrites must be duplicate-free: {self.rewrites}")
        for r in self.rewrites:
            if not is_normalized(r):
                raise ValueError(f"rewrite must be normalized and non-empty: {r!r}")


def category_explanation(frequency_class: FrequencyClass) -> str:
    """The query-explanation block for one frequency class."""
    return _EXPLANATIONS[frequency_class]


def build_instruction(
    n_rewrites: int, directions: frozenset[RewriteDirection] | None = None
) -> str:
    """Render the generation instruction for a rewrite budget and a set of
    requested directions (canonical order, all directions by default)."""
    chosen = ALL_DIRECTIONS if directions is None else frozenset(directions)
    if not chosen:
        raise ValueError("directions must be non-empty")
    lines = [DIRECTION_CARDS[d].prompt_line for d in DIRECTION_ORDER if d in chosen]
    return GENERATION_INSTRUCTION_TEMPLATE.replace("<<N>>", str(n_rewrites)).replace(
        "<<DIRECTIONS>>", "\n\n".join(lines)
    )


def join_context(query: Query) -> str:
    """Comma-joined associated restaurant and cuisine names, restaurants first."""
    return ", ".join(query.rag_context.names)


def build_generation_user(query: Query, include_explanation: bool = True) -> str:
    user = GENERATION_USER_TEMPLATE.replace("<<QUERY>>", query.text).replace(
        "<<CONTEXT>>", join_context(query)
    )
    if include_explanation:
        return user.replace("<<EXPLANATION>>", category_explanation(query.frequency_class))
    # Training samples carry only the query and its context.
    head, _, _ = user.partition("\n\nQuery Explanation:")
    return head


def build_generation_prompt(req: GenerationRequest) -> PromptBundle:
    """Deterministically assemble the full generation prompt for a query."""
    return PromptBundle(
        instruction=build_instruction(req.n_rewrites, req.directions),
        user=build_generation_user(req.query),
    )


_FIELD_NAMES = ("Query meaning", "Correction", "Search intent", "Rewrite")
_QUOTES = "\"'“”‘’"
_FIELD_RES = {
    name: re.compile(
        rf"[{_QUOTES}]?{re.escape(name)}[{_QUOTES}]?\s*[:：]\s*"
        rf"[{_QUOTES}]([^{_QUOTES}]*)[{_QUOTES}]"
    )
    for name in _FIELD_NAMES
}
_STRICT_RE = re.compile(
    r'^\{"Query meaning": "([^"]*)", "Correction": "([^"]*)", '
    r'"Search intent": "([^"]*)", "Rewrite": "([^"]*)"\}$'
)
_INTENTS = {intent.value.lower(): intent for intent in SearchIntent}


def _parse_rewrites(raw_value: str) -> tuple[str, ...]:
    seen: dict[str, None] = {}
    for part in re.split(r"[,，]", raw_value):
        try:
            seen.setdefault(normalize_text(part), None)
        except EmptyTextError:
            continue
    if not seen:
        raise EmptyRewritesError(f"no usable rewrites in {raw_value!r}")
    return tuple(seen)


def _parse_intent(raw_value: str) -> SearchIntent:
    key = raw_value.strip().strip(".").lower()
    if key not in _INTENTS:
        raise InvalidFieldError("Search intent", raw_value)
    return _INTENTS[key]


def _parse_correction(raw_value: str) -> str | None:
    value = raw_value.strip()
    if not value or value.lower() == "none":
        return None
    return value


def parse_generation_output(raw: str, strict: bool = False) -> GenerationOutput:
    """Extract the four output fields from a model answer.

    Tolerant by default: chatter outside the braces, curly/straight quote
    variants, fullwidth colons and commas, and stray whitespace are all
    accepted. Strict mode requires the canonical serialized form and is meant
    for golden-file checks.
    """
    if strict:
        m = _STRICT_RE.match(raw.strip())
        if m is None:
            raise NoStructureError("output does not match the canonical format")
        fields = dict(zip(_FIELD_NAMES, m.groups()))
    else:
        start, end = raw.find("{"), raw.rfind("}")
        if start < 0 or end <= start:
            raise NoStructureError("no brace-delimited block found")
        block = raw[start + 1 : end]
        fields = {}
        for name in _FIELD_NAMES:
            m = _FIELD_RES[name].search(block)
            if m is None:
                raise MissingFieldError(name)
            fields[name] = m.group(1)
    return GenerationOutput(
        query_meaning=fields["Query meaning"].strip(),
        correction=_parse_correction(fields["Correction"]),
        intent=_parse_intent(fields["Search intent"]),
        rewrites=_parse_rewrites(fields["Rewrite"]),
    )


def render_generation_output(output: GenerationOutput) -> str:
    """Serialize a GenerationOutput back into the canonical brace format.

    Inverse of parse_generation_output for values free of quote characters;
    an absent correction renders as "None".
    """
    correction = output.correction if output.correction is not None else "None"
    return (
        '{"Query meaning": "%s", "Correction": "%s", "Search intent": "%s", '
        '"Rewrite": "%s"}'
        % (output.query_meaning, correction, output.intent.value, ", ".join(output.rewrites))
    )
