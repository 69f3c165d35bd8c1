import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from rewriteloop.models import FrequencyClass, Query, RagContext

GOLDEN_DIR = Path(__file__).parent / "golden"


def read_golden(name: str) -> str:
    return (GOLDEN_DIR / name).read_text(encoding="utf-8")


def split_golden(name: str) -> dict[str, str]:
    """Parse a sectioned golden file into {section: exact text}."""
    content = read_golden(name)
    sections: dict[str, str] = {}
    current: str | None = None
    buffer: list[str] = []
    for line in content.split("\n"):
        if line.startswith("<<<") and line.endswith(">>>"):
            if current is not None:
                sections[current] = "\n".join(buffer)
            current = line[3:-3].lower()
            buffer = []
        else:
            buffer.append(line)
    if current is not None:
        sections[current] = "\n".join(buffer)
    return sections


@pytest.fixture
def tail_query() -> Query:
    return Query(
        id="q-lsf",
        text="lsf",
        frequency_class=FrequencyClass.TAIL,
        observed_count=5,
        rag_context=RagContext(restaurants=("luosifen house",), cuisines=("luosifen",)),
    )


@pytest.fixture
def wontom_query() -> Query:
    return Query(
        id="q-wontom",
        text="wontom",
        frequency_class=FrequencyClass.TAIL,
        observed_count=3,
        rag_context=RagContext(
            restaurants=("wonton king",), cuisines=("wonton soup",)
        ),
    )
