"""Deterministic synthetic corpus for end-to-end and acceptance tests:
queries with associated names, a click-labeled catalog, both benchmark
files, and a pipeline config wired to mock endpoints."""

from __future__ import annotations

import json
from pathlib import Path

from rewriteloop.models import FrequencyThresholds, classify_frequency

THRESHOLDS = FrequencyThresholds(high_min=500, mid_min=50)

CUISINES = [
    "wonton soup",
    "beef noodles",
    "spicy hotpot",
    "kimchi soup",
    "fried chicken",
    "bubble milk tea",
    "pork rib rice",
    "tomato egg noodles",
    "mushroom ramen",
    "shrimp dumplings",
    "sichuan hotpot",
    "braised pork rice",
]

# (id, text, observed_count, restaurant indexes, cuisine indexes)
QUERY_TABLE = [
    ("q00", "wontom", 5, [0], [0]),
    ("q01", "beef noodle", 100, [1], [1]),
    ("q02", "spicy", 1000, [2, 10], [2, 10]),
    ("q03", "kimchi", 100, [3], [3]),
    ("q04", "fried chicken", 1000, [4], [4]),
    ("q05", "bmt", 5, [5], [5]),
    ("q06", "pork rib", 100, [6], [6]),
    ("q07", "ramen", 1000, [8], [8]),
    ("q08", "dumplings", 100, [9], [9]),
    ("q09", "tomato noodles", 5, [7], [7]),
    ("q10", "hotpot", 1000, [10], [10, 2]),
    ("q11", "braised pork", 5, [11], [11]),
]

# Cumulative query counts per iteration: the query set grows between rounds.
ITERATION_COUNTS = (8, 11, 12)


def restaurant_title(index: int) -> str:
    return f"{CUISINES[index]} house"


def catalog_rows() -> list[dict]:
    rows = []
    for i, cuisine in enumerate(CUISINES):
        clicked = i % 2 == 0
        rows.append(
            {
                "id": f"c{i:02d}",
                "kind": "cuisine",
                "title": cuisine,
                "clicked": clicked,
                "purchased": clicked and i % 4 == 0,
            }
        )
        rows.append(
            {
                "id": f"r{i:02d}",
                "kind": "restaurant",
                "title": restaurant_title(i),
                "clicked": i % 3 == 0,
                "purchased": False,
            }
        )
    return rows


def query_rows() -> list[dict]:
    rows = []
    for qid, text, count, r_idx, c_idx in QUERY_TABLE:
        rows.append(
            {
                "id": qid,
                "text": text,
                "observed_count": count,
                "restaurants": [restaurant_title(i) for i in r_idx],
                "cuisines": [CUISINES[i] for i in c_idx],
            }
        )
    return rows


def bench_i_rows() -> list[dict]:
    rows = []
    for row in query_rows():
        context = row["restaurants"] + row["cuisines"]
        # One ground-truth rewrite per query stays out of reach of the
        # context-copying generator.
        extra = f"tasty {row['cuisines'][0].split()[0]}"
        rows.append(
            {
                "query": row["text"],
                "frequency_class": classify_frequency(
                    row["observed_count"], THRESHOLDS
                ).value,
                "restaurants": row["restaurants"],
                "cuisines": row["cuisines"],
                "ground_truth": context + [extra],
            }
        )
    return rows


def bench_ii_rows() -> list[dict]:
    catalog = catalog_rows()
    rows = []
    for row in query_rows():
        context = set(row["restaurants"] + row["cuisines"])
        rows.append(
            {
                "query": row["text"],
                "candidates": [
                    {
                        "id": item["id"],
                        "kind": item["kind"],
                        "title": item["title"],
                        "clicked": item["title"] in context,
                    }
                    for item in catalog
                ],
            }
        )
    return rows


def _write_jsonl(path: Path, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for row in rows:
            handle.write(json.dumps(row, ensure_ascii=False) + "\n")


def write_corpus(root: Path, posttrained: bool = True) -> Path:
    """Materialize the corpus under `root` and return the config path."""
    root.mkdir(parents=True, exist_ok=True)
    (root / "llm_fixtures").mkdir(exist_ok=True)
    all_queries = query_rows()
    query_files = []
    for i, count in enumerate(ITERATION_COUNTS):
        name = f"queries_iter{i}.jsonl"
        _write_jsonl(root / name, all_queries[:count])
        query_files.append(name)
    _write_jsonl(root / "catalog.jsonl", catalog_rows())
    _write_jsonl(root / "bench1.jsonl", bench_i_rows())
    _write_jsonl(root / "bench2.jsonl", bench_ii_rows())
    endpoints = {
        "generator_public": {"name": "mock-public", "base_url": "mock://rag", "kind": "mock"},
        "aux_labeler": {"name": "mock-aux", "base_url": "mock://rag", "kind": "mock"},
    }
    if posttrained:
        endpoints["generator_posttrained"] = {
            "name": "mock-posttrained",
            "base_url": "mock://rag",
            "kind": "mock",
        }
    config = {
        "seed": 7,
        "thresholds": {"high_min": THRESHOLDS.high_min, "mid_min": THRESHOLDS.mid_min},
        "n_rewrites": 10,
        "expose_limit": 20,
        "channel_limit": 10,
        "embed_dim": 64,
        "ks": [1, 5, 10],
        "decode": {"max_tokens": 256, "temperature": 0.0, "seed": 7},
        "paths": {
            "workdir": "run",
            "queries": query_files,
            "catalog": "catalog.jsonl",
            "bench_i": "bench1.jsonl",
            "bench_ii": "bench2.jsonl",
            "fixtures": "llm_fixtures",
        },
        "endpoints": endpoints,
        "u2i": {"q02": ["c04", "r04"], "q05": ["c00"]},
    }
    config_path = root / "config.json"
    config_path.write_text(json.dumps(config, indent=2) + "\n", encoding="utf-8")
    return config_path
