"""End-to-end iteration loop: generate rewrites, dedup against the
vocabulary, replay retrieval and clicks, collect signals, build training
files, and record per-iteration stats.

All side effects are file writes under one working directory; reruns with
the same inputs and seed reproduce byte-identical outputs. A lock file
keeps the directory single-writer.
"""

from __future__ import annotations

import json
import logging
import os
import random
from collections.abc import Callable, Sequence
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from pathlib import Path

from . import oracles
from .evaluation import (
    HashEmbedder,
    load_benchmark_ii,
    recall_at_k,
    relevance_rate,
)
from .gateway import (
    AuxLabel,
    AuxTask,
    CompletionParams,
    EndpointKind,
    LlmGateway,
    ModelEndpoint,
    quality_payload,
    relevance_payload,
    typo_payload,
)
from .models import (
    FrequencyThresholds,
    Query,
    RagContext,
    RewriteState,
    SourceKind,
    normalize_text,
)
from .prompting import GenerationRequest, build_generation_prompt, parse_generation_output
from .signals import (
    Vocabulary,
    carryover_filter,
    dedup_and_stats,
    insert_candidates,
    label_signals,
    load_vocabulary,
    make_candidate,
    save_vocabulary,
    touch_deployed,
    update_vocabulary,
    write_signals,
)
from .simulate import (
    EMBEDDING,
    ORIGIN_QUERY,
    U2I,
    click_log_from_items,
    load_items,
    merge_and_attribute,
    expose_with_replay,
    retrieve_embedding,
    retrieve_lexical,
    retrieve_u2i,
    rewrite_channel,
    write_events,
)
from .training import (
    PROVENANCE_AUX,
    PROVENANCE_RULE,
    assign_quality_labels,
    build_generation_sample,
    filter_relevance_agreement,
    group_quality_pairs,
    group_relevance_triples,
    write_training_samples,
)

logger = logging.getLogger(__name__)

ENV_PREFIX = "REWRITELOOP_"
ROLE_PUBLIC = "generator_public"
ROLE_POST_TRAINED = "generator_posttrained"
ROLE_AUX = "aux_labeler"


class ConfigError(ValueError):
    """Configuration file missing, malformed, or pointing at absent paths."""


class LockError(RuntimeError):
    """Another orchestrator instance owns the working directory."""


class MissingEndpointError(RuntimeError):
    """An iteration needs an endpoint role the config does not provide."""


@dataclass(frozen=True)
class PipelineConfig:
    seed: int
    thresholds: FrequencyThresholds
    workdir: Path
    queries_paths: tuple[Path, ...]
    catalog_path: Path
    endpoints: dict[str, ModelEndpoint]
    n_rewrites: int = 10
    expose_limit: int = 20
    channel_limit: int = 10
    embed_dim: int = 64
    ks: tuple[int, ...] = (1, 5, 10)
    decode: CompletionParams = field(default_factory=CompletionParams)
    bench_i_path: Path | None = None
    bench_ii_path: Path | None = None
    fixtures_dir: Path | None = None
    u2i: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def queries_path_for(self, iteration: int) -> Path:
        """Per-iteration query file; the last one is reused when the loop
        outruns the configured list."""
        return self.queries_paths[min(iteration, len(self.queries_paths) - 1)]


def _endpoint_from_dict(role: str, row: dict) -> ModelEndpoint:
    base_url = os.environ.get(f"{ENV_PREFIX}{role.upper()}_URL", row["base_url"])
    return ModelEndpoint(
        name=row["name"], base_url=base_url, kind=EndpointKind(row["kind"])
    )


def load_config(path: str | Path) -> PipelineConfig:
    """Read a JSON config; relative paths resolve against the config file's
    directory, endpoint URLs may be overridden via REWRITELOOP_<ROLE>_URL."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    base = path.parent

    def resolve(p) -> Path:
        candidate = Path(p)
        return candidate if candidate.is_absolute() else base / candidate

    try:
        paths = raw["paths"]
        queries_raw = paths["queries"]
        if isinstance(queries_raw, str):
            queries_paths = (resolve(queries_raw),)
        else:
            queries_paths = tuple(resolve(p) for p in queries_raw)
        thresholds = FrequencyThresholds(
            high_min=int(raw["thresholds"]["high_min"]),
            mid_min=int(raw["thresholds"]["mid_min"]),
        )
        decode_raw = raw.get("decode", {})
        config = PipelineConfig(
            seed=int(raw["seed"]),
            thresholds=thresholds,
            workdir=resolve(paths["workdir"]),
            queries_paths=queries_paths,
            catalog_path=resolve(paths["catalog"]),
            endpoints={
                role: _endpoint_from_dict(role, row)
                for role, row in raw.get("endpoints", {}).items()
            },
            n_rewrites=int(raw.get("n_rewrites", 10)),
            expose_limit=int(raw.get("expose_limit", 20)),
            channel_limit=int(raw.get("channel_limit", 10)),
            embed_dim=int(raw.get("embed_dim", 64)),
            ks=tuple(int(k) for k in raw.get("ks", (1, 5, 10))),
            decode=CompletionParams(
                max_tokens=int(decode_raw.get("max_tokens", 256)),
                temperature=float(decode_raw.get("temperature", 0.0)),
                seed=decode_raw.get("seed"),
            ),
            bench_i_path=resolve(paths["bench_i"]) if "bench_i" in paths else None,
            bench_ii_path=resolve(paths["bench_ii"]) if "bench_ii" in paths else None,
            fixtures_dir=resolve(paths["fixtures"]) if "fixtures" in paths else None,
            u2i={k: tuple(v) for k, v in raw.get("u2i", {}).items()},
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad config {path}: {exc}") from exc
    missing = [
        p
        for p in (*config.queries_paths, config.catalog_path, config.bench_i_path,
                  config.bench_ii_path, config.fixtures_dir)
        if p is not None and not p.exists()
    ]
    if missing:
        raise ConfigError(f"configured paths do not exist: {[str(p) for p in missing]}")
    if ROLE_PUBLIC not in config.endpoints:
        raise ConfigError(f"config must define the {ROLE_PUBLIC!r} endpoint")
    return config


def load_queries(path: str | Path, thresholds: FrequencyThresholds) -> list[Query]:
    """JSONL loader: one query per line with id, text, observed_count, and
    optional restaurants/cuisines lists (deduplicated, order kept)."""
    queries = []
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            try:
                queries.append(
                    Query.from_count(
                        id=row["id"],
                        text=row["text"],
                        observed_count=int(row.get("observed_count", 0)),
                        thresholds=thresholds,
                        rag_context=RagContext(
                            restaurants=tuple(dict.fromkeys(row.get("restaurants", ()))),
                            cuisines=tuple(dict.fromkeys(row.get("cuisines", ()))),
                        ),
                    )
                )
            except (KeyError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: bad query record: {exc}") from exc
    return queries


@dataclass(frozen=True)
class IterationState:
    """Progress of the loop inside one working directory."""

    iteration: int
    vocab_path: Path
    endpoints: dict[str, ModelEndpoint]
    stats: tuple[dict, ...] = ()


def initial_state(config: PipelineConfig) -> IterationState:
    return IterationState(
        iteration=0,
        vocab_path=config.workdir / "vocab.jsonl",
        endpoints=dict(config.endpoints),
        stats=(),
    )


def load_state(config: PipelineConfig) -> IterationState:
    state = initial_state(config)
    state_path = config.workdir / "state.json"
    if state_path.is_file():
        raw = json.loads(state_path.read_text(encoding="utf-8"))
        state = replace(
            state,
            iteration=int(raw["iteration"]),
            stats=tuple(raw.get("stats", ())),
        )
    return state


def _atomic_write(path: Path, content: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(content, encoding="utf-8")
    os.replace(tmp, path)


@contextmanager
def workdir_lock(workdir: Path):
    """Exclusive lock for one orchestrator instance per working directory.
    A stale lock after a crash must be removed manually."""
    workdir.mkdir(parents=True, exist_ok=True)
    lock_path = workdir / ".lock"
    try:
        fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise LockError(f"working directory is locked: {lock_path}") from None
    try:
        os.write(fd, f"{os.getpid()}\n".encode())
        os.close(fd)
        yield
    finally:
        lock_path.unlink(missing_ok=True)


def _aux_oracles(
    gateway: LlmGateway, endpoints: dict[str, ModelEndpoint]
) -> tuple[Callable, Callable, Callable, str]:
    """Typo/quality/relevance labelers: the configured aux endpoint when
    present, the rule oracles otherwise."""
    aux_endpoint = endpoints.get(ROLE_AUX)
    if aux_endpoint is None:
        typo = lambda query: oracles.typo_label(query.text, query.rag_context.names)
        quality = lambda query, rewrite: oracles.quality_label(
            query.text, query.rag_context.names, rewrite
        )
        relevance = lambda q, r, c: oracles.relevance_label(q, [r], [c])
        return typo, quality, relevance, PROVENANCE_RULE

    def typo(query: Query) -> str:
        payload = typo_payload(query.text, query.rag_context.names)
        return gateway.aux_label(aux_endpoint, AuxTask.TYPO, payload).value

    def quality(query: Query, rewrite: str) -> str:
        payload = quality_payload(query.text, query.rag_context.names, rewrite)
        return gateway.aux_label(aux_endpoint, AuxTask.QUALITY, payload).value

    def relevance(query_text: str, restaurant: str, cuisine: str) -> str:
        payload = relevance_payload(query_text, restaurant, cuisine)
        return gateway.aux_label(aux_endpoint, AuxTask.RELEVANCE, payload).value

    return typo, quality, relevance, PROVENANCE_AUX


def simulate_query(
    query: Query,
    rewrites: Sequence[str],
    items,
    click_log,
    embedder,
    config: PipelineConfig,
):
    """Run all channels for one query, merge with provenance, and expose."""
    per_channel = {
        ORIGIN_QUERY: retrieve_lexical(query.text, items, config.channel_limit),
        EMBEDDING: retrieve_embedding(query.text, items, config.channel_limit, embedder),
    }
    u2i_results = retrieve_u2i(query.id, config.u2i, config.channel_limit)
    if u2i_results:
        per_channel[U2I] = u2i_results
    for text in sorted(set(rewrites)):
        per_channel[rewrite_channel(text)] = retrieve_lexical(
            text, items, config.channel_limit
        )
    merged = merge_and_attribute(per_channel, config.expose_limit)
    return expose_with_replay(query.id, merged, click_log)


def _relevance_rows(query: Query) -> list[tuple[str, str, str]]:
    restaurants = query.rag_context.restaurants
    cuisines = query.rag_context.cuisines
    if not restaurants or not cuisines:
        return []
    count = max(len(restaurants), len(cuisines))
    return [
        (query.text, restaurants[i % len(restaurants)], cuisines[i % len(cuisines)])
        for i in range(count)
    ]


def run_iteration(
    state: IterationState,
    queries: Sequence[Query],
    config: PipelineConfig,
    gateway: LlmGateway,
) -> IterationState:
    """Execute one full loop iteration and persist its outputs.

    Stages run in order: generate (public model, plus the post-trained model
    from iteration 1 on), parse, dedup against the vocabulary, simulate
    exposure over the replay catalog, label signals, update the vocabulary,
    sweep carryover, emit the three training files, and record stats. Any
    stage error aborts before anything is written.
    """
    k = state.iteration
    public = state.endpoints.get(ROLE_PUBLIC)
    if public is None:
        raise MissingEndpointError(f"{ROLE_PUBLIC} endpoint is required")
    post_trained = state.endpoints.get(ROLE_POST_TRAINED)
    if k >= 1 and post_trained is None:
        raise MissingEndpointError(
            f"iteration {k} needs the {ROLE_POST_TRAINED} endpoint"
        )

    vocab = (
        load_vocabulary(state.vocab_path, iteration=k)
        if state.vocab_path.is_file()
        else Vocabulary(iteration=k)
    )
    vocab = vocab.with_iteration(k)

    candidates = []
    for query in queries:
        bundle = build_generation_prompt(
            GenerationRequest(query=query, n_rewrites=config.n_rewrites)
        )
        generators = [(public, SourceKind.PUBLIC_LLM, None)]
        if k > 0:
            generators.append((post_trained, SourceKind.POST_TRAINED, k))
        for endpoint, source, source_iteration in generators:
            output = parse_generation_output(
                gateway.complete(endpoint, bundle, config.decode)
            )
            candidates.extend(
                make_candidate(query.id, text, source, k, source_iteration)
                for text in output.rewrites
            )

    unique, unique_portion = dedup_and_stats(candidates, vocab)
    vocab = insert_candidates(vocab, unique)
    vocab = touch_deployed(vocab, [r.key for r in vocab.positives()], k)

    deployed: dict[str, list[str]] = {}
    for record in vocab.records.values():
        is_fresh = (
            record.state is RewriteState.CANDIDATE and record.last_seen_iteration == k
        )
        if record.state is RewriteState.POSITIVE or is_fresh:
            deployed.setdefault(record.query_id, []).append(record.text)

    items = load_items(config.catalog_path)
    click_log = click_log_from_items(items)
    embedder = HashEmbedder(config.embed_dim)
    events = []
    for query in queries:
        events.extend(
            simulate_query(
                query, deployed.get(query.id, ()), items, click_log, embedder, config
            )
        )

    labels = label_signals(events)
    positives_before = len(vocab.positives())
    vocab = update_vocabulary(vocab, labels)
    positives_after = len(vocab.positives())
    vocab = carryover_filter(vocab)

    typo_oracle, quality_oracle, relevance_oracle, aux_source = _aux_oracles(
        gateway, state.endpoints
    )
    rng = random.Random(f"{config.seed}:{k}")

    generation_samples = []
    quality_entries = []
    relevance_rows = []
    for query in queries:
        records = vocab.for_query(query.id)
        positives = [r for r in records if r.state is RewriteState.POSITIVE]
        if positives:
            generation_samples.append(
                build_generation_sample(
                    query=query,
                    positive_rewrites=positives,
                    typo_label=AuxLabel(AuxTask.TYPO, typo_oracle(query)),
                    intent_label=oracles.intent_label(
                        query.text,
                        query.rag_context.restaurants,
                        query.rag_context.cuisines,
                    ),
                    typo_source=aux_source,
                )
            )
        quality_entries.extend(
            assign_quality_labels(query, records, quality_oracle, aux_source)
        )
        relevance_rows.extend(_relevance_rows(query))

    rule_relevance = lambda q, r, c: oracles.relevance_label(q, [r], [c])
    agreed, dropped = filter_relevance_agreement(
        relevance_rows, rule_relevance, relevance_oracle, agreed_source=aux_source
    )
    quality_samples = group_quality_pairs(quality_entries, rng)
    relevance_samples = group_relevance_triples(agreed, rng)

    unique_by_query: dict[str, list[str]] = {}
    for record in unique:
        unique_by_query.setdefault(record.query_id, []).append(record.text)
    query_by_id = {q.id: q for q in queries}
    unique_pairs = [
        (query_by_id[qid], text)
        for qid, texts in unique_by_query.items()
        for text in texts
        if qid in query_by_id
    ]
    eval_unique: dict = {
        "relevance": (
            relevance_rate(
                unique_pairs,
                lambda q, r: oracles.relevance_label(
                    r, q.rag_context.restaurants, q.rag_context.cuisines
                ),
            )
            if unique_pairs
            else None
        ),
        "recall": None,
    }
    if config.bench_ii_path is not None:
        bench_ii = load_benchmark_ii(config.bench_ii_path)
        unique_by_text = {
            normalize_text(query_by_id[qid].text): texts
            for qid, texts in unique_by_query.items()
            if qid in query_by_id
        }
        if unique_by_text:
            eval_unique["recall"] = {
                str(k_): v
                for k_, v in recall_at_k(
                    unique_by_text, bench_ii, config.ks, embedder
                ).items()
            }

    stats = {
        "iteration": k,
        "queries": len(queries),
        "candidates_generated": len(candidates),
        "unique_candidates": len(unique),
        "unique_portion": unique_portion,
        "positives_gained": positives_after - positives_before,
        "positives_total": positives_after,
        "level1_labels": sum(label.level.value == "level1" for label in labels),
        "level2_labels": sum(label.level.value == "level2" for label in labels),
        "training_samples": {
            "generation": len(generation_samples),
            "quality": len(quality_samples),
            "relevance": len(relevance_samples),
        },
        "relevance_dropped": len(dropped),
        "eval_unique": eval_unique,
    }

    workdir = config.workdir
    for sub in ("exposures", "signals", "train", "reports"):
        (workdir / sub).mkdir(parents=True, exist_ok=True)
    write_events(events, workdir / "exposures" / f"iter{k:03d}.jsonl")
    write_signals(labels, workdir / "signals" / f"iter{k:03d}.jsonl")
    write_training_samples(generation_samples, workdir / "train" / "generation.jsonl")
    write_training_samples(quality_samples, workdir / "train" / "quality.jsonl")
    write_training_samples(relevance_samples, workdir / "train" / "relevance.jsonl")
    _atomic_write(
        workdir / "reports" / f"iter{k:03d}.json",
        json.dumps(stats, ensure_ascii=False, indent=2) + "\n",
    )
    save_vocabulary(vocab, state.vocab_path)
    new_state = replace(state, iteration=k + 1, stats=state.stats + (stats,))
    _atomic_write(
        workdir / "state.json",
        json.dumps(
            {"iteration": new_state.iteration, "stats": list(new_state.stats)},
            ensure_ascii=False,
            indent=2,
        )
        + "\n",
    )
    logger.info(
        "iteration %d: %d candidates, %d unique, %d positives total",
        k,
        len(candidates),
        len(unique),
        positives_after,
    )
    return new_state


def run_rounds(
    state: IterationState,
    config: PipelineConfig,
    gateway: LlmGateway,
    rounds: int,
) -> tuple[IterationState, bool]:
    """Run up to `rounds` iterations; pauses (paused=True) when the next
    round would need a post-trained endpoint the config does not provide."""
    paused = False
    for _ in range(rounds):
        if state.iteration >= 1 and ROLE_POST_TRAINED not in state.endpoints:
            paused = True
            logger.info(
                "pausing before iteration %d: no %s endpoint registered",
                state.iteration,
                ROLE_POST_TRAINED,
            )
            break
        queries = load_queries(
            config.queries_path_for(state.iteration), config.thresholds
        )
        state = run_iteration(state, queries, config, gateway)
    return state, paused


def report_iterations(states: Sequence[IterationState]) -> dict:
    """Per-iteration summary rows (unique portion, positives gained, and the
    unique-only relevance/recall snapshot) plus a plain-text table."""
    if not states:
        raise ValueError("at least one state is required")
    by_iteration: dict[int, dict] = {}
    for state in states:
        for stats in state.stats:
            by_iteration[stats["iteration"]] = stats
    rows = []
    for iteration in sorted(by_iteration):
        stats = by_iteration[iteration]
        eval_unique = stats.get("eval_unique") or {}
        recall = eval_unique.get("recall") or {}
        rows.append(
            {
                "iteration": iteration,
                "candidates_generated": stats["candidates_generated"],
                "unique_candidates": stats["unique_candidates"],
                "unique_portion": stats["unique_portion"],
                "positives_gained": stats["positives_gained"],
                "positives_total": stats["positives_total"],
                "relevance_unique": eval_unique.get("relevance"),
                "recall_unique": recall,
            }
        )
    ks = sorted({int(k) for row in rows for k in row["recall_unique"]})
    header = [
        "iteration",
        "unique",
        "unique_portion",
        "positives_gained",
        "relevance",
    ] + [f"top{k}" for k in ks]
    table_rows = [header]
    for row in rows:
        relevance = row["relevance_unique"]
        table_rows.append(
            [
                str(row["iteration"]),
                str(row["unique_candidates"]),
                f"{row['unique_portion']:.4f}",
                str(row["positives_gained"]),
                "-" if relevance is None else f"{relevance:.4f}",
            ]
            + [
                (
                    f"{row['recall_unique'][str(k)]:.4f}"
                    if str(k) in row["recall_unique"]
                    else "-"
                )
                for k in ks
            ]
        )
    widths = [max(len(r[i]) for r in table_rows) for i in range(len(header))]
    table = "\n".join(
        "  ".join(cell.ljust(widths[i]) for i, cell in enumerate(r)) for r in table_rows
    )
    return {"rows": rows, "table": table}
