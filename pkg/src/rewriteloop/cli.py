"""Command-line entry points: every pipeline stage as a subcommand.

Usage errors (bad flags, missing or invalid config) exit 2; stage failures
exit 1 after printing one machine-readable JSON error line to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import oracles
from .evaluation import (
    HashEmbedder,
    build_eval_report,
    format_report_table,
    load_benchmark_i,
    load_benchmark_ii,
)
from .gateway import LlmGateway
from .models import SourceKind, normalize_text
from .pipeline import (
    ConfigError,
    PipelineConfig,
    ROLE_PUBLIC,
    load_config,
    load_queries,
    load_state,
    report_iterations,
    run_rounds,
    simulate_query,
    workdir_lock,
)
from .prompting import GenerationRequest, build_generation_prompt, parse_generation_output
from .signals import (
    Vocabulary,
    dedup_and_stats,
    insert_candidates,
    label_signals,
    load_vocabulary,
    make_candidate,
    save_vocabulary,
    update_vocabulary,
    write_signals,
)
from .simulate import click_log_from_items, load_items, read_events, write_events

logger = logging.getLogger(__name__)


def _read_rewrites_file(path: str | Path) -> tuple[dict[str, list[str]], dict[str, str]]:
    """Rewrites JSONL: {"query_id", "query", "rewrites": [...]} per line.
    Returns (query_id -> rewrites, query_id -> query text)."""
    by_id: dict[str, list[str]] = {}
    texts: dict[str, str] = {}
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            by_id[row["query_id"]] = list(row["rewrites"])
            texts[row["query_id"]] = row.get("query", row["query_id"])
    return by_id, texts


def _gateway(config: PipelineConfig) -> LlmGateway:
    return LlmGateway(fixtures_dir=config.fixtures_dir)


def _cmd_generate(args, config: PipelineConfig) -> int:
    queries = load_queries(
        Path(args.queries) if args.queries else config.queries_path_for(args.iteration),
        config.thresholds,
    )
    endpoint = config.endpoints.get(args.role)
    if endpoint is None:
        raise ConfigError(f"no endpoint configured for role {args.role!r}")
    gateway = _gateway(config)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", encoding="utf-8") as handle:
        for query in queries:
            bundle = build_generation_prompt(
                GenerationRequest(query=query, n_rewrites=config.n_rewrites)
            )
            output = parse_generation_output(
                gateway.complete(endpoint, bundle, config.decode)
            )
            handle.write(
                json.dumps(
                    {
                        "query_id": query.id,
                        "query": query.text,
                        "rewrites": list(output.rewrites),
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )
    print(f"wrote rewrites for {len(queries)} queries to {out_path}")
    return 0


def _cmd_simulate(args, config: PipelineConfig) -> int:
    queries = load_queries(
        Path(args.queries) if args.queries else config.queries_path_for(0),
        config.thresholds,
    )
    rewrites_by_id, _ = _read_rewrites_file(args.rewrites)
    items = load_items(config.catalog_path)
    click_log = click_log_from_items(items)
    embedder = HashEmbedder(config.embed_dim)
    events = []
    for query in queries:
        events.extend(
            simulate_query(
                query, rewrites_by_id.get(query.id, ()), items, click_log, embedder, config
            )
        )
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    write_events(events, out_path)
    print(f"wrote {len(events)} exposure events to {out_path}")
    return 0


def _cmd_collect(args, config: PipelineConfig) -> int:
    events = read_events(args.exposures)
    vocab_path = Path(args.vocab) if args.vocab else config.workdir / "vocab.jsonl"
    vocab = (
        load_vocabulary(vocab_path, iteration=args.iteration)
        if vocab_path.is_file()
        else Vocabulary(iteration=args.iteration)
    )
    if args.rewrites:
        rewrites_by_id, _ = _read_rewrites_file(args.rewrites)
        candidates = [
            make_candidate(query_id, text, SourceKind.PUBLIC_LLM, args.iteration)
            for query_id, texts in rewrites_by_id.items()
            for text in texts
        ]
        unique, _ = dedup_and_stats(candidates, vocab)
        vocab = insert_candidates(vocab, unique)
    labels = label_signals(events)
    vocab = update_vocabulary(vocab, labels)
    vocab_path.parent.mkdir(parents=True, exist_ok=True)
    save_vocabulary(vocab, vocab_path)
    if args.signals_out:
        out_path = Path(args.signals_out)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        write_signals(labels, out_path)
    print(
        f"collected {len(labels)} signal labels; "
        f"{len(vocab.positives())} positives in {vocab_path}"
    )
    return 0


def _cmd_build_train(args, config: PipelineConfig) -> int:
    import random

    from .gateway import AuxLabel, AuxTask
    from .models import RewriteState
    from .training import (
        assign_quality_labels,
        build_generation_sample,
        filter_relevance_agreement,
        group_quality_pairs,
        group_relevance_triples,
        write_training_samples,
    )

    queries = load_queries(
        Path(args.queries) if args.queries else config.queries_path_for(args.iteration),
        config.thresholds,
    )
    vocab_path = Path(args.vocab) if args.vocab else config.workdir / "vocab.jsonl"
    vocab = load_vocabulary(vocab_path, iteration=args.iteration)
    rng = random.Random(f"{config.seed}:{args.iteration}")
    quality_oracle = lambda q, r: oracles.quality_label(q.text, q.rag_context.names, r)
    relevance_oracle = lambda q, r, c: oracles.relevance_label(q, [r], [c])

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
                    typo_label=AuxLabel(
                        AuxTask.TYPO,
                        oracles.typo_label(query.text, query.rag_context.names),
                    ),
                    intent_label=oracles.intent_label(
                        query.text,
                        query.rag_context.restaurants,
                        query.rag_context.cuisines,
                    ),
                )
            )
        quality_entries.extend(assign_quality_labels(query, records, quality_oracle))
        restaurants, cuisines = query.rag_context.restaurants, query.rag_context.cuisines
        if restaurants and cuisines:
            count = max(len(restaurants), len(cuisines))
            relevance_rows.extend(
                (query.text, restaurants[i % len(restaurants)], cuisines[i % len(cuisines)])
                for i in range(count)
            )
    agreed, _ = filter_relevance_agreement(
        relevance_rows, relevance_oracle, relevance_oracle
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = {
        "generation": generation_samples,
        "quality": group_quality_pairs(quality_entries, rng),
        "relevance": group_relevance_triples(agreed, rng),
    }
    for name, samples in written.items():
        path = out_dir / f"{name}.jsonl"
        path.unlink(missing_ok=True)
        write_training_samples(samples, path)
    print(
        "wrote training samples: "
        + ", ".join(f"{name}={len(samples)}" for name, samples in written.items())
    )
    return 0


def _cmd_evaluate(args, config: PipelineConfig | None) -> int:
    bench_i_path = args.bench_i or (config.bench_i_path if config else None)
    bench_ii_path = args.bench_ii or (config.bench_ii_path if config else None)
    if bench_i_path is None and bench_ii_path is None:
        raise ConfigError("evaluate needs --bench-i and/or --bench-ii")
    dim = args.dim or (config.embed_dim if config else 64)
    ks = (
        tuple(int(k) for k in args.ks.split(","))
        if args.ks
        else (config.ks if config else (1, 5, 10))
    )
    rewrites_by_id, texts = _read_rewrites_file(args.rewrites)
    generated = {
        normalize_text(texts[qid]): rewrites for qid, rewrites in rewrites_by_id.items()
    }
    bench_i = load_benchmark_i(bench_i_path) if bench_i_path else None
    bench_ii = load_benchmark_ii(bench_ii_path) if bench_ii_path else None
    report = build_eval_report(
        generated=generated,
        bench_i=bench_i,
        bench_ii=bench_ii,
        relevance_oracle=lambda q, r: oracles.relevance_label(
            r, q.rag_context.restaurants, q.rag_context.cuisines
        ),
        embedder=HashEmbedder(dim),
        ks=ks,
        source_name=args.source,
    )
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(
        json.dumps(report.to_dict(), ensure_ascii=False, indent=2) + "\n",
        encoding="utf-8",
    )
    print(format_report_table({args.source: report}))
    print(f"report written to {out_path}")
    return 0


def _cmd_iterate(args, config: PipelineConfig) -> int:
    gateway = _gateway(config)
    with workdir_lock(config.workdir):
        state = load_state(config)
        start = state.iteration
        state, paused = run_rounds(state, config, gateway, args.rounds)
        executed = state.iteration - start
    print(f"executed {executed} iteration(s); now at iteration {state.iteration}")
    if paused:
        print(
            "paused: register a generator_posttrained endpoint "
            "(train on the emitted files first) and rerun iterate"
        )
    return 0


def _cmd_report(args, config: PipelineConfig) -> int:
    state = load_state(config)
    if not state.stats:
        raise ConfigError(f"no iteration stats found under {config.workdir}")
    report = report_iterations([state])
    reports_dir = config.workdir / "reports"
    reports_dir.mkdir(parents=True, exist_ok=True)
    (reports_dir / "summary.json").write_text(
        json.dumps(report["rows"], ensure_ascii=False, indent=2) + "\n",
        encoding="utf-8",
    )
    (reports_dir / "summary.txt").write_text(report["table"] + "\n", encoding="utf-8")
    print(report["table"])
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rewriteloop",
        description="Iterative query-rewrite pipeline: generation, replay, signals, training data, evaluation.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="info-level logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate rewrites for a query file")
    p.add_argument("--config", required=True)
    p.add_argument("--queries", help="queries JSONL (default: config per-iteration file)")
    p.add_argument("--out", required=True, help="output rewrites JSONL")
    p.add_argument("--role", default=ROLE_PUBLIC, help="endpoint role to use")
    p.add_argument("--iteration", type=int, default=0)
    p.set_defaults(handler=_cmd_generate, needs_config=True)

    p = sub.add_parser("simulate", help="replay retrieval and exposure for rewrites")
    p.add_argument("--config", required=True)
    p.add_argument("--queries")
    p.add_argument("--rewrites", required=True, help="rewrites JSONL from `generate`")
    p.add_argument("--out", required=True, help="output exposures JSONL")
    p.set_defaults(handler=_cmd_simulate, needs_config=True)

    p = sub.add_parser("collect", help="label signals from exposures and update the vocabulary")
    p.add_argument("--config", required=True)
    p.add_argument("--exposures", required=True)
    p.add_argument("--rewrites", help="register these rewrites as candidates first")
    p.add_argument("--vocab", help="vocabulary JSONL (default: workdir/vocab.jsonl)")
    p.add_argument("--signals-out", help="write the signal labels here")
    p.add_argument("--iteration", type=int, default=0)
    p.set_defaults(handler=_cmd_collect, needs_config=True)

    p = sub.add_parser("build-train", help="emit the three training-sample files")
    p.add_argument("--config", required=True)
    p.add_argument("--queries")
    p.add_argument("--vocab")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--iteration", type=int, default=0)
    p.set_defaults(handler=_cmd_build_train, needs_config=True)

    p = sub.add_parser("evaluate", help="score a rewrites file against the benchmarks")
    p.add_argument("--config")
    p.add_argument("--bench-i")
    p.add_argument("--bench-ii")
    p.add_argument("--rewrites", required=True)
    p.add_argument("--out", default="eval_report.json")
    p.add_argument("--dim", type=int)
    p.add_argument("--ks", help="comma-separated K values, e.g. 1,5,10")
    p.add_argument("--source", default="rewrites", help="row label in the report table")
    p.set_defaults(handler=_cmd_evaluate, needs_config=False)

    p = sub.add_parser("iterate", help="run full loop iterations")
    p.add_argument("--config", required=True)
    p.add_argument("--rounds", type=int, default=1)
    p.set_defaults(handler=_cmd_iterate, needs_config=True)

    p = sub.add_parser("report", help="summarize per-iteration stats")
    p.add_argument("--config", required=True)
    p.set_defaults(handler=_cmd_report, needs_config=True)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    config = None
    if getattr(args, "config", None) is not None:
        try:
            config = load_config(args.config)
        except ConfigError as exc:
            parser.print_usage(sys.stderr)
            print(f"{parser.prog}: error: {exc}", file=sys.stderr)
            return 2
    elif args.needs_config:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog}: error: --config is required", file=sys.stderr)
        return 2
    try:
        return args.handler(args, config)
    except ConfigError as exc:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # stage failure: one machine-readable line
        print(
            json.dumps({"error": type(exc).__name__, "message": str(exc)}),
            file=sys.stderr,
        )
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
