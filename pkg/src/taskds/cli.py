"""Command line entry point: ``taskds build|update|query|eval|stats|serve``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

from .config import SystemConfig, load_config
from .errors import TaskDSError
from .evalbench import QueryOutcome, evaluate, load_benchmark
from .pipeline import cmd_build, cmd_update, make_clients, open_engine
from .serve import DEFAULT_TOP_N, SearchServer, run_query, serve_forever

logger = logging.getLogger("taskds")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="taskds", description="Task-oriented dataset search over a document corpus.")
    p.add_argument("-c", "--config", type=Path, help="YAML config file")
    p.add_argument("--store", help="snapshot store directory")
    p.add_argument("--cache", help="artifact cache directory")
    p.add_argument("--stub-rules", help="directory of canned stub replies (*.json)")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    for name, text in (("build", "build a fresh snapshot from the corpus"),
                       ("update", "add new or changed documents to the current snapshot")):
        s = sub.add_parser(name, help=text)
        s.add_argument("--corpus", nargs="+", help="corpus directories or listing files")

    q = sub.add_parser("query", help="rank datasets for a task description")
    q.add_argument("text", help="natural-language task description")
    q.add_argument("-n", "--top-n", type=int, default=DEFAULT_TOP_N)
    q.add_argument("--rerank", action=argparse.BooleanOptionalAction, default=None)
    q.add_argument("--explain", action="store_true", help="show seeds, supporting tasks and sources")
    q.add_argument("--json", action="store_true", help="print the raw result object")

    e = sub.add_parser("eval", help="score the system on a benchmark (JSONL)")
    e.add_argument("benchmark", type=Path)
    e.add_argument("-o", "--out", type=Path, default=Path("."), help="report directory")
    e.add_argument("--rerank", action=argparse.BooleanOptionalAction, default=None)

    sub.add_parser("stats", help="summarize the current snapshot")

    s = sub.add_parser("serve", help="serve POST /search over HTTP")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=8765)
    return p


def _config(args: argparse.Namespace) -> SystemConfig:
    overrides: dict[str, Any] = {}
    for key in ("store", "cache"):
        if getattr(args, key, None) is not None:
            overrides[key] = getattr(args, key)
    if getattr(args, "corpus", None):
        overrides["corpus"] = args.corpus
    if args.stub_rules is not None:
        overrides["clients"] = {"stub_rules": args.stub_rules}
    return load_config(args.config, overrides=overrides)


def _print_json(obj: Any) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False))


def _format_result(payload: dict[str, Any], explain: bool) -> str:
    lines = []
    if explain:
        lines.append("seed tasks:")
        for s in payload["seeds"]:
            lines.append(f"  {s['cosine']:.4f}  {s['description']}  [{s['task_id']}]")
        if not payload["ppr_converged"]:
            lines.append("  (expansion stopped at the iteration cap before converging)")
        if payload["rerank"] != "disabled":
            lines.append(f"rerank: {payload['rerank']}")
    if not payload["results"]:
        lines.append("no datasets found")
    for r in payload["results"]:
        lines.append(f"{r['rank']:>3}. {r['canonical_name']}  ({r['score']:.6f})  [{r['canonical_id']}]")
        if explain:
            for t in r["supporting_tasks"]:
                lines.append(f"       task {t['score']:.6f}  {t['description']}  [{t['task_id']}]")
            lines.append(f"       sources: {', '.join(r['source_documents']) or '-'}")
    return "\n".join(lines)


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return _dispatch(args)
    except TaskDSError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _dispatch(args: argparse.Namespace) -> int:
    config = _config(args)
    if args.command == "build":
        _print_json(cmd_build(config).summary())
    elif args.command == "update":
        _print_json(cmd_update(config).summary())
    elif args.command == "query":
        snap, engine = open_engine(config)
        reranker = make_clients(config.clients).reranker
        payload = run_query(
            engine, snap.graph, config.query, args.text, top_n=args.top_n, rerank=args.rerank, reranker=reranker
        )
        print(json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) if args.json
              else _format_result(payload, args.explain))
    elif args.command == "eval":
        snap, engine = open_engine(config)
        qconfig = config.query if args.rerank is None else dataclasses.replace(config.query, rerank_enabled=args.rerank)
        reranker = make_clients(config.clients).reranker

        def system(q) -> QueryOutcome:
            before = reranker.counter.tokens if reranker else 0
            result = engine.search(q.task_text, qconfig, reranker=reranker, excluded_docs=q.held_out_doc_ids)
            return QueryOutcome(result.names(), (reranker.counter.tokens if reranker else 0) - before)

        report = evaluate(system, load_benchmark(args.benchmark))
        jpath, tpath = report.save(args.out)
        print(report.table())
        print(f"wrote {jpath} and {tpath}")
    elif args.command == "stats":
        snap, _ = open_engine(config)
        _print_json({"snapshot": snap.snapshot_id, **snap.meta["stats"], "embedder": snap.meta["embedder"],
                     "manifest_entries": len(snap.manifest), "alias_keys": len(snap.state.alias_dictionary),
                     "judge_verdicts": len(snap.state.judge_cache)})
    elif args.command == "serve":
        snap, engine = open_engine(config)
        try:
            server = SearchServer((args.host, args.port), engine, config.query,
                                  make_clients(config.clients).reranker, snap.snapshot_id)
        except OSError as exc:
            print(f"error: cannot bind {args.host}:{args.port}: {exc}", file=sys.stderr)
            return 1
        print(f"serving snapshot {snap.snapshot_id} on http://{args.host}:{server.server_address[1]}/search",
              flush=True)
        serve_forever(server)
    return 0


if __name__ == "__main__":
    sys.exit(main())
