"""Command-line entry point: ingest, query, report, bench, sessions, serve.

Exit codes: 0 success, 1 user error (bad input, unknown session), 2 internal.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import corpus
from .bench import default_arm_configs, load_qa_set, run_benchmark
from .errors import NotAPcap, SessionNotFound, TrafficLensError, TruncatedCapture
from .pipeline import (
    ServiceConfig,
    build_clients,
    process_capture,
    query_session,
    report_text,
    resolve_session,
)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--data-dir", default="./trafficlens-data",
                        help="root directory for sessions, artifacts, and logs")
    common.add_argument("--offline", action="store_true", default=False,
                        help="fixture clients only; no non-loopback network use")
    common.add_argument("--oui-table", default=None, help="CSV of prefix,vendor")
    common.add_argument("--intel-fixtures", default=None,
                        help="directory of intel fixtures per provider")
    common.add_argument("--search-fixtures", default=None,
                        help="JSON file mapping queries to recorded results")

    parser = argparse.ArgumentParser(
        prog="trafficlens",
        description="Turn IoT packet captures into an indexed evidence corpus "
                    "and answer questions over it.")
    sub = parser.add_subparsers(dest="verb", required=True)

    p_ingest = sub.add_parser("ingest", parents=[common], help="process a pcap end to end")
    p_ingest.add_argument("pcap")

    p_query = sub.add_parser("query", parents=[common], help="ask a question over a session")
    p_query.add_argument("session", help="session id or 'latest'")
    p_query.add_argument("question")
    p_query.add_argument("--mode", choices=["dense", "hybrid"], default="hybrid")

    p_report = sub.add_parser("report", parents=[common],
                              help="print a session's enriched report")
    p_report.add_argument("session")

    p_bench = sub.add_parser("bench", parents=[common],
                             help="run the dense-vs-hybrid benchmark")
    p_bench.add_argument("qa_set", help="JSON Lines of question/reference pairs")
    p_bench.add_argument("session")
    p_bench.add_argument("--out-csv", default=None)
    p_bench.add_argument("--out-md", default=None)

    sub.add_parser("sessions", parents=[common], help="list retained sessions")

    p_serve = sub.add_parser("serve", parents=[common], help="start the HTTP service")
    p_serve.add_argument("--listen", default="127.0.0.1:8800")
    return parser


def config_from_args(args) -> ServiceConfig:
    return ServiceConfig(
        data_dir=Path(args.data_dir),
        offline=args.offline,
        oui_table_path=Path(args.oui_table) if args.oui_table else None,
        intel_fixture_dir=Path(args.intel_fixtures) if args.intel_fixtures else None,
        search_fixture_path=Path(args.search_fixtures) if args.search_fixtures else None,
    )


def _cmd_ingest(args, config) -> int:
    result = process_capture(args.pcap, config)
    print(result.session_id)
    if result.session_reused:
        print("session reused (inputs unchanged)", file=sys.stderr)
    return 0


def _cmd_query(args, config) -> int:
    mode = "Hybrid" if args.mode == "hybrid" else "DenseOnly"
    record, bundle = query_session(args.session, args.question, config, mode=mode)
    print(json.dumps({"answer": record.to_json_obj(), "bundle": bundle.to_json_obj()},
                     ensure_ascii=False, indent=2))
    return 0


def _cmd_report(args, config) -> int:
    print(report_text(args.session, config), end="")
    return 0


def _cmd_sessions(args, config) -> int:
    entries = corpus.list_sessions(config.store_root)
    latest = corpus.latest_session(config.store_root)
    for entry in entries:
        marker = "*" if entry["session_id"] == latest else " "
        print(f"{marker} {entry['session_id']}  capture={entry['capture_hash'][:12]}  "
              f"created={entry['created_at']:.0f}")
    return 0


def _cmd_bench(args, config) -> int:
    clients = build_clients(config)
    sid = resolve_session(config, args.session)
    store = corpus.load_session(config.store_root, sid)
    qa_set = load_qa_set(args.qa_set)
    result = run_benchmark(qa_set, store, default_arm_configs(config.retrieval),
                           config.agent, clients.embedder, clients.chat,
                           search=clients.search, reranker=clients.reranker,
                           audit=clients.audit)
    markdown = result.to_markdown()
    print(markdown)
    if args.out_md:
        Path(args.out_md).write_text(markdown, encoding="utf-8")
    if args.out_csv:
        Path(args.out_csv).write_text(result.to_csv(), encoding="utf-8")
    return 0


def _cmd_serve(args, config) -> int:
    import uvicorn

    from .service import create_app

    host, _, port = args.listen.partition(":")
    config.listen = args.listen
    uvicorn.run(create_app(config), host=host or "127.0.0.1", port=int(port or 8800))
    return 0


_COMMANDS = {"ingest": _cmd_ingest, "query": _cmd_query, "report": _cmd_report,
             "sessions": _cmd_sessions, "bench": _cmd_bench, "serve": _cmd_serve}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    config = config_from_args(args)
    try:
        return _COMMANDS[args.verb](args, config)
    except (FileNotFoundError, NotAPcap, TruncatedCapture, SessionNotFound) as exc:
        if isinstance(exc, SessionNotFound):
            print(f"error: session not found: {exc}", file=sys.stderr)
        else:
            print(f"error: {exc}", file=sys.stderr)
        return 1
    except TrafficLensError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # internal failure
        print(f"internal error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
