"""Command-line client for the HTTP service.

Every subcommand builds one request, sends it (in process by default,
over the wire with --server), and prints the response JSON to stdout.
Errors print a machine-readable JSON object to stderr; exit code 2
means the request or config was bad, 3 means a game or measurement
failed while executing.
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import Any

import httpx

from .service import create_app

_EXIT_BY_CATEGORY = {"config": 2, "runtime": 3}


def _client(server: str | None) -> httpx.Client:
    if server:
        return httpx.Client(base_url=server, timeout=600.0)
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        from fastapi.testclient import TestClient

    return TestClient(create_app(), raise_server_exceptions=False)


def _read_source(path: str) -> str:
    if path == "-":
        return sys.stdin.read()
    try:
        with open(path) as fh:
            return fh.read()
    except OSError as e:
        _fail({"type": "ConfigError", "message": str(e), "category": "config"})
        raise AssertionError  # unreachable


def _fail(error: dict[str, Any]) -> None:
    json.dump({"error": error}, sys.stderr)
    sys.stderr.write("\n")
    sys.exit(_EXIT_BY_CATEGORY.get(error.get("category", ""), 1))


def _call(args: argparse.Namespace, method: str, path: str, body: dict | None) -> None:
    with _client(args.server) as client:
        if method == "GET":
            resp = client.get(path)
        else:
            resp = client.post(path, json=body)
    try:
        payload = resp.json()
    except ValueError:
        _fail({"type": "TransportError", "message": resp.text, "category": "runtime"})
        return
    if resp.status_code >= 400:
        err = payload.get("error") if isinstance(payload, dict) else None
        _fail(
            err
            or {
                "type": "HTTPError",
                "message": f"status {resp.status_code}",
                "category": "runtime" if resp.status_code >= 500 else "config",
            }
        )
        return
    json.dump(payload, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")


def _configured_body(args: argparse.Namespace) -> dict[str, Any]:
    body: dict[str, Any] = {}
    if args.config:
        try:
            body["config"] = json.loads(open(args.config).read())
        except (OSError, json.JSONDecodeError) as e:
            _fail(
                {
                    "type": "ConfigError",
                    "message": f"cannot read config {args.config}: {e}",
                    "category": "config",
                }
            )
    if args.set:
        body["overrides"] = list(args.set)
    return body


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="path to a config JSON document")
    p.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="PATH=VALUE",
        help="dotted config override, repeatable (e.g. game.length=32)",
    )
    p.add_argument("--server", help="base URL of a running service (default: in process)")
    p.add_argument(
        "--jobs",
        type=int,
        default=1,
        help="cap on concurrent evaluations (current build evaluates sequentially)",
    )


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="xentlab",
        description="Cross-entropy games: parse, run, score, transfer, meta, curriculum.",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parse", help="classify each line of a program")
    p.add_argument("file", help="program file, or - for stdin")
    _add_common(p)

    p = sub.add_parser("run", help="run one seeded rollout, print the outcome")
    p.add_argument("file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trace", action="store_true", help="include per-instruction trace")
    _add_common(p)

    p = sub.add_parser("score", help="estimate the player's expected reward")
    p.add_argument("file")
    p.add_argument("--checkpoint", help="path to a saved player checkpoint")
    _add_common(p)

    p = sub.add_parser("transfer", help="how much training on G moves the score of H")
    p.add_argument("g", help="program file for the training game G")
    p.add_argument("h", help="program file for the evaluated game H")
    p.add_argument("--checkpoint", help="path to a saved player checkpoint")
    _add_common(p)

    p = sub.add_parser("meta", help="meta-objective breakdown of a candidate game")
    p.add_argument("file")
    p.add_argument("--run-dir", help="measure against the history of this run directory")
    p.add_argument("--gate", action="store_true", help="include the gate report")
    _add_common(p)

    p = sub.add_parser("train", help="run the curriculum loop, writing a run directory")
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--out", required=True, help="run directory to create")
    _add_common(p)

    p = sub.add_parser("replay", help="re-run a run directory and compare bit for bit")
    p.add_argument("run_dir")
    _add_common(p)

    corpus = sub.add_parser("corpus", help="game-template utilities")
    csub = corpus.add_subparsers(dest="corpus_command", required=True)
    p = csub.add_parser("emit", help="instantiate a template into a program")
    p.add_argument("--template", default="", help="template name")
    p.add_argument("--map", default="{}", help="slot map as JSON")
    p.add_argument("--seed", type=int, help="sample slots from the configured texts")
    _add_common(p)
    p = csub.add_parser("list", help="list templates and stubs")
    _add_common(p)

    p = sub.add_parser("deltas", help="text-level cross-entropy deltas")
    p.add_argument("--kind", required=True, choices=["tf", "info_gain", "contrast", "anomaly"])
    p.add_argument("--text", default="", help="the measured text")
    p.add_argument("--context", default="")
    p.add_argument("--question", default="")
    p.add_argument("--judge", default="m1", help="judge binding name")
    p.add_argument("--second-judge", help="second binding for contrast")
    _add_common(p)

    p = sub.add_parser("serve", help="start the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)

    if args.command == "serve":
        import uvicorn

        uvicorn.run(create_app(), host=args.host, port=args.port)
        return 0

    if args.command == "parse":
        body = _configured_body(args)
        body["source"] = _read_source(args.file)
        _call(args, "POST", "/parse", body)
    elif args.command == "run":
        body = _configured_body(args)
        body.update(source=_read_source(args.file), seed=args.seed, trace=args.trace)
        _call(args, "POST", "/run", body)
    elif args.command == "score":
        body = _configured_body(args)
        body["source"] = _read_source(args.file)
        if args.checkpoint:
            body["checkpoint"] = args.checkpoint
        _call(args, "POST", "/score", body)
    elif args.command == "transfer":
        body = _configured_body(args)
        body.update(g_source=_read_source(args.g), h_source=_read_source(args.h))
        if args.checkpoint:
            body["checkpoint"] = args.checkpoint
        _call(args, "POST", "/transfer", body)
    elif args.command == "meta":
        body = _configured_body(args)
        body.update(source=_read_source(args.file), gate=args.gate)
        if args.run_dir:
            body["run_dir"] = args.run_dir
        _call(args, "POST", "/meta", body)
    elif args.command == "train":
        body = _configured_body(args)
        body.update(steps=args.steps, out_dir=args.out)
        _call(args, "POST", "/train", body)
    elif args.command == "replay":
        _call(args, "POST", "/replay", {"run_dir": args.run_dir})
    elif args.command == "corpus":
        if args.corpus_command == "list":
            _call(args, "GET", "/corpus/templates", None)
        else:
            body = _configured_body(args)
            try:
                slot_map = json.loads(args.map)
            except json.JSONDecodeError as e:
                _fail(
                    {
                        "type": "ConfigError",
                        "message": f"--map is not valid JSON: {e}",
                        "category": "config",
                    }
                )
                return 2
            body.update(template=args.template, map=slot_map)
            if args.seed is not None:
                body["seed"] = args.seed
            _call(args, "POST", "/corpus/emit", body)
    elif args.command == "deltas":
        body = _configured_body(args)
        body.update(
            kind=args.kind,
            text=args.text,
            context=args.context,
            question=args.question,
            judge=args.judge,
        )
        if args.second_judge:
            body["second_judge"] = args.second_judge
        _call(args, "POST", "/deltas", body)
    return 0


if __name__ == "__main__":
    sys.exit(main())
