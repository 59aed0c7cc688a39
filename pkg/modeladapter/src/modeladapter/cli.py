"""`modeladapter serve` entry point."""

from __future__ import annotations

import argparse
from pathlib import Path

from .app import create_app
from .models import BigramModel, UniformModel, UnseededModel, default_models
from .vocab import WireVocab


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="modeladapter")
    sub = parser.add_subparsers(dest="command", required=True)
    serve = sub.add_parser("serve", help="run the adapter service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8800)
    serve.add_argument(
        "--corpus", type=Path, default=None,
        help="text file the bigram models are fit on",
    )
    serve.add_argument("--default-model", default="bigram")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    vocab = WireVocab()
    if args.corpus is not None:
        text = args.corpus.read_text()
        models = {
            "bigram": BigramModel(vocab, text),
            "uniform": UniformModel(vocab),
            "bigram-unseeded": UnseededModel(BigramModel(vocab, text)),
        }
    else:
        models = default_models(vocab)
    app = create_app(models, vocab, default_model=args.default_model)

    import uvicorn

    uvicorn.run(app, host=args.host, port=args.port)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
