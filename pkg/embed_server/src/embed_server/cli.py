"""Command line for the embedding server.

  cer-embed-server [--model ID] [--backend hf|hash] [--host H] [--port P]
                   [--max-batch N] [--max-text-bytes N]

Environment overrides: EMBED_SERVER_MODEL, EMBED_SERVER_BACKEND,
EMBED_SERVER_HOST, EMBED_SERVER_PORT.
"""

from __future__ import annotations

import argparse
import os

from .app import serve
from .config import ServerConfig


def build_parser() -> argparse.ArgumentParser:
    defaults = ServerConfig()
    parser = argparse.ArgumentParser(prog="cer-embed-server", description=__doc__)
    parser.add_argument("--model", default=os.environ.get("EMBED_SERVER_MODEL", defaults.model))
    parser.add_argument(
        "--backend",
        choices=["hf", "hash"],
        default=os.environ.get("EMBED_SERVER_BACKEND", defaults.backend),
    )
    parser.add_argument("--host", default=os.environ.get("EMBED_SERVER_HOST", defaults.host))
    parser.add_argument(
        "--port", type=int, default=int(os.environ.get("EMBED_SERVER_PORT", defaults.port))
    )
    parser.add_argument("--max-batch", type=int, default=defaults.max_batch)
    parser.add_argument("--max-text-bytes", type=int, default=defaults.max_text_bytes)
    parser.add_argument("--hash-dim", type=int, default=defaults.hash_dim)
    parser.add_argument("--hash-seed", type=int, default=defaults.hash_seed)
    return parser


def main(argv: list[str] | None = None) -> None:
    args = build_parser().parse_args(argv)
    serve(
        ServerConfig(
            model=args.model,
            backend=args.backend,
            host=args.host,
            port=args.port,
            max_batch=args.max_batch,
            max_text_bytes=args.max_text_bytes,
            hash_dim=args.hash_dim,
            hash_seed=args.hash_seed,
        )
    )


if __name__ == "__main__":
    main()
