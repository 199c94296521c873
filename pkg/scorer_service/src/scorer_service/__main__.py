"""CLI entry: python3 -m scorer_service [--transport ...] [--backend ...]."""

import argparse
import sys

from .service import Backend, ServiceConfig, serve


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="scorer-service",
        description="Clip-scoring service over newline-delimited JSON",
    )
    parser.add_argument("--transport", choices=["stdio", "tcp"], default="stdio")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=7781, help="tcp transport only")
    parser.add_argument(
        "--backend",
        choices=[b.value for b in Backend if b is not Backend.CUSTOM],
        default=Backend.ORACLE_EVENTS.value,
    )
    parser.add_argument(
        "--constant", type=float, default=1.0, help="score used by the constant backend"
    )
    args = parser.parse_args(argv)
    config = ServiceConfig(
        transport=args.transport,
        host=args.host,
        port=args.port,
        backend=Backend(args.backend),
        constant=args.constant,
    )
    return serve(config)


if __name__ == "__main__":
    sys.exit(main())
