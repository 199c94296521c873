"""Reference clip-scoring service speaking newline-delimited JSON."""

from .service import (
    Backend,
    ServiceConfig,
    handle_line,
    make_score_fn,
    oracle_events_score,
    serve,
)

__all__ = [
    "Backend",
    "ServiceConfig",
    "handle_line",
    "make_score_fn",
    "oracle_events_score",
    "serve",
]
