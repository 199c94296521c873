"""Line-delimited JSON clip-scoring service.

Speaks the replay engine's external-scorer protocol: each request line is a
JSON record {"type": "score_request", "clip_id": ..., "prompt": ...,
"frames": [...]}; the service answers one {"type": "score_response", ...}
line per request, echoing the clip_id. A {"type": "shutdown"} record is
answered with {"type": "bye"} and ends the loop. Anything unparseable gets
an error record and the stream stays open.

The default backend labels a clip 1.0 when any frame's event flags contain a
true value, mirroring the in-process oracle on the engine side. A real model
can be plugged in as backend=CUSTOM with `custom_fn(frames, prompt) -> float`;
nothing here imports the engine.
"""

from __future__ import annotations

import json
import socket
import sys
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterator, Optional


class Backend(Enum):
    ORACLE_EVENTS = "oracle_events"
    CONSTANT = "constant"
    CUSTOM = "custom"


ScoreFn = Callable[[list, str], float]


@dataclass(frozen=True)
class ServiceConfig:
    transport: str = "stdio"  # "stdio" or "tcp"
    host: str = "127.0.0.1"
    port: int = 7781
    backend: Backend = Backend.ORACLE_EVENTS
    constant: float = 1.0
    custom_fn: Optional[ScoreFn] = None

    def __post_init__(self):
        if self.transport not in ("stdio", "tcp"):
            raise ValueError(f"transport must be stdio or tcp, got {self.transport!r}")
        if not 0.0 <= self.constant <= 1.0:
            raise ValueError("constant score must be in [0, 1]")
        if self.backend is Backend.CUSTOM and self.custom_fn is None:
            raise ValueError("CUSTOM backend needs custom_fn(frames, prompt) -> float")


def oracle_events_score(frames: list, prompt: str = "") -> float:
    """1.0 iff any frame carries a true event flag."""
    for frame in frames:
        events = frame["events"]
        if any(bool(v) for v in events.values()):
            return 1.0
    return 0.0


def make_score_fn(config: ServiceConfig) -> ScoreFn:
    if config.backend is Backend.ORACLE_EVENTS:
        return oracle_events_score
    if config.backend is Backend.CONSTANT:
        return lambda frames, prompt: config.constant
    return config.custom_fn


def _error(message: str) -> dict:
    return {"type": "error", "message": message}


def handle_line(line: str, score_fn: ScoreFn) -> tuple[dict, bool]:
    """One request line -> (response record, keep_running)."""
    line = line.strip()
    if not line:
        return _error("empty line"), True
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as e:
        return _error(f"bad json: {e.msg} at {e.pos}"), True
    if not isinstance(rec, dict):
        return _error("record must be a json object"), True
    kind = rec.get("type")
    if kind == "shutdown":
        return {"type": "bye"}, False
    if kind != "score_request":
        return _error(f"unknown record type: {kind!r}"), True
    clip_id = rec.get("clip_id")
    frames = rec.get("frames")
    if not isinstance(clip_id, int) or isinstance(clip_id, bool):
        return _error("clip_id must be an integer"), True
    if not isinstance(frames, list):
        return _error("frames must be a list"), True
    prompt = rec.get("prompt", "")
    try:
        score = float(score_fn(frames, prompt))
    except Exception as e:  # bad frame payloads must not kill the stream
        return _error(f"backend failed: {e}"), True
    return {"type": "score_response", "clip_id": clip_id, "score": score}, True


def _serve_stream(lines: Iterator[str], write, score_fn: ScoreFn) -> bool:
    """Run the request loop; True means a shutdown record was answered."""
    for line in lines:
        response, keep_running = handle_line(line, score_fn)
        write(json.dumps(response, separators=(",", ":")) + "\n")
        if not keep_running:
            return True
    return False


def _serve_stdio(score_fn: ScoreFn) -> int:
    out = sys.stdout

    def write(text: str) -> None:
        out.write(text)
        out.flush()

    _serve_stream(sys.stdin, write, score_fn)
    # EOF without shutdown is a normal client exit either way
    return 0


def _serve_tcp(config: ServiceConfig, score_fn: ScoreFn, ready=None) -> int:
    with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as server:
        server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        server.bind((config.host, config.port))
        server.listen(1)
        if ready is not None:
            ready(server.getsockname()[1])
        while True:  # one connection at a time
            conn, _ = server.accept()
            with conn, conn.makefile("rwb") as stream:

                def write(text: str) -> None:
                    stream.write(text.encode())
                    stream.flush()

                lines = (raw.decode() for raw in stream)
                if _serve_stream(lines, write, score_fn):
                    return 0


def serve(config: ServiceConfig, ready=None) -> int:
    """Blocking request loop; returns the process exit code."""
    score_fn = make_score_fn(config)
    if config.transport == "stdio":
        return _serve_stdio(score_fn)
    return _serve_tcp(config, score_fn, ready)
