"""Clip scorers: event-tag oracle, corrupted variants, noise, and a wire client.

A scorer maps a clip (list of frame payloads) to a value in [0, 1] and must be
deterministic given identical payloads, seed, and clip id. Frame payloads are
JSON-shaped dicts; the canonical form carries per-frame milestone flags:

    {"events": {"key": bool, "door": bool, "goal": bool}}

Pixel payloads ({"png_b64": str}) pass through the wire client untouched; only
the event-reading scorers require the symbolic form. Raw scores are NOT
thresholded here; binarization happens where priorities are written so that
probability-style outputs survive to logging.
"""

from __future__ import annotations

import hashlib
import json
import shlex
import socket
import subprocess
import time
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Protocol

PROMPT = "Does this clip show the agent picking up the key, opening the door, or reaching the goal?"


class MalformedPayload(ValueError):
    pass


class Timeout(RuntimeError):
    pass


class ProtocolViolation(RuntimeError):
    pass


class ConnectionLost(RuntimeError):
    pass


@dataclass(frozen=True)
class EventTag:
    """Per-frame milestone flags, true only on the step the event fires."""

    key_picked_up: bool = False
    door_opened: bool = False
    goal_reached: bool = False

    def any(self) -> bool:
        return self.key_picked_up or self.door_opened or self.goal_reached

    def to_payload(self) -> dict:
        return {
            "events": {
                "key": self.key_picked_up,
                "door": self.door_opened,
                "goal": self.goal_reached,
            }
        }

    @staticmethod
    def from_payload(frame: dict) -> "EventTag":
        try:
            ev = frame["events"]
            return EventTag(bool(ev["key"]), bool(ev["door"]), bool(ev["goal"]))
        except (TypeError, KeyError) as e:
            raise MalformedPayload(f"frame lacks event tags: {frame!r}") from e


class CorruptionMode(Enum):
    STANDARD = "standard"
    MISLEADING = "misleading"
    ABSTRACT = "abstract"


class Scorer(Protocol):
    def score(self, frames: list, clip_id: int) -> float: ...


def _frame_events(frames: list) -> list[EventTag]:
    return [EventTag.from_payload(f) for f in frames]


def oracle_score(frames: list) -> float:
    """1 iff any frame in the clip carries a milestone flag, else 0."""
    return 1.0 if any(t.any() for t in _frame_events(frames)) else 0.0


def _clip_hash_unit(frames: list, seed: int, salt: str = "") -> float:
    """Deterministic uniform [0,1) value from the clip content and seed."""
    canon = json.dumps(frames, sort_keys=True, separators=(",", ":"))
    digest = hashlib.sha256(f"{salt}{seed}:{canon}".encode()).digest()
    return int.from_bytes(digest[:8], "big") / 2**64


def corrupted_score(frames: list, mode: CorruptionMode, seed: int = 0) -> float:
    """Scores under a corrupted visual prior.

    STANDARD passes the oracle through. MISLEADING inverts it: only clips with
    no milestone at all (and at least one plain frame to mistake for one) are
    scored positive. ABSTRACT destroys the semantics entirely, returning a
    fair coin drawn from a per-clip hash.
    """
    if mode is CorruptionMode.STANDARD:
        return oracle_score(frames)
    if mode is CorruptionMode.MISLEADING:
        tags = _frame_events(frames)
        has_event = any(t.any() for t in tags)
        has_plain = any(not t.any() for t in tags)
        return 1.0 if (not has_event and has_plain) else 0.0
    if mode is CorruptionMode.ABSTRACT:
        _frame_events(frames)  # still validates the payload contract
        return 1.0 if _clip_hash_unit(frames, seed, salt="abstract:") < 0.5 else 0.0
    raise ValueError(f"unknown corruption mode: {mode!r}")


def noisy_score(frames: list, flip_prob: float, seed: int, clip_id: int) -> float:
    """Oracle output flipped with probability flip_prob, keyed by (seed, clip_id)."""
    if not 0.0 <= flip_prob <= 0.5:
        raise ValueError("flip_prob must be in [0, 0.5]")
    truth = oracle_score(frames)
    digest = hashlib.sha256(f"noise:{seed}:{clip_id}".encode()).digest()
    u = int.from_bytes(digest[:8], "big") / 2**64
    return 1.0 - truth if u < flip_prob else truth


class OracleScorer:
    def score(self, frames: list, clip_id: int) -> float:
        return oracle_score(frames)


class CorruptedScorer:
    def __init__(self, mode: CorruptionMode, seed: int = 0):
        self.mode = mode
        self.seed = seed

    def score(self, frames: list, clip_id: int) -> float:
        return corrupted_score(frames, self.mode, self.seed)


class NoisyScorer:
    def __init__(self, flip_prob: float, seed: int = 0):
        if not 0.0 <= flip_prob <= 0.5:
            raise ValueError("flip_prob must be in [0, 0.5]")
        self.flip_prob = flip_prob
        self.seed = seed

    def score(self, frames: list, clip_id: int) -> float:
        return noisy_score(frames, self.flip_prob, self.seed, clip_id)


class ConstantScorer:
    """Fixed output regardless of content; the no-op end of the scorer family."""

    def __init__(self, value: float = 0.0):
        if not 0.0 <= value <= 1.0:
            raise ValueError("value must be in [0, 1]")
        self.value = value

    def score(self, frames: list, clip_id: int) -> float:
        return self.value


# -- wire protocol client ------------------------------------------------------


def encode_request(clip_id: int, prompt: str, frames: list) -> bytes:
    rec = {"type": "score_request", "clip_id": clip_id, "prompt": prompt, "frames": frames}
    return json.dumps(rec, separators=(",", ":")).encode() + b"\n"


def decode_response(line: bytes, expected_clip_id: int) -> float:
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as e:
        raise ProtocolViolation(f"response is not valid JSON: {line[:200]!r}") from e
    if not isinstance(rec, dict) or rec.get("type") != "score_response":
        raise ProtocolViolation(f"unexpected record type: {rec!r}")
    if rec.get("clip_id") != expected_clip_id:
        raise ProtocolViolation(
            f"clip_id mismatch: sent {expected_clip_id}, got {rec.get('clip_id')!r}"
        )
    score = rec.get("score")
    if not isinstance(score, (int, float)) or isinstance(score, bool) or not 0.0 <= score <= 1.0:
        raise ProtocolViolation(f"score outside [0,1]: {score!r}")
    return float(score)


class _StdioTransport:
    """Child process speaking the protocol on its stdin/stdout."""

    def __init__(self, command: str):
        self.proc = subprocess.Popen(
            shlex.split(command),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
        )

    def send(self, data: bytes) -> None:
        try:
            self.proc.stdin.write(data)
            self.proc.stdin.flush()
        except (BrokenPipeError, ValueError) as e:
            raise ConnectionLost("scorer process closed its stdin") from e

    def recv_line(self, deadline: float) -> bytes:
        # the child answers strictly one line per request, so a blocking
        # readline is safe; the deadline guards against a hung child
        import select

        fd = self.proc.stdout
        remaining = deadline - time.monotonic()
        if remaining <= 0 or not select.select([fd], [], [], remaining)[0]:
            raise Timeout("no response before deadline")
        line = fd.readline()
        if not line:
            raise ConnectionLost("scorer process closed its stdout")
        return line

    def close(self) -> None:
        for pipe in (self.proc.stdin, self.proc.stdout):
            try:
                pipe.close()
            except OSError:
                pass
        try:
            self.proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            self.proc.kill()


class _TcpTransport:
    def __init__(self, host: str, port: int):
        try:
            self.sock = socket.create_connection((host, port), timeout=10.0)
        except OSError as e:
            raise ConnectionLost(f"cannot connect to {host}:{port}") from e
        self.buf = b""

    def send(self, data: bytes) -> None:
        try:
            self.sock.sendall(data)
        except OSError as e:
            raise ConnectionLost("socket send failed") from e

    def recv_line(self, deadline: float) -> bytes:
        while b"\n" not in self.buf:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise Timeout("no response before deadline")
            self.sock.settimeout(remaining)
            try:
                chunk = self.sock.recv(65536)
            except socket.timeout:
                raise Timeout("no response before deadline") from None
            except OSError as e:
                raise ConnectionLost("socket recv failed") from e
            if not chunk:
                raise ConnectionLost("peer closed the connection")
            self.buf += chunk
        line, self.buf = self.buf.split(b"\n", 1)
        return line

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass


class ExternalScorer:
    """Out-of-process scorer reached over the newline-delimited JSON protocol.

    Addresses: "tcp://HOST:PORT" connects to a running service;
    "stdio://<command line>" spawns the command and speaks over its pipes.
    One request is in flight at a time; the response must echo the clip id.
    """

    def __init__(self, address: str, timeout: float = 30.0, prompt: str = PROMPT):
        self.address = address
        self.timeout = timeout
        self.prompt = prompt
        self._transport: Optional[object] = None

    def _connect(self):
        if self._transport is not None:
            return self._transport
        if self.address.startswith("tcp://"):
            host, _, port = self.address[len("tcp://"):].rpartition(":")
            if not host or not port.isdigit():
                raise ValueError(f"bad tcp address: {self.address}")
            self._transport = _TcpTransport(host, int(port))
        elif self.address.startswith("stdio://"):
            self._transport = _StdioTransport(self.address[len("stdio://"):])
        else:
            raise ValueError(f"unsupported scorer address: {self.address}")
        return self._transport

    def score(self, frames: list, clip_id: int) -> float:
        t = self._connect()
        t.send(encode_request(clip_id, self.prompt, frames))
        line = t.recv_line(time.monotonic() + self.timeout)
        return decode_response(line, clip_id)

    def close(self) -> None:
        if self._transport is None:
            return
        t, self._transport = self._transport, None
        try:
            t.send(b'{"type":"shutdown"}\n')
            t.recv_line(time.monotonic() + 2.0)  # bye, best effort
        except (Timeout, ConnectionLost, ProtocolViolation):
            pass
        finally:
            t.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
