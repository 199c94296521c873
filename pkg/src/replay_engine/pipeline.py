"""Clip assembly and the asynchronous scoring loop.

Flow per environment step: the transition's replay slot and frame payload are
pushed into a clip buffer; when the clip reaches max length or the episode
ends, the whole clip is enqueued for scoring. A single worker thread scores
clips FIFO and emits results; the training thread drains results between
steps, fanning each clip's score out to every member slot and folding the raw
score into a cumulative moving average that serves as the insertion-time
default priority.

Queues are bounded: when the input side is full the oldest unscored clip is
evicted (scoring lag must not stall collection, and the newest data matters
most). A lockstep mode scores inline on the training thread for bit-identical
reruns.
"""

from __future__ import annotations

import threading
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

from .replay import ReplayBuffer, SlotRef
from .scorers import Scorer


@dataclass(frozen=True)
class ClipRequest:
    clip_id: int
    refs: tuple[SlotRef, ...]
    frames: tuple

    def __post_init__(self):
        if not (1 <= len(self.refs) == len(self.frames)):
            raise ValueError("refs and frames must be equal-length and non-empty")


@dataclass(frozen=True)
class ScoreResult:
    clip_id: int
    refs: tuple[SlotRef, ...]
    score: float


@dataclass(frozen=True)
class CmaState:
    mean: float = 0.0
    count: int = 0


def cma_update(c: CmaState, score: float) -> CmaState:
    """Running mean over all scores seen; the first score initializes it."""
    if c.count == 0:
        return CmaState(mean=score, count=1)
    return CmaState(mean=(c.mean * c.count + score) / (c.count + 1), count=c.count + 1)


@dataclass
class ClipBuffer:
    max_len: int = 32
    entries: list = field(default_factory=list)
    next_clip_id: int = 0

    def __post_init__(self):
        if self.max_len < 1:
            raise ValueError("max_len must be >= 1")


def push_frame(
    cb: ClipBuffer,
    ref: SlotRef,
    frame,
    terminated: bool,
    truncated: bool,
) -> Optional[ClipRequest]:
    """Append one (slot, frame) pair; emit the clip when full or episode ends."""
    cb.entries.append((ref, frame))
    if len(cb.entries) < cb.max_len and not (terminated or truncated):
        return None
    req = ClipRequest(
        clip_id=cb.next_clip_id,
        refs=tuple(r for r, _ in cb.entries),
        frames=tuple(f for _, f in cb.entries),
    )
    cb.next_clip_id += 1
    cb.entries.clear()
    return req


class _Shutdown:
    pass


_SHUTDOWN = _Shutdown()


class BoundedClipQueue:
    """FIFO with evict-oldest overflow; the shutdown sentinel is never evicted."""

    def __init__(self, depth: int = 64):
        if depth < 1:
            raise ValueError("depth must be >= 1")
        self.depth = depth
        self._items: deque = deque()
        self._cond = threading.Condition()
        self.evicted = 0

    def put(self, item) -> None:
        with self._cond:
            if not isinstance(item, _Shutdown):
                while sum(1 for x in self._items if not isinstance(x, _Shutdown)) >= self.depth:
                    self._items.popleft()
                    self.evicted += 1
            self._items.append(item)
            self._cond.notify()

    def get(self):
        with self._cond:
            while not self._items:
                self._cond.wait()
            return self._items.popleft()

    def __len__(self) -> int:
        with self._cond:
            return len(self._items)


class WorkerCounters:
    """Owned by the worker thread; read by others only after join()."""

    def __init__(self):
        self.scored = 0
        self.dropped = 0
        self.retries = 0


def worker_loop(in_queue: BoundedClipQueue, out_queue: deque, scorer: Scorer, counters: WorkerCounters) -> None:
    """Score requests FIFO until the shutdown sentinel arrives.

    A failing scorer call is retried once; a second failure drops the clip and
    bumps the drop counter. Everything queued ahead of the sentinel is still
    scored before the loop exits.
    """
    while True:
        item = in_queue.get()
        if isinstance(item, _Shutdown):
            return
        result = _score_with_retry(item, scorer, counters)
        if result is not None:
            out_queue.append(result)


def _score_with_retry(req: ClipRequest, scorer: Scorer, counters: WorkerCounters) -> Optional[ScoreResult]:
    for attempt in (0, 1):
        try:
            score = scorer.score(list(req.frames), req.clip_id)
            counters.scored += 1
            return ScoreResult(clip_id=req.clip_id, refs=req.refs, score=float(score))
        except Exception:
            if attempt == 0:
                counters.retries += 1
            else:
                counters.dropped += 1
    return None


class ScoringPipeline:
    """One clip buffer, one scoring worker, and the score-application path.

    observe() is called once per environment step from the training thread;
    drain_and_apply() is called from the same thread and never blocks. In
    lockstep mode no worker thread exists: clips are scored inline at emit
    time, which makes whole runs reproducible byte-for-byte.
    """

    def __init__(
        self,
        scorer: Scorer,
        *,
        clip_len: int = 32,
        queue_depth: int = 64,
        lockstep: bool = False,
    ):
        self.scorer = scorer
        self.lockstep = lockstep
        self.clip = ClipBuffer(max_len=clip_len)
        self.in_queue = BoundedClipQueue(depth=queue_depth)
        self.out_queue: deque = deque()
        self.counters = WorkerCounters()
        self.cma = CmaState()
        self.enqueued = 0
        self.applied_results = 0
        self.stale_results = 0
        self._worker: Optional[threading.Thread] = None
        self._stopped = False
        if not lockstep:
            self._worker = threading.Thread(
                target=worker_loop,
                args=(self.in_queue, self.out_queue, scorer, self.counters),
                daemon=True,
            )
            self._worker.start()

    @property
    def evicted(self) -> int:
        return self.in_queue.evicted

    @property
    def dropped(self) -> int:
        return self.counters.dropped

    def observe(self, ref: SlotRef, frame, terminated: bool, truncated: bool) -> None:
        if self._stopped:
            raise RuntimeError("pipeline already shut down")
        req = push_frame(self.clip, ref, frame, terminated, truncated)
        if req is None:
            return
        self.enqueued += 1
        if self.lockstep:
            result = _score_with_retry(req, self.scorer, self.counters)
            if result is not None:
                self.out_queue.append(result)
        else:
            self.in_queue.put(req)

    def drain_and_apply(self, buffer: ReplayBuffer) -> int:
        """Apply every finished result without blocking; returns clips processed.

        Each clip's score is written to all member slots (stale slots are
        dropped inside the buffer) and folded into the running mean once.
        """
        processed = 0
        while True:
            try:
                result = self.out_queue.popleft()
            except IndexError:
                return processed
            applied_any = False
            for ref in result.refs:
                if buffer.set_semantic_score(ref, result.score):
                    applied_any = True
            if applied_any:
                self.applied_results += 1
            else:
                self.stale_results += 1
            self.cma = cma_update(self.cma, result.score)
            processed += 1

    def insertion_default(self) -> float:
        """Current default priority for fresh transitions: the clamped score mean."""
        return min(1.0, max(0.0, self.cma.mean))

    def shutdown(self, buffer: Optional[ReplayBuffer] = None) -> None:
        """Stop the worker after it finishes everything already queued.

        Pass the buffer to also apply any results still in flight, after which
        enqueued == applied + stale + dropped + evicted holds exactly.
        """
        if self._stopped:
            return
        self._stopped = True
        if self._worker is not None:
            self.in_queue.put(_SHUTDOWN)
            self._worker.join()
        if buffer is not None:
            self.drain_and_apply(buffer)

    def conservation_ok(self) -> bool:
        return self.enqueued == (
            self.applied_results + self.stale_results + self.dropped + self.evicted
        )
