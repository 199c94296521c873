"""Shared-storage replay buffer with dual per-transition scores.

One ring buffer backs two sampling branches: a prioritized branch driven by a
sum tree over per-transition priorities, and a uniform branch over all live
entries. Each entry carries a semantic score (binary, set once by the scorer)
and a TD-error magnitude (refreshed every time the entry is sampled). How the
two combine into a leaf weight depends on the buffer's priority mode.

Slot reuse under ring wrap-around is guarded by per-slot generation counters:
a score that arrives for an already-overwritten slot is dropped and counted,
never applied to the new occupant.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import NamedTuple, Optional

import numpy as np

from .sum_tree import SumTree

EPSILON = 1e-6  # priority floor so every transition stays sampleable


class PriorityMode(Enum):
    """How semantic score and TD magnitude combine into a leaf priority."""

    VLM_ONLY = "vlm_only"      # binary semantic score alone
    VLM_TD = "vlm_td"          # semantic score masks TD magnitude
    PER = "per"                # TD magnitude alone
    RELO_EXTERNAL = "relo_external"  # caller supplies the priority value


class Branch(IntEnum):
    PRIORITIZED = 0
    UNIFORM = 1


class EmptyBufferError(RuntimeError):
    pass


class ZeroMassError(RuntimeError):
    """All priorities are zero; callers should fall back to the uniform branch."""


@dataclass(frozen=True)
class Transition:
    state: bytes
    action: int
    reward: float
    next_state: bytes
    terminated: bool
    truncated: bool
    episode_step: int
    insert_time: int


@dataclass(frozen=True)
class PriorityRecord:
    """Scalar view of one slot's priority state. semantic_score None = unset."""

    semantic_score: Optional[float]
    td_abs: float
    is_default: bool


class SlotRef(NamedTuple):
    """Buffer index plus the generation it was issued under."""

    index: int
    generation: int


@dataclass
class SampleBatch:
    indices: np.ndarray       # int64 buffer slots
    generations: np.ndarray   # int64 slot generations at sample time
    probs: np.ndarray         # per-index sampling probability under its branch
    branch: np.ndarray        # uint8, Branch values
    is_weights: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.is_weights is None:
            self.is_weights = np.ones(len(self.indices), dtype=np.float64)

    def __len__(self) -> int:
        return len(self.indices)


def combined_priority(
    rec: PriorityRecord,
    mode: PriorityMode,
    *,
    default_score: float = 1.0,
    external_value: float = 0.0,
    epsilon: float = EPSILON,
) -> float:
    """Priority of one record before the alpha exponent is applied.

    default_score stands in for an unset semantic score: the running average
    of past scores in VLM_ONLY mode, 1.0 in VLM_TD mode so unscored data is
    not masked.
    """
    if mode is PriorityMode.RELO_EXTERNAL:
        return external_value
    if mode is PriorityMode.PER:
        return rec.td_abs + epsilon
    score = rec.semantic_score if rec.semantic_score is not None else default_score
    if mode is PriorityMode.VLM_ONLY:
        return score
    if mode is PriorityMode.VLM_TD:
        return score * (rec.td_abs + epsilon)
    raise ValueError(f"unknown priority mode: {mode!r}")


def threshold_score(score: float) -> float:
    """Binarize a raw scorer output: 1.0 iff strictly greater than 0.5."""
    return 1.0 if score > 0.5 else 0.0


class ReplayBuffer:
    """Ring buffer with prioritized and uniform sampling branches.

    alpha is folded into the stored leaf weights (weight = priority ** alpha)
    and is fixed for the buffer's lifetime. All mutations and sampling are
    serialized through one lock; the training loop is the single writer, and
    one concurrent score applier may call set_semantic_score.
    """

    def __init__(
        self,
        capacity: int,
        mode: PriorityMode = PriorityMode.VLM_ONLY,
        alpha: float = 1.0,
        *,
        epsilon: float = EPSILON,
        unset_semantic_value: float = 1.0,
    ):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        tree_capacity = 1
        while tree_capacity < capacity:
            tree_capacity *= 2
        self.capacity = capacity
        self.mode = mode
        self.alpha = float(alpha)
        self.epsilon = float(epsilon)
        # stands in for an unset semantic score in VLM_TD mode (fresh data
        # must not be masked before the scorer has seen it)
        self.unset_semantic_value = float(unset_semantic_value)

        self.tree = SumTree(tree_capacity)
        self.size = 0
        self.write_ptr = 0
        self.stale_drops = 0
        self.max_td_abs = 1.0       # running max |delta|, PER-style insert default
        self.max_external = 1.0     # running max external priority (ReLo insert default)

        self.states: list = [None] * capacity
        self.next_states: list = [None] * capacity
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity, dtype=np.float64)
        self.terminated = np.zeros(capacity, dtype=bool)
        self.truncated = np.zeros(capacity, dtype=bool)
        self.episode_steps = np.zeros(capacity, dtype=np.int64)
        self.insert_times = np.zeros(capacity, dtype=np.int64)

        self.semantic = np.full(capacity, np.nan, dtype=np.float64)  # NaN = unset
        self.td_abs = np.zeros(capacity, dtype=np.float64)
        self.is_default = np.ones(capacity, dtype=bool)
        self.external = np.zeros(capacity, dtype=np.float64)
        self.default_values = np.zeros(capacity, dtype=np.float64)
        self.generations = np.zeros(capacity, dtype=np.int64)

        self._lock = threading.Lock()

    # -- priority plumbing ---------------------------------------------------

    def _priority_of(self, idx: int) -> float:
        if self.mode is PriorityMode.RELO_EXTERNAL:
            return self.external[idx]
        if self.mode is PriorityMode.PER:
            return self.td_abs[idx] + self.epsilon
        s = self.semantic[idx]
        if np.isnan(s):
            if self.mode is PriorityMode.VLM_ONLY:
                s = self.default_values[idx]
            else:
                s = self.unset_semantic_value
        if self.mode is PriorityMode.VLM_ONLY:
            return float(s)
        return float(s) * (self.td_abs[idx] + self.epsilon)

    def _leaf_weight(self, idx: int) -> float:
        p = self._priority_of(idx)
        return p if self.alpha == 1.0 else p ** self.alpha

    def _leaf_weights_vec(self, idxs: np.ndarray) -> np.ndarray:
        if self.mode is PriorityMode.RELO_EXTERNAL:
            p = self.external[idxs]
        elif self.mode is PriorityMode.PER:
            p = self.td_abs[idxs] + self.epsilon
        else:
            s = self.semantic[idxs]
            unset = np.isnan(s)
            if self.mode is PriorityMode.VLM_ONLY:
                p = np.where(unset, self.default_values[idxs], s)
            else:
                p = np.where(unset, self.unset_semantic_value, s) * (self.td_abs[idxs] + self.epsilon)
        return p if self.alpha == 1.0 else p ** self.alpha

    def _refresh_leaves(self, idxs: np.ndarray) -> None:
        idxs = np.atleast_1d(idxs)
        self.tree.update_many(idxs, self._leaf_weights_vec(idxs))

    # -- mutation ------------------------------------------------------------

    def insert(self, t: Transition, default_priority: float) -> SlotRef:
        """Store a transition, overwriting the oldest entry when full.

        The new record starts unscored: semantic score unset, td_abs seeded
        with default_priority, is_default true until the scorer reports back.
        """
        if default_priority < 0:
            raise ValueError("default_priority must be >= 0")
        with self._lock:
            idx = self.write_ptr
            if self.size == self.capacity:
                self.generations[idx] += 1  # evicting the previous occupant
            self.states[idx] = t.state
            self.next_states[idx] = t.next_state
            self.actions[idx] = t.action
            self.rewards[idx] = t.reward
            self.terminated[idx] = t.terminated
            self.truncated[idx] = t.truncated
            self.episode_steps[idx] = t.episode_step
            self.insert_times[idx] = t.insert_time

            self.semantic[idx] = np.nan
            self.td_abs[idx] = default_priority
            self.is_default[idx] = True
            self.external[idx] = default_priority
            self.default_values[idx] = default_priority

            self.tree.update(idx, self._leaf_weight(idx))
            self.write_ptr = (self.write_ptr + 1) % self.capacity
            self.size = min(self.size + 1, self.capacity)
            return SlotRef(idx, int(self.generations[idx]))

    def set_semantic_score(self, ref: SlotRef, score: float) -> bool:
        """Apply a raw scorer output to a slot; returns False if the slot is stale.

        The raw score is binarized here (strictly greater than 0.5 maps to 1)
        so probability-style scorer outputs survive to logging upstream.
        """
        if not 0.0 <= score <= 1.0:
            raise ValueError(f"score must be in [0, 1], got {score}")
        with self._lock:
            if self.generations[ref.index] != ref.generation:
                self.stale_drops += 1
                return False
            self.semantic[ref.index] = threshold_score(score)
            self.is_default[ref.index] = False
            self.tree.update(ref.index, self._leaf_weight(ref.index))
            return True

    def set_td_error(self, ref: SlotRef, delta: float) -> bool:
        """Record |delta| for a slot; returns False if the slot is stale."""
        with self._lock:
            if self.generations[ref.index] != ref.generation:
                self.stale_drops += 1
                return False
            self.td_abs[ref.index] = abs(delta)
            self.max_td_abs = max(self.max_td_abs, abs(delta))
            self.tree.update(ref.index, self._leaf_weight(ref.index))
            return True

    def set_td_errors(self, indices: np.ndarray, generations: np.ndarray, deltas: np.ndarray) -> int:
        """Vectorized write-back after a training step; returns count applied."""
        indices = np.asarray(indices, dtype=np.int64)
        deltas = np.abs(np.asarray(deltas, dtype=np.float64))
        with self._lock:
            live = self.generations[indices] == np.asarray(generations, dtype=np.int64)
            self.stale_drops += int(np.sum(~live))
            idxs = indices[live]
            self.td_abs[idxs] = deltas[live]
            if deltas.size:
                self.max_td_abs = max(self.max_td_abs, float(deltas.max()))
            self._refresh_leaves(idxs)
            return int(live.sum())

    def set_external_priority(self, ref: SlotRef, value: float) -> bool:
        """Directly supply a slot's priority (RELO_EXTERNAL mode)."""
        if value < 0:
            raise ValueError("external priority must be >= 0")
        with self._lock:
            if self.generations[ref.index] != ref.generation:
                self.stale_drops += 1
                return False
            self.external[ref.index] = value
            self.max_external = max(self.max_external, value)
            self.tree.update(ref.index, self._leaf_weight(ref.index))
            return True

    def set_external_priorities(self, indices, generations, values) -> int:
        indices = np.asarray(indices, dtype=np.int64)
        values = np.asarray(values, dtype=np.float64)
        with self._lock:
            live = self.generations[indices] == np.asarray(generations, dtype=np.int64)
            self.stale_drops += int(np.sum(~live))
            idxs = indices[live]
            self.external[idxs] = values[live]
            if values.size:
                self.max_external = max(self.max_external, float(values.max()))
            self._refresh_leaves(idxs)
            return int(live.sum())

    # -- sampling ------------------------------------------------------------

    def sample_proportional(self, k: int, rng: np.random.Generator, alpha: float = None) -> SampleBatch:
        """Draw k indices with probability proportional to stored leaf weights.

        Stratified: [0, total) is split into k equal strata with one uniform
        draw each, which keeps the marginal distribution exact while reducing
        variance versus k independent draws. The alpha exponent is baked into
        the leaves at write time; passing a different alpha here is an error.
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        if alpha is not None and alpha != self.alpha:
            raise ValueError(f"alpha is fixed at construction ({self.alpha}), got {alpha}")
        with self._lock:
            if self.size == 0:
                raise EmptyBufferError("cannot sample from an empty buffer")
            total = self.tree.total
            if total <= 0.0:
                raise ZeroMassError("all priorities are zero")
            u = (np.arange(k, dtype=np.float64) + rng.random(k)) * (total / k)
            idx = self.tree.find_prefix_many(u)
            probs = self.tree.leaves()[idx] / total
            return SampleBatch(
                indices=idx,
                generations=self.generations[idx].copy(),
                probs=probs,
                branch=np.full(k, Branch.PRIORITIZED, dtype=np.uint8),
            )

    def sample_uniform(self, k: int, rng: np.random.Generator) -> SampleBatch:
        """Draw k indices i.i.d. uniformly over live entries (with replacement)."""
        if k < 1:
            raise ValueError("k must be >= 1")
        with self._lock:
            if self.size == 0:
                raise EmptyBufferError("cannot sample from an empty buffer")
            idx = rng.integers(0, self.size, size=k)
            return SampleBatch(
                indices=idx,
                generations=self.generations[idx].copy(),
                probs=np.full(k, 1.0 / self.size, dtype=np.float64),
                branch=np.full(k, Branch.UNIFORM, dtype=np.uint8),
            )

    def importance_weights(self, batch: SampleBatch, beta: float, enabled: bool) -> np.ndarray:
        """Max-normalized (1 / (N * P(i))) ** beta weights, or all ones if disabled."""
        if not enabled:
            batch.is_weights = np.ones(len(batch), dtype=np.float64)
            return batch.is_weights
        n = self.size
        w = (1.0 / (n * batch.probs)) ** beta
        batch.is_weights = w / w.max()
        return batch.is_weights

    # -- introspection -------------------------------------------------------

    def record(self, idx: int) -> PriorityRecord:
        s = self.semantic[idx]
        return PriorityRecord(
            semantic_score=None if np.isnan(s) else float(s),
            td_abs=float(self.td_abs[idx]),
            is_default=bool(self.is_default[idx]),
        )

    def transition(self, idx: int) -> Transition:
        return Transition(
            state=self.states[idx],
            action=int(self.actions[idx]),
            reward=float(self.rewards[idx]),
            next_state=self.next_states[idx],
            terminated=bool(self.terminated[idx]),
            truncated=bool(self.truncated[idx]),
            episode_step=int(self.episode_steps[idx]),
            insert_time=int(self.insert_times[idx]),
        )

    def leaf_weight(self, idx: int) -> float:
        return self.tree.leaf(idx)

    def scored_fraction(self) -> float:
        if self.size == 0:
            return 0.0
        return float(np.mean(~self.is_default[: self.size]))

    def positive_score_fraction(self) -> float:
        """Fraction of scored entries whose semantic score is 1."""
        scored = ~self.is_default[: self.size]
        n = int(scored.sum())
        if n == 0:
            return 0.0
        return float(np.sum(self.semantic[: self.size][scored] == 1.0) / n)

    def __len__(self) -> int:
        return self.size
