"""Tabular Q-learning over hashed grid observations.

States are the raw observation bytes; an interning index maps each distinct
byte string to a dense row id so both tables live in one growing (n, 5) array
and whole batches update vectorized. Unseen states read as zero rows.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .replay import ReplayBuffer, SampleBatch, Transition

N_ACTIONS = 5

CHECKPOINT_MAGIC = b"QTB1"


@dataclass(frozen=True)
class LearnerConfig:
    gamma: float = 0.95
    learning_rate: float = 0.0625
    batch_size: int = 128
    target_sync_every: int = 500
    train_freq: int = 4
    learning_starts: int = 500
    eps_start: float = 1.0
    eps_end: float = 0.05
    exploration_fraction: float = 0.5
    double: bool = True

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must be in (0, 1]")
        for name in ("learning_rate", "batch_size", "target_sync_every", "train_freq"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.learning_starts < 0:
            raise ValueError("learning_starts must be >= 0")
        if not 0.0 <= self.eps_end <= self.eps_start <= 1.0:
            raise ValueError("need 0 <= eps_end <= eps_start <= 1")
        if not 0.0 < self.exploration_fraction <= 1.0:
            raise ValueError("exploration_fraction must be in (0, 1]")


class StateIndex:
    """bytes -> dense int id, assigned in first-seen order."""

    def __init__(self):
        self._ids: dict[bytes, int] = {}

    def intern(self, key: bytes) -> int:
        i = self._ids.get(key)
        if i is None:
            i = len(self._ids)
            self._ids[key] = i
        return i

    def intern_many(self, keys: list) -> np.ndarray:
        get = self._ids.get
        out = np.empty(len(keys), dtype=np.int64)
        for j, k in enumerate(keys):
            i = get(k)
            if i is None:
                i = len(self._ids)
                self._ids[k] = i
            out[j] = i
        return out

    def keys_in_order(self) -> list:
        return list(self._ids)

    def __len__(self) -> int:
        return len(self._ids)


class QFunction:
    def __init__(self, index: StateIndex | None = None, n_actions: int = N_ACTIONS):
        self.index = index if index is not None else StateIndex()
        self.n_actions = n_actions
        self.values = np.zeros((max(256, len(self.index)), n_actions), dtype=np.float64)

    def _ensure(self) -> None:
        n = len(self.index)
        if n > len(self.values):
            grown = np.zeros((max(n, 2 * len(self.values)), self.n_actions), dtype=np.float64)
            grown[: len(self.values)] = self.values
            self.values = grown

    def row(self, key: bytes) -> np.ndarray:
        i = self.index.intern(key)
        self._ensure()
        return self.values[i]

    def sync_from(self, other: "QFunction") -> None:
        """Hard copy of the other table's values (shared index assumed)."""
        self.values = other.values.copy()

    def n_states(self) -> int:
        return len(self.index)


def make_tables() -> tuple[QFunction, QFunction]:
    """Online and target tables over one shared state index."""
    index = StateIndex()
    return QFunction(index), QFunction(index)


def epsilon_at(cfg: LearnerConfig, t: int, total_steps: int) -> float:
    """Linear eps_start -> eps_end over the first exploration_fraction of training."""
    ramp = cfg.exploration_fraction * total_steps
    if t >= ramp:
        return cfg.eps_end
    return cfg.eps_start + (cfg.eps_end - cfg.eps_start) * (t / ramp)


def act(q: QFunction, obs_key: bytes, eps: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy action; greedy ties break toward the lowest action id."""
    if not 0.0 <= eps <= 1.0:
        raise ValueError("eps must be in [0, 1]")
    if rng.random() < eps:
        return int(rng.integers(q.n_actions))
    return int(np.argmax(q.row(obs_key)))


def td_error(
    q: QFunction,
    q_target: QFunction,
    t: Transition,
    gamma: float,
    double: bool = True,
) -> float:
    """Q(s,a) - y with y = r on termination, else r + gamma * Q_target(s', a*).

    a* is the online table's argmax when double is set, the target table's
    otherwise. Time-limit truncation still bootstraps.
    """
    if t.terminated:
        y = t.reward
    else:
        next_online = q.row(t.next_state)
        next_target = q_target.row(t.next_state)
        a_star = int(np.argmax(next_online if double else next_target))
        y = t.reward + gamma * next_target[a_star]
    return float(q.row(t.state)[t.action] - y)


def train_step(
    q: QFunction,
    q_target: QFunction,
    batch: SampleBatch,
    cfg: LearnerConfig,
    buffer: ReplayBuffer,
) -> float:
    """One weighted TD update per batch entry, writing |delta| back to the buffer.

    All deltas come from the pre-update tables (batch semantics); duplicate
    (state, action) pairs accumulate their steps. Returns the mean |delta|.
    """
    idxs = batch.indices
    states = [buffer.states[i] for i in idxs]
    next_states = [buffer.next_states[i] for i in idxs]
    actions = buffer.actions[idxs]
    rewards = buffer.rewards[idxs]
    terminal = buffer.terminated[idxs]

    s_ids = q.index.intern_many(states)
    s2_ids = q.index.intern_many(next_states)
    q._ensure()
    q_target._ensure()

    rows_next_target = q_target.values[s2_ids]
    if cfg.double:
        a_star = np.argmax(q.values[s2_ids], axis=1)
    else:
        a_star = np.argmax(rows_next_target, axis=1)
    bootstrap = rows_next_target[np.arange(len(idxs)), a_star]
    y = rewards + cfg.gamma * bootstrap * ~terminal
    delta = q.values[s_ids, actions] - y

    np.add.at(q.values, (s_ids, actions), -cfg.learning_rate * batch.is_weights * delta)
    buffer.set_td_errors(idxs, batch.generations, delta)
    return float(np.mean(np.abs(delta)))


def save_checkpoint(q: QFunction, path: str) -> None:
    keys = q.index.keys_in_order()
    q._ensure()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<IQ", q.n_actions, len(keys)))
        for k in keys:
            f.write(struct.pack("<I", len(k)))
            f.write(k)
        f.write(q.values[: len(keys)].astype("<f8").tobytes())


def load_checkpoint(path: str) -> QFunction:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not a Q-table checkpoint (magic {magic!r})")
        n_actions, n_states = struct.unpack("<IQ", f.read(12))
        index = StateIndex()
        for _ in range(n_states):
            (klen,) = struct.unpack("<I", f.read(4))
            index.intern(f.read(klen))
        q = QFunction(index, n_actions)
        q._ensure()
        flat = np.frombuffer(f.read(8 * n_states * n_actions), dtype="<f8")
        q.values[:n_states] = flat.reshape(n_states, n_actions)
    return q
