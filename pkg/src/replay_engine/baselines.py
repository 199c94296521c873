"""Comparison samplers sharing the replay buffer: ERO, ReLo, AER.

Uniform (UER) needs no code beyond the buffer's uniform branch, and the
TD-proportional scheme is the buffer's PER mode. The three samplers here add:

  ERO  - a learned retention policy (tiny MLP) over candidate features,
         trained by REINFORCE on the change in evaluation return.
  ReLo - reducible-loss priorities max(0, |d_online| - |d_target|) + eps fed
         through the buffer's external-priority mode.
  AER  - attention-style selection of the B transitions whose frozen random
         embeddings sit closest to the current observation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .learner import LearnerConfig, QFunction
from .replay import Branch, ReplayBuffer, SampleBatch
from .sampler import LinearAnneal

RELO_EPSILON = 1e-6
ERO_CANDIDATE_MULTIPLIER = 4


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class EroPolicy:
    """3 -> 64 -> 64 -> 1 retention scorer, rectified hidden units, sigmoid out.

    Inputs are per-transition features (reward, |td error|, episode progress).
    Gradients are closed-form; there is no autodiff anywhere in the package.
    """

    def __init__(self, seed: int = 0, hidden: int = 64, lr: float = 1e-3, r_bar_decay: float = 0.9):
        rng = np.random.default_rng(seed)
        self.W1 = rng.normal(0.0, np.sqrt(2.0 / 3), (hidden, 3))
        self.b1 = np.zeros(hidden)
        self.W2 = rng.normal(0.0, np.sqrt(2.0 / hidden), (hidden, hidden))
        self.b2 = np.zeros(hidden)
        self.w3 = rng.normal(0.0, np.sqrt(2.0 / hidden), hidden)
        self.b3 = 0.0
        self.lr = lr
        self.r_bar = 0.0
        self.r_bar_decay = r_bar_decay
        self.last_batch_features: np.ndarray | None = None

    def _forward(self, X: np.ndarray):
        Z1 = X @ self.W1.T + self.b1
        H1 = np.maximum(Z1, 0.0)
        Z2 = H1 @ self.W2.T + self.b2
        H2 = np.maximum(Z2, 0.0)
        z3 = H2 @ self.w3 + self.b3
        return Z1, H1, Z2, H2, z3

    def probs(self, X: np.ndarray) -> np.ndarray:
        """Retention probability per row of X; always strictly inside (0, 1)."""
        return _sigmoid(self._forward(np.atleast_2d(X))[4])

    def loss(self, X: np.ndarray, r_replay: float) -> float:
        """L = -r_replay * sum_i log p_i, computed without underflow."""
        z3 = self._forward(np.atleast_2d(X))[4]
        return float(r_replay * np.logaddexp(0.0, -z3).sum())

    def grads(self, X: np.ndarray, r_replay: float) -> dict:
        X = np.atleast_2d(X)
        Z1, H1, Z2, H2, z3 = self._forward(X)
        g3 = -r_replay * _sigmoid(-z3)  # dL/dz3 = -r * (1 - p)
        G2 = np.outer(g3, self.w3) * (Z2 > 0)
        G1 = (G2 @ self.W2) * (Z1 > 0)
        return {
            "W1": G1.T @ X,
            "b1": G1.sum(axis=0),
            "W2": G2.T @ H1,
            "b2": G2.sum(axis=0),
            "w3": H2.T @ g3,
            "b3": g3.sum(),
        }

    def apply_grads(self, grads: dict) -> None:
        self.W1 -= self.lr * grads["W1"]
        self.b1 -= self.lr * grads["b1"]
        self.W2 -= self.lr * grads["W2"]
        self.b2 -= self.lr * grads["b2"]
        self.w3 -= self.lr * grads["w3"]
        self.b3 -= self.lr * grads["b3"]

    def observe_eval_return(self, eval_return: float) -> float:
        """Fold a fresh evaluation return into the moving average.

        Returns r_replay, the movement of the average: the reward signal for
        the retention policy.
        """
        prev = self.r_bar
        self.r_bar = self.r_bar_decay * prev + (1.0 - self.r_bar_decay) * eval_return
        return self.r_bar - prev


def ero_features(buffer: ReplayBuffer, indices: np.ndarray, t_max: int) -> np.ndarray:
    """(reward, |td error|, episode progress) rows for the given slots."""
    return np.column_stack(
        [
            buffer.rewards[indices],
            buffer.td_abs[indices],
            buffer.episode_steps[indices] / t_max,
        ]
    )


def ero_select(
    buffer: ReplayBuffer,
    policy: EroPolicy,
    B: int,
    rng: np.random.Generator,
    t_max: int,
) -> SampleBatch:
    """Bernoulli-retain from a 4B uniform candidate pool; always exactly B.

    Over-retention keeps the first B retained candidates in draw order;
    under-retention tops up with the highest-probability rejected candidates.
    No importance weighting.
    """
    pool = buffer.sample_uniform(ERO_CANDIDATE_MULTIPLIER * B, rng)
    X = ero_features(buffer, pool.indices, t_max)
    p = policy.probs(X)
    retained = rng.random(len(p)) < p
    keep_order = np.nonzero(retained)[0]
    if len(keep_order) >= B:
        chosen = keep_order[:B]
    else:
        rejected = np.nonzero(~retained)[0]
        # stable sort keeps draw order among equal probabilities
        top_up = rejected[np.argsort(-p[rejected], kind="stable")][: B - len(keep_order)]
        chosen = np.concatenate([keep_order, top_up])
    policy.last_batch_features = X[chosen]
    return SampleBatch(
        indices=pool.indices[chosen],
        generations=pool.generations[chosen],
        probs=pool.probs[chosen],
        branch=np.full(B, Branch.PRIORITIZED, dtype=np.uint8),
    )


def ero_update(policy: EroPolicy, features: np.ndarray, r_replay: float) -> None:
    """One REINFORCE step on the retention policy for the given batch features."""
    if len(features) == 0:
        return
    policy.apply_grads(policy.grads(features, r_replay))


# -- ReLo ------------------------------------------------------------------------


@dataclass(frozen=True)
class ReLoState:
    alpha: float = 0.6
    beta: LinearAnneal = field(default_factory=lambda: LinearAnneal(0.4, 1.0, 1))
    epsilon: float = RELO_EPSILON


def relo_priority(delta_online: float, delta_target: float) -> float:
    """max(0, |d_online| - |d_target|) + eps: how much loss is still reducible."""
    return max(0.0, abs(delta_online) - abs(delta_target)) + RELO_EPSILON


def relo_batch_priorities(
    q: QFunction,
    q_target: QFunction,
    batch: SampleBatch,
    cfg: LearnerConfig,
    buffer: ReplayBuffer,
) -> np.ndarray:
    """relo_priority over a batch, against the shared bootstrap target y.

    Both deltas use the same y = r + gamma * Q_target(s', a*) (zero bootstrap
    on termination): the online table's error minus the target table's error
    isolates what training can still fix.
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
    y = rewards + cfg.gamma * rows_next_target[np.arange(len(idxs)), a_star] * ~terminal
    d_online = q.values[s_ids, actions] - y
    d_target = q_target.values[s_ids, actions] - y
    return np.maximum(0.0, np.abs(d_online) - np.abs(d_target)) + RELO_EPSILON


# -- AER -------------------------------------------------------------------------


class AerEncoder:
    """Frozen random linear projection of flattened observations to d reals."""

    def __init__(self, obs_dim: int, d: int = 32, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.obs_dim = obs_dim
        self.W = rng.normal(0.0, 1.0 / np.sqrt(obs_dim), (obs_dim, d))

    def encode_bytes(self, blobs: list) -> np.ndarray:
        X = np.frombuffer(b"".join(blobs), dtype=np.uint8).reshape(len(blobs), self.obs_dim)
        return X.astype(np.float64) @ self.W


def aer_pool_schedule(total_steps: int) -> LinearAnneal:
    return LinearAnneal(4.0, 1.0, total_steps)


def aer_select(
    buffer: ReplayBuffer,
    encoder: AerEncoder,
    current_obs: bytes,
    B: int,
    t: int,
    total_steps: int,
    rng: np.random.Generator,
) -> SampleBatch:
    """Keep the B pool candidates embedded nearest the current observation.

    Pool size floor(lambda_t * B) decays 4B -> B across the run; once it is
    no bigger than B the selector degenerates to plain uniform sampling.
    Distance ties break toward the lower buffer index. No importance weights.
    """
    pool_n = int(np.floor(aer_pool_schedule(total_steps).at(t) * B))
    if pool_n <= B:
        return buffer.sample_uniform(B, rng)
    pool = buffer.sample_uniform(pool_n, rng)
    embedded = encoder.encode_bytes([buffer.states[i] for i in pool.indices])
    current = encoder.encode_bytes([current_obs])[0]
    dist = ((embedded - current) ** 2).sum(axis=1)
    order = np.lexsort((pool.indices, dist))[:B]
    return SampleBatch(
        indices=pool.indices[order],
        generations=pool.generations[order],
        probs=pool.probs[order],
        branch=np.full(B, Branch.PRIORITIZED, dtype=np.uint8),
    )
