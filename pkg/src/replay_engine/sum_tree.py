"""Flat-array sum tree for O(log n) proportional sampling and point updates.

The tree is stored in a single array of size ``2 * capacity``. Node 1 is the
root, node ``i`` has children ``2i`` and ``2i + 1``, and the ``capacity``
leaves occupy slots ``capacity .. 2 * capacity - 1``. Updates recompute each
ancestor from its children instead of propagating deltas, so every internal
node is exactly the sum of its children at all times (no float drift).
"""

from __future__ import annotations

import numpy as np


class SumTree:
    """Positive-weight index over ``capacity`` leaves.

    capacity must be a power of two. Leaves start at weight zero; a zero-weight
    leaf is never returned by prefix search.
    """

    def __init__(self, capacity: int):
        if capacity < 1 or capacity & (capacity - 1):
            raise ValueError(f"capacity must be a positive power of two, got {capacity}")
        self.capacity = capacity
        self.depth = capacity.bit_length() - 1
        self.nodes = np.zeros(2 * capacity, dtype=np.float64)

    @property
    def total(self) -> float:
        return float(self.nodes[1])

    def leaf(self, idx: int) -> float:
        return float(self.nodes[self.capacity + idx])

    def leaves(self) -> np.ndarray:
        """View of all leaf weights (do not mutate)."""
        return self.nodes[self.capacity:]

    def update(self, idx: int, weight: float) -> None:
        if weight < 0 or not np.isfinite(weight):
            raise ValueError(f"leaf weight must be finite and >= 0, got {weight}")
        node = self.capacity + idx
        self.nodes[node] = weight
        node >>= 1
        while node >= 1:
            self.nodes[node] = self.nodes[2 * node] + self.nodes[2 * node + 1]
            node >>= 1

    def update_many(self, idxs: np.ndarray, weights: np.ndarray) -> None:
        """Set several leaves, then repair each affected level bottom-up."""
        idxs = np.asarray(idxs, dtype=np.int64)
        weights = np.asarray(weights, dtype=np.float64)
        if weights.size and (weights.min() < 0 or not np.all(np.isfinite(weights))):
            raise ValueError("leaf weights must be finite and >= 0")
        nodes = self.nodes
        nodes[self.capacity + idxs] = weights
        parents = np.unique((self.capacity + idxs) >> 1)
        while parents.size and parents[0] >= 1:
            nodes[parents] = nodes[2 * parents] + nodes[2 * parents + 1]
            parents = np.unique(parents >> 1)
            if parents[0] == 0:
                break

    def find_prefix(self, mass: float) -> int:
        """Index of the first leaf whose cumulative weight exceeds ``mass``.

        Matches a linear scan over ``cumsum(leaves)`` with the strict ``> mass``
        rule, so a zero-weight leaf can never be selected for mass in
        ``[0, total)``.
        """
        return int(self.find_prefix_many(np.asarray([mass], dtype=np.float64))[0])

    def find_prefix_many(self, masses: np.ndarray) -> np.ndarray:
        orig = np.asarray(masses, dtype=np.float64)
        masses = orig.copy()
        nodes = self.nodes
        idx = np.ones(masses.shape, dtype=np.int64)
        for _ in range(self.depth):
            left = nodes[2 * idx]
            go_right = masses >= left
            masses -= np.where(go_right, left, 0.0)
            idx = 2 * idx + go_right
        out = idx - self.capacity
        # float roundoff along the descent path can land on a zero leaf at a
        # stratum boundary; repair those rare hits with an exact scan
        bad = nodes[idx] == 0.0
        if np.any(bad):
            cum = np.cumsum(nodes[self.capacity:])
            out[bad] = np.searchsorted(cum, np.minimum(orig[bad], cum[-1] * (1 - 1e-12)), side="right")
        return out

    def check_consistency(self, rel_tol: float = 1e-9) -> bool:
        """Every internal node equals the sum of its children within rel_tol * total."""
        n = self.nodes
        internal = np.arange(1, self.capacity)
        tol = rel_tol * max(self.total, 1.0)
        ok_nodes = np.all(np.abs(n[internal] - (n[2 * internal] + n[2 * internal + 1])) <= tol)
        ok_total = abs(self.total - float(np.sum(n[self.capacity:]))) <= tol
        return bool(ok_nodes and ok_total)
