"""Mixture sampling between the prioritized and uniform replay branches.

Each batch is split deterministically: k_p = round(lam * B) indices come from
the prioritized branch and the rest from the uniform branch, with lam warming
up linearly from lambda0 to lambda_max over a fixed number of steps (half the
run by convention). Rounding is half-away-from-zero so the split is a pure
function of (lam, B) rather than of accumulated float state.

LinearAnneal is the shared linear-interpolation knob; the ReLo beta schedule
and the attention pool decay reuse it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from .replay import ReplayBuffer, SampleBatch, ZeroMassError


class ScheduleMode(Enum):
    LINEAR = "linear"  # lambda0 -> lambda_max over t_schedule steps, then hold
    NONE = "none"      # no schedule at all: every draw is fully prioritized


@dataclass(frozen=True)
class LinearAnneal:
    start: float
    end: float
    horizon: int

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")

    def at(self, t: int) -> float:
        frac = min(1.0, max(0.0, t / self.horizon))
        return self.start + (self.end - self.start) * frac


@dataclass(frozen=True)
class MixtureSchedule:
    lambda0: float = 0.0
    lambda_max: float = 0.5
    t_schedule: int = 500_000
    mode: ScheduleMode = ScheduleMode.LINEAR

    def __post_init__(self):
        if not 0.0 <= self.lambda0 <= self.lambda_max <= 1.0:
            raise ValueError("need 0 <= lambda0 <= lambda_max <= 1")
        if self.t_schedule < 1:
            raise ValueError("t_schedule must be >= 1")


def lambda_at(sched: MixtureSchedule, t: int) -> float:
    """Mixing weight at step t; the un-scheduled mode pins it to 1."""
    if t < 0:
        raise ValueError("t must be >= 0")
    if sched.mode is ScheduleMode.NONE:
        return 1.0
    return LinearAnneal(sched.lambda0, sched.lambda_max, sched.t_schedule).at(t)


def round_half_away(x: float) -> int:
    """round() with ties away from zero (Python's round is banker's)."""
    return int(math.floor(x + 0.5)) if x >= 0 else int(math.ceil(x - 0.5))


def split_batch(B: int, lam: float) -> tuple[int, int]:
    """(prioritized count, uniform count) for one batch at mixing weight lam."""
    if B < 1:
        raise ValueError("B must be >= 1")
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lam must be in [0, 1]")
    k_p = round_half_away(lam * B)
    return k_p, B - k_p


@dataclass
class MixtureBatch(SampleBatch):
    fell_back: bool = False


def draw_mixture(
    buffer: ReplayBuffer,
    B: int,
    lam: float,
    alpha: Optional[float] = None,
    beta: float = 1.0,
    is_enabled: bool = True,
    *,
    rng: np.random.Generator,
) -> MixtureBatch:
    """One batch: k_p prioritized indices followed by B - k_p uniform ones.

    Prioritized indices carry max-normalized importance weights (normalized
    within the prioritized block); uniform indices carry weight 1. If the
    prioritized branch has zero total mass (nothing scored positive yet) the
    whole batch comes from the uniform branch instead and fell_back is set.

    alpha is accepted for interface symmetry but must match the exponent the
    buffer folded into its leaf weights at construction.
    """
    if alpha is not None and alpha != buffer.alpha:
        raise ValueError(
            f"alpha is fixed at buffer construction ({buffer.alpha}); cannot resample with {alpha}"
        )
    k_p, k_u = split_batch(B, lam)
    parts = []
    fell_back = False
    if k_p > 0:
        try:
            prio = buffer.sample_proportional(k_p, rng)
            buffer.importance_weights(prio, beta, is_enabled)
            parts.append(prio)
        except ZeroMassError:
            fell_back = True
            parts = [buffer.sample_uniform(B, rng)]
            k_u = 0
    if k_u > 0:
        parts.append(buffer.sample_uniform(k_u, rng))
    return MixtureBatch(
        indices=np.concatenate([p.indices for p in parts]),
        generations=np.concatenate([p.generations for p in parts]),
        probs=np.concatenate([p.probs for p in parts]),
        branch=np.concatenate([p.branch for p in parts]),
        is_weights=np.concatenate([p.is_weights for p in parts]),
        fell_back=fell_back,
    )


class MixtureSampler:
    """Stateful front end: schedule plus fallback accounting."""

    def __init__(self, schedule: MixtureSchedule):
        self.schedule = schedule
        self.draws = 0
        self.zero_mass_fallbacks = 0

    def draw(
        self,
        buffer: ReplayBuffer,
        step: int,
        B: int,
        rng: np.random.Generator,
        *,
        beta: float = 1.0,
        is_enabled: bool = True,
    ) -> MixtureBatch:
        lam = lambda_at(self.schedule, step)
        batch = draw_mixture(buffer, B, lam, None, beta, is_enabled, rng=rng)
        self.draws += 1
        if batch.fell_back:
            self.zero_mass_fallbacks += 1
        return batch
