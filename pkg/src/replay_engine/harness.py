"""Experiment driver: seeded training runs, greedy evaluation, metrics files.

One run = one config x several seeds. Each seed trains a tabular double
Q-learner on a fixed pool of gridworld layouts (the same pool the greedy
evaluation uses), writing one NDJSON metrics file per seed plus a run-level
summary.csv. All randomness flows from named integer-seeded generators so a
lockstep run is reproducible byte for byte; wall-clock timing goes to a
separate timing.json and never touches the data path.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from .baselines import (
    AerEncoder,
    EroPolicy,
    aer_select,
    ero_select,
    ero_update,
    relo_batch_priorities,
)
from .config import ExperimentConfig, SamplerKind, ScorerConfig, ScorerKind
from .gridworld import GridState, default_max_steps, reset, step
from .learner import QFunction, act, epsilon_at, make_tables, train_step
from .pipeline import ScoringPipeline
from .replay import PriorityMode, ReplayBuffer, Transition
from .sampler import LinearAnneal, MixtureSampler, lambda_at
from .scorers import (
    ConstantScorer,
    CorruptedScorer,
    CorruptionMode,
    ExternalScorer,
    NoisyScorer,
    OracleScorer,
    Scorer,
)

BUFFER_CAPACITY = 400_000
PER_ALPHA = 0.7            # TD-priority exponent for the PER baseline and TD-boosted mode
PER_BETA = 1.0             # PER keeps a fixed, fully-corrected beta
RELO_ALPHA = 0.6           # reducible-loss baseline uses its own exponent
RELO_BETA_START = 0.4      # and anneals beta 0.4 -> 1.0 across the run
AER_EMBED_DIM = 32
LAYOUT_SEED_STRIDE = 1_000_000
LAYOUT_POOL_SIZE = 8  # distinct layouts per seed; tabular tables do not generalize across layouts


class MisalignedSteps(ValueError):
    """Per-seed metric files disagree on the evaluation step grid."""


@dataclass(frozen=True)
class MetricsRow:
    seed: int
    step: int
    success_rate: float
    mean_return: float
    mean_ep_len: float
    lambda_t: float
    buffer_fill: float
    scored_fraction: float
    positive_score_fraction: float
    queue_depth: int
    fallback_count: int

    def to_line(self) -> str:
        return json.dumps(asdict(self), separators=(",", ":"))


@dataclass
class RunSummary:
    steps: list = field(default_factory=list)
    asr: list = field(default_factory=list)        # mean success rate across seeds
    sem: list = field(default_factory=list)        # sample stddev / sqrt(n_seeds)
    best_asr: Optional[float] = None
    steps_to: dict = field(default_factory=dict)   # threshold -> first step or None


# -- component assembly -------------------------------------------------------


def build_scorer(scfg: ScorerConfig, seed: int) -> Optional[Scorer]:
    if scfg.kind is ScorerKind.NONE:
        return None
    if scfg.kind is ScorerKind.ORACLE:
        return OracleScorer()
    if scfg.kind is ScorerKind.NOISY:
        return NoisyScorer(scfg.noise_p, seed=seed)
    if scfg.kind is ScorerKind.MISLEADING:
        return CorruptedScorer(CorruptionMode.MISLEADING, seed=seed)
    if scfg.kind is ScorerKind.ABSTRACT:
        return CorruptedScorer(CorruptionMode.ABSTRACT, seed=seed)
    if scfg.kind is ScorerKind.CONSTANT:
        return ConstantScorer(scfg.constant)
    return ExternalScorer(scfg.address)


_BUFFER_MODE = {
    SamplerKind.UER: PriorityMode.PER,
    SamplerKind.PER: PriorityMode.PER,
    SamplerKind.VLM_ONLY: PriorityMode.VLM_ONLY,
    SamplerKind.VLM_TD: PriorityMode.VLM_TD,
    SamplerKind.ERO: PriorityMode.PER,
    SamplerKind.RELO: PriorityMode.RELO_EXTERNAL,
    SamplerKind.AER: PriorityMode.PER,
}


_BUFFER_ALPHA = {
    SamplerKind.UER: 1.0,        # leaves unused
    SamplerKind.PER: PER_ALPHA,
    SamplerKind.VLM_ONLY: 1.0,   # binary scores are fixed points of any exponent
    SamplerKind.VLM_TD: PER_ALPHA,
    SamplerKind.ERO: 1.0,        # leaves unused
    SamplerKind.RELO: RELO_ALPHA,
    SamplerKind.AER: 1.0,        # leaves unused
}


def make_buffer(cfg: ExperimentConfig, capacity: int = BUFFER_CAPACITY) -> ReplayBuffer:
    return ReplayBuffer(
        capacity=capacity, mode=_BUFFER_MODE[cfg.sampler], alpha=_BUFFER_ALPHA[cfg.sampler]
    )


# -- evaluation ----------------------------------------------------------------


def _greedy_episode(q: QFunction, state: GridState, obs0: np.ndarray) -> tuple[float, int]:
    """Roll one greedy episode; returns (return, episode length).

    A deterministic policy that revisits a (pose, carrying, door) node can
    never terminate, so the first revisit counts as a full-length failure.
    """
    obs = obs0.tobytes()
    visited = set()
    while True:
        node = (state.agent_row, state.agent_col, state.orientation,
                state.carrying_key, state.door_state)
        if node in visited:
            return 0.0, state.max_steps
        visited.add(node)
        res = step(state, act(q, obs, 0.0, _NULL_RNG))
        if res.terminated:
            return res.reward, state.step
        if res.truncated:
            return 0.0, state.step
        obs = res.obs.tobytes()


_NULL_RNG = np.random.default_rng(0)  # never consulted at eps=0


def evaluate_full(
    q: QFunction,
    env_factory: Callable[[int], GridState],
    n_episodes: int,
    seed_base: int,
) -> tuple[float, float, float]:
    """Greedy success rate, mean return, mean episode length over fresh layouts."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    successes = 0
    returns = np.zeros(n_episodes)
    lengths = np.zeros(n_episodes)
    for i in range(n_episodes):
        ret, ep_len = _greedy_episode(q, *env_factory(seed_base + i))
        successes += ret > 0.0
        returns[i] = ret
        lengths[i] = ep_len
    return successes / n_episodes, float(returns.mean()), float(lengths.mean())


def evaluate(q, env_factory, n_episodes: int, seed_base: int) -> float:
    return evaluate_full(q, env_factory, n_episodes, seed_base)[0]


# -- single-seed training loop ---------------------------------------------------


def run_single_seed(
    cfg: ExperimentConfig,
    seed: int,
    out_path: Optional[str] = None,
    *,
    lockstep: bool = False,
    capacity: int = BUFFER_CAPACITY,
    layout_pool: int = LAYOUT_POOL_SIZE,
    scorer_override: Optional[Scorer] = None,
) -> tuple[list, QFunction, dict]:
    """Train one seed; returns (metric rows, online table, timing stats).

    When out_path is given, rows are appended and flushed as they are
    produced so a crash still leaves a usable prefix on disk.
    """
    size = cfg.env.size
    t_max = cfg.env.t_max if cfg.env.t_max is not None else default_max_steps(size)
    lc = cfg.learner

    action_rng = np.random.default_rng([seed, 101])
    sample_rng = np.random.default_rng([seed, 202])
    seed_base = LAYOUT_SEED_STRIDE * (seed + 1)
    # fold every requested layout seed onto a small per-run pool
    env_factory = lambda s: reset(
        seed=seed_base + (s - seed_base) % layout_pool, size=size, max_steps=t_max
    )

    buffer = make_buffer(cfg, capacity)
    scorer = scorer_override if scorer_override is not None else build_scorer(cfg.scorer, seed)
    pipeline = ScoringPipeline(scorer, lockstep=lockstep) if scorer is not None else None

    q, q_target = make_tables()
    mixer = MixtureSampler(cfg.schedule)
    relo_beta = LinearAnneal(RELO_BETA_START, 1.0, max(1, cfg.total_steps))
    ero_policy = EroPolicy(seed=seed) if cfg.sampler is SamplerKind.ERO else None
    ero_feats: list = []
    aer_enc = (
        AerEncoder(size * size * 3, d=AER_EMBED_DIM, seed=seed)
        if cfg.sampler is SamplerKind.AER
        else None
    )

    semantic_modes = (SamplerKind.VLM_ONLY, SamplerKind.VLM_TD)

    def insert_default() -> float:
        if cfg.sampler is SamplerKind.VLM_ONLY:
            return pipeline.insertion_default() if pipeline else 0.0
        if cfg.sampler is SamplerKind.RELO:
            return buffer.max_external
        return buffer.max_td_abs

    def draw_batch(t: int, obs_bytes: bytes):
        B = lc.batch_size
        if cfg.sampler is SamplerKind.UER:
            return buffer.sample_uniform(B, sample_rng)
        if cfg.sampler in semantic_modes:
            # the semantic mixture is used raw: no importance correction
            return mixer.draw(buffer, t, B, sample_rng, beta=1.0, is_enabled=False)
        if cfg.sampler is SamplerKind.ERO:
            batch = ero_select(buffer, ero_policy, B, sample_rng, t_max)
            ero_feats.append(ero_policy.last_batch_features)
            return batch
        if cfg.sampler is SamplerKind.AER:
            return aer_select(buffer, aer_enc, obs_bytes, B, t, cfg.total_steps, sample_rng)
        batch = buffer.sample_proportional(B, sample_rng)
        if cfg.sampler is SamplerKind.RELO:
            buffer.importance_weights(batch, relo_beta.at(t), True)
        else:
            buffer.importance_weights(batch, PER_BETA, True)
        return batch

    rows: list = []
    out = open(out_path, "w") if out_path else None
    wall_start = time.perf_counter()
    loop_wall = None
    train_steps = 0
    episode_idx = 0
    state, obs0 = env_factory(seed_base)
    obs_bytes = obs0.tobytes()

    def lambda_metric(t: int) -> float:
        if cfg.sampler in semantic_modes:
            return lambda_at(cfg.schedule, t)
        return 0.0 if cfg.sampler is SamplerKind.UER else 1.0

    try:
        for t in range(cfg.total_steps):
            eps = epsilon_at(lc, t, cfg.total_steps)
            a = act(q, obs_bytes, eps, action_rng)
            res = step(state, a)
            next_obs_bytes = res.obs.tobytes()
            ref = buffer.insert(
                Transition(
                    state=obs_bytes,
                    action=a,
                    reward=res.reward,
                    next_state=next_obs_bytes,
                    terminated=res.terminated,
                    truncated=res.truncated,
                    episode_step=state.step,
                    insert_time=t,
                ),
                insert_default(),
            )
            if pipeline is not None:
                pipeline.observe(ref, res.events.to_payload(), res.terminated, res.truncated)
                pipeline.drain_and_apply(buffer)

            if res.terminated or res.truncated:
                episode_idx += 1
                state, obs0 = env_factory(seed_base + episode_idx)
                obs_bytes = obs0.tobytes()
            else:
                obs_bytes = next_obs_bytes

            if t >= lc.learning_starts and t % lc.train_freq == 0 and len(buffer) >= lc.batch_size:
                batch = draw_batch(t, obs_bytes)
                if cfg.sampler is SamplerKind.RELO:
                    relo_ps = relo_batch_priorities(q, q_target, batch, lc, buffer)
                    train_step(q, q_target, batch, lc, buffer)
                    buffer.set_external_priorities(batch.indices, batch.generations, relo_ps)
                else:
                    train_step(q, q_target, batch, lc, buffer)
                train_steps += 1

            if (t + 1) % lc.target_sync_every == 0:
                q_target.sync_from(q)

            if (t + 1) % cfg.eval_every == 0:
                sr, mean_ret, mean_len = evaluate_full(
                    q, env_factory, cfg.eval_episodes, seed_base
                )
                if ero_policy is not None:
                    r_replay = ero_policy.observe_eval_return(mean_ret)
                    if ero_feats:
                        ero_update(ero_policy, np.concatenate(ero_feats), r_replay)
                        ero_feats.clear()
                row = MetricsRow(
                    seed=seed,
                    step=t + 1,
                    success_rate=sr,
                    mean_return=mean_ret,
                    mean_ep_len=mean_len,
                    lambda_t=lambda_metric(t),
                    buffer_fill=len(buffer) / buffer.capacity,
                    scored_fraction=buffer.scored_fraction(),
                    positive_score_fraction=buffer.positive_score_fraction(),
                    queue_depth=len(pipeline.in_queue) if pipeline else 0,
                    fallback_count=mixer.zero_mass_fallbacks,
                )
                rows.append(row)
                if out:
                    out.write(row.to_line() + "\n")
                    out.flush()
        loop_wall = time.perf_counter() - wall_start
    finally:
        if pipeline is not None:
            pipeline.shutdown(buffer)
        if isinstance(scorer, ExternalScorer) and scorer_override is None:
            scorer.close()
        if out:
            out.close()

    wall = time.perf_counter() - wall_start
    # throughput is judged on the loop alone; scorer shutdown drain is bookkeeping
    loop_wall = wall if loop_wall is None else loop_wall
    timing = {
        "seed": seed,
        "wall_s": wall,
        "loop_wall_s": loop_wall,
        "env_steps": cfg.total_steps,
        "train_steps": train_steps,
        "steps_per_sec": cfg.total_steps / loop_wall if loop_wall > 0 else 0.0,
    }
    return rows, q, timing


# -- aggregation ---------------------------------------------------------------


def aggregate(per_seed_rows: list, thresholds=(0.5, 0.9)) -> RunSummary:
    """Mean/SEM curves across seeds plus first-crossing steps per threshold."""
    if not per_seed_rows:
        raise ValueError("need at least one seed's rows")
    grids = [[r.step for r in rows] for rows in per_seed_rows]
    if any(g != grids[0] for g in grids[1:]):
        raise MisalignedSteps(f"evaluation step grids differ: {sorted(set(map(tuple, grids)))}")
    steps = grids[0]
    summary = RunSummary(steps=list(steps))
    if not steps:
        summary.steps_to = {thr: None for thr in thresholds}
        return summary
    sr = np.array([[r.success_rate for r in rows] for rows in per_seed_rows])  # (M, T)
    m = sr.shape[0]
    asr = sr.mean(axis=0)
    sem = sr.std(axis=0, ddof=1) / np.sqrt(m) if m > 1 else np.zeros(sr.shape[1])
    summary.asr = [float(x) for x in asr]
    summary.sem = [float(x) for x in sem]
    summary.best_asr = float(asr.max())
    for thr in thresholds:
        hit = np.nonzero(asr >= thr)[0]
        summary.steps_to[thr] = int(steps[hit[0]]) if len(hit) else None
    return summary


def relative_efficiency(steps_base: Optional[int], steps_ours: Optional[int]) -> Optional[float]:
    """(base - ours) / base; None when the baseline never crosses the threshold."""
    if steps_base is None or steps_ours is None:
        return None
    return (steps_base - steps_ours) / steps_base


def write_summary_csv(path: str, summary: RunSummary, sampler: str, scorer: str) -> None:
    with open(path, "w") as f:
        f.write("step,asr,sem,sampler,scorer\n")
        for s, a, e in zip(summary.steps, summary.asr, summary.sem):
            f.write(f"{s},{a:.10g},{e:.10g},{sampler},{scorer}\n")


def read_summary_csv(path: str) -> RunSummary:
    summary = RunSummary()
    with open(path) as f:
        header = f.readline().strip()
        if header != "step,asr,sem,sampler,scorer":
            raise ValueError(f"unexpected summary header: {header!r}")
        for line in f:
            parts = line.strip().split(",")
            summary.steps.append(int(parts[0]))
            summary.asr.append(float(parts[1]))
            summary.sem.append(float(parts[2]))
    if summary.asr:
        asr = np.array(summary.asr)
        summary.best_asr = float(asr.max())
        for thr in (0.5, 0.9):
            hit = np.nonzero(asr >= thr)[0]
            summary.steps_to[thr] = summary.steps[hit[0]] if len(hit) else None
    else:
        summary.steps_to = {0.5: None, 0.9: None}
    return summary


# -- whole runs ------------------------------------------------------------------


def run(
    cfg: ExperimentConfig,
    out_dir: str,
    *,
    lockstep: bool = False,
    seed_override: Optional[int] = None,
    capacity: int = BUFFER_CAPACITY,
    layout_pool: int = LAYOUT_POOL_SIZE,
) -> RunSummary:
    """Execute every seed of a config, writing metrics, summary, and timing."""
    os.makedirs(out_dir, exist_ok=True)
    seeds = (seed_override,) if seed_override is not None else cfg.seeds
    per_seed = []
    timings = []
    for seed in seeds:
        path = os.path.join(out_dir, f"metrics_seed{seed}.ndjson")
        rows, _, timing = run_single_seed(
            cfg, seed, path, lockstep=lockstep, capacity=capacity, layout_pool=layout_pool
        )
        per_seed.append(rows)
        timings.append(timing)
    summary = aggregate(per_seed)
    write_summary_csv(
        os.path.join(out_dir, "summary.csv"),
        summary,
        cfg.sampler.value,
        cfg.scorer.kind.value,
    )
    with open(os.path.join(out_dir, "timing.json"), "w") as f:
        json.dump({"per_seed": timings}, f, indent=2)
    return summary
