#!/usr/bin/env python3
"""Run the headline sampler comparison and print a summary table.

Five seeds per arm on DoorKey-8x8 with an 8-layout pool per seed, 300k steps,
deterministic lockstep scoring. Takes roughly 20 minutes on one core with the
default arms; trim --seeds or --steps for a quicker look.
"""

import argparse
import json
import math
import pathlib
import statistics
import sys

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parent.parent / "src"))

from replay_engine.config import (
    EnvConfig,
    ExperimentConfig,
    SamplerKind,
    ScorerConfig,
    ScorerKind,
)
from replay_engine.harness import run_single_seed
from replay_engine.sampler import MixtureSchedule, ScheduleMode

ARMS = {
    "uniform": (SamplerKind.UER, ScorerKind.NONE, ScheduleMode.LINEAR),
    "td": (SamplerKind.PER, ScorerKind.NONE, ScheduleMode.LINEAR),
    "semantic": (SamplerKind.VLM_ONLY, ScorerKind.ORACLE, ScheduleMode.LINEAR),
    "semantic-uncapped": (SamplerKind.VLM_ONLY, ScorerKind.ORACLE, ScheduleMode.NONE),
    "semantic-misleading": (SamplerKind.VLM_ONLY, ScorerKind.MISLEADING, ScheduleMode.LINEAR),
    "semantic-hashed": (SamplerKind.VLM_ONLY, ScorerKind.ABSTRACT, ScheduleMode.LINEAR),
}


def crossing(rows, threshold):
    for r in rows:
        if r.success_rate >= threshold:
            return float(r.step)
    return math.inf


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--arms", nargs="+", choices=sorted(ARMS), default=sorted(ARMS))
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--size", type=int, default=8)
    ap.add_argument("--steps", type=int, default=300_000)
    ap.add_argument("--pool", type=int, default=8)
    ap.add_argument("--eval-every", type=int, default=10_000)
    ap.add_argument("--out", default=None, help="optional path for raw per-arm JSON")
    args = ap.parse_args(argv)

    results = {}
    for arm in args.arms:
        sampler, scorer, mode = ARMS[arm]
        cfg = ExperimentConfig(
            env=EnvConfig(size=args.size),
            sampler=sampler,
            scorer=ScorerConfig(kind=scorer),
            schedule=MixtureSchedule(
                lambda0=0.0, lambda_max=0.5, t_schedule=args.steps // 2, mode=mode
            ),
            total_steps=args.steps,
            eval_every=args.eval_every,
            eval_episodes=32,
            seeds=tuple(args.seeds),
        )
        per_seed = []
        for seed in args.seeds:
            rows, _, timing = run_single_seed(cfg, seed, lockstep=True, layout_pool=args.pool)
            per_seed.append(
                {
                    "seed": seed,
                    "to_0.5": crossing(rows, 0.5),
                    "to_0.9": crossing(rows, 0.9),
                    "final_asr": rows[-1].success_rate if rows else None,
                    "wall_s": round(timing["wall_s"], 1),
                }
            )
            print(f"  {arm} seed {seed}: {per_seed[-1]}", file=sys.stderr)
        results[arm] = per_seed

    print(f"\n{'arm':<22} {'median to 0.9':>14} {'mean final ASR':>15}")
    for arm, per_seed in results.items():
        med = statistics.median(s["to_0.9"] for s in per_seed)
        med_txt = "never" if math.isinf(med) else f"{int(med):,}"
        final = statistics.mean(s["final_asr"] for s in per_seed)
        print(f"{arm:<22} {med_txt:>14} {final:>15.3f}")

    if args.out:
        pathlib.Path(args.out).write_text(json.dumps(results, indent=2) + "\n")
        print(f"\nraw results -> {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
