"""Per-seed steps-to-ASR probe: one JSON line per run for a sampler/seed grid."""
import argparse
import json
import sys
import time

sys.path.insert(0, "src")

from replay_engine.config import (
    EnvConfig,
    ExperimentConfig,
    SamplerKind,
    ScorerConfig,
    ScorerKind,
)
from replay_engine.harness import run_single_seed
from replay_engine.sampler import MixtureSchedule, ScheduleMode


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--sampler", required=True)
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--size", type=int, default=8)
    ap.add_argument("--steps", type=int, default=300_000)
    ap.add_argument("--eval-every", type=int, default=5_000)
    ap.add_argument("--pool", type=int, default=4)
    ap.add_argument("--tsched", type=int, default=150_000)
    ap.add_argument("--lmax", type=float, default=0.5)
    ap.add_argument("--mode", default="linear", choices=["linear", "none"])
    ap.add_argument("--scorer", default=None, help="override scorer kind")
    args = ap.parse_args()

    kind = SamplerKind[args.sampler.upper()]
    if args.scorer is not None:
        scorer = ScorerConfig(kind=ScorerKind[args.scorer.upper()])
    elif kind in (SamplerKind.VLM_ONLY, SamplerKind.VLM_TD):
        scorer = ScorerConfig(kind=ScorerKind.ORACLE)
    else:
        scorer = ScorerConfig(kind=ScorerKind.NONE)
    cfg = ExperimentConfig(
        env=EnvConfig(size=args.size),
        sampler=kind,
        scorer=scorer,
        schedule=MixtureSchedule(
            lambda0=0.0, lambda_max=args.lmax, t_schedule=args.tsched,
            mode=ScheduleMode[args.mode.upper()],
        ),
        total_steps=args.steps,
        eval_every=args.eval_every,
        seeds=tuple(int(s) for s in args.seeds.split(",")),
    )
    for seed in cfg.seeds:
        t0 = time.time()
        rows, _, _ = run_single_seed(cfg, seed, lockstep=True, layout_pool=args.pool)
        wall = time.time() - t0
        to05 = next((r.step for r in rows if r.success_rate >= 0.5), None)
        to09 = next((r.step for r in rows if r.success_rate >= 0.9), None)
        tail = [round(r.success_rate, 3) for r in rows[-6:]]
        print(
            json.dumps(
                {
                    "sampler": args.sampler,
                    "scorer": scorer.kind.name,
                    "mode": args.mode,
                    "seed": seed,
                    "to05": to05,
                    "to09": to09,
                    "tail": tail,
                    "wall_s": round(wall, 1),
                }
            ),
            flush=True,
        )


if __name__ == "__main__":
    main()
