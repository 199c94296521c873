"""Command-line front end: run experiments, sweep the mixture cap, compare runs."""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from typing import Optional

from .config import (
    ConfigError,
    EnvConfig,
    ExperimentConfig,
    SamplerKind,
    ScorerConfig,
    ScorerKind,
    config_from_dict,
)
from .harness import RunSummary, read_summary_csv, relative_efficiency, run
from .sampler import MixtureSchedule, ScheduleMode

OUT_ENV_VAR = "REPLAY_ENGINE_OUT"


def _default_out() -> str:
    return os.environ.get(OUT_ENV_VAR, "runs")


def _load_config(path: str) -> ExperimentConfig:
    with open(path) as f:
        raw = json.load(f)
    return config_from_dict(raw)


def _fmt_steps(steps: Optional[int]) -> str:
    return "never" if steps is None else str(steps)


def _print_summary(summary: RunSummary, out_dir: str) -> None:
    if summary.asr:
        print(f"final ASR {summary.asr[-1]:.4f} (SEM {summary.sem[-1]:.4f})")
    print(f"best ASR  {summary.best_asr:.4f}")
    for thr in sorted(summary.steps_to):
        print(f"steps to ASR>={thr}: {_fmt_steps(summary.steps_to[thr])}")
    print(f"outputs in {out_dir}")


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config)
    out_dir = args.out or _default_out()
    summary = run(cfg, out_dir, lockstep=args.lockstep, seed_override=args.seed_override)
    _print_summary(summary, out_dir)
    return 0


def _parse_vary(expr: str) -> list[Optional[float]]:
    key, _, raw = expr.partition("=")
    if key != "lambda_max" or not raw:
        raise ValueError("--vary expects lambda_max=<v1,v2,...> (values or 'none')")
    values: list[Optional[float]] = []
    for tok in raw.split(","):
        tok = tok.strip()
        values.append(None if tok.lower() == "none" else float(tok))
    return values


def _variant_schedule(base: MixtureSchedule, lam: Optional[float]) -> MixtureSchedule:
    if lam is None:
        return dataclasses.replace(base, mode=ScheduleMode.NONE)
    return dataclasses.replace(base, lambda_max=lam, mode=ScheduleMode.LINEAR)


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config)
    values = _parse_vary(args.vary)
    out_root = args.out or _default_out()
    results = []
    for lam in values:
        tag = "none" if lam is None else f"{lam:g}"
        variant = dataclasses.replace(cfg, schedule=_variant_schedule(cfg.schedule, lam))
        out_dir = os.path.join(out_root, f"lambda_{tag}")
        summary = run(variant, out_dir, lockstep=args.lockstep)
        results.append((tag, summary))
        print(f"lambda_max={tag}: best ASR {summary.best_asr:.4f}", flush=True)
    print()
    print(f"{'lambda_max':>10}  {'best_asr':>8}  {'to_0.5':>8}  {'to_0.9':>8}")
    for tag, summary in results:
        print(
            f"{tag:>10}  {summary.best_asr:>8.4f}"
            f"  {_fmt_steps(summary.steps_to.get(0.5)):>8}"
            f"  {_fmt_steps(summary.steps_to.get(0.9)):>8}"
        )
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    base = read_summary_csv(args.base)
    ours = read_summary_csv(args.ours)
    print(f"{'metric':<20} {'base':>10} {'ours':>10} {'gain':>10}")
    delta = ours.best_asr - base.best_asr
    print(f"{'best_asr':<20} {base.best_asr:>10.4f} {ours.best_asr:>10.4f} {delta:>+10.4f}")
    for thr in (0.5, 0.9):
        b, o = base.steps_to.get(thr), ours.steps_to.get(thr)
        gain = relative_efficiency(b, o)
        gain_s = "n/a" if gain is None else f"{100 * gain:+.1f}%"
        print(f"{f'steps_to_{thr}':<20} {_fmt_steps(b):>10} {_fmt_steps(o):>10} {gain_s:>10}")
    return 0


def cmd_demo(args: argparse.Namespace) -> int:
    steps = args.steps
    cfg = ExperimentConfig(
        env=EnvConfig(size=args.size),
        sampler=SamplerKind.VLM_ONLY,
        scorer=ScorerConfig(kind=ScorerKind.ORACLE),
        schedule=MixtureSchedule(
            lambda0=0.0, lambda_max=0.5, t_schedule=max(1, steps // 2), mode=ScheduleMode.LINEAR
        ),
        total_steps=steps,
        eval_every=max(1, steps // 4),
        eval_episodes=8,
        seeds=(0,),
    )
    out_dir = args.out or os.path.join(_default_out(), "demo")
    summary = run(cfg, out_dir)
    _print_summary(summary, out_dir)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="replay-engine",
        description="Replay-prioritization experiments on DoorKey gridworlds",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run every seed of a JSON config")
    p_run.add_argument("--config", required=True, help="path to a JSON experiment config")
    p_run.add_argument("--seed-override", type=int, default=None, help="run only this seed")
    p_run.add_argument("--lockstep", action="store_true", help="drain the scorer synchronously")
    p_run.add_argument("--out", default=None, help=f"output dir (default ${OUT_ENV_VAR} or runs/)")
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="re-run a config while varying the mixture cap")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument(
        "--vary",
        required=True,
        help="lambda_max=<comma-separated values>; 'none' disables the mixture schedule",
    )
    p_sweep.add_argument("--lockstep", action="store_true")
    p_sweep.add_argument("--out", default=None)
    p_sweep.set_defaults(func=cmd_sweep)

    p_cmp = sub.add_parser("compare", help="tabulate two summary.csv files")
    p_cmp.add_argument("--base", required=True, help="baseline summary.csv")
    p_cmp.add_argument("--ours", required=True, help="candidate summary.csv")
    p_cmp.set_defaults(func=cmd_compare)

    p_demo = sub.add_parser("demo", help="tiny end-to-end smoke run")
    p_demo.add_argument("--size", type=int, default=8)
    p_demo.add_argument("--steps", type=int, default=2000)
    p_demo.add_argument("--out", default=None)
    p_demo.set_defaults(func=cmd_demo)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
