"""Command-line entry point: demos, perturbation, training, evaluation, reports and sweeps."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from .config import RunConfig, resolve_config
from .datasets import collect_demos, load_dataset, perturb_dataset, save_dataset
from .diffusion import make_vp_schedule
from .errors import ConfigurationError, DSPError, UsageError, ValidationError
from .eval_harness import KEY_COLUMNS, compare_runs, evaluate_policy
from .experiments import SUMMARY, SWEEP_PARAMS, run_pipeline, sweep
from .policy import load_policy
from .trainer import Stage2Mode, ThresholdMode

LOGGER = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(f"{self.prog}: {message}")


def _resolve(args: argparse.Namespace, overrides: Dict[str, Any]) -> RunConfig:
    return resolve_config(args.config, overrides)


def cmd_gen_demos(args: argparse.Namespace) -> int:
    config = _resolve(args, {"run.task": args.task, "run.seed": args.seed, "data.n_demos": args.n_episodes})
    demos = collect_demos(config.run.task, config.data.n_demos, config.run.seed)
    path = save_dataset(demos, args.out)
    successes = sum(traj.success for traj in demos)
    print(f"{config.run.task}: {successes}/{len(demos)} successful demonstrations -> {path}")
    return 0


def cmd_perturb(args: argparse.Namespace) -> int:
    config = _resolve(
        args,
        {
            "run.seed": args.seed,
            "perturb.frac": args.frac,
            "perturb.eta": args.eta,
            "perturb.sigma_sq": args.sigma_sq,
            "perturb.flip_prob": args.flip_prob,
            "perturb.replay": args.replay_perturbed,
            "perturb.sigma_is_std": args.sigma_is_std,
        },
    )
    settings = config.perturb
    clean = load_dataset(args.input)
    perturbed = perturb_dataset(
        clean,
        frac=settings.frac,
        eta=settings.eta,
        sigma_sq=settings.sigma_sq,
        flip_prob=settings.flip_prob,
        seed=config.run.seed,
        replay=settings.replay,
        sigma_is_std=settings.sigma_is_std,
    )
    path = save_dataset(perturbed, args.out)
    masked = sum(int(traj.perturbed_mask.sum()) for traj in perturbed)
    successes = sum(traj.success for traj in perturbed)
    print(
        f"perturbed {len(perturbed)} trajectories ({masked} steps); "
        f"{successes}/{len(perturbed)} succeed -> {path}"
    )
    return 0


def _train_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    return {
        "run.preset": args.preset,
        "run.task": args.task,
        "run.seed": args.seed,
        "run.out_dir": args.out_dir,
        "data.clean": args.clean,
        "data.perturbed": args.perturbed,
        "data.n_clean": args.n_clean,
        "data.n_perturbed": args.n_perturbed,
        "train.stage2_mode": args.mode,
        "train.threshold_mode": args.threshold,
        "train.stage1_steps": args.stage1_steps,
        "train.stage2_steps": args.stage2_steps,
        "train.batch_size": args.batch_size,
        "train.lr": args.lr,
        "train.eval_every": args.eval_every,
        "train.filter_samples": args.filter_samples,
        "policy.hidden_dim": args.hidden_dim,
        "policy.embed_dim": args.embed_dim,
        "eval.n_episodes": args.episodes,
    }


def cmd_train(args: argparse.Namespace) -> int:
    config = _resolve(args, _train_overrides(args))
    if config.data.clean is None:
        raise ConfigurationError("no clean dataset given (--clean or [data] clean)")
    clean = load_dataset(config.data.clean)
    perturbed = load_dataset(config.data.perturbed) if config.data.perturbed else []
    if config.train.stage2_mode is not Stage2Mode.NONE and not perturbed:
        LOGGER.warning("stage 2 runs on clean data only: no perturbed dataset given")
    record = run_pipeline(config, clean, perturbed, config.run.out_dir)
    print(
        f"{record['task']} [{record['label']}]: iqm {record['iqm']:.3f} "
        f"[{record['ci_low']:.3f}, {record['ci_high']:.3f}] -> {config.run.out_dir}"
    )
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    config = _resolve(
        args,
        {
            "run.task": args.task,
            "eval.n_episodes": args.n_episodes,
            "eval.base_seed": args.seed,
            "eval.n_resamples": args.n_resamples,
            "eval.level": args.level,
        },
    )
    params = load_policy(args.checkpoint)
    schedule = make_vp_schedule(params.T, config.policy.beta_start, config.policy.beta_end)
    summary = evaluate_policy(
        params,
        config.run.task,
        config.eval.n_episodes,
        config.eval.base_seed,
        schedule=schedule,
        n_resamples=config.eval.n_resamples,
        level=config.eval.level,
        bootstrap_seed=config.eval.bootstrap_seed,
    )
    record = summary.to_record()
    record["checkpoint"] = str(args.checkpoint)
    print(
        f"{config.run.task}: iqm {summary.iqm:.3f} [{summary.ci_low:.3f}, {summary.ci_high:.3f}] "
        f"success {summary.success_rate:.3f} over {summary.n_episodes} episodes"
    )
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(json.dumps(record, sort_keys=True) + "\n")
    return 0


def _read_summaries(run_dirs: Sequence[str]) -> List[Dict[str, Any]]:
    missing = [run_dir for run_dir in run_dirs if not (Path(run_dir) / SUMMARY).exists()]
    if missing:
        raise ValidationError(f"no {SUMMARY} in: {', '.join(missing)}")
    records: List[Dict[str, Any]] = []
    for run_dir in run_dirs:
        path = Path(run_dir) / SUMMARY
        for line in path.read_text().splitlines():
            if line.strip():
                try:
                    records.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise ValidationError(f"{path}: unreadable summary ({exc.msg})") from None
    return records


def cmd_report(args: argparse.Namespace) -> int:
    table = compare_runs(_read_summaries(args.run_dirs), group_by=args.group_by or ())
    print(table.to_text())
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(table.to_jsonl())
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    config = _resolve(args, {"run.task": args.task, "run.preset": args.preset})
    demos = load_dataset(args.demos) if args.demos else None
    result = sweep(config, args.param, args.values, args.seeds, args.modes, args.out, demos=demos)
    print(result.medians.to_string(index=False))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dsp", description="Diffusion stabilizer policy toolkit")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="Warnings and errors only")
    commands = parser.add_subparsers(dest="command", required=True)

    def command(name: str, handler, help_text: str) -> argparse.ArgumentParser:
        sub = commands.add_parser(name, help=help_text)
        sub.add_argument("--config", help="TOML run config")
        sub.set_defaults(handler=handler)
        return sub

    gen = command("gen-demos", cmd_gen_demos, "Record scripted expert demonstrations")
    gen.add_argument("--task", help="Task slug")
    gen.add_argument("-n", "--n-episodes", type=int, help="Number of demonstrations")
    gen.add_argument("--seed", type=int, help="First episode seed")
    gen.add_argument("-o", "--out", required=True, help="Output dataset (.jsonl)")

    perturb = command("perturb", cmd_perturb, "Inject action perturbations into demonstrations")
    perturb.add_argument("--in", dest="input", required=True, help="Clean dataset")
    perturb.add_argument("-o", "--out", required=True, help="Output dataset")
    perturb.add_argument("--frac", type=float, help="Share of steps perturbed per trajectory")
    perturb.add_argument("--eta", type=float, help="Offset magnitude")
    perturb.add_argument("--sigma-sq", type=float, help="Offset variance")
    perturb.add_argument("--flip-prob", type=float, help="Probability of a positive offset")
    perturb.add_argument("--seed", type=int)
    perturb.add_argument(
        "--replay-perturbed",
        action=argparse.BooleanOptionalAction,
        default=None,
        help="Re-execute perturbed actions so observations and success follow them",
    )
    perturb.add_argument(
        "--sigma-is-std", action="store_true", default=None, help="Read --sigma-sq as a std"
    )

    train = command("train", cmd_train, "Run both training stages and evaluate")
    train.add_argument("--preset", choices=["desk", "paper"])
    train.add_argument("--task")
    train.add_argument("--seed", type=int)
    train.add_argument("--clean", help="Clean dataset")
    train.add_argument("--perturbed", help="Perturbed dataset")
    train.add_argument("--n-clean", type=int)
    train.add_argument("--n-perturbed", type=int)
    train.add_argument("--mode", choices=[mode.value for mode in Stage2Mode])
    train.add_argument("--threshold", choices=[mode.value for mode in ThresholdMode])
    train.add_argument("--stage1-steps", type=int)
    train.add_argument("--stage2-steps", type=int)
    train.add_argument("--batch-size", type=int)
    train.add_argument("--lr", type=float)
    train.add_argument("--eval-every", type=int)
    train.add_argument("--filter-samples", type=int)
    train.add_argument("--hidden-dim", type=int)
    train.add_argument("--embed-dim", type=int)
    train.add_argument("--episodes", type=int, help="Evaluation episodes")
    train.add_argument("-o", "--out-dir", help="Run directory")

    evaluate = command("eval", cmd_eval, "Evaluate a checkpoint")
    evaluate.add_argument("checkpoint", help="Policy checkpoint")
    evaluate.add_argument("--task")
    evaluate.add_argument("-n", "--n-episodes", type=int)
    evaluate.add_argument("--seed", type=int, help="First evaluation seed")
    evaluate.add_argument("--n-resamples", type=int)
    evaluate.add_argument("--level", type=float)
    evaluate.add_argument("-o", "--out", help="Write the summary record here")

    report = command("report", cmd_report, "Compare finished runs")
    report.add_argument("run_dirs", nargs="+", help="Run directories")
    report.add_argument("--group-by", action="append", choices=list(KEY_COLUMNS))
    report.add_argument("-o", "--out", default="report.jsonl", help="Machine-readable table")

    sweeper = command("sweep", cmd_sweep, "Repeat runs over one perturbation or data setting")
    sweeper.add_argument("--param", required=True, choices=list(SWEEP_PARAMS))
    sweeper.add_argument("--values", type=float, nargs="+", required=True)
    sweeper.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    sweeper.add_argument("--modes", nargs="+", default=["naive", "online"], choices=[m.value for m in Stage2Mode])
    sweeper.add_argument("--task")
    sweeper.add_argument("--preset", choices=["desk", "paper"])
    sweeper.add_argument("--demos", help="Clean demonstrations to draw from")
    sweeper.add_argument("-o", "--out", required=True, help="Sweep output root")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code

    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.handler(args)
    except DSPError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    raise SystemExit(main())


__all__ = ["build_parser", "main"]
