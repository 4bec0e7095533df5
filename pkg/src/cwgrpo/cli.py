"""Command-line entry point.

    cwgrpo train    --config PATH [--set k=v ...] --out DIR
    cwgrpo eval     --checkpoint P [--task KIND] [--n N] [--seed S]
    cwgrpo diagnose --checkpoint P [--groups N] [--seed S] [--out DIR]
    cwgrpo plot     --log PATH[,PATH2] --kind {entropy,reward,cov_cumulative} --out DIR

``eval`` and ``diagnose`` read the task from the ``config.txt`` of the run
that wrote the checkpoint unless ``--config``/``--task``/``--set`` say
otherwise.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint
from .config import TrainConfig, dump_config, parse_config
from .cov_reweight import token_covariances
from .diagnostics import cov_report, format_percentile_table
from .envs import env_generate
from .errors import ConfigError, ContractError, TrainingError
from .grpo import rollout_group
from .plotting import KINDS, cmd_plot, plot_curve
from .policy import snapshot
from .trainer import evaluate, seed_for, train

log = logging.getLogger("cwgrpo")

_DIAGNOSE = 5


def _run_config(checkpoint: Path, config: str | None, task: str | None, overrides) -> TrainConfig:
    if config is None:
        guess = checkpoint.resolve().parent.parent / "config.txt"
        config = guess if guess.is_file() else None
    extra = list(overrides)
    if task:
        extra.insert(0, f"task.kind={task}")
    return parse_config(config, extra)


def cmd_diagnose(checkpoint, cfg: TrainConfig, n_groups: int, seed: int, out_dir) -> dict:
    """Roll out ``n_groups`` groups, pool their covariances, write the report files."""
    if n_groups < 1:
        raise ContractError(f"--groups must be >= 1, got {n_groups}")
    params, step, _ = load_checkpoint(checkpoint)
    frozen = snapshot(params, step)
    c_parts = []
    for j in range(n_groups):
        prompt = env_generate(cfg.task, seed_for(seed, _DIAGNOSE, j, 0))
        group = rollout_group(frozen, cfg.task, prompt, cfg.group_size, cfg,
                              np.random.default_rng(seed_for(seed, _DIAGNOSE, j, 1)))
        c_parts.append(token_covariances(group)[0])
    c = np.concatenate(c_parts)
    report = cov_report(c)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    table = format_percentile_table(report.percentile_table)
    (out / "percentiles.txt").write_text(table)
    with open(out / "percentiles.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["percentile", "positive", "negative"])
        for row in report.percentile_table:
            writer.writerow([row.percentile,
                             "" if row.positive is None else repr(row.positive),
                             "" if row.negative is None else repr(row.negative)])
    result = {"tokens": int(c.size), "table": table, "curve": None}
    if report.cumulative_curve is None:
        (out / "cumulative.txt").write_text(
            "no cumulative curve: every covariance was zero (all advantages zero)\n")
    else:
        _, csv_path = plot_curve({"diagnose": [tuple(p) for p in report.cumulative_curve]},
                                 out, "cumulative", "fraction of tokens (by |c|)",
                                 "share of total |c|", "token_fraction",
                                 "cov_mass_fraction", diagonal=True)
        result["curve"] = str(csv_path)
    return result


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cwgrpo", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("train", help="train a policy")
    p.add_argument("--config", help="key = value config file (defaults if omitted)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="K=V")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--resume", help="checkpoint to continue from")

    p = sub.add_parser("eval", help="greedy pass@1 of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config")
    p.add_argument("--task", help="task kind override, e.g. Parity")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="K=V")
    p.add_argument("--n", type=int, help="number of prompts (default: eval_prompts)")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("diagnose", help="covariance percentile table and cumulative curve")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config")
    p.add_argument("--task")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="K=V")
    p.add_argument("--groups", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="diagnose")

    p = sub.add_parser("plot", help="entropy / reward curves or the cumulative covariance curve")
    p.add_argument("--log", required=True, help="metrics.jsonl, or two joined by a comma")
    p.add_argument("--kind", required=True, choices=KINDS)
    p.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.verb == "train":
            cfg = parse_config(args.config, args.overrides)
            out = train(cfg, args.out, resume_from=args.resume)
            print(f"run written to {out}")
        elif args.verb == "eval":
            ckpt = Path(args.checkpoint)
            cfg = _run_config(ckpt, args.config, args.task, args.overrides)
            params, step, _ = load_checkpoint(ckpt)
            n = cfg.eval_prompts if args.n is None else args.n
            pass1, reward = evaluate(params, cfg.task, n, args.seed, cfg.max_completion_len)
            print(json.dumps({"step": step, "pass@1": pass1, "mean_reward": reward}))
        elif args.verb == "diagnose":
            ckpt = Path(args.checkpoint)
            cfg = _run_config(ckpt, args.config, args.task, args.overrides)
            result = cmd_diagnose(ckpt, cfg, args.groups, args.seed, args.out)
            (Path(args.out) / "config.txt").write_text(dump_config(cfg))
            print(result["table"], end="")
        else:
            logs = [s for s in args.log.split(",") if s]
            svg, csv_path = cmd_plot(logs, args.kind, args.out)
            print(f"wrote {svg} and {csv_path}")
    except (ConfigError, ContractError, TrainingError, ValueError, OSError) as exc:
        print(f"cwgrpo {args.verb}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
