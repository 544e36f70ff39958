"""Command-line pipeline for counterfactual learning experiments.

Subcommands cover the whole experimental loop:

  gen-task      build a synthetic task (dataset + oracle/logging policies)
  log           simulate deterministic or stochastic logging
  train-reward  fit and cross-validate a reward regression model
  train         optimize a counterfactual objective on a log
  evaluate      folded off-policy evaluation against exact ground truth
  report        corpus scores, deltas, and significance tests for systems

Every command accepts --config (a JSON file with per-command sections);
explicit flags override config values.  All randomness flows from
explicit seeds, and identical inputs produce byte-identical artifacts.

Exit codes: 0 success, 1 usage/config error, 2 I/O error,
3 numerical/degenerate failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from typing import Optional

import numpy as np

from .core import (
    Dataset,
    ParseError,
    ValidationError,
    canonical_json,
    ensure_dir,
    read_dataset,
    read_json,
    read_log,
    write_dataset,
    write_json,
    write_log,
)
from .estimators import DegenerateBatchError
from .evaluator import EvalConfig, evaluate_policy, render_report, round_half_away
from .metrics import BleuConfig, ar_test, corpus_bleu
from .policy import GibbsPolicy, load_policy, save_policy
from .reward_model import RewardModelConfig, cross_validate, fit, load_model, pairs_from_log, save_model
from .sim import TaskConfig, ground_truth, generate_task, simulate_log
from .trainer import TrainConfig, TrainingAbort, train

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_IO = 2
EXIT_NUMERIC = 3


class UsageError(Exception):
    """Bad flags or config; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # keep usage failures on our exit-code contract
        raise UsageError(message)


def _load_config(path: Optional[str]) -> dict:
    if path is None:
        return {}
    if not os.path.exists(path):
        raise UsageError(f"config file not found: {path}")
    try:
        doc = read_json(path)
    except (IOError, OSError) as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    return doc


def _section(doc: dict, name: str) -> dict:
    sec = doc.get(name, {})
    if not isinstance(sec, dict):
        raise UsageError(f"config section {name!r} must be an object")
    merged = dict(sec)
    if "seed" not in merged and isinstance(doc.get("seed"), int):
        merged["seed"] = doc["seed"]
    return merged


def _build(cls, section: dict, overrides: dict):
    merged = dict(section)
    for key, value in overrides.items():
        if value is not None:
            merged[key] = value
    try:
        return cls(**merged)
    except TypeError as exc:
        raise UsageError(f"invalid {cls.__name__} settings: {exc}") from exc


def _x100(value: float) -> str:
    return f"{round_half_away(value * 100.0):.2f}"


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_gen_task(args) -> int:
    doc = _load_config(args.config)
    config = _build(TaskConfig, _section(doc, "task"), {"seed": args.seed})
    dataset, oracle_w, logging_w = generate_task(config)
    ensure_dir(args.out)
    dataset_path = os.path.join(args.out, "dataset.jsonl")
    write_dataset(dataset, dataset_path)
    oracle = GibbsPolicy(oracle_w, alpha=config.alpha, nbest_cap=config.nbest_cap)
    logging_pol = GibbsPolicy(logging_w, alpha=config.alpha, nbest_cap=config.nbest_cap)
    save_policy(oracle, os.path.join(args.out, "oracle_policy.json"))
    save_policy(logging_pol, os.path.join(args.out, "logging_policy.json"))
    summary: dict = {}
    for name, pol in (("oracle", oracle), ("logging", logging_pol)):
        summary[name] = {}
        for split in ("train", "validation", "test"):
            gt = ground_truth(pol, dataset, split)
            summary[name][split] = {
                "expected_reward": gt.expected_reward,
                "onebest_corpus_bleu": gt.onebest_corpus_bleu,
            }
    write_json(summary, os.path.join(args.out, "ground_truth.json"))
    print(
        f"wrote {len(dataset)} instances "
        f"({config.num_candidates} candidates, {config.feature_dim} features) to {dataset_path}"
    )
    o = summary["oracle"]["validation"]["expected_reward"]
    l = summary["logging"]["validation"]["expected_reward"]
    print(f"validation expected reward: oracle {_x100(o)}, logging {_x100(l)} (x100)")
    return EXIT_OK


def cmd_log(args) -> int:
    doc = _load_config(args.config)
    sec = _section(doc, "log")
    mode = args.mode if args.mode is not None else sec.get("mode", "deterministic")
    seed = args.seed if args.seed is not None else sec.get("seed", 0)
    dataset = read_dataset(args.dataset)
    pol = load_policy(args.policy)
    rng = np.random.default_rng(seed)
    entries = simulate_log(pol, dataset, mode, rng)
    write_log(entries, args.out)
    rewards = np.array([e.reward for e in entries])
    unit = sum(1 for e in entries if e.propensity == 1.0)
    print(f"wrote {len(entries)} entries to {args.out}")
    print(f"mean reward: {_x100(float(rewards.mean()))} (x100)")
    print(f"propensity=1.0 for {100.0 * unit / len(entries):.1f}% of entries")
    return EXIT_OK


def cmd_train_reward(args) -> int:
    doc = _load_config(args.config)
    sec = _section(doc, "reward_model")
    if "lambda" in sec:  # accept the mathematical name in config files
        sec["ridge_lambda"] = sec.pop("lambda")
    config = _build(
        RewardModelConfig,
        sec,
        {
            "kind": args.kind,
            "trees": args.trees,
            "max_depth": args.max_depth,
            "min_leaf": args.min_leaf,
            "features_per_split": args.features_per_split,
            "ridge_lambda": getattr(args, "lambda"),
            "seed": args.seed,
        },
    )
    dataset = read_dataset(args.dataset)
    log = read_log(args.log, dataset)
    pairs = pairs_from_log(log.entries, dataset)
    if args.folds > 0:
        report = cross_validate(config, pairs, folds=args.folds, seed=config.seed)
        print(
            f"{args.folds}-fold validation: macro avg {_x100(report.macro_avg)}, "
            f"micro avg {_x100(report.micro_avg)} (x100)"
        )
    model = fit(config, pairs)
    save_model(model, args.out)
    print(f"wrote {config.kind} model ({len(pairs)} training pairs) to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    doc = _load_config(args.config)
    config = _build(
        TrainConfig,
        _section(doc, "train"),
        {
            "objective": args.objective,
            "batch_size": args.batch_size,
            "optimizer": args.optimizer,
            "learning_rate": args.learning_rate,
            "max_epochs": args.max_epochs,
            "eval_every": args.eval_every,
            "seed": args.seed,
        },
    )
    dataset = read_dataset(args.dataset)
    log = read_log(args.log, dataset)
    initial = load_policy(args.policy)
    model = load_model(args.model) if args.model else None
    trajectory = train(log.entries, dataset, initial, config, model)
    save_policy(trajectory.final_policy, args.out)
    if args.telemetry:
        with open(args.telemetry, "w", encoding="utf-8") as fh:
            for cp in trajectory.checkpoints:
                fh.write(canonical_json(cp.as_record()))
                fh.write("\n")
    best = trajectory.best
    print(
        f"trained {config.objective} for {trajectory.checkpoints[-1].step} steps; "
        f"best step {best.step} with validation {_x100(best.validation_bleu)} (x100)"
    )
    print(f"wrote policy to {args.out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    doc = _load_config(args.config)
    overrides = {
        "folds": args.folds,
        "eval_log_size": args.log_size,
        "split": args.split,
        "seed": args.seed,
    }
    if args.estimators is not None:
        overrides["estimators"] = tuple(args.estimators.split(","))
    config = _build(EvalConfig, _section(doc, "eval"), overrides)
    dataset = read_dataset(args.dataset)
    target = load_policy(args.target_policy)
    logging_pol = load_policy(args.logging_policy)
    model = load_model(args.model) if args.model else None
    report = evaluate_policy(target, logging_pol, dataset, model, config)
    records, text = render_report(report)
    print(text, end="")
    if args.out:
        write_json(records, args.out)
        print(f"wrote report to {args.out}")
    return EXIT_OK


def _onebest_pairs(policy: GibbsPolicy, instances) -> list[tuple[tuple[str, ...], tuple[str, ...]]]:
    pairs = []
    for inst in instances:
        if inst.reference is None:
            raise ValidationError(f"instance {inst.id} has no reference")
        pairs.append((inst.candidates[policy.argmax(inst)].tokens, inst.reference))
    return pairs


def cmd_report(args) -> int:
    doc = _load_config(args.config)
    sec = _section(doc, "report")
    split = args.split if args.split is not None else sec.get("split", "test")
    iterations = args.iterations if args.iterations is not None else sec.get("iterations", 10000)
    seed = args.seed if args.seed is not None else sec.get("seed", 0)
    systems: list[tuple[str, str]] = []
    if args.system:
        for spec_str in args.system:
            name, sep, path = spec_str.partition("=")
            if not sep:
                name, path = os.path.splitext(os.path.basename(spec_str))[0], spec_str
            systems.append((name, path))
    else:
        for name, path in sec.get("systems", {}).items():
            systems.append((str(name), str(path)))
    if not systems:
        raise UsageError("report needs at least one --system NAME=PATH")
    if iterations < 1:
        raise UsageError("--iterations must be >= 1")

    dataset = read_dataset(args.dataset)
    instances = sorted(dataset.split(split), key=lambda inst: inst.id)
    if not instances:
        raise ValidationError(f"dataset has no instances in split {split!r}")
    baseline = load_policy(args.baseline)
    base_pairs = _onebest_pairs(baseline, instances)
    references = [ref for _, ref in base_pairs]
    cfg = BleuConfig(smoothing="none")
    base_bleu = corpus_bleu(base_pairs, cfg)

    rows = [{"system": "baseline", "bleu": base_bleu, "delta": None, "p_value": None}]
    compared = list(systems)
    if args.oracle:
        compared.append(("oracle", args.oracle))
    seeds = np.random.SeedSequence(seed).spawn(len(compared))
    for (name, path), seq in zip(compared, seeds):
        pol = load_policy(path)
        sys_pairs = _onebest_pairs(pol, instances)
        bleu = corpus_bleu(sys_pairs, cfg)
        result = ar_test(
            [hyp for hyp, _ in sys_pairs],
            [hyp for hyp, _ in base_pairs],
            references,
            iterations=iterations,
            rng=np.random.default_rng(seq),
            config=cfg,
        )
        rows.append(
            {"system": name, "bleu": bleu, "delta": bleu - base_bleu, "p_value": result.p_value}
        )

    width = max(8, max(len(str(r["system"])) for r in rows))
    print(f"{'system':<{width}}  {'BLEU':>7}  {'dBLEU':>7}  {'p-value':>8}")
    for r in rows:
        delta = "-" if r["delta"] is None else f"{round_half_away(r['delta'] * 100.0):+.2f}"
        p = "-" if r["p_value"] is None else f"{r['p_value']:.4f}"
        print(f"{str(r['system']):<{width}}  {_x100(r['bleu']):>7}  {delta:>7}  {p:>8}")
    if args.out:
        write_json({"split": split, "iterations": iterations, "systems": rows}, args.out)
        print(f"wrote report to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cfbandit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-task", help="generate a synthetic task")
    p.add_argument("--config", help="JSON config file (section: task)")
    p.add_argument("--seed", type=int, help="override the task seed")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gen_task)

    p = sub.add_parser("log", help="simulate logging with a policy")
    p.add_argument("--config", help="JSON config file (section: log)")
    p.add_argument("--dataset", required=True)
    p.add_argument("--policy", required=True, help="logging policy checkpoint")
    p.add_argument("--mode", choices=["deterministic", "stochastic"])
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="log file to write")
    p.set_defaults(func=cmd_log)

    p = sub.add_parser("train-reward", help="fit a reward regression model on a log")
    p.add_argument("--config", help="JSON config file (section: reward_model)")
    p.add_argument("--dataset", required=True)
    p.add_argument("--log", required=True)
    p.add_argument("--kind", choices=["forest", "ridge"])
    p.add_argument("--trees", type=int)
    p.add_argument("--max-depth", type=int, dest="max_depth")
    p.add_argument("--min-leaf", type=int, dest="min_leaf")
    p.add_argument("--features-per-split", type=float, dest="features_per_split")
    p.add_argument("--lambda", type=float, dest="lambda")
    p.add_argument("--seed", type=int)
    p.add_argument("--folds", type=int, default=5, help="cross-validation folds (0 disables)")
    p.add_argument("--out", required=True, help="model checkpoint to write")
    p.set_defaults(func=cmd_train_reward)

    p = sub.add_parser("train", help="optimize a counterfactual objective on a log")
    p.add_argument("--config", help="JSON config file (section: train)")
    p.add_argument("--dataset", required=True)
    p.add_argument("--log", required=True)
    p.add_argument("--policy", required=True, help="initial policy checkpoint")
    p.add_argument("--model", help="reward model checkpoint (dc/chat_dc)")
    p.add_argument("--objective", choices=["dpm", "dpm_r", "dc", "chat_dc", "ips"])
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--optimizer", choices=["sgd", "adadelta"])
    p.add_argument("--learning-rate", type=float, dest="learning_rate")
    p.add_argument("--max-epochs", type=int, dest="max_epochs")
    p.add_argument("--eval-every", type=int, dest="eval_every")
    p.add_argument("--seed", type=int)
    p.add_argument("--telemetry", help="write per-checkpoint records here (JSON lines)")
    p.add_argument("--out", required=True, help="trained policy checkpoint to write")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="folded off-policy evaluation of a target policy")
    p.add_argument("--config", help="JSON config file (section: eval)")
    p.add_argument("--dataset", required=True)
    p.add_argument("--target-policy", required=True, dest="target_policy")
    p.add_argument("--logging-policy", required=True, dest="logging_policy")
    p.add_argument("--model", help="reward model checkpoint")
    p.add_argument("--folds", type=int)
    p.add_argument("--log-size", type=int, dest="log_size")
    p.add_argument("--estimators", help="comma-separated kinds (default dpm_r,dc,chat_dc)")
    p.add_argument("--split")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="write the structured report here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="corpus scores and significance vs a baseline")
    p.add_argument("--config", help="JSON config file (section: report)")
    p.add_argument("--dataset", required=True)
    p.add_argument("--baseline", required=True, help="baseline policy checkpoint")
    p.add_argument(
        "--system",
        action="append",
        metavar="NAME=PATH",
        help="system policy checkpoint (repeatable)",
    )
    p.add_argument("--oracle", help="oracle policy checkpoint (optional row)")
    p.add_argument("--split")
    p.add_argument("--iterations", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="write the structured report here")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DegenerateBatchError, TrainingAbort, FloatingPointError, OverflowError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValidationError, ParseError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
