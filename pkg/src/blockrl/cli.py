"""Command-line entry point: train / eval / compare / gradcheck / oracle.

Exit codes: 0 success, 1 configuration error, 2 runtime abort (divergence or
failed verification).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, apply_text, default_config, from_text
from .envs import ENV_NAMES
from .checkpoint import CheckpointError, load_checkpoint
from .gradcheck import run_gradient_checks
from .oracle import default_oracle, generative_consistency, inference_stationarity
from .rng import RngStreams
from .stats import compare_groups
from .train import NanDivergenceError, Trainer, evaluate, resume_from

AGENT_NAMES = {
    "proposed": ("proposed", None),
    "sac": ("sac_raw", None),
    "lstm": ("lstm", None),
    "attention-only": ("attention_only", "attention_only"),
    "blockwise-rnn-only": ("proposed", "blockwise_rnn_only"),
}


def _build_config(args) -> RunConfig:
    agent_mode, model_mode = AGENT_NAMES[args.agent]
    cfg = default_config(args.preset, args.env, agent_mode, seed=args.seed)
    if model_mode is not None:
        cfg.model.mode = model_mode
    if args.config:
        path = Path(args.config)
        apply_text(cfg, path.read_text(), source=str(path))
    if args.seed is not None:
        cfg.seed = args.seed
    cfg.validate()
    return cfg


def cmd_train(args) -> int:
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds \
        else [args.seed]
    multi = len(seeds) > 1
    for seed in seeds:
        args.seed = seed
        cfg = _build_config(args)
        out = Path(args.out) / f"seed_{seed}" if multi else Path(args.out)
        trainer = Trainer(cfg, out)
        summary = trainer.run()
        print(f"seed {seed}: {summary['episodes']} episodes, "
              f"avg_return_100 = {summary['avg_return_100']:.3f}, "
              f"success rate = {summary['success_rate']:.3f}")
    return 0


def cmd_resume(args) -> int:
    trainer = resume_from(args.checkpoint, args.out)
    summary = trainer.run(resume=True)
    print(f"resumed: {summary['episodes']} episodes, "
          f"avg_return_100 = {summary['avg_return_100']:.3f}")
    return 0


def cmd_eval(args) -> int:
    config_text, tensors, blobs = load_checkpoint(args.checkpoint)
    cfg = from_text(config_text)
    if args.env is not None and args.env != cfg.env.name:
        raise ConfigError(
            f"checkpoint was trained on {cfg.env.name!r}, not {args.env!r}")
    trainer = Trainer(cfg, Path(args.out or "eval_out"))
    trainer._restore(tensors, blobs)
    result = evaluate(cfg, trainer.agent, args.episodes,
                      seed=args.seed if args.seed is not None else cfg.seed,
                      deterministic=args.deterministic)
    print(f"mean return over {result['episodes']} episodes: "
          f"{result['mean_return']:.3f} (std {result['std_return']:.3f}), "
          f"success rate {result['success_rate']:.3f}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "eval.json", "w") as f:
            json.dump(result, f, indent=2, sort_keys=True)
    return 0


def _final_metric(run_dir: Path, metric: str) -> list[float]:
    """Per-seed final metric values found under one run directory."""
    values = []
    if metric == "avg_return_100":
        for csv_path in sorted(run_dir.rglob("train.csv")):
            last = None
            with open(csv_path, newline="") as f:
                for row in csv.DictReader(f):
                    if row["kind"] == "episode":
                        last = float(row["avg_return_100"])
            if last is not None:
                values.append(last)
    else:
        for json_path in sorted(run_dir.rglob("eval.json")):
            with open(json_path) as f:
                data = json.load(f)
            if metric not in data:
                raise ConfigError(f"{json_path} has no metric {metric!r}")
            values.append(float(data[metric]))
    if len(values) < 2:
        raise ConfigError(f"{run_dir}: need >= 2 seeds with metric "
                          f"{metric!r}, found {len(values)}")
    return values


def cmd_compare(args) -> int:
    groups = {d: np.array(_final_metric(Path(d), args.metric))
              for d in args.run_dirs}
    if len(groups) < 2:
        raise ConfigError("compare needs at least two distinct run "
                          "directories")
    rows = compare_groups(groups)
    print(f"metric: {args.metric}")
    for g, v in groups.items():
        print(f"  {g}: n={v.size} mean={v.mean():.4f}")
    for r in rows:
        print(f"  {r['a']} > {r['b']}: p = {r['p_greater']:.4f} "
              f"({r['confidence_pct']:.1f}% confidence)")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "compare.csv", "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=list(rows[0]),
                                    lineterminator="\n")
            writer.writeheader()
            writer.writerows(rows)
    return 0


def cmd_gradcheck(args) -> int:
    results = run_gradient_checks(seed=args.seed or 0)
    worst = max(results.values())
    for name, err in results.items():
        status = "ok" if err < 1e-4 else "FAIL"
        print(f"  {name}: max relative error {err:.3e} [{status}]")
    print(f"worst: {worst:.3e} (threshold 1e-4)")
    return 0 if worst < 1e-4 else 2


def cmd_oracle(args) -> int:
    oracle, obs = default_oracle()
    ks = [10, 100, 1000, 10000]
    medians = generative_consistency(oracle, obs, ks, n_seeds=20)
    print("generative-gradient consistency (median relative error):")
    for k in ks:
        print(f"  K = {k:>6}: {medians[k]:.4f}")
    monotone = all(medians[a] > medians[b] for a, b in zip(ks, ks[1:]))
    ok_gen = monotone and medians[10000] < 0.02
    rng = RngStreams(args.seed or 0).get("oracle")
    mean_norm, se_norm = inference_stationarity(oracle, obs, n_batches=10000,
                                                K_sp=16, rng=rng)
    ok_inf = mean_norm < 3.0 * se_norm
    print(f"inference stationarity: |mean estimate| = {mean_norm:.5f}, "
          f"3 x |standard error| = {3 * se_norm:.5f} "
          f"[{'ok' if ok_inf else 'FAIL'}]")
    print(f"consistency: monotone={monotone}, "
          f"final error {medians[10000]:.4f} < 0.02 "
          f"[{'ok' if ok_gen else 'FAIL'}]")
    return 0 if (ok_gen and ok_inf) else 2


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="blockrl",
        description="Blockwise sequential model learning with off-policy RL")
    sub = p.add_subparsers(dest="command", required=True)

    tr = sub.add_parser("train", help="run the training loop")
    tr.add_argument("--config", help="path to a key=value override file")
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--seeds", help="comma-separated seed fan-out "
                                    "(sequential runs into seed_N subdirs)")
    tr.add_argument("--out", required=True)
    tr.add_argument("--agent", choices=sorted(AGENT_NAMES), default="proposed")
    tr.add_argument("--env", choices=ENV_NAMES, default="pendulum-missing")
    tr.add_argument("--preset", choices=("desk", "full"), default="desk")
    tr.set_defaults(func=cmd_train)

    rs = sub.add_parser("resume", help="continue training from a checkpoint")
    rs.add_argument("checkpoint")
    rs.add_argument("--out", required=True)
    rs.set_defaults(func=cmd_resume)

    ev = sub.add_parser("eval", help="evaluate a trained checkpoint")
    ev.add_argument("checkpoint")
    ev.add_argument("--episodes", type=int, default=100)
    ev.add_argument("--deterministic", action="store_true")
    ev.add_argument("--seed", type=int)
    ev.add_argument("--env", choices=ENV_NAMES,
                    help="sanity check against the checkpoint's environment")
    ev.add_argument("--out")
    ev.set_defaults(func=cmd_eval)

    cp = sub.add_parser("compare", help="Welch's t-test across run groups")
    cp.add_argument("run_dirs", nargs="+")
    cp.add_argument("--metric", default="avg_return_100",
                    choices=("avg_return_100", "mean_return", "success_rate"))
    cp.add_argument("--out")
    cp.set_defaults(func=cmd_compare)

    gc = sub.add_parser("gradcheck",
                        help="finite-difference checks for all networks")
    gc.add_argument("--seed", type=int, default=0)
    gc.set_defaults(func=cmd_gradcheck)

    orc = sub.add_parser("oracle",
                         help="closed-form verification of the estimators")
    orc.add_argument("--seed", type=int, default=0)
    orc.set_defaults(func=cmd_oracle)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, CheckpointError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except NanDivergenceError as e:
        print(f"aborted: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
