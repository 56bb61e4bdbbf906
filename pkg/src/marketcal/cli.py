"""Command-line surface: rollout generation, feedback extraction, separability
study, calibration training, and stylized-fact exports.

Commands are thin shells over the library; given the same config and seed they
produce byte-identical artifacts. Exit codes: 0 ok, 2 config error, 3 runtime
error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import (
    ExperimentConfig,
    apply_overrides,
    config_from_dict,
    load_config,
    save_config,
)
from .errors import ConfigError, MarketCalError
from .exp_agent import ExpAction
from .exports import (
    write_envelope_csv,
    write_facts_csv,
    write_metric_csv,
)
from .feedback import (
    collect_feedbacks,
    fit_propensity,
    write_feedback_csv,
    read_feedback_csv,
)
from .metric import bootstrap_envelope, d_metric
from .rollout import Rollout, load_rollout, run_rollout, save_rollout
from .trainer import train
from .world_policy import load_policy, save_policy

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _load_cfg(args) -> ExperimentConfig:
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            data = json.load(fh)
    else:
        data = {}
    if args.set:
        apply_overrides(data, args.set)
    return config_from_dict(data)


def _rollout_paths(source: str) -> list[Path]:
    path = Path(source)
    if path.is_dir():
        manifest = path / "manifest.json"
        if manifest.exists():
            files = json.loads(manifest.read_text())["files"]
            return [path / f for f in files]
        return sorted(path.glob("rollout_*.jsonl"))
    return [path]


def _load_rollouts(sources: list[str]) -> list[Rollout]:
    rollouts = []
    for source in sources:
        for path in _rollout_paths(source):
            rollouts.append(load_rollout(path))
    return rollouts


def _policy_for_world(cfg: ExperimentConfig, policy_path: str | None):
    if policy_path:
        return load_policy(policy_path)
    return cfg.new_policy()


def _generate_rollouts(cfg: ExperimentConfig, env_name: str, count: int, salt: str,
                       policy=None) -> list[Rollout]:
    if env_name == "real":
        env = cfg.real_env()
    else:
        env = cfg.world_env(policy if policy is not None else cfg.new_policy())
    pi = cfg.exp_policy_obj()
    return [
        run_rollout(env, pi, cfg.scenario, cfg.market,
                    cfg.derive_seed("rollouts", salt, i))
        for i in range(count)
    ]


def _feedback_values(cfg: ExperimentConfig, rollouts: list[Rollout]):
    pi = cfg.exp_policy_obj()
    propensity = pi.exact_propensity if cfg.feedback.estimator == "ipw" else None
    return collect_feedbacks(rollouts, cfg.feedback, propensity)


# -- commands -------------------------------------------------------------------------

def cmd_rollouts(args) -> int:
    cfg = _load_cfg(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    policy = _policy_for_world(cfg, args.policy) if args.env == "world" else None
    files, seeds = [], []
    for i in range(args.count):
        seed = cfg.derive_seed("rollouts", args.env, i)
        if args.env == "real":
            env = cfg.real_env()
        else:
            env = cfg.world_env(policy)
        rollout = run_rollout(env, cfg.exp_policy_obj(), cfg.scenario, cfg.market, seed)
        name = f"rollout_{i:04d}.jsonl"
        save_rollout(out / name, rollout)
        files.append(name)
        seeds.append(seed)
    manifest = {
        "schema_version": 1,
        "env": args.env,
        "count": args.count,
        "files": files,
        "seeds": seeds,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    save_config(out / "config.json", cfg)
    print(f"wrote {args.count} {args.env} rollouts to {out}")
    return EXIT_OK


def cmd_feedback(args) -> int:
    cfg = _load_cfg(args)
    rollouts = _load_rollouts(args.rollouts)
    pi = cfg.exp_policy_obj()
    if args.fit_propensity:
        history = [(s.s_prev, s.action is ExpAction.MARKET)
                   for r in rollouts for s in r.steps]
        propensity = fit_propensity(history)
    else:
        propensity = pi.exact_propensity if cfg.feedback.estimator == "ipw" else None
    fs = collect_feedbacks(rollouts, cfg.feedback, propensity)
    write_feedback_csv(args.out, fs, seed=cfg.master_seed)
    print(f"{len(fs.samples)} feedback samples ({fs.n_dropped} rollouts dropped) -> {args.out}")
    return EXIT_OK


def cmd_separability(args) -> int:
    cfg = _load_cfg(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pool = args.pool or cfg.envelope.pool
    reps = args.reps or cfg.envelope.reps
    ns = tuple(n for n in cfg.envelope.ns if n <= pool)

    pools = {
        "real_a": _generate_rollouts(cfg, "real", pool, "sep-real-a"),
        "real_b": _generate_rollouts(cfg, "real", pool, "sep-real-b"),
        "world": _generate_rollouts(cfg, "world", pool, "sep-world"),
    }
    values = {}
    for name, rollouts in pools.items():
        fs = _feedback_values(cfg, rollouts)
        values[name] = fs.values()
        write_feedback_csv(out / f"feedback_{name}.csv", fs, seed=cfg.master_seed)
        print(f"pool {name}: {len(fs.samples)} samples, {fs.n_dropped} dropped")

    kernel = cfg.metric.kernel
    d_hat = cfg.metric.d_hat
    envelope_seed = cfg.derive_seed("sep-envelope")
    rows = {
        "world_vs_real": bootstrap_envelope(
            values["world"], values["real_a"], ns=ns, reps=reps,
            d_hat=d_hat, kernel=kernel, seed=envelope_seed),
        "real_vs_real": bootstrap_envelope(
            values["real_b"], values["real_a"], ns=ns, reps=reps,
            d_hat=d_hat, kernel=kernel, seed=envelope_seed),
    }
    write_envelope_csv(out / "envelope.csv", rows, d_hat, cfg.feedback.label(),
                       seed=cfg.master_seed)
    reports = []
    for comparison, (a, b) in {
        "world_vs_real": (values["world"], values["real_a"]),
        "real_vs_real": (values["real_b"], values["real_a"]),
    }.items():
        rep = d_metric(a, b, d_hat, kernel)
        reports.append({
            "d_hat": d_hat, "feedback_kind": cfg.feedback.label(),
            "comparison": comparison, "value": rep.value,
            "n_world": rep.n_world, "n_real": rep.n_real,
        })
    write_metric_csv(out / "metric.csv", reports, seed=cfg.master_seed)
    print(f"envelopes over N={list(ns)} ({reps} reps) -> {out / 'envelope.csv'}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    real_values = np.array([s.value for s in read_feedback_csv(args.real_feedback)])
    if len(real_values) == 0:
        raise ConfigError("real feedback collection is empty")
    policy = _policy_for_world(cfg, args.policy)
    ctx = cfg.train_context()
    trained, rows = train(policy, ctx, cfg.train, real_values, out_dir=out)
    save_policy(out / "policy_final.bin", trained, seed=cfg.train.seed)

    # one stylized-fact table per checkpointed epoch, rebuilt from the checkpoints
    checkpoints = sorted(out.glob("policy_iter_*.bin"))
    facts_files = []
    for ckpt in checkpoints:
        iteration = int(ckpt.stem.rsplit("_", 1)[1])
        epoch = iteration // max(cfg.train.eval_every, 1)
        ckpt_policy = load_policy(ckpt)
        env = cfg.world_env(ckpt_policy)
        pi = cfg.exp_policy_obj()
        rollouts = [
            run_rollout(env, pi, cfg.scenario, cfg.market,
                        cfg.derive_seed("facts", iteration, trial))
            for trial in range(cfg.facts_trials)
        ]
        name = f"facts_epoch_{epoch:02d}.csv"
        write_facts_csv(out / name, {epoch: rollouts}, seed=cfg.master_seed)
        facts_files.append({"iteration": iteration, "epoch": epoch,
                            "checkpoint": ckpt.name, "facts": name})
    (out / "train_manifest.json").write_text(
        json.dumps({"schema_version": 1, "exports": facts_files}, indent=2, sort_keys=True)
        + "\n"
    )
    evals = [(r.iteration, r.d_f) for r in rows if r.d_f is not None]
    if evals:
        first, last = evals[0], evals[-1]
        print(f"metric: iteration {first[0]} -> {first[1]:.6g}, "
              f"iteration {last[0]} -> {last[1]:.6g}")
    print(f"trained {cfg.train.iterations} iterations -> {out}")
    return EXIT_OK


def cmd_facts_export(args) -> int:
    cfg = _load_cfg(args)
    rollouts = _load_rollouts(args.rollouts)
    write_facts_csv(args.out, {0: rollouts}, seed=cfg.master_seed)
    print(f"exported stylized facts for {len(rollouts)} rollouts -> {args.out}")
    return EXIT_OK


def cmd_init_config(args) -> int:
    cfg = _load_cfg(args)
    save_config(args.out, cfg)
    print(f"wrote config -> {args.out}")
    return EXIT_OK


# -- argument parsing ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="marketcal",
        description="Order-book market simulation, feedback metrics, calibration.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="experiment config JSON (defaults when omitted)")
        p.add_argument("--set", action="append", default=[],
                       metavar="KEY=VALUE", help="override a config entry (dotted path)")

    p = sub.add_parser("rollouts", help="run seeded rollouts and log them")
    common(p)
    p.add_argument("--env", choices=["real", "world"], required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--policy", help="world policy file (fresh one when omitted)")
    p.set_defaults(func=cmd_rollouts)

    p = sub.add_parser("feedback", help="compute per-rollout feedback into a CSV")
    common(p)
    p.add_argument("--rollouts", nargs="+", required=True,
                   help="rollout files or directories with a manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--fit-propensity", action="store_true",
                   help="fit the propensity model from the logs instead of the "
                        "exact policy value")
    p.set_defaults(func=cmd_feedback)

    p = sub.add_parser("separability", help="bootstrap envelopes: world-vs-real "
                                            "and real-vs-real")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--pool", type=int, help="rollouts per pool")
    p.add_argument("--reps", type=int, help="bootstrap repetitions per N")
    p.set_defaults(func=cmd_separability)

    p = sub.add_parser("train", help="calibrate the world policy to real feedback")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--real-feedback", required=True, help="stored feedback CSV")
    p.add_argument("--policy", help="initial policy file")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("facts-export", help="stylized-fact time series from rollout logs")
    common(p)
    p.add_argument("--rollouts", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_facts_export)

    p = sub.add_parser("init-config", help="write the default (or overridden) config")
    common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_init_config)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MarketCalError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
