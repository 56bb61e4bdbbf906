"""Policy-gradient calibration of the world policy against real feedback.

Each iteration performs one on-policy rollout, captures the prefix at the last
policy decision of each of the first ``t0`` steps, samples ``b`` candidate
actions per prefix, values each candidate by branching ``n_mc`` completions and
comparing their feedback distribution to the stored real-side feedback, and
then descends the score-function gradient

    theta <- theta - r * sum_t (1/b) * sum_k Q[t,k] * grad log p(A[t,k] | S_t).

The truncation depth ``t0`` caps how many decision points are penalized per
iteration, so per-iteration cost is linear in each of n_mc, b, and t0.
"""
from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, NaNGradientError
from .feedback import FeedbackSpec, collect_feedbacks
from .metric import KernelSpec, d_metric
from .rollout import (
    MarketConfig,
    RolloutPrefix,
    ScenarioConfig,
    WorldEnv,
    mc_finish,
    run_rollout,
    run_rollout_with_prefixes,
)
from .world_policy import WorldAction, WorldPolicy, load_policy, save_policy

TRACE_SCHEMA_VERSION = 1


@dataclass
class TrainConfig:
    n_mc: int = 5  # completions per sampled action
    n_real: int = 100  # size of the stored real feedback collection
    batch_actions: int = 3  # actions sampled per decision point (b)
    t0: int = 5  # gradient truncation depth
    lr: float = 1e-9
    lr_halving_every: int = 10
    iterations: int = 100
    d_hat: str = "mmd"
    kernel: KernelSpec = field(default_factory=KernelSpec)
    seed: int = 0
    eval_every: int = 10
    eval_rollouts: int = 30
    use_baseline: bool = False

    def validate(self, horizon: int) -> None:
        if not 1 <= self.t0 <= horizon:
            raise ConfigError(f"t0 must lie in [1, horizon={horizon}]")
        if self.n_mc < 2 and self.d_hat in ("mmd", "ed"):
            raise ConfigError("mmd/ed value estimates need n_mc >= 2")
        if self.batch_actions < 1:
            raise ConfigError("batch_actions must be >= 1")
        if self.lr < 0 or self.iterations < 0:
            raise ConfigError("lr and iterations must be nonnegative")


def lr_at(cfg: TrainConfig, iteration: int) -> float:
    """Learning rate in effect for (1-based) iteration: halves every block."""
    block = (iteration - 1) // cfg.lr_halving_every
    return cfg.lr * 0.5**block


@dataclass
class TrainContext:
    """Everything needed to run episodes, minus the trainable policy itself."""

    pi: object  # exp policy
    scenario: ScenarioConfig
    market: MarketConfig
    noise_floor: object | None
    wakeups_per_step: int
    feedback: FeedbackSpec
    propensity: object | None = None

    def world_env(self, policy: WorldPolicy) -> WorldEnv:
        return WorldEnv(policy=policy, noise_floor=self.noise_floor,
                        wakeups_per_step=self.wakeups_per_step)


@dataclass
class TraceRow:
    iteration: int
    d_f: float | None
    grad_norm: float
    lr: float
    seconds: float
    n_skipped: int = 0


def _derive_seed(*parts) -> int:
    return int(np.random.SeedSequence(tuple(int(p) for p in parts)).generate_state(1)[0])


def _min_samples(d_hat: str) -> int:
    return 1 if d_hat == "emd" else 2


def q_value(
    prefix: RolloutPrefix,
    action: WorldAction,
    policy: WorldPolicy,
    real_values: np.ndarray,
    cfg: TrainConfig,
    ctx: TrainContext,
    seed: int,
) -> float | None:
    """Distance between branch-completion feedbacks and the real collection.

    Returns None when too few branch feedbacks survive (every completion was
    dropped for lack of treated steps); the caller skips and counts the term.
    """
    branches = mc_finish(prefix, action, policy, cfg.n_mc, base_seed=seed)
    fs = collect_feedbacks(branches, ctx.feedback, ctx.propensity)
    if len(fs.samples) < _min_samples(cfg.d_hat):
        return None
    return d_metric(fs.values(), real_values, cfg.d_hat, cfg.kernel).value


def score_function_gradient(
    policy: WorldPolicy,
    state,
    sampled: list[tuple[WorldAction, float]],
    batch_actions: int,
    baseline: float = 0.0,
) -> np.ndarray:
    """(1/b) * sum_k (Q_k - baseline) * grad log p(A_k | S) for one decision."""
    grad = np.zeros(policy.n_params)
    for action, q in sampled:
        grad += (q - baseline) * policy.grad_log_prob(state, action)
    return grad / batch_actions


def grad_step(
    policy: WorldPolicy,
    ctx: TrainContext,
    cfg: TrainConfig,
    real_values: np.ndarray,
    iteration: int,
) -> TraceRow:
    """One training iteration; mutates the policy parameters in place."""
    start = time.perf_counter()
    t0 = min(cfg.t0, ctx.scenario.horizon)
    main_seed = _derive_seed(cfg.seed, iteration, 0)
    env = ctx.world_env(policy)
    _, prefixes = run_rollout_with_prefixes(
        env, ctx.pi, ctx.scenario, ctx.market, main_seed,
        capture_ts=list(range(1, t0 + 1)),
    )
    action_rng = np.random.default_rng(_derive_seed(cfg.seed, iteration, 1))
    grad = np.zeros(policy.n_params)
    skipped = 0
    for t in sorted(prefixes):
        prefix = prefixes[t]
        state = prefix.pending_state
        sampled: list[tuple[WorldAction, float]] = []
        for k in range(cfg.batch_actions):
            action = policy.sample(state, action_rng)
            q = q_value(prefix, action, policy, real_values, cfg, ctx,
                        seed=_derive_seed(cfg.seed, iteration, 2, t, k))
            if q is None:
                skipped += 1
                continue
            sampled.append((action, q))
        if not sampled:
            continue
        baseline = float(np.mean([q for _, q in sampled])) if cfg.use_baseline else 0.0
        grad += score_function_gradient(policy, state, sampled, cfg.batch_actions, baseline)
    if not np.isfinite(grad).all():
        bad = int(np.flatnonzero(~np.isfinite(grad))[0])
        raise NaNGradientError(
            f"non-finite gradient at iteration {iteration} (component {bad})"
        )
    rate = lr_at(cfg, iteration)
    policy.theta = policy.theta - rate * grad
    return TraceRow(
        iteration=iteration,
        d_f=None,
        grad_norm=float(np.linalg.norm(grad)),
        lr=rate,
        seconds=time.perf_counter() - start,
        n_skipped=skipped,
    )


def evaluate_df(
    policy: WorldPolicy,
    ctx: TrainContext,
    cfg: TrainConfig,
    real_values: np.ndarray,
    iteration: int,
) -> float | None:
    """Metric on fresh held-out rollouts against the fixed real collection."""
    env = ctx.world_env(policy)
    rollouts = [
        run_rollout(env, ctx.pi, ctx.scenario, ctx.market,
                    _derive_seed(cfg.seed, 9_999_991, iteration, i))
        for i in range(cfg.eval_rollouts)
    ]
    fs = collect_feedbacks(rollouts, ctx.feedback, ctx.propensity)
    if len(fs.samples) < _min_samples(cfg.d_hat):
        return None
    return d_metric(fs.values(), real_values, cfg.d_hat, cfg.kernel).value


# -- trace / checkpoint persistence -------------------------------------------------

TRACE_FIELDS = ["iteration", "d_f", "grad_norm", "lr", "seconds", "n_skipped"]


def write_trace_csv(path, rows: list[TraceRow], seed: int) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"#schema-version={TRACE_SCHEMA_VERSION}\n")
        fh.write(f"#seed={seed}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_FIELDS)
        for row in rows:
            writer.writerow([
                row.iteration,
                "" if row.d_f is None else repr(row.d_f),
                repr(row.grad_norm),
                repr(row.lr),
                repr(row.seconds),
                row.n_skipped,
            ])


def read_trace_csv(path) -> list[TraceRow]:
    with open(path, newline="", encoding="utf-8") as fh:
        lines = [line for line in fh if not line.startswith("#")]
    rows = []
    for rec in csv.DictReader(lines):
        rows.append(TraceRow(
            iteration=int(rec["iteration"]),
            d_f=None if rec["d_f"] == "" else float(rec["d_f"]),
            grad_norm=float(rec["grad_norm"]),
            lr=float(rec["lr"]),
            seconds=float(rec["seconds"]),
            n_skipped=int(rec["n_skipped"]),
        ))
    return rows


def _checkpoint_path(out_dir: Path, iteration: int) -> Path:
    return out_dir / f"policy_iter_{iteration:04d}.bin"


def _save_checkpoint(out_dir: Path, policy: WorldPolicy, cfg: TrainConfig,
                     rows: list[TraceRow], iteration: int) -> None:
    save_policy(_checkpoint_path(out_dir, iteration), policy, seed=cfg.seed)
    write_trace_csv(out_dir / "trace.csv", rows, seed=cfg.seed)
    cfg_dict = asdict(cfg)
    cfg_dict["kernel"] = {"kind": cfg.kernel.kind, "bandwidth": cfg.kernel.bandwidth}
    (out_dir / "train_config.json").write_text(json.dumps(cfg_dict, indent=2, sort_keys=True))


def _latest_checkpoint(out_dir: Path) -> int | None:
    if not out_dir.exists():
        return None
    iters = sorted(
        int(p.stem.rsplit("_", 1)[1]) for p in out_dir.glob("policy_iter_*.bin")
    )
    return iters[-1] if iters else None


def train(
    policy: WorldPolicy,
    ctx: TrainContext,
    cfg: TrainConfig,
    real_values: np.ndarray,
    out_dir=None,
    resume: bool = True,
) -> tuple[WorldPolicy, list[TraceRow]]:
    """Full run: halving schedule, periodic evaluation, durable checkpoints.

    With an ``out_dir`` present from an interrupted run, training resumes from
    the latest checkpoint and replays only the missing iterations.
    """
    cfg.validate(ctx.scenario.horizon)
    real_values = np.asarray(real_values, dtype=float)
    rows: list[TraceRow] = []
    start_iter = 1
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        last = _latest_checkpoint(out_dir) if resume else None
        if last is not None:
            policy = load_policy(_checkpoint_path(out_dir, last))
            rows = [r for r in read_trace_csv(out_dir / "trace.csv") if r.iteration <= last]
            start_iter = last + 1

    if cfg.iterations == 0:
        return policy, rows

    if start_iter == 1 and not rows:
        d0 = evaluate_df(policy, ctx, cfg, real_values, iteration=0)
        rows.append(TraceRow(iteration=0, d_f=d0, grad_norm=0.0,
                             lr=lr_at(cfg, 1), seconds=0.0))
        if out_dir is not None:
            _save_checkpoint(out_dir, policy, cfg, rows, 0)

    for iteration in range(start_iter, cfg.iterations + 1):
        row = grad_step(policy, ctx, cfg, real_values, iteration)
        if iteration % cfg.eval_every == 0 or iteration == cfg.iterations:
            row.d_f = evaluate_df(policy, ctx, cfg, real_values, iteration)
        rows.append(row)
        if out_dir is not None and (
            iteration % cfg.eval_every == 0 or iteration == cfg.iterations
        ):
            _save_checkpoint(out_dir, policy, cfg, rows, iteration)
    return policy, rows


def grid_search(
    init_policy: WorldPolicy,
    ctx: TrainContext,
    cfg: TrainConfig,
    real_values: np.ndarray,
    t0_grid=(3, 4, 5),
    b_grid=(3, 5),
    out_dir=None,
) -> tuple[tuple[int, int], dict[tuple[int, int], float]]:
    """Train one fresh copy per (t0, b) cell and pick the smallest final metric."""
    results: dict[tuple[int, int], float] = {}
    for t0 in t0_grid:
        for b in b_grid:
            cell_cfg = TrainConfig(**{**asdict(cfg), "kernel": cfg.kernel,
                                      "t0": t0, "batch_actions": b})
            cell_dir = None
            if out_dir is not None:
                cell_dir = Path(out_dir) / f"cell_t0_{t0}_b_{b}"
            trained, rows = train(init_policy.clone(), ctx, cell_cfg, real_values,
                                  out_dir=cell_dir)
            finals = [r.d_f for r in rows if r.d_f is not None]
            results[(t0, b)] = finals[-1] if finals else math.inf
    best = min(results, key=lambda key: results[key])
    return best, results
