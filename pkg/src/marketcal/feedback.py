"""Per-rollout feedback scalars: episode reward and causal-effect estimates.

The causal feedbacks treat "exp agent placed a market order" as the treatment
and average an outcome (a next-step market descriptor, or the step reward) over
the treated steps. Because the pre-action state drives both the action and the
outcome under a non-randomized policy, the inverse-probability-weighted
estimator divides each treated outcome by the (clipped) propensity; the naive
estimator is the plain treated-step mean.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import (
    ConfigError,
    DegeneratePropensityError,
    IncompleteRolloutError,
    NoTreatedStepsError,
    SeparationError,
)
from .exp_agent import ExpAction, ExpAgentState
from .lob import level_key
from .rollout import ExpStep, Rollout

CSV_SCHEMA_VERSION = 1

FEEDBACK_KINDS = (
    "episode_reward",
    "market_to_next_return",
    "market_to_next_price_impact",
    "market_to_next_spread",
    "market_to_next_imbalance",
    "market_to_next_direction",
    "market_to_reward",
)


@dataclass(frozen=True)
class FeedbackSpec:
    kind: str = "market_to_next_return"
    imbalance_level: int | None = None  # None means all levels
    estimator: str = "ipw"  # "naive" | "ipw"
    ps_threshold: float = 0.05

    def __post_init__(self):
        if self.kind not in FEEDBACK_KINDS:
            raise ConfigError(f"unknown feedback kind {self.kind!r}")
        if self.estimator not in ("naive", "ipw"):
            raise ConfigError(f"unknown estimator {self.estimator!r}")
        if not 0 < self.ps_threshold <= 0.5:
            raise ConfigError("ps_threshold must lie in (0, 0.5]")

    def label(self) -> str:
        if self.kind == "market_to_next_imbalance":
            return f"{self.kind}_{level_key(self.imbalance_level)}"
        return self.kind


@dataclass(frozen=True)
class FeedbackSample:
    value: float
    n_treated: int
    rollout_seed: int


def _outcome_fn(spec: FeedbackSpec):
    """Step -> outcome value, or None when the snapshot cannot supply it."""

    def next_return(step: ExpStep):
        return step.facts_after.log_return if step.facts_after.available else None

    def next_price_impact(step: ExpStep):
        return step.facts_after.price_impact if step.facts_after.available else None

    def next_spread(step: ExpStep):
        return float(step.facts_after.spread) if step.facts_after.available else None

    def next_imbalance(step: ExpStep):
        return step.facts_after.imbalance.get(level_key(spec.imbalance_level))

    def next_direction(step: ExpStep):
        return float(step.facts_after.direction) if step.facts_after.available else None

    def step_reward(step: ExpStep):
        return step.reward

    return {
        "market_to_next_return": next_return,
        "market_to_next_price_impact": next_price_impact,
        "market_to_next_spread": next_spread,
        "market_to_next_imbalance": next_imbalance,
        "market_to_next_direction": next_direction,
        "market_to_reward": step_reward,
    }[spec.kind]


def _treated_outcomes(rollout: Rollout, outcome) -> list[tuple[ExpAgentState, float]]:
    out = []
    for step in rollout.steps:
        if step.action is not ExpAction.MARKET:
            continue
        value = outcome(step)
        if value is None:
            continue  # snapshot had an empty side; skip the step
        out.append((step.s_prev, value))
    return out


def episode_reward(rollout: Rollout) -> FeedbackSample:
    """Cumulative reward over the whole rollout, terminal penalty included."""
    if not rollout.complete:
        raise IncompleteRolloutError("episode reward needs a complete rollout")
    n_treated = sum(step.action is ExpAction.MARKET for step in rollout.steps)
    return FeedbackSample(rollout.total_reward(), n_treated, rollout.seed)


def naive_effect(rollout: Rollout, outcome) -> FeedbackSample:
    """Mean outcome over treated steps; undefined without any treated step."""
    pairs = _treated_outcomes(rollout, outcome)
    if not pairs:
        raise NoTreatedStepsError("rollout has no usable treated steps")
    values = [v for _, v in pairs]
    return FeedbackSample(float(np.mean(values)), len(values), rollout.seed)


def ipw_effect(
    rollout: Rollout,
    outcome,
    propensity,
    ps_threshold: float = 0.05,
) -> FeedbackSample:
    """Treated-step mean of outcome / max(e(s_prev), threshold).

    ``propensity`` maps the pre-action state to the probability of a market
    order there. A zero propensity at a treated step means the source is
    inconsistent with the data and is reported as such.
    """
    pairs = _treated_outcomes(rollout, outcome)
    if not pairs:
        raise NoTreatedStepsError("rollout has no usable treated steps")
    total = 0.0
    for state, value in pairs:
        e = float(propensity(state))
        if e <= 0.0:
            raise DegeneratePropensityError(
                "propensity 0 at a treated step: source disagrees with the rollout"
            )
        total += value / max(e, ps_threshold)
    return FeedbackSample(total / len(pairs), len(pairs), rollout.seed)


def mkt_to_reward(rollout: Rollout, estimator: str = "naive", propensity=None,
                  ps_threshold: float = 0.05) -> FeedbackSample:
    """Causal-effect machinery applied with the step reward as the outcome."""
    outcome = _outcome_fn(FeedbackSpec(kind="market_to_reward", estimator=estimator))
    if estimator == "naive":
        return naive_effect(rollout, outcome)
    return ipw_effect(rollout, outcome, propensity, ps_threshold)


def compute_feedback(rollout: Rollout, spec: FeedbackSpec, propensity=None) -> FeedbackSample:
    if spec.kind == "episode_reward":
        return episode_reward(rollout)
    outcome = _outcome_fn(spec)
    if spec.estimator == "naive":
        return naive_effect(rollout, outcome)
    if propensity is None:
        raise ConfigError("ipw estimator needs a propensity source")
    return ipw_effect(rollout, outcome, propensity, spec.ps_threshold)


@dataclass
class FeedbackSet:
    spec: FeedbackSpec
    samples: list[FeedbackSample]
    n_dropped: int

    def values(self) -> np.ndarray:
        return np.array([s.value for s in self.samples])


def collect_feedbacks(rollouts, spec: FeedbackSpec, propensity=None) -> FeedbackSet:
    """Feedback per rollout; rollouts without treated steps are dropped, not
    zero-filled, and the drop count is reported."""
    samples: list[FeedbackSample] = []
    dropped = 0
    for rollout in rollouts:
        try:
            samples.append(compute_feedback(rollout, spec, propensity))
        except NoTreatedStepsError:
            dropped += 1
    return FeedbackSet(spec=spec, samples=samples, n_dropped=dropped)


# -- propensity fitting ----------------------------------------------------------

@dataclass
class PropensityModel:
    """Logistic model on the exp-agent state features (standardized inputs)."""

    weights: np.ndarray  # bias first, then one weight per standardized feature
    mean: np.ndarray
    std: np.ndarray

    def predict_features(self, features: np.ndarray) -> float:
        z = (np.asarray(features, dtype=float) - self.mean) / self.std
        logit = self.weights[0] + float(z @ self.weights[1:])
        return 1.0 / (1.0 + np.exp(-logit))

    def __call__(self, state: ExpAgentState) -> float:
        return self.predict_features(state.features())


def fit_propensity(history, max_iters: int = 10_000, tol: float = 1e-8) -> PropensityModel:
    """Gradient-descent logistic regression on (state, treated) pairs.

    Runs until the loss improvement drops below ``tol`` or the iteration cap.
    Perfect separation is reported with a warning; downstream clipping keeps
    the weights usable.
    """
    states = [s for s, _ in history]
    y = np.array([1.0 if treated else 0.0 for _, treated in history])
    if y.sum() == 0 or y.sum() == len(y):
        raise SeparationError("need at least one treated and one untreated sample")
    x = np.stack([s.features() for s in states])
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std[std == 0] = 1.0
    z = np.column_stack([np.ones(len(x)), (x - mean) / std])

    w = np.zeros(z.shape[1])
    lr = 1.0
    prev_loss = np.inf
    for _ in range(max_iters):
        logits = z @ w
        p = 1.0 / (1.0 + np.exp(-logits))
        eps = 1e-12
        loss = -np.mean(y * np.log(p + eps) + (1 - y) * np.log(1 - p + eps))
        if loss > prev_loss:
            lr *= 0.5
        elif prev_loss - loss < tol:
            break
        prev_loss = loss
        grad = z.T @ (p - y) / len(y)
        w -= lr * grad

    p = 1.0 / (1.0 + np.exp(-(z @ w)))
    if np.all(np.abs(p - y) < 1e-3):
        warnings.warn("perfect separation in propensity fit; rely on clipping downstream")
    return PropensityModel(weights=w, mean=mean, std=std)


# -- persistence -------------------------------------------------------------------

def write_feedback_csv(path, feedback_set: FeedbackSet, seed: int) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"#schema-version={CSV_SCHEMA_VERSION}\n")
        fh.write(f"#seed={seed}\n")
        fh.write(f"#dropped={feedback_set.n_dropped}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["kind", "estimator", "value", "n_treated", "seed"])
        for s in feedback_set.samples:
            writer.writerow(
                [feedback_set.spec.label(), feedback_set.spec.estimator,
                 repr(s.value), s.n_treated, s.rollout_seed]
            )


def read_feedback_csv(path) -> list[FeedbackSample]:
    samples = []
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [line for line in fh if not line.startswith("#")]
    reader = csv.DictReader(rows)
    for row in reader:
        samples.append(
            FeedbackSample(
                value=float(row["value"]),
                n_treated=int(row["n_treated"]),
                rollout_seed=int(row["seed"]),
            )
        )
    return samples
