"""Experiment configuration: one JSON file validated as a whole.

The shipped defaults define the desk-scale setup: horizon 10, parent order 50,
fixed 10-share exp orders, a background population of 1 market maker, 2 value,
1 momentum, and 100 noise agents, 5 completions per sampled action against 100
stored real feedbacks, truncation depth 5 with 3 actions per decision, and a
learning rate that halves every 10 of 100 iterations.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .bg_agents import (
    BgPopulationConfig,
    MarketMakerConfig,
    MomentumConfig,
    NoiseConfig,
    ValueConfig,
)
from .errors import ConfigError
from .exp_agent import build_exp_policy
from .feedback import FeedbackSpec
from .metric import DEFAULT_ENVELOPE_NS, KernelSpec
from .rollout import MarketConfig, RealEnv, ScenarioConfig, WorldEnv, world_obs_dim
from .trainer import TrainConfig, TrainContext
from .world_policy import WorldActionSpace, WorldPolicy

CONFIG_SCHEMA_VERSION = 1


@dataclass
class WorldSimConfig:
    wakeups_per_step: int = 6
    hidden_dim: int = 32
    price_offset_max: int = 3
    size_grid: tuple[int, ...] = (10, 20, 50)
    cancel_slots: int = 4
    init_scale: float = 0.0  # 0 keeps a fresh policy at uniform heads
    noise_floor: BgPopulationConfig = field(
        default_factory=lambda: BgPopulationConfig(
            n_noise=3, n_momentum=0, n_value=0, n_market_maker=0,
            noise=NoiseConfig(offset_ticks=4, sizes=(10,), market_prob=0.0,
                              inside_prob=0.0),
        )
    )


@dataclass
class EnvelopeConfig:
    ns: tuple[int, ...] = DEFAULT_ENVELOPE_NS
    reps: int = 50
    pool: int = 200


@dataclass
class MetricChoice:
    d_hat: str = "mmd"
    kernel: KernelSpec = field(default_factory=KernelSpec)


@dataclass
class ExperimentConfig:
    master_seed: int = 1
    export_top_k: int = 10
    facts_trials: int = 12
    market: MarketConfig = field(default_factory=MarketConfig)
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    real_population: BgPopulationConfig = field(default_factory=BgPopulationConfig)
    world: WorldSimConfig = field(default_factory=WorldSimConfig)
    exp_policy: dict = field(
        default_factory=lambda: {"name": "eps_market", "eps": 0.5, "warmup_frac": 0.05}
    )
    feedback: FeedbackSpec = field(default_factory=FeedbackSpec)
    metric: MetricChoice = field(default_factory=MetricChoice)
    envelope: EnvelopeConfig = field(default_factory=EnvelopeConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    # -- validation ------------------------------------------------------------

    def validate(self) -> "ExperimentConfig":
        try:
            self.scenario.validate()
            self.real_population.validate()
            self.train.validate(self.scenario.horizon)
            build_exp_policy(self.exp_policy)  # raises on unknown names
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.export_top_k < 1:
            raise ConfigError("export_top_k must be >= 1")
        if self.envelope.pool < max(self.envelope.ns):
            raise ConfigError("envelope pool smaller than the largest subsample size")
        return self

    # -- object builders ----------------------------------------------------------

    def action_space(self) -> WorldActionSpace:
        return WorldActionSpace(
            price_offset_max=self.world.price_offset_max,
            size_grid=tuple(self.world.size_grid),
            cancel_slots=self.world.cancel_slots,
        )

    def new_policy(self, seed: int | None = None) -> WorldPolicy:
        policy = WorldPolicy(
            world_obs_dim(self.scenario),
            hidden_dim=self.world.hidden_dim,
            space=self.action_space(),
        )
        if self.world.init_scale > 0:
            init_seed = self.master_seed if seed is None else seed
            policy.randomize(np.random.default_rng(init_seed), self.world.init_scale)
        return policy

    def real_env(self) -> RealEnv:
        return RealEnv(self.real_population)

    def world_env(self, policy: WorldPolicy) -> WorldEnv:
        return WorldEnv(
            policy=policy,
            noise_floor=self.world.noise_floor,
            wakeups_per_step=self.world.wakeups_per_step,
        )

    def exp_policy_obj(self):
        return build_exp_policy(self.exp_policy)

    def train_context(self) -> TrainContext:
        pi = self.exp_policy_obj()
        propensity = pi.exact_propensity if self.feedback.estimator == "ipw" else None
        return TrainContext(
            pi=pi,
            scenario=self.scenario,
            market=self.market,
            noise_floor=self.world.noise_floor,
            wakeups_per_step=self.world.wakeups_per_step,
            feedback=self.feedback,
            propensity=propensity,
        )

    def derive_seed(self, *parts) -> int:
        mixed = [self.master_seed] + [
            int.from_bytes(str(p).encode(), "little") % (2**32) for p in parts
        ]
        return int(np.random.SeedSequence(mixed).generate_state(1)[0])


# -- (de)serialization -----------------------------------------------------------------

def config_to_dict(cfg: ExperimentConfig) -> dict:
    d = asdict(cfg)
    d["schema_version"] = CONFIG_SCHEMA_VERSION
    return d


def _pop_cfg(d: dict, cls, **nested):
    kwargs = dict(d)
    for key, build in nested.items():
        if key in kwargs and kwargs[key] is not None:
            kwargs[key] = build(kwargs[key])
    for key, value in list(kwargs.items()):
        if isinstance(value, list):
            kwargs[key] = tuple(value)
    return cls(**kwargs)


def config_from_dict(d: dict) -> ExperimentConfig:
    d = dict(d)
    version = d.pop("schema_version", CONFIG_SCHEMA_VERSION)
    if version != CONFIG_SCHEMA_VERSION:
        raise ConfigError(f"unsupported config schema version {version}")
    try:
        cfg = ExperimentConfig(
            master_seed=d.get("master_seed", 1),
            export_top_k=d.get("export_top_k", 10),
            facts_trials=d.get("facts_trials", 12),
            market=_pop_cfg(d.get("market", {}), MarketConfig),
            scenario=_pop_cfg(d.get("scenario", {}), ScenarioConfig),
            real_population=_population_from_dict(d.get("real_population", {})),
            world=_pop_cfg(
                d.get("world", {}),
                WorldSimConfig,
                noise_floor=_population_from_dict,
            ),
            exp_policy=d.get("exp_policy", {"name": "eps_market", "eps": 0.5}),
            feedback=_pop_cfg(d.get("feedback", {}), FeedbackSpec),
            metric=_pop_cfg(d.get("metric", {}), MetricChoice, kernel=_kernel_from_dict),
            envelope=_pop_cfg(d.get("envelope", {}), EnvelopeConfig),
            train=_pop_cfg(d.get("train", {}), TrainConfig, kernel=_kernel_from_dict),
        )
    except TypeError as exc:
        raise ConfigError(f"bad config structure: {exc}") from exc
    return cfg.validate()


def _population_from_dict(d: dict) -> BgPopulationConfig:
    return _pop_cfg(
        d,
        BgPopulationConfig,
        noise=lambda x: _pop_cfg(x, NoiseConfig),
        value=lambda x: _pop_cfg(x, ValueConfig),
        momentum=lambda x: _pop_cfg(x, MomentumConfig),
        market_maker=lambda x: _pop_cfg(x, MarketMakerConfig),
    )


def _kernel_from_dict(d: dict) -> KernelSpec:
    return KernelSpec(kind=d.get("kind", "gaussian"), bandwidth=d.get("bandwidth", "median"))


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return config_from_dict(data)


def save_config(path, cfg: ExperimentConfig) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config_to_dict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    """Apply ``a.b.c=value`` settings onto a config dict; values parse as JSON
    with a plain-string fallback."""
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = data
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"cannot descend into {part!r} of override {key!r}")
        node[parts[-1]] = value
    return data
