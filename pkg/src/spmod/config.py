"""Declarative experiment configuration: one YAML file with named sections
mirroring the library types, validated before any run starts."""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field

import yaml

from .learner import TrainConfig
from .mdp import RewardConfig
from .modulation import Paradigm, SpaaceConfig
from .plant import NestedLoopConfig, PiGains, PlantConfig
from .scenarios import ScenarioDefaults


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


@dataclass
class AgentSpec:
    """Per-agent gains for the multi-loop case."""

    kp: float
    ki: float


@dataclass
class ExperimentConfig:
    seed: int
    output_dir: str
    case: str  # step_up | step_down | step_mix | load | fault | dist_mix | voltage_step | multi_step
    plant: PlantConfig
    gains: PiGains
    reward: RewardConfig
    train: TrainConfig
    spaace: SpaaceConfig
    scenario: ScenarioDefaults
    ranges: dict[Paradigm, tuple[float, float]]
    nested: NestedLoopConfig | None = None
    coupling: float = 0.05
    agents: list[AgentSpec] = field(default_factory=list)

    def validate(self) -> None:
        known = {
            "step_up", "step_down", "step_mix", "load", "fault",
            "dist_mix", "voltage_step", "multi_step",
        }
        if self.case not in known:
            raise ConfigError(f"case: unknown case kind {self.case!r}")
        try:
            self.plant.validate()
            self.gains.validate()
            self.reward.validate()
            self.train.validate()
            self.spaace.validate()
            if self.nested is not None:
                self.nested.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.case == "voltage_step" and self.nested is None:
            raise ConfigError("nested: required for the voltage_step case")
        if self.case == "multi_step" and len(self.agents) < 2:
            raise ConfigError("agents: multi_step needs at least two agent gain entries")
        if not (0.0 <= self.coupling <= 0.2):
            raise ConfigError("coupling: must be within [0, 0.2]")
        for par in (
            Paradigm.INCREASE_TRACKING,
            Paradigm.DECREASE_TRACKING,
            Paradigm.DISTURBANCE_REJECTION,
        ):
            er, edr = self.ranges[par]
            if er <= 0 or edr <= 0:
                raise ConfigError(f"ranges.{par.name.lower()}: ranges must be positive")


_PARADIGM_KEYS = {
    "increase": Paradigm.INCREASE_TRACKING,
    "decrease": Paradigm.DECREASE_TRACKING,
    "disturbance": Paradigm.DISTURBANCE_REJECTION,
}


def _section(data: dict, name: str) -> dict:
    sec = data.get(name)
    if sec is None:
        raise ConfigError(f"{name}: missing section")
    if not isinstance(sec, dict):
        raise ConfigError(f"{name}: must be a mapping")
    return sec


def _build(cls, data: dict, section: str):
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"{section}: {exc}") from exc


def config_from_dict(data: dict) -> ExperimentConfig:
    for key in ("seed", "output_dir", "case"):
        if key not in data:
            raise ConfigError(f"{key}: missing key")
    plant = _build(PlantConfig, _section(data, "plant"), "plant")
    gains = _build(PiGains, _section(data, "gains"), "gains")
    reward = _build(RewardConfig, data.get("reward", {}), "reward")
    train = _build(TrainConfig, data.get("train", {}), "train")
    spaace = _build(SpaaceConfig, data.get("spaace", {}), "spaace")
    scenario = _build(ScenarioDefaults, data.get("scenario", {}), "scenario")
    for tup in ("load_mag_range", "fault_mag_range"):
        v = getattr(scenario, tup)
        if isinstance(v, list):
            setattr(scenario, tup, tuple(v))

    rsec = _section(data, "ranges")
    ranges: dict[Paradigm, tuple[float, float]] = {}
    for key, par in _PARADIGM_KEYS.items():
        if key not in rsec:
            raise ConfigError(f"ranges.{key}: missing paradigm ranges")
        pair = rsec[key]
        if not (isinstance(pair, (list, tuple)) and len(pair) == 2):
            raise ConfigError(f"ranges.{key}: expected [e_range, edot_range]")
        ranges[par] = (float(pair[0]), float(pair[1]))

    nested = None
    if "nested" in data and data["nested"] is not None:
        nsec = dict(data["nested"])
        try:
            nested = NestedLoopConfig(
                outer_gains=PiGains(**nsec.pop("outer_gains")),
                inner=PlantConfig(**nsec.pop("inner")),
                inner_gains=PiGains(**nsec.pop("inner_gains")),
                **nsec,
            )
        except TypeError as exc:
            raise ConfigError(f"nested: {exc}") from exc

    agents = [
        _build(AgentSpec, a, "agents") for a in data.get("agents", [])
    ]

    cfg = ExperimentConfig(
        seed=int(data["seed"]),
        output_dir=str(data["output_dir"]),
        case=str(data["case"]),
        plant=plant,
        gains=gains,
        reward=reward,
        train=train,
        spaace=spaace,
        scenario=scenario,
        ranges=ranges,
        nested=nested,
        coupling=float(data.get("coupling", 0.05)),
        agents=agents,
    )
    cfg.validate()
    return cfg


def config_to_dict(cfg: ExperimentConfig) -> dict:
    data = {
        "seed": cfg.seed,
        "output_dir": cfg.output_dir,
        "case": cfg.case,
        "plant": asdict(cfg.plant),
        "gains": asdict(cfg.gains),
        "reward": asdict(cfg.reward),
        "train": asdict(cfg.train),
        "spaace": asdict(cfg.spaace),
        "scenario": {
            **asdict(cfg.scenario),
            "load_mag_range": list(cfg.scenario.load_mag_range),
            "fault_mag_range": list(cfg.scenario.fault_mag_range),
        },
        "ranges": {
            key: list(cfg.ranges[par]) for key, par in _PARADIGM_KEYS.items()
        },
        "coupling": cfg.coupling,
    }
    if cfg.nested is not None:
        data["nested"] = {
            "outer_gains": asdict(cfg.nested.outer_gains),
            "outer_gain": cfg.nested.outer_gain,
            "outer_tau": cfg.nested.outer_tau,
            "outer_ref_limit": cfg.nested.outer_ref_limit,
            "inner": asdict(cfg.nested.inner),
            "inner_gains": asdict(cfg.nested.inner_gains),
        }
    if cfg.agents:
        data["agents"] = [asdict(a) for a in cfg.agents]
    return data


def load_config(path: str) -> ExperimentConfig:
    with open(path) as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return config_from_dict(data)


def save_config(cfg: ExperimentConfig, path: str) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(config_to_dict(cfg), fh, sort_keys=False)


def config_hash(cfg: ExperimentConfig) -> str:
    canon = yaml.safe_dump(config_to_dict(cfg), sort_keys=True)
    return hashlib.sha256(canon.encode()).hexdigest()
