"""Training and evaluation scenario generators: set-point steps, simultaneous
multi-loop steps, load energization, faults, and the nested voltage mode."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .plant import DisturbanceEvent, PlantConfig

# Comm cadences: set-point scenarios decide every 100 us, disturbance
# scenarios every 50 us.
COMM_STEP_SETPOINT = 1e-4
COMM_STEP_DISTURBANCE = 5e-5

STEP_UP_MAX = 1.1
STEP_DOWN_RANGE = (0.1, 1.0)
LOAD_MW_RANGE = (1.0, 10.0)
FAULT_OHM_RANGE = (0.01, 10.0)


@dataclass
class ScenarioDefaults:
    """Desk-scale knobs shared by the generators.

    The MW -> pu and ohm -> pu maps are affine calibrations: both disturbances
    enter as output dips (negative pu), and the scored overshoot is the
    controllable rebound above the set point. `mag` fields are dip depths (pu,
    positive numbers).
    """

    event_time: float = 0.004
    eval_event_time: float = 0.25
    settle_margin: float = 0.5      # appended after the last event (>= 20*tau)
    load_mag_range: tuple[float, float] = (0.07, 0.33)
    fault_mag_range: tuple[float, float] = (0.10, 0.65)
    fault_decay_tau: float = 0.005


@dataclass
class Scenario:
    kind: str  # StepUp | StepDown | MultiAgentStep | LoadEnergize | Fault | VoltageStep
    setpoint_schedule: list[tuple[float, float]]
    disturbances: list[DisturbanceEvent]
    duration: float
    comm_step: float
    sp0: float = 0.0

    def last_event_time(self) -> float:
        t = 0.0
        if self.setpoint_schedule:
            t = max(t, self.setpoint_schedule[-1][0])
        for d in self.disturbances:
            t = max(t, d.start)
        return t

    def validate(self, tau: float) -> None:
        times = [t for t, _ in self.setpoint_schedule]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("scenario schedule times must be strictly increasing")
        if self.duration < self.last_event_time() + 20.0 * tau:
            raise ValueError("scenario duration must cover the last event plus 20*tau")


@dataclass
class MultiAgentScenario:
    agents: list[Scenario]
    coupling: float = 0.05

    def validate(self, tau: float) -> None:
        if not (0.0 <= self.coupling <= 0.2):
            raise ValueError("coupling must be within [0, 0.2]")
        if len(self.agents) < 2:
            raise ValueError("multi-agent scenario needs at least two agents")
        for sc in self.agents:
            sc.validate(tau)


def _duration(defaults: ScenarioDefaults, event: float) -> float:
    return event + defaults.settle_margin


def gen_step_up(rng: np.random.Generator, defaults: ScenarioDefaults = ScenarioDefaults()) -> Scenario:
    """Start at rest, step to a target drawn uniformly from (0, 1.1]."""
    target = STEP_UP_MAX - float(rng.uniform(0.0, STEP_UP_MAX))
    t0 = defaults.event_time
    return Scenario(
        kind="StepUp",
        setpoint_schedule=[(t0, target)],
        disturbances=[],
        duration=_duration(defaults, t0),
        comm_step=COMM_STEP_SETPOINT,
        sp0=0.0,
    )


def gen_step_down(rng: np.random.Generator, defaults: ScenarioDefaults = ScenarioDefaults()) -> Scenario:
    """Start pre-settled at 1.0, drop to a target drawn uniformly from [0.1, 1.0)."""
    lo, hi = STEP_DOWN_RANGE
    target = float(rng.uniform(lo, hi))
    t0 = defaults.event_time
    return Scenario(
        kind="StepDown",
        setpoint_schedule=[(t0, target)],
        disturbances=[],
        duration=_duration(defaults, t0),
        comm_step=COMM_STEP_SETPOINT,
        sp0=1.0,
    )


def load_mw_to_pu(mw: float, defaults: ScenarioDefaults) -> float:
    """Affine map from the energized load size to the output dip depth."""
    lo, hi = LOAD_MW_RANGE
    mlo, mhi = defaults.load_mag_range
    frac = (mw - lo) / (hi - lo)
    return mlo + frac * (mhi - mlo)


def fault_ohm_to_pu(r_fault: float, defaults: ScenarioDefaults) -> float:
    """Affine map from fault resistance to dip depth; severity is monotone
    decreasing in the resistance."""
    lo, hi = FAULT_OHM_RANGE
    mlo, mhi = defaults.fault_mag_range
    frac = (r_fault - lo) / (hi - lo)
    return mhi - frac * (mhi - mlo)


def gen_load_energize(
    rng: np.random.Generator, defaults: ScenarioDefaults = ScenarioDefaults()
) -> Scenario:
    """Set point held at 1.0; a resistive load drawn from [1, 10] MW energizes
    as a sustained output-step dip."""
    mw = float(rng.uniform(*LOAD_MW_RANGE))
    mag = load_mw_to_pu(mw, defaults)
    t0 = defaults.event_time
    return Scenario(
        kind="LoadEnergize",
        setpoint_schedule=[],
        disturbances=[DisturbanceEvent("output-step", t0, -mag)],
        duration=_duration(defaults, t0),
        comm_step=COMM_STEP_DISTURBANCE,
        sp0=1.0,
    )


def gen_fault(rng: np.random.Generator, defaults: ScenarioDefaults = ScenarioDefaults()) -> Scenario:
    """Set point held at 1.0; a fault with resistance drawn from [0.01, 10] ohm
    hits as a decaying output pulse."""
    r_fault = float(rng.uniform(*FAULT_OHM_RANGE))
    mag = fault_ohm_to_pu(r_fault, defaults)
    t0 = defaults.event_time
    return Scenario(
        kind="Fault",
        setpoint_schedule=[],
        disturbances=[DisturbanceEvent("decaying-pulse", t0, -mag, defaults.fault_decay_tau)],
        duration=_duration(defaults, t0),
        comm_step=COMM_STEP_DISTURBANCE,
        sp0=1.0,
    )


def gen_voltage_step(
    rng: np.random.Generator, defaults: ScenarioDefaults = ScenarioDefaults()
) -> Scenario:
    """Nested mode: the outer reference starts at zero and steps to a target
    drawn uniformly from (0, 1.1]."""
    target = STEP_UP_MAX - float(rng.uniform(0.0, STEP_UP_MAX))
    t0 = defaults.event_time
    return Scenario(
        kind="VoltageStep",
        setpoint_schedule=[(t0, target)],
        disturbances=[],
        duration=_duration(defaults, t0),
        comm_step=COMM_STEP_SETPOINT,
        sp0=0.0,
    )


def gen_multi_step(
    rng: np.random.Generator,
    n_agents: int = 2,
    coupling: float = 0.05,
    defaults: ScenarioDefaults = ScenarioDefaults(),
) -> MultiAgentScenario:
    """Simultaneous step-up commands to several coupled loops; each target is
    drawn independently."""
    return MultiAgentScenario(
        agents=[gen_step_up(rng, defaults) for _ in range(n_agents)],
        coupling=coupling,
    )


# --- fixed evaluation variants of the case studies -------------------------


def case1_step_up(defaults: ScenarioDefaults = ScenarioDefaults()) -> Scenario:
    t0 = defaults.eval_event_time
    return Scenario("StepUp", [(t0, 1.0)], [], _duration(defaults, t0), COMM_STEP_SETPOINT, 0.0)


def case1_step_down(defaults: ScenarioDefaults = ScenarioDefaults()) -> Scenario:
    t0 = defaults.eval_event_time
    return Scenario("StepDown", [(t0, 0.2)], [], _duration(defaults, t0), COMM_STEP_SETPOINT, 1.0)


def case2_multi_step(coupling: float = 0.05, defaults: ScenarioDefaults = ScenarioDefaults()) -> MultiAgentScenario:
    t0 = defaults.eval_event_time
    one = Scenario("MultiAgentStep", [(t0, 1.0)], [], _duration(defaults, t0), COMM_STEP_SETPOINT, 0.0)
    return MultiAgentScenario(agents=[one, replace(one)], coupling=coupling)


def case3_load(defaults: ScenarioDefaults = ScenarioDefaults()) -> Scenario:
    t0 = defaults.eval_event_time
    mag = load_mw_to_pu(LOAD_MW_RANGE[1], defaults)
    return Scenario(
        "LoadEnergize",
        [],
        [DisturbanceEvent("output-step", t0, -mag)],
        _duration(defaults, t0),
        COMM_STEP_DISTURBANCE,
        1.0,
    )


def case4_fault(defaults: ScenarioDefaults = ScenarioDefaults()) -> Scenario:
    t0 = defaults.eval_event_time
    mag = fault_ohm_to_pu(FAULT_OHM_RANGE[0], defaults)
    return Scenario(
        "Fault",
        [],
        [DisturbanceEvent("decaying-pulse", t0, -mag, defaults.fault_decay_tau)],
        _duration(defaults, t0),
        COMM_STEP_DISTURBANCE,
        1.0,
    )


def case5_voltage_step(defaults: ScenarioDefaults = ScenarioDefaults()) -> Scenario:
    t0 = defaults.eval_event_time
    return Scenario("VoltageStep", [(t0, 0.9)], [], _duration(defaults, t0), COMM_STEP_SETPOINT, 0.0)


FAMILY_GENERATORS = {
    "step_up": gen_step_up,
    "step_down": gen_step_down,
    "load": gen_load_energize,
    "fault": gen_fault,
    "voltage_step": gen_voltage_step,
}


def family_generator(kind: str, defaults: ScenarioDefaults):
    """Scenario source for one training family; `step_mix` alternates the two
    set-point families at random."""
    if kind == "step_mix":
        def gen(rng: np.random.Generator) -> Scenario:
            if rng.random() < 0.5:
                return gen_step_up(rng, defaults)
            return gen_step_down(rng, defaults)
        return gen
    if kind == "dist_mix":
        def gen(rng: np.random.Generator) -> Scenario:
            if rng.random() < 0.5:
                return gen_load_energize(rng, defaults)
            return gen_fault(rng, defaults)
        return gen
    if kind not in FAMILY_GENERATORS:
        raise ValueError(f"unknown scenario family {kind!r}")
    base = FAMILY_GENERATORS[kind]
    return lambda rng: base(rng, defaults)


def plant_for_scenario(plant_cfg: PlantConfig, scenario: Scenario) -> PlantConfig:
    """Plant configuration with the scenario's comm cadence applied."""
    if plant_cfg.comm_step == scenario.comm_step:
        return plant_cfg
    return replace(plant_cfg, comm_step=scenario.comm_step)
