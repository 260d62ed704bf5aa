"""Set-point modulation: paradigm selection, scaling branches, and the
fixed-scaling predictive baseline controller."""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum


class Paradigm(IntEnum):
    IDLE = 0
    INCREASE_TRACKING = 1
    DECREASE_TRACKING = 2
    DISTURBANCE_REJECTION = 3


@dataclass
class SetpointSignal:
    """Nominal set point and its change over one comm step.

    Sign convention: delta = x_sp_prev - x_sp, so a set-point INCREASE gives
    delta < 0 and a decrease gives delta > 0. This is inverted relative to
    the usual "new minus old" convention; the modulation branch selection
    below depends on it.
    """

    x_sp: float
    x_sp_prev: float

    @property
    def delta(self) -> float:
        return self.x_sp_prev - self.x_sp


@dataclass
class ModulationDecision:
    m: float
    x_sp_mod: float
    paradigm: Paradigm


@dataclass
class SpaaceConfig:
    """Fixed-scaling baseline: scale by m_fixed when the linear prediction
    leaves the [x_min, x_max] response band."""

    m_fixed: float = 0.4
    t_pred: float = 4e-4
    x_min: float = 0.8
    x_max: float = 1.2

    def validate(self) -> None:
        if not (0.0 < self.m_fixed < 1.0):
            raise ValueError("spaace.m_fixed must be in (0, 1)")
        if self.t_pred <= 0:
            raise ValueError("spaace.t_pred must be positive")
        if self.x_min >= self.x_max:
            raise ValueError("spaace.x_min must be below x_max")


# m ranges admitted per paradigm (the action grids span exactly these).
PARADIGM_M_RANGE: dict[Paradigm, tuple[float, float]] = {
    Paradigm.IDLE: (0.0, 0.0),
    Paradigm.INCREASE_TRACKING: (0.0, 0.95),
    Paradigm.DECREASE_TRACKING: (0.0, 1.75),
    Paradigm.DISTURBANCE_REJECTION: (-0.8, 0.8),
}


def deadband(x_sp: float) -> float:
    """Practical threshold for "|e| > 0": 1% of the set point, floored."""
    return 0.01 * max(abs(x_sp), 0.1)


def detect_paradigm(
    sig: SetpointSignal,
    e: float,
    db: float,
    current: Paradigm,
    settled_streak: int = 0,
    release_streak: int = 5,
) -> Paradigm:
    """Select the active control paradigm for this comm step.

    An active (non-idle) paradigm latches while the transient persists and is
    released only once |e| has stayed inside the deadband for release_streak
    consecutive comm steps (a single in-band sample mid-ring is not the end
    of the transient). `settled_streak` counts consecutive in-band samples
    including the current one.
    """
    if db <= 0:
        raise ValueError("deadband must be positive")
    if current != Paradigm.IDLE and settled_streak < release_streak:
        return current
    if sig.delta < 0:
        return Paradigm.INCREASE_TRACKING
    if sig.delta > 0:
        return Paradigm.DECREASE_TRACKING
    if abs(e) > db:
        return Paradigm.DISTURBANCE_REJECTION
    return Paradigm.IDLE


def apply_modulation(m: float, x_sp: float, paradigm: Paradigm) -> float:
    """Modulated set point for the given scaling factor and paradigm branch."""
    lo, hi = PARADIGM_M_RANGE[paradigm]
    if not (lo <= m <= hi):
        raise ValueError(f"m={m} outside {paradigm.name} range [{lo}, {hi}]")
    if paradigm == Paradigm.INCREASE_TRACKING:
        return (1.0 - m) * x_sp
    if paradigm in (Paradigm.DECREASE_TRACKING, Paradigm.DISTURBANCE_REJECTION):
        return (1.0 + m) * x_sp
    return x_sp


def linear_predict(x_now: float, x_prev: float, sample_dt: float, t_pred: float) -> float:
    """Two-point linear extrapolation t_pred ahead."""
    if sample_dt <= 0:
        raise ValueError("sample_dt must be positive")
    return x_now + (x_now - x_prev) * (t_pred / sample_dt)


def spaace_decide(cfg: SpaaceConfig, x_sp: float, x_pred: float) -> float:
    """Fixed-scaling decision: boost below the band, cut above it."""
    if x_pred < cfg.x_min:
        return (1.0 + cfg.m_fixed) * x_sp
    if x_pred > cfg.x_max:
        return (1.0 - cfg.m_fixed) * x_sp
    return x_sp


class ParadigmTracker:
    """Per-episode latch state: current paradigm, previous set point, and the
    consecutive in-deadband sample count."""

    def __init__(self, sp0: float, release_streak: int = 5):
        self.paradigm = Paradigm.IDLE
        self.sp_prev = sp0
        self.streak = 0
        self.release_streak = release_streak

    def update(self, x_sp: float, e: float) -> Paradigm:
        db = deadband(x_sp)
        if abs(e) <= db:
            self.streak += 1
        else:
            self.streak = 0
        sig = SetpointSignal(x_sp=x_sp, x_sp_prev=self.sp_prev)
        self.paradigm = detect_paradigm(
            sig, e, db, self.paradigm, self.streak, self.release_streak
        )
        self.sp_prev = x_sp
        return self.paradigm


class SpaaceController:
    """Comm-step hook implementing the fixed-scaling predictive strategy."""

    def __init__(self, cfg: SpaaceConfig, comm_step: float):
        cfg.validate()
        self.cfg = cfg
        self.comm_step = comm_step
        self._x_prev: float | None = None

    def __call__(self, t: float, x_sp: float, x: float) -> ModulationDecision:
        x_prev = x if self._x_prev is None else self._x_prev
        x_pred = linear_predict(x, x_prev, self.comm_step, self.cfg.t_pred)
        self._x_prev = x
        x_mod = spaace_decide(self.cfg, x_sp, x_pred)
        if x_mod > x_sp:
            m, par = self.cfg.m_fixed, Paradigm.DECREASE_TRACKING
        elif x_mod < x_sp:
            m, par = self.cfg.m_fixed, Paradigm.INCREASE_TRACKING
        else:
            m, par = 0.0, Paradigm.IDLE
        return ModulationDecision(m=m, x_sp_mod=x_mod, paradigm=par)


def identity_hook(t: float, x_sp: float, x: float) -> ModulationDecision:
    """No supplementary action: pass the nominal set point through."""
    return ModulationDecision(m=0.0, x_sp_mod=x_sp, paradigm=Paradigm.IDLE)
