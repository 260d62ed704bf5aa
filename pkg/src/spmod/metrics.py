"""Transient-response metrics: peak overshoot/undershoot, cumulative error, settling time."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

UNSETTLED = math.inf


@dataclass
class EpisodeTrace:
    """Comm-step samples of one closed-loop run.

    All arrays share one length. `paradigm` holds integer codes from
    modulation.Paradigm. `extras` carries optional auxiliary signals
    (e.g. inner-loop reference and output for nested runs).
    """

    t: np.ndarray
    x_sp: np.ndarray
    x_sp_mod: np.ndarray
    x: np.ndarray
    e: np.ndarray
    m: np.ndarray
    paradigm: np.ndarray
    extras: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        n = len(self.t)
        if n == 0:
            raise ValueError("trace must be nonempty")
        for name in ("x_sp", "x_sp_mod", "x", "e", "m", "paradigm"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"trace column {name} has mismatched length")

    def __len__(self) -> int:
        return len(self.t)

    @property
    def comm_step(self) -> float:
        if len(self.t) < 2:
            raise ValueError("need at least two samples to infer comm step")
        return float(self.t[1] - self.t[0])


@dataclass
class TransientMetrics:
    peak_overshoot_pct: float
    peak_undershoot_pct: float
    cumulative_error: float
    settling_time: float  # UNSETTLED if never inside the band


def _step_index(trace: EpisodeTrace, to: float) -> int:
    """Index of the first sample at which the nominal set point equals `to`."""
    sp = trace.x_sp
    if sp[0] == to:
        return 0
    hits = np.nonzero((sp[1:] == to) & (sp[:-1] != to))[0]
    if len(hits) == 0:
        raise ValueError(f"no set-point step to {to} found in trace")
    return int(hits[0]) + 1


def overshoot_pct(trace: EpisodeTrace, step: tuple[float, float]) -> float:
    """Peak overshoot above the new set point, percent of the step size,
    evaluated from the step instant onward."""
    frm, to = step
    if to <= frm:
        raise ValueError("overshoot requires to > from")
    k = _step_index(trace, to)
    peak = float(trace.x[k:].max())
    return 100.0 * max(0.0, peak - to) / (to - frm)


def undershoot_pct(trace: EpisodeTrace, step: tuple[float, float]) -> float:
    """Peak undershoot below the new set point, percent of |new set point|."""
    frm, to = step
    if frm <= to:
        raise ValueError("undershoot requires from > to")
    if to == 0:
        raise ValueError("undershoot base is |to|; to must be nonzero")
    k = _step_index(trace, to)
    low = float(trace.x[k:].min())
    return 100.0 * max(0.0, to - low) / abs(to)


def cumulative_error(trace: EpisodeTrace) -> float:
    """L2 norm of the per-sample nominal-set-point error."""
    return float(np.sqrt(np.sum(trace.e * trace.e)))


def settling_time(trace: EpisodeTrace, band_pct: float, basis: float | None = None) -> float:
    """First time after which |e| stays within band_pct of the set-point basis
    for the remainder of the trace; UNSETTLED if the last sample is outside.

    Uses the last band entry, not the first, so transient re-excursions count.
    """
    if band_pct <= 0:
        raise ValueError("band_pct must be positive")
    if basis is None:
        basis = max(abs(float(trace.x_sp[-1])), 0.1)
    band = band_pct / 100.0 * basis
    outside = np.abs(trace.e) > band
    if outside[-1]:
        return UNSETTLED
    bad = np.nonzero(outside)[0]
    if len(bad) == 0:
        return float(trace.t[0])
    return float(trace.t[bad[-1] + 1])
