"""Tabular MDP machinery: state discretization, per-paradigm action grids,
reward, the empirical transition/reward model, and the Q backup."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .modulation import Paradigm

N_E_BINS = 25
N_EDOT_BINS = 100
N_STATES = N_E_BINS * N_EDOT_BINS

# Sentinel successor index for transitions into a terminal state.
TERMINAL = -1


@dataclass(frozen=True)
class DiscreteState:
    e_bin: int
    edot_bin: int

    def __post_init__(self) -> None:
        if not (0 <= self.e_bin < N_E_BINS and 0 <= self.edot_bin < N_EDOT_BINS):
            raise ValueError("bin indices out of range")

    @property
    def index(self) -> int:
        return self.e_bin * N_EDOT_BINS + self.edot_bin

    @classmethod
    def from_index(cls, idx: int) -> "DiscreteState":
        return cls(idx // N_EDOT_BINS, idx % N_EDOT_BINS)


@dataclass(frozen=True)
class ActionGrid:
    paradigm: Paradigm
    values: tuple[float, ...]

    def __post_init__(self) -> None:
        if any(b <= a for a, b in zip(self.values, self.values[1:])):
            raise ValueError("action grid values must be strictly increasing")

    def __len__(self) -> int:
        return len(self.values)


def default_action_grids() -> dict[Paradigm, ActionGrid]:
    """Uniform inclusive-endpoint grids: 5 values on [0, 0.95] and [0, 1.75]
    for the tracking paradigms, 7 signed values on [-0.8, 0.8] for
    disturbance rejection."""

    def uniform(lo: float, hi: float, n: int) -> tuple[float, ...]:
        return tuple(lo + (hi - lo) * i / (n - 1) for i in range(n))

    return {
        Paradigm.INCREASE_TRACKING: ActionGrid(
            Paradigm.INCREASE_TRACKING, uniform(0.0, 0.95, 5)
        ),
        Paradigm.DECREASE_TRACKING: ActionGrid(
            Paradigm.DECREASE_TRACKING, uniform(0.0, 1.75, 5)
        ),
        Paradigm.DISTURBANCE_REJECTION: ActionGrid(
            Paradigm.DISTURBANCE_REJECTION, uniform(-0.8, 0.8, 7)
        ),
    }


@dataclass
class RewardConfig:
    penalty_lambda: float = 0.1
    band_fraction: float = 0.2
    fail_reward: float = -1000.0
    sp_basis_floor: float = 0.1

    def validate(self) -> None:
        if self.penalty_lambda < 0:
            raise ValueError("reward.penalty_lambda must be >= 0")
        if self.band_fraction <= 0:
            raise ValueError("reward.band_fraction must be positive")


def discretize(
    e: float,
    edot: float,
    paradigm: Paradigm,
    ranges: dict[Paradigm, tuple[float, float]],
) -> DiscreteState:
    """Uniform half-open binning of (e, edot) over the paradigm's symmetric
    ranges; out-of-range values clamp to the edge bins."""
    e_range, edot_range = ranges[paradigm]
    if e_range <= 0 or edot_range <= 0:
        raise ValueError("discretization ranges must be positive")
    i = int((e + e_range) * (N_E_BINS / (2.0 * e_range)))
    j = int((edot + edot_range) * (N_EDOT_BINS / (2.0 * edot_range)))
    if i < 0:
        i = 0
    elif i >= N_E_BINS:
        i = N_E_BINS - 1
    if j < 0:
        j = 0
    elif j >= N_EDOT_BINS:
        j = N_EDOT_BINS - 1
    return DiscreteState(i, j)


def reward(e: float, delta_m: float, x_sp: float, cfg: RewardConfig) -> float:
    """Tracking cost with a set-point-motion penalty inside the survival band,
    the large failure penalty outside it."""
    band = cfg.band_fraction * max(abs(x_sp), cfg.sp_basis_floor)
    if abs(e) <= band:
        return -abs(e) - cfg.penalty_lambda * abs(delta_m)
    return cfg.fail_reward


def tracking_reward(e: float, delta_m: float, cfg: RewardConfig) -> float:
    """The in-band branch alone; used before the band check is armed."""
    return -abs(e) - cfg.penalty_lambda * abs(delta_m)


class AgentModel:
    """Empirical model and Q-table for one paradigm (or a generic finite MDP).

    Transition counts are sparse dicts keyed by (s, a); Q and visit counts are
    dense arrays. Unvisited pairs hold q = 0, which upper-bounds every true
    value (all rewards are <= 0) and drives systematic exploration.
    """

    def __init__(self, n_actions: int, gamma: float, n_states: int = N_STATES):
        if not (0.0 < gamma < 1.0):
            raise ValueError("gamma is required to be less than 1 (and positive)")
        self.n_states = n_states
        self.n_actions = n_actions
        self.gamma = gamma
        self.q = np.zeros((n_states, n_actions))
        self.visits = np.zeros((n_states, n_actions), dtype=np.int64)
        self.reward_sum = np.zeros((n_states, n_actions))
        self.trans: dict[tuple[int, int], dict[int, int]] = {}
        # Cached per-state max-Q, kept in sync by q_backup.
        self._vmax = np.zeros(n_states)

    def transition_probs(self, s: int, a: int) -> dict[int, float]:
        counts = self.trans.get((s, a))
        if not counts:
            return {}
        n = sum(counts.values())
        return {s2: c / n for s2, c in counts.items()}

    def mean_reward(self, s: int, a: int) -> float:
        n = self.visits[s, a]
        if n == 0:
            raise KeyError(f"pair ({s}, {a}) never observed")
        return float(self.reward_sum[s, a]) / int(n)

    def state_visited(self, s: int) -> bool:
        return bool(self.visits[s].any())


def record_transition(model: AgentModel, s: int, a: int, s2: int, r: float) -> AgentModel:
    """Record one observed transition; s2 = TERMINAL for terminal successors.
    Mutates and returns the model."""
    model.visits[s, a] += 1
    model.reward_sum[s, a] += r
    d = model.trans.setdefault((s, a), {})
    d[s2] = d.get(s2, 0) + 1
    return model


def q_backup(model: AgentModel, s: int, a: int) -> float:
    """One Bellman backup of the visited pair against the empirical model:
    mean reward plus discounted expected best successor value. Terminal
    successors contribute zero future value."""
    counts = model.trans.get((s, a))
    if not counts:
        raise KeyError(f"pair ({s}, {a}) never observed")
    n = int(model.visits[s, a])
    acc = 0.0
    vmax = model._vmax
    for s2, c in counts.items():
        if s2 != TERMINAL:
            acc += c * vmax[s2]
    value = float(model.reward_sum[s, a]) / n + model.gamma * acc / n
    row = model.q[s]
    row[a] = value
    model._vmax[s] = row.max()
    return value


def greedy_action(model: AgentModel, s: int, grid: ActionGrid | int) -> int:
    """Argmax over the grid of q(s, .); unvisited pairs count as 0; ties break
    to the lowest grid index."""
    n = len(grid) if isinstance(grid, ActionGrid) else int(grid)
    return int(np.argmax(model.q[s, :n]))
