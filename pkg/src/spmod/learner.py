"""Episodic training by real-time dynamic programming: epsilon-greedy action
selection, terminal-state detection, single-pair backups along the
trajectory, and convergence monitoring via decision-matrix stability."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Protocol, Sequence

import numpy as np

from . import mdp
from .mdp import (
    ActionGrid,
    AgentModel,
    N_E_BINS,
    N_EDOT_BINS,
    RewardConfig,
    TERMINAL,
    discretize,
    greedy_action,
    q_backup,
    record_transition,
    reward,
    tracking_reward,
)
from .metrics import EpisodeTrace
from .modulation import (
    ModulationDecision,
    Paradigm,
    ParadigmTracker,
    apply_modulation,
    deadband,
)
from .plant import NumericBlowup, PiGains, PlantConfig, run_closed_loop, run_nested_loop

UNVISITED = -1


class TerminalKind(Enum):
    CONTINUE = "Continue"
    SETTLED_OK = "SettledOk"
    BAND_VIOLATION = "BandViolation"
    TIME_UP = "TimeUp"


@dataclass
class TrainConfig:
    n_episodes: int = 2000
    epsilon_start: float = 0.3
    epsilon_end: float = 0.1
    seed: int = 0
    terminal_deadband: float | None = None  # None -> modulation deadband
    convergence_window: int = 0             # 0 disables early stop
    gamma: float = 0.99
    episode_duration: float = 0.12
    grace_steps: int = 120   # comm steps before the survival band arms
    settle_steps: int = 5    # consecutive in-deadband comm steps = settled

    def validate(self) -> None:
        if self.n_episodes < 1:
            raise ValueError("train.n_episodes must be >= 1")
        if not (0.0 <= self.epsilon_end <= self.epsilon_start <= 1.0):
            raise ValueError("train epsilon schedule must satisfy 0 <= end <= start <= 1")
        if not (0.0 < self.gamma < 1.0):
            raise ValueError("gamma is required to be less than 1 (and positive)")
        if self.grace_steps < 0 or self.settle_steps < 1:
            raise ValueError("train.grace_steps must be >= 0 and settle_steps >= 1")


@dataclass
class DecisionMatrix:
    paradigm: Paradigm
    grid: np.ndarray  # (25, 100) int; UNVISITED marks states with no observations

    def __post_init__(self) -> None:
        if self.grid.shape != (N_E_BINS, N_EDOT_BINS):
            raise ValueError("decision matrix must be 25 x 100")


def epsilon_at(cfg: TrainConfig, episode: int) -> float:
    """Linear decay from epsilon_start to epsilon_end over the first half of
    the episode budget, then hold."""
    half = max(1, cfg.n_episodes // 2)
    frac = min(1.0, episode / half)
    return cfg.epsilon_start + (cfg.epsilon_end - cfg.epsilon_start) * frac


def select_action(
    model: AgentModel, s: int, grid: ActionGrid | int, epsilon: float, rng: np.random.Generator
) -> int:
    """Epsilon-greedy over the full grid (exploratory draws include the greedy
    action)."""
    if not (0.0 <= epsilon <= 1.0):
        raise ValueError("epsilon must be in [0, 1]")
    n = len(grid) if isinstance(grid, ActionGrid) else int(grid)
    if epsilon > 0.0 and rng.random() < epsilon:
        return int(rng.integers(n))
    return greedy_action(model, s, n)


def is_terminal(
    e: float,
    x_sp: float,
    t: float,
    reward_cfg: RewardConfig,
    *,
    settled_streak: int = 0,
    armed: bool = True,
    duration: float = float("inf"),
    terminal_deadband: float | None = None,
    settle_steps: int = 5,
) -> TerminalKind:
    """Classify the episode state. The survival-band check applies once armed
    (the transient has had time to enter the band); settling requires the
    error to hold inside the deadband for settle_steps consecutive samples."""
    band = reward_cfg.band_fraction * max(abs(x_sp), reward_cfg.sp_basis_floor)
    if armed and abs(e) > band:
        return TerminalKind.BAND_VIOLATION
    db = terminal_deadband if terminal_deadband is not None else deadband(x_sp)
    if abs(e) <= db and settled_streak >= settle_steps:
        return TerminalKind.SETTLED_OK
    if t >= duration:
        return TerminalKind.TIME_UP
    return TerminalKind.CONTINUE


class TerminalTracker:
    """Stateful wrapper around is_terminal for use as a run loop `until`."""

    def __init__(self, reward_cfg: RewardConfig, cfg: TrainConfig):
        self.reward_cfg = reward_cfg
        self.cfg = cfg
        self.armed = False
        self.transient_seen = False
        self.transient_steps = 0
        self.streak = 0
        self.kind = TerminalKind.CONTINUE

    def __call__(self, t: float, x_sp: float, x: float, e: float) -> str | None:
        db = (
            self.cfg.terminal_deadband
            if self.cfg.terminal_deadband is not None
            else deadband(x_sp)
        )
        if abs(e) > db:
            self.transient_seen = True
            self.streak = 0
        elif self.transient_seen:
            self.streak += 1
        if not self.transient_seen:
            return None
        self.transient_steps += 1
        band = self.reward_cfg.band_fraction * max(abs(x_sp), self.reward_cfg.sp_basis_floor)
        if not self.armed and (abs(e) <= band or self.transient_steps > self.cfg.grace_steps):
            self.armed = True
        kind = is_terminal(
            e,
            x_sp,
            t,
            self.reward_cfg,
            settled_streak=self.streak,
            armed=self.armed,
            terminal_deadband=self.cfg.terminal_deadband,
            settle_steps=self.cfg.settle_steps,
        )
        if kind is TerminalKind.CONTINUE:
            return None
        self.kind = kind
        return kind.value


class AgentHook:
    """Comm-step controller: discretizes the observed state, picks the scaling
    action (epsilon-greedy while learning, greedy otherwise), and applies the
    paradigm's modulation branch. While learning it records each observed
    transition and backs up exactly the visited pair.

    Inside the deadband no adjustment is issued (the otherwise-branch of the
    modulation law); the latched paradigm resumes if the error re-emerges.
    """

    def __init__(
        self,
        models: dict[Paradigm, AgentModel],
        grids: dict[Paradigm, ActionGrid],
        ranges: dict[Paradigm, tuple[float, float]],
        reward_cfg: RewardConfig,
        comm_step: float,
        *,
        learn: bool = False,
        epsilon: float = 0.0,
        rng: np.random.Generator | None = None,
        terminal: TerminalTracker | None = None,
        sp0: float = 0.0,
        release_streak: int = 5,
    ):
        self.models = models
        self.grids = grids
        self.ranges = ranges
        self.reward_cfg = reward_cfg
        self.comm_step = comm_step
        self.learn = learn
        self.epsilon = epsilon
        self.rng = rng
        self.terminal = terminal
        self.tracker = ParadigmTracker(sp0, release_streak)
        self._e_prev: float | None = None
        self._m_prev = 0.0
        self._pend: tuple[Paradigm, int, int, float] | None = None
        self.episode_return = 0.0
        self.backups = 0

    def _close_pending(self, e: float, edot: float) -> None:
        par, s, a, m_prev = self._pend
        self._pend = None
        m_taken = self.grids[par].values[a]
        armed = self.terminal.armed if self.terminal is not None else True
        if armed:
            r = reward(e, m_taken - m_prev, self.tracker.sp_prev, self.reward_cfg)
        else:
            r = tracking_reward(e, m_taken - m_prev, self.reward_cfg)
        self.episode_return += r
        if self.learn:
            model = self.models[par]
            s2 = discretize(e, edot, par, self.ranges).index
            record_transition(model, s, a, s2, r)
            q_backup(model, s, a)
            self.backups += 1

    def __call__(self, t: float, x_sp: float, x: float) -> ModulationDecision:
        e = x_sp - x
        edot = 0.0 if self._e_prev is None else (e - self._e_prev) / self.comm_step
        paradigm = self.tracker.update(x_sp, e)
        if self._pend is not None:
            self._close_pending(e, edot)
        m = 0.0
        if paradigm != Paradigm.IDLE and abs(e) > deadband(x_sp):
            model = self.models[paradigm]
            grid = self.grids[paradigm]
            s = discretize(e, edot, paradigm, self.ranges).index
            if self.learn:
                a = select_action(model, s, grid, self.epsilon, self.rng)
                self._pend = (paradigm, s, a, self._m_prev)
            else:
                a = greedy_action(model, s, grid)
            m = grid.values[a]
        self._e_prev = e
        self._m_prev = m
        return ModulationDecision(
            m=m, x_sp_mod=apply_modulation(m, x_sp, paradigm), paradigm=paradigm
        )

    def finish(self, kind: TerminalKind) -> None:
        """Close out the pending pair at episode end. Band violations record a
        terminal transition with the failure reward; a truncated (TimeUp)
        pending pair is dropped since its outcome was not observed."""
        if self._pend is None or not self.learn:
            self._pend = None
            return
        if kind is TerminalKind.BAND_VIOLATION:
            par, s, a, _ = self._pend
            model = self.models[par]
            record_transition(model, s, a, TERMINAL, self.reward_cfg.fail_reward)
            q_backup(model, s, a)
            self.backups += 1
            self.episode_return += self.reward_cfg.fail_reward
        self._pend = None


def decision_matrix(model: AgentModel, grid: ActionGrid) -> DecisionMatrix:
    """Greedy action per discrete state; states with no observed pair are
    marked UNVISITED."""
    na = len(grid)
    acts = np.argmax(model.q[: mdp.N_STATES, :na], axis=1).astype(np.int64)
    visited = model.visits[: mdp.N_STATES, :na].any(axis=1)
    acts[~visited] = UNVISITED
    return DecisionMatrix(grid.paradigm, acts.reshape(N_E_BINS, N_EDOT_BINS))


def _policy_snapshot(models: dict[Paradigm, AgentModel], grids: dict[Paradigm, ActionGrid]) -> dict:
    return {p: decision_matrix(models[p], grids[p]).grid for p in models}


def _snapshots_equal(a: dict, b: dict) -> bool:
    return all(np.array_equal(a[p], b[p]) for p in a)


@dataclass
class EpisodeRecord:
    episode: int
    epsilon: float
    terminal: str
    episode_return: float
    steps: int


@dataclass
class TrainReport:
    episodes: list[EpisodeRecord] = field(default_factory=list)
    matrix_changes: int = 0
    converged_after: int | None = None

    @property
    def n_episodes(self) -> int:
        return len(self.episodes)

    def terminal_counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for rec in self.episodes:
            out[rec.terminal] = out.get(rec.terminal, 0) + 1
        return out

    def summary(self) -> dict:
        return {
            "episodes": self.n_episodes,
            "terminal_counts": self.terminal_counts(),
            "matrix_changes": self.matrix_changes,
            "converged_after": self.converged_after,
            "mean_return_last_100": (
                float(np.mean([r.episode_return for r in self.episodes[-100:]]))
                if self.episodes
                else 0.0
            ),
        }


def train_episode(
    models: dict[Paradigm, AgentModel],
    scenario,
    plant_cfg: PlantConfig,
    gains: PiGains,
    rng: np.random.Generator,
    epsilon: float,
    *,
    train_cfg: TrainConfig,
    ranges: dict[Paradigm, tuple[float, float]],
    reward_cfg: RewardConfig,
    grids: dict[Paradigm, ActionGrid],
    nested_cfg=None,
) -> tuple[dict[Paradigm, AgentModel], EpisodeTrace, TerminalKind]:
    """Run one training episode on the given scenario; the models are updated
    online (one backup per visited pair) and returned with the trace and the
    terminal classification."""
    tracker = TerminalTracker(reward_cfg, train_cfg)
    hook = AgentHook(
        models,
        grids,
        ranges,
        reward_cfg,
        plant_cfg.comm_step,
        learn=True,
        epsilon=epsilon,
        rng=rng,
        terminal=tracker,
        sp0=scenario.sp0,
        release_streak=train_cfg.settle_steps,
    )
    duration = min(scenario.duration, train_cfg.episode_duration + scenario.last_event_time())
    try:
        if scenario.kind == "VoltageStep":
            trace = run_nested_loop(
                nested_cfg, scenario.setpoint_schedule, hook, duration,
                sp0=scenario.sp0, until=tracker,
            )
        else:
            trace = run_closed_loop(
                plant_cfg, gains, scenario.setpoint_schedule, scenario.disturbances,
                hook, duration, sp0=scenario.sp0, until=tracker,
            )
        kind = tracker.kind if tracker.kind is not TerminalKind.CONTINUE else TerminalKind.TIME_UP
    except NumericBlowup:
        kind = TerminalKind.BAND_VIOLATION
        trace = None
    hook.finish(kind)
    if trace is None:
        raise NumericBlowup("episode diverged; failure recorded to the model")
    trace.extras["episode_return"] = np.array(hook.episode_return)
    return models, trace, kind


def train(
    models: dict[Paradigm, AgentModel],
    scenario_generator: Callable[[np.random.Generator], "object"],
    cfg: TrainConfig,
    *,
    plant_cfg: PlantConfig,
    gains: PiGains,
    ranges: dict[Paradigm, tuple[float, float]],
    reward_cfg: RewardConfig,
    grids: dict[Paradigm, ActionGrid],
    nested_cfg=None,
) -> tuple[dict[Paradigm, AgentModel], TrainReport]:
    """Run the episodic schedule: draw a scenario, run one learning episode,
    track the decision matrices, and stop early once they are unchanged for
    convergence_window consecutive episodes."""
    cfg.validate()
    reward_cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    report = TrainReport()
    prev_snap = _policy_snapshot(models, grids)
    unchanged = 0
    for ep in range(cfg.n_episodes):
        eps = epsilon_at(cfg, ep)
        scenario = scenario_generator(rng)
        try:
            _, trace, kind = train_episode(
                models, scenario, plant_cfg, gains, rng, eps,
                train_cfg=cfg, ranges=ranges, reward_cfg=reward_cfg, grids=grids,
                nested_cfg=nested_cfg,
            )
            steps = len(trace)
            ret = float(trace.extras["episode_return"])
        except NumericBlowup:
            kind = TerminalKind.BAND_VIOLATION
            steps = 0
            ret = reward_cfg.fail_reward
        report.episodes.append(
            EpisodeRecord(ep, eps, kind.value, ret, steps)
        )
        snap = _policy_snapshot(models, grids)
        if _snapshots_equal(snap, prev_snap):
            unchanged += 1
        else:
            unchanged = 0
            report.matrix_changes += 1
        prev_snap = snap
        if cfg.convergence_window and unchanged >= cfg.convergence_window:
            report.converged_after = ep + 1
            break
    return models, report


# ---------------------------------------------------------------------------
# Generic finite-MDP training used for synthetic environments.


class TabularEnv(Protocol):
    n_states: int
    n_actions: int

    def reset(self, rng: np.random.Generator) -> int: ...

    def step(self, s: int, a: int, rng: np.random.Generator) -> tuple[int, float, bool]: ...


def train_tabular(
    model: AgentModel,
    env: TabularEnv,
    n_episodes: int,
    epsilon: float,
    rng: np.random.Generator,
    *,
    max_steps: int = 1000,
    learn: bool = True,
) -> AgentModel:
    """Episodic RTDP on a finite environment: same action selection, model
    update, and single-pair backup as the plant training loop. With
    learn=False the model is frozen and only backups run (planning passes
    over an already-built model)."""
    for _ in range(n_episodes):
        s = env.reset(rng)
        for _ in range(max_steps):
            a = select_action(model, s, env.n_actions, epsilon, rng)
            s2, r, terminal = env.step(s, a, rng)
            if learn:
                record_transition(model, s, a, TERMINAL if terminal else s2, r)
            if model.visits[s, a] > 0:
                q_backup(model, s, a)
            if terminal:
                break
            s = s2
    return model
