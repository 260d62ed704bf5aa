"""Discrete-time simulation of PI-controlled tracking loops.

The plant is a first-order lag with static gain, driven through an optional
actuator lag and an integer actuation delay, with actuation saturation and
PI anti-windup available as configuration. A high loop gain with the actuator
lag yields the configurably underdamped second-order closed loop the
supplementary controllers are exercised on; saturation bounds the slew the
way a converter current limit would.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .metrics import EpisodeTrace
from .modulation import ModulationDecision

Hook = Callable[[float, float, float], ModulationDecision]
# until(t, x_sp, x, e) -> terminal kind string or None
Until = Callable[[float, float, float, float], "str | None"]


class NumericBlowup(RuntimeError):
    """The loop state left the representable operating region."""


@dataclass
class PiGains:
    kp: float
    ki: float
    integ_limit: float | None = None  # anti-windup clamp on the integrator state (pu*s)

    def validate(self) -> None:
        if self.kp <= 0:
            raise ValueError("gains.kp must be positive")
        if self.ki < 0:
            raise ValueError("gains.ki must be >= 0")
        if self.integ_limit is not None and self.integ_limit <= 0:
            raise ValueError("gains.integ_limit must be positive when set")


@dataclass
class PlantConfig:
    gain: float
    tau: float
    delay_steps: int
    sim_step: float
    comm_step: float
    tau2: float = 0.0          # actuator lag; 0 disables the filter
    u_limit: float | None = None  # actuation saturation (pu of u)

    def validate(self) -> None:
        if self.tau <= 0:
            raise ValueError("plant.tau must be positive")
        if self.sim_step <= 0:
            raise ValueError("plant.sim_step must be positive")
        if self.sim_step > self.tau / 10:
            raise ValueError("plant.sim_step must be <= tau/10")
        ratio = self.comm_step / self.sim_step
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ValueError("plant.comm_step must be an integer multiple of sim_step")
        if self.delay_steps < 0:
            raise ValueError("plant.delay_steps must be >= 0")
        if self.tau2 < 0:
            raise ValueError("plant.tau2 must be >= 0")
        if self.u_limit is not None and self.u_limit <= 0:
            raise ValueError("plant.u_limit must be positive when set")

    @property
    def steps_per_comm(self) -> int:
        return int(round(self.comm_step / self.sim_step))


@dataclass
class LoopState:
    x: float
    integ: float
    u_queue: list[float]
    t: float
    u_filt: float = 0.0


@dataclass
class DisturbanceEvent:
    kind: str  # output-step | input-step | decaying-pulse
    start: float
    magnitude: float
    decay_tau: float = 0.0

    def validate(self) -> None:
        if self.kind not in ("output-step", "input-step", "decaying-pulse"):
            raise ValueError(f"unknown disturbance kind {self.kind!r}")
        if self.start < 0:
            raise ValueError("disturbance.start must be >= 0")
        if self.kind == "decaying-pulse" and self.decay_tau <= 0:
            raise ValueError("decaying-pulse requires decay_tau > 0")


@dataclass
class NestedLoopConfig:
    outer_gains: PiGains
    outer_gain: float          # static gain from inner output to outer variable
    outer_tau: float
    outer_ref_limit: float     # clamp on the inner-loop reference
    inner: PlantConfig
    inner_gains: PiGains

    def validate(self) -> None:
        self.outer_gains.validate()
        self.inner.validate()
        self.inner_gains.validate()
        if self.outer_tau <= 0:
            raise ValueError("nested.outer_tau must be positive")
        if self.outer_ref_limit <= 0:
            raise ValueError("nested.outer_ref_limit must be positive")


def step_pi(gains: PiGains, e: float, integ: float, h: float) -> tuple[float, float]:
    """One PI update: returns (u, new integrator state)."""
    if h <= 0:
        raise ValueError("h must be positive")
    integ = integ + e * h
    lim = gains.integ_limit
    if lim is not None:
        if integ > lim:
            integ = lim
        elif integ < -lim:
            integ = -lim
    return gains.kp * e + gains.ki * integ, integ


def step_plant(
    cfg: PlantConfig, state: LoopState, u: float, disturbance: float = 0.0
) -> LoopState:
    """One explicit sim step of the delayed, filtered first-order plant.

    `disturbance` is this step's additive output contribution, already
    evaluated by the caller from the active DisturbanceEvents.
    """
    if not (math.isfinite(u) and math.isfinite(state.x)):
        raise NumericBlowup("non-finite actuation or output")
    if cfg.u_limit is not None:
        if u > cfg.u_limit:
            u = cfg.u_limit
        elif u < -cfg.u_limit:
            u = -cfg.u_limit
    queue = list(state.u_queue)
    if cfg.delay_steps:
        u_eff = queue.pop(0)
        queue.append(u)
    else:
        u_eff = u
    if cfg.tau2 > 0:
        u_filt = state.u_filt + (cfg.sim_step / cfg.tau2) * (u_eff - state.u_filt)
    else:
        u_filt = u_eff
    x = state.x + (cfg.sim_step / cfg.tau) * (cfg.gain * u_filt - state.x) + disturbance
    return LoopState(x=x, integ=state.integ, u_queue=queue, t=state.t + cfg.sim_step, u_filt=u_filt)


def equilibrium_state(cfg: PlantConfig, gains: PiGains, sp0: float) -> LoopState:
    """Stationary initial state for a constant set point sp0."""
    K = cfg.gain
    if gains.ki > 0:
        integ_needed = sp0 / (K * gains.ki)
        lim = gains.integ_limit
        if lim is None or abs(integ_needed) <= lim:
            x0, integ0 = sp0, integ_needed
            u0 = sp0 / K
        else:
            integ0 = math.copysign(lim, sp0)
            x0 = K * (gains.kp * sp0 + gains.ki * integ0) / (1.0 + K * gains.kp)
            u0 = x0 / K
    else:
        x0 = K * gains.kp * sp0 / (1.0 + K * gains.kp)
        integ0 = 0.0
        u0 = x0 / K
    return LoopState(x=x0, integ=integ0, u_queue=[u0] * cfg.delay_steps, t=0.0, u_filt=u0)


def _compile_disturbances(
    disturbances: Sequence[DisturbanceEvent], h: float
) -> list[list]:
    out = []
    for d in disturbances:
        d.validate()
        i0 = int(math.ceil(d.start / h - 1e-9))
        if d.kind == "decaying-pulse":
            decay = math.exp(-h / d.decay_tau)
            out.append(["pulse", i0, d.magnitude, decay, 0.0, False])
        elif d.kind == "output-step":
            out.append(["ostep", i0, d.magnitude, 0.0, 0.0, False])
        else:
            out.append(["istep", i0, d.magnitude, 0.0, 0.0, False])
    return out


def run_closed_loop(
    cfg: PlantConfig,
    gains: PiGains,
    setpoint_schedule: Sequence[tuple[float, float]],
    disturbances: Sequence[DisturbanceEvent],
    supplementary_hook: Hook | None,
    duration: float,
    *,
    sp0: float = 0.0,
    until: Until | None = None,
) -> EpisodeTrace:
    """Simulate the loop, invoking the hook once per comm step.

    The trace is sampled at the comm cadence; the error column is measured
    against the NOMINAL set point. The modulated set point returned by the
    hook is held between hook calls. `until` (if given) is evaluated on each
    comm sample before the hook and stops the run when it returns a kind.
    The terminal kind is stored in trace.extras["terminal"] as a 0-d array
    of the kind string.
    """
    cfg.validate()
    gains.validate()
    if duration <= 0:
        raise ValueError("duration must be positive")
    times = [t for t, _ in setpoint_schedule]
    if any(b <= a for a, b in zip(times, times[1:])):
        raise ValueError("setpoint schedule times must be strictly increasing")

    h = cfg.sim_step
    spc = cfg.steps_per_comm
    n_sim = int(round(duration / h))
    n_comm = (n_sim + spc - 1) // spc

    st = equilibrium_state(cfg, gains, sp0)
    x = st.x
    integ = st.integ
    u_filt = st.u_filt
    dly = cfg.delay_steps
    queue = list(st.u_queue)
    qi = 0
    a1 = h / cfg.tau
    a2 = h / cfg.tau2 if cfg.tau2 > 0 else 0.0
    K = cfg.gain
    kp, ki = gains.kp, gains.ki
    ilim = gains.integ_limit
    ulim = cfg.u_limit

    tr_t = np.empty(n_comm)
    tr_sp = np.empty(n_comm)
    tr_spm = np.empty(n_comm)
    tr_x = np.empty(n_comm)
    tr_e = np.empty(n_comm)
    tr_m = np.empty(n_comm)
    tr_par = np.empty(n_comm, dtype=np.int8)

    dists = _compile_disturbances(disturbances, h)
    sched = list(setpoint_schedule)
    sched_i = 0
    sp = sp0
    sp_mod = sp0
    k = 0
    terminal = "TimeUp"
    comm_ctr = 0

    for i in range(n_sim):
        t = i * h
        if comm_ctr == 0:
            comm_ctr = spc
            while sched_i < len(sched) and t >= sched[sched_i][0] - 1e-12:
                sp = sched[sched_i][1]
                sched_i += 1
            if not math.isfinite(x):
                raise NumericBlowup(f"non-finite output at t={t}")
            e = sp - x
            tr_t[k] = t
            tr_sp[k] = sp
            tr_x[k] = x
            tr_e[k] = e
            if until is not None:
                kind = until(t, sp, x, e)
                if kind is not None:
                    tr_spm[k] = sp_mod
                    tr_m[k] = 0.0
                    tr_par[k] = 0
                    k += 1
                    terminal = kind
                    break
            if supplementary_hook is not None:
                dec = supplementary_hook(t, sp, x)
                sp_mod = dec.x_sp_mod
                tr_m[k] = dec.m
                tr_par[k] = int(dec.paradigm)
            else:
                sp_mod = sp
                tr_m[k] = 0.0
                tr_par[k] = 0
            tr_spm[k] = sp_mod
            k += 1
        comm_ctr -= 1

        e_ctl = sp_mod - x
        integ += e_ctl * h
        if ilim is not None:
            if integ > ilim:
                integ = ilim
            elif integ < -ilim:
                integ = -ilim
        u = kp * e_ctl + ki * integ
        if ulim is not None:
            if u > ulim:
                u = ulim
            elif u < -ulim:
                u = -ulim
        if dly:
            u_eff = queue[qi]
            queue[qi] = u
            qi += 1
            if qi == dly:
                qi = 0
        else:
            u_eff = u
        if a2:
            u_filt += a2 * (u_eff - u_filt)
        else:
            u_filt = u_eff
        x += a1 * (K * u_filt - x)
        for d in dists:
            if i >= d[1]:
                kind0 = d[0]
                if kind0 == "pulse":
                    if d[5]:
                        dw = d[4] * (d[3] - 1.0)
                        x += dw
                        d[4] += dw
                    else:
                        x += d[2]
                        d[4] = d[2]
                        d[5] = True
                elif kind0 == "ostep":
                    if not d[5]:
                        x += d[2]
                        d[5] = True
                else:  # istep: sustained input bias through the plant pole
                    x += a1 * K * d[2]
        if x > 1e9 or x < -1e9:
            raise NumericBlowup(f"output diverged at t={t}")

    trace = EpisodeTrace(
        t=tr_t[:k],
        x_sp=tr_sp[:k],
        x_sp_mod=tr_spm[:k],
        x=tr_x[:k],
        e=tr_e[:k],
        m=tr_m[:k],
        paradigm=tr_par[:k],
    )
    trace.extras["terminal"] = np.array(terminal)
    return trace


def run_nested_loop(
    cfg: NestedLoopConfig,
    setpoint_schedule: Sequence[tuple[float, float]],
    supplementary_hook: Hook | None,
    duration: float,
    *,
    sp0: float = 0.0,
    until: Until | None = None,
) -> EpisodeTrace:
    """Outer PI sets the (clamped) inner-loop reference; the hook modulates
    the OUTER reference. Trace columns describe the outer variable; the inner
    reference and output ride along in extras."""
    cfg.validate()
    if duration <= 0:
        raise ValueError("duration must be positive")
    inner = cfg.inner
    h = inner.sim_step
    spc = inner.steps_per_comm
    n_sim = int(round(duration / h))
    n_comm = (n_sim + spc - 1) // spc

    # Case studies start from rest; a general nested equilibrium is not needed.
    if sp0 != 0.0:
        raise ValueError("nested runs start from a zero outer set point")
    v = 0.0
    integ_v = 0.0
    x = 0.0
    integ_i = 0.0
    u_filt = 0.0
    queue = [0.0] * inner.delay_steps
    qi = 0
    dly = inner.delay_steps
    a1 = h / inner.tau
    a2 = h / inner.tau2 if inner.tau2 > 0 else 0.0
    av = h / cfg.outer_tau
    Ki = inner.gain
    Kv = cfg.outer_gain
    kp_i, ki_i = cfg.inner_gains.kp, cfg.inner_gains.ki
    kp_v, ki_v = cfg.outer_gains.kp, cfg.outer_gains.ki
    ilim_i = cfg.inner_gains.integ_limit
    ilim_v = cfg.outer_gains.integ_limit
    ulim = inner.u_limit
    rlim = cfg.outer_ref_limit

    tr_t = np.empty(n_comm)
    tr_sp = np.empty(n_comm)
    tr_spm = np.empty(n_comm)
    tr_v = np.empty(n_comm)
    tr_e = np.empty(n_comm)
    tr_m = np.empty(n_comm)
    tr_par = np.empty(n_comm, dtype=np.int8)
    tr_ri = np.empty(n_comm)
    tr_xi = np.empty(n_comm)

    sched = list(setpoint_schedule)
    sched_i = 0
    sp = sp0
    sp_mod = sp0
    r_i = 0.0
    k = 0
    terminal = "TimeUp"
    comm_ctr = 0

    for i in range(n_sim):
        t = i * h
        if comm_ctr == 0:
            comm_ctr = spc
            while sched_i < len(sched) and t >= sched[sched_i][0] - 1e-12:
                sp = sched[sched_i][1]
                sched_i += 1
            if not math.isfinite(v):
                raise NumericBlowup(f"non-finite outer output at t={t}")
            e = sp - v
            tr_t[k] = t
            tr_sp[k] = sp
            tr_v[k] = v
            tr_e[k] = e
            tr_ri[k] = r_i
            tr_xi[k] = x
            if until is not None:
                kind = until(t, sp, v, e)
                if kind is not None:
                    tr_spm[k] = sp_mod
                    tr_m[k] = 0.0
                    tr_par[k] = 0
                    k += 1
                    terminal = kind
                    break
            if supplementary_hook is not None:
                dec = supplementary_hook(t, sp, v)
                sp_mod = dec.x_sp_mod
                tr_m[k] = dec.m
                tr_par[k] = int(dec.paradigm)
            else:
                sp_mod = sp
                tr_m[k] = 0.0
                tr_par[k] = 0
            tr_spm[k] = sp_mod
            k += 1
        comm_ctr -= 1

        e_v = sp_mod - v
        integ_v += e_v * h
        if ilim_v is not None:
            if integ_v > ilim_v:
                integ_v = ilim_v
            elif integ_v < -ilim_v:
                integ_v = -ilim_v
        r_i = kp_v * e_v + ki_v * integ_v
        if r_i > rlim:
            r_i = rlim
        elif r_i < -rlim:
            r_i = -rlim

        e_i = r_i - x
        integ_i += e_i * h
        if ilim_i is not None:
            if integ_i > ilim_i:
                integ_i = ilim_i
            elif integ_i < -ilim_i:
                integ_i = -ilim_i
        u = kp_i * e_i + ki_i * integ_i
        if ulim is not None:
            if u > ulim:
                u = ulim
            elif u < -ulim:
                u = -ulim
        if dly:
            u_eff = queue[qi]
            queue[qi] = u
            qi += 1
            if qi == dly:
                qi = 0
        else:
            u_eff = u
        if a2:
            u_filt += a2 * (u_eff - u_filt)
        else:
            u_filt = u_eff
        x += a1 * (Ki * u_filt - x)
        v += av * (Kv * x - v)
        if v > 1e9 or v < -1e9:
            raise NumericBlowup(f"outer output diverged at t={t}")

    trace = EpisodeTrace(
        t=tr_t[:k],
        x_sp=tr_sp[:k],
        x_sp_mod=tr_spm[:k],
        x=tr_v[:k],
        e=tr_e[:k],
        m=tr_m[:k],
        paradigm=tr_par[:k],
        extras={"inner_ref": tr_ri[:k], "inner_x": tr_xi[:k]},
    )
    trace.extras["terminal"] = np.array(terminal)
    return trace


def run_coupled_loops(
    cfgs: Sequence[PlantConfig],
    gains: Sequence[PiGains],
    schedules: Sequence[Sequence[tuple[float, float]]],
    hooks: Sequence[Hook | None],
    duration: float,
    coupling: float,
    *,
    sp0: Sequence[float] | None = None,
    untils: Sequence[Until | None] | None = None,
) -> list[EpisodeTrace]:
    """Step several loops in lockstep. Each loop's MEASURED output is its own
    state plus `coupling` times the other loops' deviation from their nominal
    set points; controllers, hooks, and traces all see the measured output.
    With coupling = 0 every trace is bit-identical to the single-loop run.
    """
    n = len(cfgs)
    if not (0.0 <= coupling <= 0.2):
        raise ValueError("coupling must be within [0, 0.2]")
    if n < 1:
        raise ValueError("need at least one loop")
    base = cfgs[0]
    for c in cfgs:
        c.validate()
        if c.sim_step != base.sim_step or c.comm_step != base.comm_step:
            raise ValueError("coupled loops must share sim and comm steps")
    for g in gains:
        g.validate()
    if sp0 is None:
        sp0 = [0.0] * n
    if untils is None:
        untils = [None] * n

    h = base.sim_step
    spc = base.steps_per_comm
    n_sim = int(round(duration / h))
    n_comm = (n_sim + spc - 1) // spc

    sts = [equilibrium_state(cfgs[j], gains[j], sp0[j]) for j in range(n)]
    xs = [st.x for st in sts]
    integs = [st.integ for st in sts]
    ufs = [st.u_filt for st in sts]
    queues = [list(st.u_queue) for st in sts]
    qis = [0] * n
    sps = list(sp0)
    sp_mods = list(sp0)
    scheds = [list(s) for s in schedules]
    sched_is = [0] * n
    stopped = [False] * n
    terminals = ["TimeUp"] * n
    ks = [0] * n

    cols = [
        {
            name: np.empty(n_comm, dtype=(np.int8 if name == "par" else float))
            for name in ("t", "sp", "spm", "x", "e", "m", "par")
        }
        for _ in range(n)
    ]

    for i in range(n_sim):
        t = i * h
        at_comm = i % spc == 0
        # measured outputs incl. cross-coupling of deviations
        if coupling != 0.0:
            devs = [xs[j] - sps[j] for j in range(n)]
            total = sum(devs)
            meas = [xs[j] + coupling * (total - devs[j]) for j in range(n)]
        else:
            meas = xs
        if at_comm:
            for j in range(n):
                if stopped[j]:
                    continue
                while sched_is[j] < len(scheds[j]) and t >= scheds[j][sched_is[j]][0] - 1e-12:
                    sps[j] = scheds[j][sched_is[j]][1]
                    sched_is[j] += 1
                xm = meas[j]
                if not math.isfinite(xm):
                    raise NumericBlowup(f"loop {j} non-finite at t={t}")
                e = sps[j] - xm
                c = cols[j]
                k = ks[j]
                c["t"][k] = t
                c["sp"][k] = sps[j]
                c["x"][k] = xm
                c["e"][k] = e
                if untils[j] is not None:
                    kind = untils[j](t, sps[j], xm, e)
                    if kind is not None:
                        c["spm"][k] = sp_mods[j]
                        c["m"][k] = 0.0
                        c["par"][k] = 0
                        ks[j] += 1
                        stopped[j] = True
                        terminals[j] = kind
                        sp_mods[j] = sps[j]
                        continue
                if hooks[j] is not None:
                    dec = hooks[j](t, sps[j], xm)
                    sp_mods[j] = dec.x_sp_mod
                    c["m"][k] = dec.m
                    c["par"][k] = int(dec.paradigm)
                else:
                    sp_mods[j] = sps[j]
                    c["m"][k] = 0.0
                    c["par"][k] = 0
                c["spm"][k] = sp_mods[j]
                ks[j] += 1
        for j in range(n):
            cfg = cfgs[j]
            g = gains[j]
            e_ctl = sp_mods[j] - meas[j]
            integ = integs[j] + e_ctl * h
            if g.integ_limit is not None:
                if integ > g.integ_limit:
                    integ = g.integ_limit
                elif integ < -g.integ_limit:
                    integ = -g.integ_limit
            integs[j] = integ
            u = g.kp * e_ctl + g.ki * integ
            if cfg.u_limit is not None:
                if u > cfg.u_limit:
                    u = cfg.u_limit
                elif u < -cfg.u_limit:
                    u = -cfg.u_limit
            if cfg.delay_steps:
                q = queues[j]
                u_eff = q[qis[j]]
                q[qis[j]] = u
                qis[j] = (qis[j] + 1) % cfg.delay_steps
            else:
                u_eff = u
            if cfg.tau2 > 0:
                ufs[j] += (h / cfg.tau2) * (u_eff - ufs[j])
            else:
                ufs[j] = u_eff
            xs[j] += (h / cfg.tau) * (cfg.gain * ufs[j] - xs[j])
            if xs[j] > 1e9 or xs[j] < -1e9:
                raise NumericBlowup(f"loop {j} diverged at t={t}")

    traces = []
    for j in range(n):
        c = cols[j]
        k = ks[j]
        tr = EpisodeTrace(
            t=c["t"][:k],
            x_sp=c["sp"][:k],
            x_sp_mod=c["spm"][:k],
            x=c["x"][:k],
            e=c["e"][:k],
            m=c["m"][:k],
            paradigm=c["par"][:k],
        )
        tr.extras["terminal"] = np.array(terminals[j])
        traces.append(tr)
    return traces
