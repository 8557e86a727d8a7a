"""Explicit method-of-lines simulator for the controlled drill string.

Spatial scheme
--------------
Nodes ``xi_i = i dxi`` for ``i = 0..N-1``.  Cell strains
``s_{i+1/2} = (phi_{i+1} - phi_i) / dxi`` live between nodes.  Nodes
``0..N-2`` carry the string mass ``rho dxi`` and obey

    rho phi_i'' = (G s_{i+1/2} - G s_{i-1/2}) / dxi - F_d(xi_i, phi_i')

where the top flux ``G s_{-1/2} = u`` comes from the ghost node
``phi_{-1} = phi_0 - (dxi / G) u``.  The bit node ``N-1`` carries only the
bit inertia:

    J y' = -Gamma G s_{N-3/2} + F_e(y).

Summation by parts gives, for the energy :func:`discrete_energy`,
``dE/dt = -2 (u z + dxi sum v_i F_d(xi_i, v_i) - y F_e(y) / Gamma)``
exactly, so the undamped, uncontrolled semi-discrete system conserves it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Callable, Optional

import numpy as np
from scipy.integrate import RK23

from .characteristics import InitialData, VelocityField
from .errors import ConfigurationError, DomainError, FunnelViolation
from .funnel import ControlSignals, FunnelController
from .model import DampingSpec, DrillParams

__all__ = [
    "SpatialGrid",
    "SimState",
    "SimTrace",
    "SimResult",
    "WaveModel",
    "FreeRun",
    "ghost_value",
    "rhs",
    "wave_acceleration",
    "step_fixed",
    "discrete_energy",
    "energy_rate",
    "choose_dt",
    "initial_state",
    "run_free",
    "run_closed_loop",
    "summarize",
]

TRACE_COLUMNS = ("t", "y", "y_ref", "e", "w", "psi_shift", "v", "u", "z", "I", "energy")


@dataclass(frozen=True)
class SpatialGrid:
    n_points: int
    ell: float = 1.0

    def __post_init__(self):
        if int(self.n_points) < 3:
            raise ConfigurationError(f"grid needs at least 3 nodes, got {self.n_points}")
        if not self.ell > 0:
            raise ConfigurationError(f"grid length must be positive, got {self.ell}")

    @classmethod
    def from_spacing(cls, ell: float, dxi: float) -> "SpatialGrid":
        return cls(int(round(ell / dxi)) + 1, ell)

    @property
    def dxi(self) -> float:
        return self.ell / (self.n_points - 1)

    @property
    def nodes(self) -> np.ndarray:
        return self.dxi * np.arange(self.n_points)


ENDS = ("drill", "fixed")


@dataclass(frozen=True)
class WaveModel:
    """String, damping and grid.

    ``ends="drill"`` is the controlled drill string (input torque at the top,
    bit inertia at the bottom).  ``ends="fixed"`` clamps both end nodes,
    which is only meant for open-loop verification runs of the interior
    scheme against standing waves.
    """

    params: DrillParams
    damping: DampingSpec
    grid: SpatialGrid
    ends: str = "drill"

    def __post_init__(self):
        if abs(self.grid.ell - self.params.ell) > 1e-12 * self.params.ell:
            raise ConfigurationError("grid length and string length differ")
        if self.ends not in ENDS:
            raise ConfigurationError(f"ends must be one of {ENDS}, got {self.ends!r}")


@dataclass
class SimState:
    phi: np.ndarray
    vel: np.ndarray
    I: float = 0.0
    t: float = 0.0

    @property
    def y(self) -> float:
        return float(self.vel[-1])

    @property
    def z(self) -> float:
        return float(self.vel[0])

    def copy(self) -> "SimState":
        return SimState(self.phi.copy(), self.vel.copy(), self.I, self.t)


def ghost_value(phi0: float, u: float, G: float, dxi: float) -> float:
    return phi0 - dxi / G * u


def wave_acceleration(phi: np.ndarray, vel: np.ndarray, u: float, model: WaveModel) -> np.ndarray:
    """Nodal accelerations ``phi_i''`` for boundary torque ``u`` at the top."""
    p, d, g = model.params, model.damping, model.grid
    dxi = g.dxi
    flux = p.G * np.diff(phi) / dxi
    acc = np.empty_like(vel)
    inflow = np.empty_like(flux)
    inflow[0] = u
    inflow[1:] = flux[:-1]
    acc[:-1] = ((flux - inflow) / dxi - d.Fd(g.nodes[:-1], vel[:-1])) / p.rho
    acc[-1] = (-p.Gamma * flux[-1] + d.Fe(vel[-1])) / p.J
    if model.ends == "fixed":
        acc[0] = acc[-1] = 0.0
    return acc


def rhs(state: SimState, model: WaveModel, u: float, I_rate: float = 0.0) -> SimState:
    """Time derivative of ``state`` as a :class:`SimState` (``t`` holds 1)."""
    acc = wave_acceleration(state.phi, state.vel, u, model)
    if not (np.all(np.isfinite(acc)) and np.all(np.isfinite(state.phi))):
        raise DomainError(f"non-finite state at t={state.t}")
    return SimState(state.vel.copy(), acc, I_rate, 1.0)


def discrete_energy(state: SimState, params: DrillParams, grid: SpatialGrid, ends: str = "drill") -> float:
    """``dxi sum_{i<N-1} rho v_i^2 + dxi sum_cells G s^2 + (J / Gamma) y^2``.

    With ``ends="fixed"`` the clamped end nodes carry no kinetic energy and
    there is no bit term.
    """
    dxi = grid.dxi
    s = np.diff(state.phi) / dxi
    moving = state.vel[1:-1] if ends == "fixed" else state.vel[:-1]
    kinetic = params.rho * dxi * float(np.dot(moving, moving))
    strain = params.G * dxi * float(np.dot(s, s))
    bit = 0.0 if ends == "fixed" else params.J / params.Gamma * state.y**2
    return kinetic + strain + bit


def energy_rate(state: SimState, model: WaveModel, u: float = 0.0) -> float:
    """``dE/dt`` of :func:`discrete_energy` along the semi-discrete flow."""
    p, g = model.params, model.grid
    dxi = g.dxi
    acc = wave_acceleration(state.phi, state.vel, u, model)
    s = np.diff(state.phi) / dxi
    ds = np.diff(state.vel) / dxi
    moving = slice(1, -1) if model.ends == "fixed" else slice(0, -1)
    rate = 2 * p.rho * dxi * float(np.dot(state.vel[moving], acc[moving])) + 2 * p.G * dxi * float(np.dot(s, ds))
    if model.ends == "drill":
        rate += 2 * p.J / p.Gamma * state.y * acc[-1]
    return rate


def choose_dt(
    model: WaveModel,
    cfl_fraction: float = 0.5,
    dt: float | None = None,
    omega: float | None = None,
    cfl_max: float = 0.9,
) -> float:
    """Fixed RK4 step.

    Starts from ``dt`` or ``cfl_fraction * dxi / c``, shrinks it so the bit
    friction's steepest slope stays inside RK4's real stability interval, and
    finally rounds down to ``omega / m`` so delayed samples fall on nodes.
    """
    p = model.params
    base = dt if dt is not None else cfl_fraction * model.grid.dxi / p.c
    slope = model.damping.Fe_max_slope
    if dt is None and slope > 0:
        base = min(base, 2.0 * p.J / slope)
    if omega is not None:
        m = max(1, int(math.ceil(omega / base - 1e-9)))
        base = omega / m
    cfl = p.c * base / model.grid.dxi
    if cfl > cfl_max * (1 + 1e-12):
        raise ConfigurationError(f"CFL number {cfl:.4g} exceeds cfl_max={cfl_max}")
    return base


def _check_cfl(model: WaveModel, dt: float, cfl_max: float) -> None:
    if not dt > 0:
        raise ConfigurationError(f"time step must be positive, got {dt!r}")
    cfl = model.params.c * dt / model.grid.dxi
    if cfl > cfl_max * (1 + 1e-12):
        raise ConfigurationError(f"CFL number {cfl:.4g} exceeds cfl_max={cfl_max}")


def step_fixed(
    state: SimState,
    dt: float,
    model: WaveModel,
    controller: FunnelController | None = None,
    u: Callable[[float], float] | float = 0.0,
    cfl_max: float = 0.9,
) -> SimState:
    """One classical RK4 step.

    With a ``controller`` the boundary input is ``u = z / c + v`` evaluated at
    every stage, ``I`` is advanced alongside the string, and the new ``y``,
    ``v`` and ``z`` are pushed into the controller's delay buffers; the
    signals at the new node are left in ``controller.last``.  Without one,
    ``u`` is an open-loop torque (constant or a function of time).
    """
    _check_cfl(model, dt, cfl_max)
    u_of_t = u if callable(u) else (lambda t, _u=float(u): _u)

    if controller is not None and controller.e_mode == "direct":
        new = _step_direct(state, dt, model, controller)
        _close_step(controller, new)
        return new

    def stage(t, phi, vel, I):
        if controller is not None:
            sig = controller.signals(t, I, z=float(vel[0]))
            return vel, wave_acceleration(phi, vel, sig.u, model), sig.I_rate
        return vel, wave_acceleration(phi, vel, u_of_t(t), model), 0.0

    t, h = state.t, dt
    p1, a1, i1 = stage(t, state.phi, state.vel, state.I)
    p2, a2, i2 = stage(t + h / 2, state.phi + h / 2 * p1, state.vel + h / 2 * a1, state.I + h / 2 * i1)
    p3, a3, i3 = stage(t + h / 2, state.phi + h / 2 * p2, state.vel + h / 2 * a2, state.I + h / 2 * i2)
    p4, a4, i4 = stage(t + h, state.phi + h * p3, state.vel + h * a3, state.I + h * i3)
    new = SimState(
        state.phi + h / 6 * (p1 + 2 * p2 + 2 * p3 + p4),
        state.vel + h / 6 * (a1 + 2 * a2 + 2 * a3 + a4),
        state.I + h / 6 * (i1 + 2 * i2 + 2 * i3 + i4),
        t + h,
    )
    if not (np.all(np.isfinite(new.vel)) and np.all(np.isfinite(new.phi))):
        raise DomainError(f"non-finite state after step to t={new.t}")
    if controller is not None:
        _close_step(controller, new)
    return new


def _step_direct(state: SimState, dt: float, model: WaveModel, controller: FunnelController) -> SimState:
    # I only sees stored history here, so it is advanced first and v is known at every stage
    (s0, sh, s1), I_end = controller.advance_direct(state.t, state.I, dt)
    c = model.params.c
    h = dt

    def acc(phi, vel, sig):
        return wave_acceleration(phi, vel, vel[0] / c + sig.v, model)

    a1 = acc(state.phi, state.vel, s0)
    p2, v2 = state.phi + h / 2 * state.vel, state.vel + h / 2 * a1
    a2 = acc(p2, v2, sh)
    p3, v3 = state.phi + h / 2 * v2, state.vel + h / 2 * a2
    a3 = acc(p3, v3, sh)
    p4, v4 = state.phi + h * v3, state.vel + h * a3
    a4 = acc(p4, v4, s1)
    new = SimState(
        state.phi + h / 6 * (state.vel + 2 * v2 + 2 * v3 + v4),
        state.vel + h / 6 * (a1 + 2 * a2 + 2 * a3 + a4),
        I_end,
        state.t + h,
    )
    if not (np.all(np.isfinite(new.vel)) and np.all(np.isfinite(new.phi))):
        raise DomainError(f"non-finite state after step to t={new.t}")
    return new


def _close_step(controller: FunnelController, new: SimState) -> ControlSignals:
    sig = controller.signals(new.t, new.I, z=new.z)
    controller.record(new.t, new.y, sig.v, new.z)
    controller.last = sig
    return sig


def initial_state(model: WaveModel, data: InitialData) -> SimState:
    xi = model.grid.nodes
    phi = np.asarray(data.phi0(xi), dtype=float) * np.ones_like(xi)
    vel = np.asarray(data.v0(xi), dtype=float) * np.ones_like(xi)
    return SimState(phi, vel, 0.0, 0.0)


# --------------------------------------------------------------------------
# open-loop runs


@dataclass
class FreeRun:
    times: np.ndarray
    energy: np.ndarray
    state: SimState
    snapshot_times: np.ndarray
    snapshots: np.ndarray


def run_free(
    model: WaveModel,
    data: InitialData,
    t_end: float,
    dt: float,
    u: Callable[[float], float] | float = 0.0,
    snapshot_every: int | None = None,
    cfl_max: float = 0.9,
) -> FreeRun:
    """Open-loop RK4 run recording the energy after every step."""
    state = initial_state(model, data)
    n_steps = int(math.ceil(t_end / dt - 1e-9))
    times = np.empty(n_steps + 1)
    energy = np.empty(n_steps + 1)
    times[0], energy[0] = 0.0, discrete_energy(state, model.params, model.grid, model.ends)
    snaps_t, snaps = [], []
    if snapshot_every:
        snaps_t.append(0.0)
        snaps.append(state.vel.copy())
    for n in range(n_steps):
        state = step_fixed(state, dt, model, u=u, cfl_max=cfl_max)
        state.t = (n + 1) * dt
        times[n + 1] = state.t
        energy[n + 1] = discrete_energy(state, model.params, model.grid, model.ends)
        if snapshot_every and (n + 1) % snapshot_every == 0:
            snaps_t.append(state.t)
            snaps.append(state.vel.copy())
    return FreeRun(times, energy, state, np.asarray(snaps_t), np.asarray(snaps))


# --------------------------------------------------------------------------
# closed loop


@dataclass
class SimTrace:
    """Column-oriented time series; all columns share the length of ``t``."""

    t: np.ndarray
    y: np.ndarray
    y_ref: np.ndarray
    e: np.ndarray
    w: np.ndarray
    psi_shift: np.ndarray
    v: np.ndarray
    u: np.ndarray
    z: np.ndarray
    I: np.ndarray
    energy: np.ndarray

    def __post_init__(self):
        n = len(self.t)
        for f in fields(self):
            arr = np.asarray(getattr(self, f.name), dtype=float)
            if arr.shape != (n,):
                raise ValueError(f"column {f.name} has shape {arr.shape}, expected ({n},)")
            setattr(self, f.name, arr)
        if n > 1 and np.any(np.diff(self.t) <= 0):
            raise ValueError("trace times must be strictly increasing")

    def __len__(self) -> int:
        return len(self.t)

    @classmethod
    def empty(cls) -> "SimTrace":
        return cls(*[np.empty(0) for _ in TRACE_COLUMNS])

    def columns(self) -> dict:
        return {name: getattr(self, name) for name in TRACE_COLUMNS}

    def resample(self, n_rows: int, t_end: float) -> "SimTrace":
        """Linear interpolation onto ``n_rows`` uniform times in ``[0, t_end]``."""
        if n_rows <= 0:
            return SimTrace.empty()
        if not t_end > self.t[0]:
            n_rows = 1
        ts = np.linspace(0.0, t_end, n_rows)
        cols = {"t": ts}
        for name in TRACE_COLUMNS[1:]:
            src = getattr(self, name)
            ok = np.isfinite(src)
            cols[name] = np.interp(ts, self.t[ok], src[ok]) if ok.any() else np.full(n_rows, np.nan)
        cols["w"] = _corrected_error(ts, self)
        return SimTrace(**cols)


def _corrected_error(ts: np.ndarray, raw: SimTrace, omega: float | None = None) -> np.ndarray:
    omega = raw_omega(raw) if omega is None else omega
    y = np.interp(ts, raw.t, raw.y)
    yref = np.interp(ts, raw.t, raw.y_ref)
    shifted = ts + omega
    I_ahead = np.interp(shifted, raw.t, raw.I)
    return np.where(shifted <= raw.t[-1] + 1e-12, y - yref + I_ahead, np.nan)


_OMEGA_ATTR = "_omega"


def raw_omega(raw: SimTrace) -> float:
    return getattr(raw, _OMEGA_ATTR, math.inf)


@dataclass
class SimResult:
    """Output of a closed-loop engine.

    ``raw`` holds every integration node, ``trace`` the resampled rows.
    ``violation`` is set when the run stopped on a funnel violation; the
    traces then end at the last completed step.
    """

    raw: SimTrace
    trace: SimTrace
    summary: dict
    dt: float
    engine: str
    field: Optional[VelocityField] = None
    violation: Optional[FunnelViolation] = None


class _Recorder:
    def __init__(self, capacity: int, n_field: int | None):
        self.rows = {name: np.full(capacity, np.nan) for name in TRACE_COLUMNS}
        self.n = 0
        self.field = [] if n_field else None

    def add(self, **values):
        for k, v in values.items():
            self.rows[k][self.n] = v
        self.n += 1

    def trace(self, omega: float) -> SimTrace:
        cols = {k: v[: self.n] for k, v in self.rows.items()}
        raw = SimTrace(**cols)
        setattr(raw, _OMEGA_ATTR, omega)
        raw.w = _corrected_error(raw.t, raw, omega)
        return raw


def summarize(raw: SimTrace, reference_terminal: bool = True) -> dict:
    """Scalar diagnostics over all integration nodes."""
    margin = raw.psi_shift * (1.0 - np.abs(raw.e))

    def finite_max(a):
        a = np.abs(a[np.isfinite(a)])
        return float(a.max()) if a.size else math.nan

    def finite_min(a):
        a = a[np.isfinite(a)]
        return float(a.min()) if a.size else math.nan

    return {
        "t_final": float(raw.t[-1]) if len(raw) else math.nan,
        "min_funnel_margin": finite_min(margin),
        "max_abs_e": finite_max(raw.e),
        "max_abs_v": finite_max(raw.v),
        "max_abs_u": finite_max(raw.u),
        "max_abs_I": finite_max(raw.I),
        "max_abs_y": finite_max(raw.y),
        "terminal_tracking_error": float(abs(raw.y[-1] - raw.y_ref[-1])) if len(raw) else math.nan,
        "final_energy": float(raw.energy[-1]) if len(raw) else math.nan,
    }


def build_model(cfg) -> WaveModel:
    grid = SpatialGrid(cfg.n_points, cfg.params.ell)
    return WaveModel(cfg.params, cfg.damping, grid)


def run_closed_loop(cfg, record_field: bool = False, e_mode: str | None = None) -> SimResult:
    """Simulate ``cfg`` with the explicit engine.

    Parameters
    ----------
    cfg : ExperimentConfig
    record_field : bool
        Keep the velocity profile at every node for characteristic
        post-processing (returned as ``SimResult.field``).
    e_mode : str, optional
        Overrides ``cfg.e_mode``.

    A funnel violation stops the run; the partial traces are returned with
    ``violation`` set rather than raised, so callers can report them.
    """
    model = build_model(cfg)
    p = cfg.params
    ts = cfg.time
    omega = p.omega
    state = initial_state(model, cfg.initial)
    ref = cfg.reference

    if ts.integrator == "rk23":
        return _run_rk23(cfg, model, state, record_field, e_mode or cfg.e_mode)

    dt = choose_dt(model, ts.cfl_fraction, ts.dt, omega if cfg.control else None, ts.cfl_max)
    n_steps = int(math.ceil(ts.t_end / dt - 1e-9))
    rec = _Recorder(n_steps + 1, model.grid.n_points if record_field else None)

    controller = None
    violation = None
    if cfg.control:
        controller = FunnelController(cfg.funnel, ref, p.c, p.G, e_mode or cfg.e_mode)
        y0, z0 = state.y, state.z
        try:
            controller.last = controller.start(dt, y_hist=lambda t: y0, z_hist=lambda t: z0, z0=z0)
        except FunnelViolation as exc:
            violation = exc

    def log(st: SimState, sig: ControlSignals | None):
        e = sig.e if sig else math.nan
        rec.add(
            t=st.t, y=st.y, y_ref=float(ref(st.t)), e=e, w=math.nan,
            psi_shift=sig.psi_shift if sig else math.nan,
            v=sig.v if sig else 0.0, u=sig.u if sig else 0.0, z=st.z, I=st.I,
            energy=discrete_energy(st, p, model.grid),
        )
        if rec.field is not None:
            rec.field.append(st.vel.copy())

    log(state, controller.last if controller else None)
    try:
        for n in range(n_steps if violation is None else 0):
            state = step_fixed(state, dt, model, controller=controller, cfl_max=ts.cfl_max)
            state.t = (n + 1) * dt
            log(state, controller.last if controller else None)
    except FunnelViolation as exc:
        violation = exc

    raw = rec.trace(omega)
    field = None
    if rec.field is not None and len(rec.field) > 1:
        field = VelocityField(raw.t, model.grid.nodes, np.asarray(rec.field))
    return SimResult(
        raw=raw,
        trace=raw.resample(ts.n_output_rows, ts.t_end) if violation is None else raw.resample(ts.n_output_rows, float(raw.t[-1])),
        summary=_finish_summary(raw, violation, dt, n_steps),
        dt=dt,
        engine="explicit",
        field=field,
        violation=violation,
    )


def _finish_summary(raw: SimTrace, violation, dt: float, n_steps: int) -> dict:
    summary = summarize(raw)
    summary["dt"] = dt
    summary["n_steps"] = int(len(raw) - 1)
    summary["violation_time"] = None if violation is None else float(violation.t)
    return summary


def _run_rk23(cfg, model: WaveModel, state: SimState, record_field: bool, e_mode: str) -> SimResult:
    """Adaptive embedded 2(3) pair with delayed samples read from the buffers."""
    p, ts, ref = cfg.params, cfg.time, cfg.reference
    omega = p.omega
    N = model.grid.n_points
    controller = None
    h0 = 0.5 * model.grid.dxi / p.c
    if cfg.control:
        controller = FunnelController(cfg.funnel, ref, p.c, p.G, e_mode)
        y0, z0 = state.y, state.z
        controller.last = controller.start(h0, y_hist=lambda t: y0, z_hist=lambda t: z0, z0=z0)

    def fun(t, X):
        phi, vel, I = X[:N], X[N: 2 * N], X[-1]
        if controller is not None:
            sig = controller.signals(t, I, z=float(vel[0]))
            u, Ir = sig.u, sig.I_rate
        else:
            u, Ir = 0.0, 0.0
        return np.concatenate([vel, wave_acceleration(phi, vel, u, model), [Ir]])

    X0 = np.concatenate([state.phi, state.vel, [state.I]])
    solver = RK23(fun, 0.0, X0, ts.t_end, max_step=min(omega, h0 * 4), rtol=1e-6, atol=1e-9)
    rec_rows = []
    fields_ = [] if record_field else None

    def snapshot(t, X, sig):
        st = SimState(X[:N].copy(), X[N: 2 * N].copy(), float(X[-1]), t)
        rec_rows.append(dict(
            t=t, y=st.y, y_ref=float(ref(t)), e=sig.e if sig else math.nan, w=math.nan,
            psi_shift=sig.psi_shift if sig else math.nan, v=sig.v if sig else 0.0,
            u=sig.u if sig else 0.0, z=st.z, I=st.I, energy=discrete_energy(st, p, model.grid),
        ))
        if fields_ is not None:
            fields_.append(st.vel)
        return st

    snapshot(0.0, X0, controller.last if controller else None)
    violation = None
    try:
        while solver.status == "running":
            msg = solver.step()
            if solver.status == "failed":
                raise DomainError(f"adaptive integrator failed: {msg}")
            st = SimState(solver.y[:N], solver.y[N: 2 * N], float(solver.y[-1]), solver.t)
            sig = _close_step(controller, st) if controller else None
            snapshot(solver.t, solver.y, sig)
    except FunnelViolation as exc:
        violation = exc

    rec = _Recorder(len(rec_rows), None)
    for row in rec_rows:
        rec.add(**row)
    raw = rec.trace(omega)
    field = VelocityField(raw.t, model.grid.nodes, np.asarray(fields_)) if fields_ else None
    dts = np.diff(raw.t)
    summary = _finish_summary(raw, violation, float(dts.mean()) if dts.size else math.nan, len(raw) - 1)
    return SimResult(raw, raw.resample(ts.n_output_rows, float(raw.t[-1]) if violation else ts.t_end),
                     summary, summary["dt"], "explicit-rk23", field, violation)
