"""Delay-compensating funnel controller.

The controller only sees the top velocity ``z`` and, in ``direct`` mode, the
delayed bit velocity ``y(t - omega)``.  It produces

* the normalized error ``e = (y(t-w) - y_ref(t-w) + I) / psi(t-w)``,
* the raw input ``v = k e / (1 - e^2) + (v_hat - k e0 / (1 - e0^2)) p(t)``,
* the correction dynamics ``I' = -alpha I - beta (v(t) - v(t - 2w))``,
* the boundary torque ``u = z / c + v``.

In ``measured`` mode ``y(t - w)`` is never read; ``e`` is reconstructed from
``z(t)``, ``z(t - 2w)``, ``v(t - 2w)`` and ``I`` by a safeguarded Newton solve.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
from scipy.optimize import brentq

from .delay import HistoryBuffer, init_history
from .errors import ConfigurationError, ConvergenceError, DomainError, FunnelViolation
from .model import ReferenceSpec

__all__ = [
    "FunnelConfig",
    "ControllerState",
    "ControlSignals",
    "FunnelController",
    "psi_eval",
    "psi_dot",
    "shaping_p",
    "error_transform",
    "controller_v",
    "compute_e_direct",
    "measured_rhs",
    "solve_e_measured",
    "update_I",
    "control_input_u",
]

E_MODES = ("direct", "measured")
I_SIGNS = ("minus", "plus")

NEWTON_TOL = 1e-12
NEWTON_MAXITER = 50
_EDGE = 1.0 - 1e-14


@dataclass(frozen=True)
class FunnelConfig:
    """Design parameters of the controller.

    The funnel boundary is ``psi(t) = a exp(-b t) + d`` on ``[-omega, inf)``.
    ``i_sign`` selects the sign in front of ``beta`` in the correction
    dynamics: ``"minus"`` gives ``I' = -alpha I - beta (v - v_2w)``.
    """

    a: float = 8.0
    b: float = 1.0
    d: float = 0.1
    omega: float = 1.0
    k: float = 1.0
    alpha: float = 1.0
    beta: float = 1.0
    v_hat: float = 1.0
    T_shaping: float = 0.5
    i_sign: str = "minus"

    def __post_init__(self):
        problems = []
        if not self.a >= 0:
            problems.append("a must be >= 0")
        if not self.b >= 0:
            problems.append("b must be >= 0")
        if not self.d > 0:
            problems.append("d must be > 0 (inf psi > 0)")
        if not self.omega > 0:
            problems.append("omega must be > 0")
        for name in ("k", "alpha", "beta", "T_shaping"):
            if not getattr(self, name) > 0:
                problems.append(f"{name} must be > 0")
        if not math.isfinite(self.v_hat):
            problems.append("v_hat must be finite")
        if self.i_sign not in I_SIGNS:
            problems.append(f"i_sign must be one of {I_SIGNS}")
        if problems:
            raise ConfigurationError("invalid FunnelConfig: " + "; ".join(problems))

    @property
    def psi_inf(self) -> float:
        return self.d

    @property
    def psi_sup(self) -> float:
        return self.a * math.exp(self.b * self.omega) + self.d

    @property
    def psi_dot_sup(self) -> float:
        return self.a * self.b * math.exp(self.b * self.omega)

    @property
    def i_sign_factor(self) -> float:
        return 1.0 if self.i_sign == "minus" else -1.0

    def with_omega(self, omega: float) -> "FunnelConfig":
        return replace(self, omega=omega)


@dataclass(frozen=True)
class ControllerState:
    I: float = 0.0
    e0: float = 0.0
    t: float = 0.0


@dataclass(frozen=True)
class ControlSignals:
    """Everything the controller computes at one time instant."""

    t: float
    e: float
    v: float
    u: float
    I_rate: float
    psi_shift: float
    y_del: float


def psi_eval(cfg: FunnelConfig, t):
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < -cfg.omega * (1 + 1e-12)):
        raise DomainError(f"funnel boundary is defined on [-{cfg.omega}, inf)")
    return cfg.a * np.exp(-cfg.b * t) + cfg.d


def psi_dot(cfg: FunnelConfig, t):
    return -cfg.a * cfg.b * np.exp(-cfg.b * np.asarray(t, dtype=float))


def shaping_p(t: float, T: float) -> float:
    """Smooth cut-off with ``p(0) = 1`` and support in ``[0, T]``.

    ``p = exp(s^2 / (s^2 - 1))`` with ``s = t / T``.
    """
    if not T > 0:
        raise ConfigurationError(f"shaping horizon must be positive, got {T!r}")
    s = t / T
    if s < 0.0 or s >= 1.0:
        return 0.0
    s2 = s * s
    return math.exp(s2 / (s2 - 1.0))


def error_transform(e: float, k: float, t: float = math.nan) -> float:
    """``k e / (1 - e^2)``; raises :class:`FunnelViolation` for ``|e| >= 1``."""
    if not abs(e) < 1.0:
        raise FunnelViolation(t, e)
    return k * e / (1.0 - e * e)


def shaping_term(state: ControllerState, cfg: FunnelConfig, t: float) -> float:
    p = shaping_p(t, cfg.T_shaping)
    if p == 0.0:
        return 0.0
    return (cfg.v_hat - error_transform(state.e0, cfg.k, 0.0)) * p


def controller_v(e: float, state: ControllerState, cfg: FunnelConfig, t: float) -> float:
    return error_transform(e, cfg.k, t) + shaping_term(state, cfg, t)


def compute_e_direct(y_del: float, yref_del: float, I: float, psi_del: float) -> float:
    return (y_del - yref_del + I) / psi_del


def measured_rhs(
    z_now: float,
    z_del2: float,
    u_del2: float,
    shaping: float,
    yref_del: float,
    I: float,
    c: float,
    G: float = 1.0,
) -> float:
    """Known right-hand side ``R`` of the implicit error equation.

    Uses ``y(t-w) = (z(t) + (c/G) u(t) + z(t-2w) - (c/G) u(t-2w)) / 2`` for the
    undamped string together with ``u(t) = z(t) / c + v(t)``; the unknown part
    of ``v(t)`` is the error transform, everything else goes into ``R``.
    ``u_del2`` is the top torque actually applied at ``t - 2w``, which before
    ``t = 0`` comes from the initial data rather than from ``v_hat``.
    """
    return (
        0.5 * (z_now * (1.0 + 1.0 / G) + z_del2 - c / G * u_del2)
        + 0.5 * c / G * shaping
        - yref_del
        + I
    )


def _F(e: float, psi: float, kappa: float) -> float:
    return psi * e - kappa * e / (1.0 - e * e)


def solve_e_measured(
    R: float,
    psi_tmo: float,
    k: float,
    c: float,
    tol: float = NEWTON_TOL,
    maxiter: int = NEWTON_MAXITER,
) -> float:
    """Unique root in (-1, 1) of ``psi e - (c k / 2) e / (1 - e^2) = R``.

    Newton from ``e = 0``; any iterate leaving the bracket, or a stall, hands
    over to bisection on the bracket maintained from the sign of the residual.

    Raises
    ------
    ConfigurationError
        If ``c k / 2 <= psi_tmo`` (the map is then not strictly decreasing).
    ConvergenceError
        If neither Newton nor bisection reaches ``tol``.
    """
    kappa = 0.5 * c * k
    if not kappa > psi_tmo:
        raise ConfigurationError(
            f"gain condition violated: c*k/2 = {kappa:.6g} must exceed psi(t-omega) = {psi_tmo:.6g}"
        )
    if not math.isfinite(R):
        raise ConvergenceError(f"non-finite right-hand side R={R!r}")
    lo, hi = -_EDGE, _EDGE
    e = 0.0
    for _ in range(maxiter):
        r = _F(e, psi_tmo, kappa) - R
        if abs(r) < tol:
            return e
        # F is strictly decreasing: r > 0 means the root lies to the right
        if r > 0:
            lo = max(lo, e)
        else:
            hi = min(hi, e)
        q = 1.0 - e * e
        slope = psi_tmo - kappa * (1.0 + e * e) / (q * q)
        e_new = e - r / slope
        if not (lo < e_new < hi):
            e_new = 0.5 * (lo + hi)
        e = e_new
    # bisection fallback on the maintained bracket
    for _ in range(400):
        e = 0.5 * (lo + hi)
        r = _F(e, psi_tmo, kappa) - R
        if abs(r) < tol:
            return e
        if r > 0:
            lo = e
        else:
            hi = e
        if hi - lo <= 2.0 * np.spacing(max(abs(lo), abs(hi))):
            # bracket down to adjacent floats: the root is resolved to machine precision
            return min((lo, hi), key=lambda x: abs(_F(x, psi_tmo, kappa) - R))
    raise ConvergenceError(f"error reconstruction failed for R={R!r}, psi={psi_tmo!r}, kappa={kappa!r}")


def I_rate(I: float, v_now: float, v_del2: float, cfg: FunnelConfig) -> float:
    return -cfg.alpha * I - cfg.i_sign_factor * cfg.beta * (v_now - v_del2)


def update_I(
    state: ControllerState, v_now: float, v_del2: float, cfg: FunnelConfig, dt: float
) -> ControllerState:
    """Exact flow of the correction ODE over ``dt`` with the inputs frozen."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt!r}")
    decay = math.exp(-cfg.alpha * dt)
    forcing = -cfg.i_sign_factor * cfg.beta * (v_now - v_del2)
    I_new = state.I * decay + forcing * (1.0 - decay) / cfg.alpha
    return ControllerState(I=I_new, e0=state.e0, t=state.t + dt)


def control_input_u(z: float, v: float, c: float) -> float:
    return z / c + v


class _TooStiff(Exception):
    def __init__(self, needed: int):
        self.needed = needed


class FunnelController:
    """Stateful wrapper that owns the delay buffers of one closed-loop run.

    Parameters
    ----------
    cfg : FunnelConfig
    reference : ReferenceSpec
    c, G : float
        Wave speed and stiffness of the plant; the controller needs ``c`` for
        ``u = z / c + v`` and, in measured mode, for the reconstruction.
    e_mode : {"direct", "measured"}
    """

    def __init__(
        self,
        cfg: FunnelConfig,
        reference: ReferenceSpec,
        c: float,
        G: float = 1.0,
        e_mode: str = "direct",
    ):
        if e_mode not in E_MODES:
            raise ConfigurationError(f"e_mode must be one of {E_MODES}, got {e_mode!r}")
        self.cfg = cfg
        self.reference = reference
        self.c = float(c)
        self.G = float(G)
        self.e_mode = e_mode
        if e_mode == "measured":
            kappa = 0.5 * self.c / self.G * cfg.k
            if not kappa > cfg.psi_sup:
                raise ConfigurationError(
                    f"measured e-mode needs k > 2 G sup(psi) / c = {2 * self.G * cfg.psi_sup / self.c:.6g}, got k={cfg.k}"
                )
        self.state = ControllerState()
        self.y_buf: HistoryBuffer | None = None
        self.v_buf: HistoryBuffer | None = None
        self.z_buf: HistoryBuffer | None = None
        self.u_buf: HistoryBuffer | None = None
        self.last: ControlSignals | None = None

    # -- setup -------------------------------------------------------------
    def start(
        self,
        dt: float,
        y_hist: Callable[[float], float] = lambda t: 0.0,
        z_hist: Callable[[float], float] = lambda t: 0.0,
        z0: float = 0.0,
        u_hist: Callable[[float], float] = lambda t: 0.0,
    ) -> ControlSignals:
        """Fill the histories on ``[-w, 0]`` / ``[-2w, 0]`` and fix ``e(0)``.

        ``u_hist`` is the physical top torque before ``t = 0`` (zero for a
        string at rest); ``v`` itself is initialized to ``v_hat``.
        """
        w = self.cfg.omega
        keep = 2.0 * w + 2.0 * dt
        self.y_buf = init_history(y_hist, -w, 0.0, dt, max_delay=keep)
        self.v_buf = init_history(lambda t: self.cfg.v_hat, -2.0 * w, 0.0, dt, max_delay=keep)
        self.z_buf = init_history(z_hist, -2.0 * w, 0.0, dt, max_delay=keep)
        self.z_buf.replace_latest(z0)
        self.u_buf = init_history(u_hist, -2.0 * w, 0.0, dt, max_delay=keep)
        self.u_buf.replace_latest(control_input_u(z0, self.cfg.v_hat, self.c))
        psi_shift = float(psi_eval(self.cfg, -w))
        if self.e_mode == "direct":
            y_del = self.y_buf.sample(-w)
            e0 = compute_e_direct(y_del, self.reference(-w), 0.0, psi_shift)
        else:
            # v(0) = v_hat is known, so R absorbs the whole input at t = 0
            R = measured_rhs(z0, self.z_buf.sample(-2 * w), self.u_buf.sample(-2 * w),
                             self.cfg.v_hat, self.reference(-w), 0.0, self.c, self.G)
            e0 = R / psi_shift
            y_del = psi_shift * e0 + self.reference(-w)
        if not abs(e0) < 1.0:
            raise FunnelViolation(0.0, e0, f"initial history violates the funnel: e(0)={e0:.6g}")
        self.state = ControllerState(I=0.0, e0=e0, t=0.0)
        return ControlSignals(0.0, e0, self.cfg.v_hat, control_input_u(z0, self.cfg.v_hat, self.c),
                              I_rate(0.0, self.cfg.v_hat, self.cfg.v_hat, self.cfg), psi_shift, y_del)

    # -- evaluation ----------------------------------------------------------
    def signals(self, t: float, I: float, z: float) -> ControlSignals:
        cfg = self.cfg
        w = cfg.omega
        psi_shift = cfg.a * math.exp(-cfg.b * (t - w)) + cfg.d
        yref_del = self.reference(t - w)
        v_del2 = self.v_buf.sample(t - 2.0 * w)
        shaping = shaping_term(self.state, cfg, t)
        if self.e_mode == "direct":
            y_del = self.y_buf.sample(t - w)
            e = (y_del - yref_del + I) / psi_shift
        else:
            R = measured_rhs(z, self.z_buf.sample(t - 2.0 * w), self.u_buf.sample(t - 2.0 * w), shaping,
                             yref_del, I, self.c, self.G)
            e = solve_e_measured(R, psi_shift, cfg.k, self.c / self.G)
            y_del = psi_shift * e + yref_del - I
        v = error_transform(e, cfg.k, t) + shaping
        return ControlSignals(
            t=t,
            e=e,
            v=v,
            u=z / self.c + v,
            I_rate=-cfg.alpha * I - cfg.i_sign_factor * cfg.beta * (v - v_del2),
            psi_shift=psi_shift,
            y_del=y_del,
        )

    def stiffness(self, sig: ControlSignals) -> float:
        """Local rate ``|dI'/dI|`` of the correction loop in direct mode.

        ``I`` enters ``e`` undelayed and ``v`` feeds back into ``I'``, so near
        the funnel boundary this loop becomes stiff:
        ``alpha + beta k (1 + e^2) / ((1 - e^2)^2 psi(t - w))``.
        """
        e2 = sig.e * sig.e
        return self.cfg.alpha + self.cfg.beta * self.cfg.k * (1.0 + e2) / ((1.0 - e2) ** 2 * sig.psi_shift)

    def advance_direct(self, t: float, I: float, dt: float, max_refine: int = 6):
        """Integrate the correction ODE over ``[t, t + dt]`` in direct mode.

        In direct mode ``I`` only couples to stored history, so it can be
        advanced ahead of the plant.  RK4 sub-steps are refined until every
        sub-step satisfies ``h * stiffness <= 2``, well inside RK4's real
        stability interval.

        Returns
        -------
        signals : tuple of ControlSignals
            At ``t``, ``t + dt/2`` and ``t + dt`` (``u`` is not meaningful,
            the caller adds ``z / c``).
        I_end : float
        """
        if self.e_mode != "direct":
            raise ConfigurationError("advance_direct is only valid in direct e-mode")
        return self.advance_correction(lambda s, I_: self.signals(s, I_, z=0.0), t, I, dt, max_refine)

    def advance_correction(self, sigfn, t: float, I: float, dt: float, max_refine: int = 6):
        """Sub-stepped RK4 for ``I' = sigfn(t, I).I_rate`` over ``[t, t + dt]``.

        ``sigfn`` must depend on ``I`` and stored history only.  Returns the
        signals at ``t``, ``t + dt/2``, ``t + dt`` and the final ``I``.
        """
        sig0 = sigfn(t, I)
        n = max(1, int(math.ceil(self.stiffness(sig0) * dt / 2.0)))
        last_error = None
        for _ in range(max_refine):
            try:
                return self._substeps(sigfn, t, I, dt, n, sig0)
            except _TooStiff as exc:
                n = max(4 * n, exc.needed)
                last_error = None
            except FunnelViolation as exc:
                n *= 4
                last_error = exc
        if last_error is not None:
            raise last_error
        raise ConvergenceError(f"correction loop too stiff to integrate at t={t}")

    def _substeps(self, sigfn, t: float, I: float, dt: float, n: int, sig0: ControlSignals):
        h = dt / (2 * n)
        out = [sig0]
        sig = sig0
        s = t
        for j in range(2 * n):
            k1 = sig.I_rate
            s2 = sigfn(s + h / 2, I + h / 2 * k1)
            s3 = sigfn(s + h / 2, I + h / 2 * s2.I_rate)
            s4 = sigfn(s + h, I + h * s3.I_rate)
            worst = max(self.stiffness(x) for x in (sig, s2, s3, s4))
            if worst * h > 2.0:
                raise _TooStiff(int(math.ceil(worst * dt / 2.0 / 2.0)) * 2)
            I = I + h / 6 * (k1 + 2 * s2.I_rate + 2 * s3.I_rate + s4.I_rate)
            s = t + (j + 1) * h
            sig = sigfn(s, I)
            if j == n - 1 or j == 2 * n - 1:
                out.append(sig)
        return tuple(out), I

    def implicit_step(self, t: float, I_prev: float, dt: float):
        """Backward-Euler step of the correction ODE to time ``t`` (direct mode).

        Returns the signals at ``t`` and the new correction ``I``.  The ``u``
        field of the signals assumes ``z = 0``; callers add ``z / c`` themselves.

        Solves ``(1 + alpha dt) I - I_prev + s beta dt (v(e) - v(t - 2w)) = 0``
        for ``e`` in (-1, 1), where ``I = psi(t - w) e - y(t - w) + y_ref(t - w)``.
        For the default sign ``s = +1`` the left side is strictly increasing in
        ``e`` and runs from -inf to +inf, so the root is unique.
        """
        if self.e_mode != "direct":
            raise ConfigurationError("implicit correction steps need direct e-mode")
        cfg = self.cfg
        w = cfg.omega
        psi = cfg.a * math.exp(-cfg.b * (t - w)) + cfg.d
        y_del = self.y_buf.sample(t - w)
        offset = self.reference(t - w) - y_del
        v_del2 = self.v_buf.sample(t - 2.0 * w)
        shaping = shaping_term(self.state, cfg, t)
        s = cfg.i_sign_factor

        def g(e):
            v = cfg.k * e / (1.0 - e * e) + shaping
            return (1.0 + cfg.alpha * dt) * (psi * e + offset) - I_prev + s * cfg.beta * dt * (v - v_del2)

        e = brentq(g, -_EDGE, _EDGE, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
        I = psi * e + offset
        return self.signals(t, I, z=0.0), I

    def record(self, t: float, y: float, v: float, z: float) -> None:
        self.y_buf.push(t, y)
        self.record_top(t, v, z)

    def record_top(self, t: float, v: float, z: float) -> None:
        self.v_buf.push(t, v)
        self.z_buf.push(t, z)
        self.u_buf.push(t, control_input_u(z, v, self.c))
