"""Characteristics-based reference solutions.

Everything here is built from the travelling-wave structure of
``phi_tt = c^2 phi_xixi + h``: the d'Alembert/Duhamel formula, its damped
fixed-point form, the delay ODE obeyed by the bit velocity, and an exact
closed-loop simulator for the undamped string.

Riemann invariants
------------------
With ``w = phi_t`` and ``s = phi_xi`` the quantity ``R = w - c s`` is carried
from the top to the bit and ``S = w + c s`` from the bit to the top, each
taking the travel time ``omega = ell / c``.  The top boundary imposes
``G s(0) = u`` and the bit obeys ``J y' = -Gamma G s(ell) + F_e(y)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate
from scipy.interpolate import RegularGridInterpolator

from .delay import HistoryBuffer
from .errors import ConvergenceError, DomainError
from .funnel import FunnelController, controller_v
from .model import DampingSpec, DrillParams

__all__ = [
    "Profile",
    "InitialData",
    "VelocityField",
    "PicardResult",
    "LoopTrace",
    "dalembert",
    "dalembert_velocity",
    "picard_damped",
    "y_delay_rhs",
    "damping_line_integral",
    "integrate_delay_ode",
    "simulate_undamped_loop",
]

POLICIES = ("interior-only", "smooth-extension")
QUAD_TOL = 1e-10
PICARD_TOL = 1e-10
MAX_PICARD = 50


@dataclass(frozen=True)
class Profile:
    """Smooth scalar profile with its first two derivatives.

    Use the constructors :meth:`zero`, :meth:`constant`, :meth:`sine` and
    :meth:`polynomial`; each is defined on the whole real line.
    """

    kind: str
    params: tuple = ()

    @classmethod
    def zero(cls) -> "Profile":
        return cls("polynomial", (0.0,))

    @classmethod
    def constant(cls, value: float) -> "Profile":
        return cls("polynomial", (float(value),))

    @classmethod
    def sine(cls, amplitude: float = 1.0, wavenumber: float = math.pi, phase: float = 0.0) -> "Profile":
        """``amplitude * sin(wavenumber * xi + phase)``."""
        return cls("sine", (float(amplitude), float(wavenumber), float(phase)))

    @classmethod
    def polynomial(cls, coeffs) -> "Profile":
        """Coefficients in increasing degree."""
        return cls("polynomial", tuple(float(a) for a in coeffs))

    def derivative_order(self, x, order: int):
        x = np.asarray(x, dtype=float)
        if self.kind == "sine":
            amp, k, ph = self.params
            arg = k * x + ph
            return amp * k**order * (np.sin, np.cos, lambda a: -np.sin(a), lambda a: -np.cos(a))[order % 4](arg)
        if self.kind == "polynomial":
            poly = np.polynomial.Polynomial(self.params)
            return poly.deriv(order)(x) if order else poly(x)
        raise DomainError(f"unknown profile kind {self.kind!r}")

    def __call__(self, x):
        return self.derivative_order(x, 0)

    def d1(self, x):
        return self.derivative_order(x, 1)

    def d2(self, x):
        return self.derivative_order(x, 2)

    @property
    def is_zero(self) -> bool:
        return self.kind == "polynomial" and all(a == 0.0 for a in self.params)


@dataclass(frozen=True)
class InitialData:
    """Initial angle ``phi0`` and velocity ``v0`` with an extension policy."""

    phi0: Profile = field(default_factory=Profile.zero)
    v0: Profile = field(default_factory=Profile.zero)
    policy: str = "interior-only"

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise DomainError(f"extension policy must be one of {POLICIES}, got {self.policy!r}")


def _check_domain(xi: float, t: float, c: float, ell: float | None, policy: str) -> None:
    if policy == "smooth-extension":
        return
    if ell is None:
        raise DomainError("interior-only evaluation needs the string length ell")
    tol = 1e-12 * max(1.0, ell)
    if xi - c * t < -tol or xi + c * t > ell + tol:
        raise DomainError(
            f"domain of dependence of (xi={xi}, t={t}) leaves [0, {ell}] under the interior-only policy"
        )


def dalembert(
    phi0: Profile,
    v0: Profile,
    h: Optional[Callable[[float, float], float]],
    xi: float,
    t: float,
    c: float,
    ell: float | None = None,
    policy: str = "interior-only",
    quad_tol: float = QUAD_TOL,
) -> float:
    """Whole-line solution of ``phi_tt = c^2 phi_xixi + h`` at ``(xi, t)``.

    ``h`` may be ``None`` for the homogeneous equation.  The velocity and
    forcing integrals are computed by adaptive quadrature.
    """
    _check_domain(xi, t, c, ell, policy)
    a, b = xi - c * t, xi + c * t
    val = 0.5 * (float(phi0(a)) + float(phi0(b)))
    if t > 0 and not v0.is_zero:
        val += integrate.quad(lambda s: float(v0(s)), a, b, epsabs=quad_tol, epsrel=quad_tol)[0] / (2 * c)
    if t > 0 and h is not None:
        duhamel = integrate.dblquad(
            lambda s, tau: h(s, tau),
            0.0,
            t,
            lambda tau: xi - c * (t - tau),
            lambda tau: xi + c * (t - tau),
            epsabs=quad_tol,
            epsrel=quad_tol,
        )[0]
        val += duhamel / (2 * c)
    return val


def dalembert_velocity(
    phi0: Profile,
    v0: Profile,
    h: Optional[Callable[[float, float], float]],
    xi: float,
    t: float,
    c: float,
    ell: float | None = None,
    policy: str = "interior-only",
    quad_tol: float = QUAD_TOL,
) -> float:
    """Time derivative of :func:`dalembert` at ``(xi, t)``."""
    _check_domain(xi, t, c, ell, policy)
    a, b = xi - c * t, xi + c * t
    val = 0.5 * c * (float(phi0.d1(b)) - float(phi0.d1(a))) + 0.5 * (float(v0(a)) + float(v0(b)))
    if t > 0 and h is not None:
        val += 0.5 * integrate.quad(
            lambda tau: h(xi - c * (t - tau), tau) + h(xi + c * (t - tau), tau),
            0.0,
            t,
            epsabs=quad_tol,
            epsrel=quad_tol,
        )[0]
    return val


# --------------------------------------------------------------------------
# damped fixed point on the characteristic grid


@dataclass
class PicardResult:
    """Converged velocity on the grid ``xi_j = j dxi``, ``t_n = n dt``.

    Entries outside the domain-of-dependence triangle are NaN.
    ``increments[m]`` is the sup-norm change produced by iteration ``m + 1``.
    """

    xi: np.ndarray
    t: np.ndarray
    w: np.ndarray
    iterations: int
    increments: list


def _free_velocity(data: InitialData, xs, t: float, c: float):
    a, b = xs - c * t, xs + c * t
    return 0.5 * c * (data.phi0.d1(b) - data.phi0.d1(a)) + 0.5 * (data.v0(a) + data.v0(b))


def picard_damped(
    data: InitialData,
    damping: DampingSpec,
    horizon: float,
    c: float,
    ell: float,
    dxi: float,
    rho: float = 1.0,
    picard_tol: float = PICARD_TOL,
    max_picard: int = MAX_PICARD,
) -> PicardResult:
    """Fixed-point iteration for the velocity of the damped string.

    Iterates ``w <- w_free - (1 / (2 rho)) int_0^t [F_d(xi - c(t - tau), w) + F_d(xi + c(t - tau), w)] dtau``
    on a grid with ``dxi = c dt``, so both characteristic feet of every node
    are themselves grid nodes.  The time integral uses the trapezoidal rule.
    Under the interior-only policy only the triangle whose domain of
    dependence stays inside ``[0, ell]`` is computed.
    """
    n_xi = int(round(ell / dxi)) + 1
    dxi = ell / (n_xi - 1)
    dt = dxi / c
    n_t = int(math.floor(horizon / dt + 1e-9)) + 1
    xi = dxi * np.arange(n_xi)
    t = dt * np.arange(n_t)
    if data.policy == "interior-only" and 2 * (n_t - 1) > n_xi - 1:
        raise DomainError(f"horizon {horizon} exceeds the interior-only validity region {ell / (2 * c)}")

    # smooth extension: widen the grid by n_t cells per side so the whole
    # triangle below [0, ell] x [0, horizon] is available
    pad = 0 if data.policy == "interior-only" else n_t
    cols = np.arange(-pad, n_xi + pad)
    xi_ext = dxi * cols
    free_ext = np.stack([_free_velocity(data, xi_ext, tn, c) for tn in t])
    # ok[n, j]: domain of dependence of node (j, n) lies inside the grid
    rows_idx = np.arange(n_t)[:, None]
    col_idx = np.arange(cols.size)[None, :]
    ok = (col_idx >= rows_idx) & (col_idx <= cols.size - 1 - rows_idx)
    valid = ok[:, pad: pad + n_xi] if data.policy == "interior-only" else np.ones((n_t, n_xi), dtype=bool)

    if damping.distributed is None:
        w = np.where(valid, free_ext[:, pad: pad + n_xi], np.nan)
        return PicardResult(xi, t, w, 1, [0.0])

    w = free_ext.copy()
    increments = []
    Fd = damping.distributed
    for it in range(1, max_picard + 1):
        forcing = np.where(ok, Fd(xi_ext[None, :], np.where(ok, w, 0.0)), 0.0)
        new = free_ext.copy()
        for n in range(1, n_t):
            # tau_m = m dt, feet at columns j -/+ (n - m)
            m = np.arange(n + 1)
            weights = np.full(n + 1, dt)
            weights[0] = weights[-1] = 0.5 * dt
            lo_cols = np.arange(cols.size)[None, :] - (n - m)[:, None]
            hi_cols = np.arange(cols.size)[None, :] + (n - m)[:, None]
            inside = (lo_cols >= 0) & (hi_cols < cols.size)
            lo_c = np.clip(lo_cols, 0, cols.size - 1)
            hi_c = np.clip(hi_cols, 0, cols.size - 1)
            vals = forcing[m[:, None], lo_c] + forcing[m[:, None], hi_c]
            integral = np.sum(np.where(inside, vals, 0.0) * weights[:, None], axis=0)
            new[n] = free_ext[n] - integral / (2.0 * rho)
        diff = np.abs(np.where(ok, new - w, 0.0))
        change = float(np.max(diff)) if diff.size else 0.0
        increments.append(change)
        w = new
        if change < picard_tol:
            break
    else:
        raise ConvergenceError(f"Picard iteration did not reach {picard_tol} in {max_picard} iterations")

    w_grid = w[:, pad: pad + n_xi]
    w_grid = np.where(valid, w_grid, np.nan)
    return PicardResult(xi, t, w_grid, it, increments)


# --------------------------------------------------------------------------
# delay ODE for the bit velocity


def y_delay_rhs(
    y: float,
    u_del: float,
    z_del: float,
    Dphi: float,
    params: DrillParams,
    damping: DampingSpec | None = None,
) -> float:
    """``y'`` from the delayed top signals.

    ``J y' = -(G Gamma / c) (y + (c/G) u(t-w) - z(t-w) + Dphi / rho) + F_e(y)``
    where ``Dphi`` is the damping line integral along the incoming
    characteristic (see :func:`damping_line_integral`).
    """
    G, c = params.G, params.c
    incoming = y + (c / G) * u_del - z_del + Dphi / params.rho
    Fe = 0.0 if damping is None else float(damping.Fe(y))
    return (-(G * params.Gamma / c) * incoming + Fe) / params.J


class VelocityField:
    """Bilinear interpolant of recorded velocity snapshots ``w[n, i]``."""

    def __init__(self, times, xi, values):
        self.times = np.asarray(times, dtype=float)
        self.xi = np.asarray(xi, dtype=float)
        self.values = np.asarray(values, dtype=float)
        self._interp = RegularGridInterpolator((self.times, self.xi), self.values, bounds_error=False, fill_value=np.nan)

    def __call__(self, xi, t):
        xi = np.asarray(xi, dtype=float)
        t = np.asarray(t, dtype=float)
        pts = np.stack(np.broadcast_arrays(t, xi), axis=-1)
        out = self._interp(pts.reshape(-1, 2)).reshape(pts.shape[:-1])
        if np.any(np.isnan(out)):
            raise DomainError("characteristic leaves the recorded velocity field")
        return out


def damping_line_integral(
    field: Callable,
    t: float,
    params: DrillParams,
    damping: DampingSpec,
    t_min: float = 0.0,
    n_nodes: int | None = None,
    quad_tol: float = QUAD_TOL,
) -> float:
    """``int F_d(ell - c(t - tau), w(ell - c(t - tau), tau)) dtau`` over the incoming characteristic.

    The segment is ``tau in [max(t - omega, t_min), t]``; before ``t_min`` the
    string is taken to be at rest.  With ``n_nodes`` given the composite
    trapezoidal rule on that many nodes is used, otherwise adaptive quadrature.
    """
    if damping.distributed is None:
        return 0.0
    ell, c = params.ell, params.c
    lo = max(t - params.omega, t_min)
    if not t > lo:
        return 0.0

    def integrand(tau):
        pos = ell - c * (t - tau)
        return damping.Fd(pos, field(pos, tau))

    if n_nodes is None:
        return integrate.quad(lambda tau: float(integrand(tau)), lo, t, epsabs=quad_tol, epsrel=quad_tol, limit=200)[0]
    taus = np.linspace(lo, t, max(int(n_nodes), 2))
    return float(integrate.trapezoid(integrand(taus), taus))


def integrate_delay_ode(
    times: np.ndarray,
    u: np.ndarray,
    z: np.ndarray,
    field: VelocityField,
    params: DrillParams,
    damping: DampingSpec,
    y0: float = 0.0,
) -> np.ndarray:
    """Advance ``y`` through :func:`y_delay_rhs` on the grid ``times`` by RK4.

    ``u`` and ``z`` are the recorded top signals on ``times`` (from ``t = 0``)
    and are taken as zero before ``t = 0``, which is the rest history.  The
    damping integral is evaluated by the trapezoidal rule at the field's time
    resolution.
    """
    times = np.asarray(times, dtype=float)
    u = np.asarray(u, dtype=float)
    z = np.asarray(z, dtype=float)
    w_delay = params.omega
    dt_field = float(np.min(np.diff(field.times)))
    n_line = max(int(math.ceil(w_delay / dt_field)) + 1, 2)

    def delayed(sig, s):
        return float(np.interp(s, times, sig)) if s >= times[0] else 0.0

    def f(t, y):
        D = damping_line_integral(field, t, params, damping, t_min=times[0], n_nodes=n_line)
        return y_delay_rhs(y, delayed(u, t - w_delay), delayed(z, t - w_delay), D, params, damping)

    ys = np.empty_like(times)
    ys[0] = y0
    y = y0
    for n in range(times.size - 1):
        t, h = times[n], times[n + 1] - times[n]
        k1 = f(t, y)
        k2 = f(t + h / 2, y + h / 2 * k1)
        k3 = f(t + h / 2, y + h / 2 * k2)
        k4 = f(t + h, y + h * k3)
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        ys[n + 1] = y
    return ys


# --------------------------------------------------------------------------
# exact closed loop for the undamped string


@dataclass
class LoopTrace:
    t: np.ndarray
    y: np.ndarray
    e: np.ndarray
    v: np.ndarray
    u: np.ndarray
    z: np.ndarray
    I: np.ndarray


def simulate_undamped_loop(
    params: DrillParams,
    controller: FunnelController,
    t_end: float,
    steps_per_delay: int,
    damping: DampingSpec | None = None,
) -> LoopTrace:
    """Closed loop on the undamped string solved along characteristics.

    The string is represented exactly by its two Riemann invariants, so the
    only approximations are RK4 for ``y``, sub-stepped RK4 for ``I`` and linear interpolation of the
    stored invariants at Runge-Kutta stage times.  Zero initial data is
    assumed; ``damping`` may carry bit friction but no distributed law.

    In ``measured`` mode the top relation ``z (1 + 1/G) + (c/G) v = S(0, t)``
    and the controller's reconstruction form an algebraic loop whose unique
    solution is the one consistent with ``y(t - w)``.  That solution provides
    the measured ``z``; the controller then recovers ``e`` from ``z`` and the
    stored histories alone, and its ``v`` closes the loop.
    """
    if damping is not None and damping.distributed is not None:
        raise DomainError("the characteristic loop is exact only without distributed damping")
    c, G, J, Gam, w = params.c, params.G, params.J, params.Gamma, params.omega
    cfg = controller.cfg
    if abs(cfg.omega - w) > 1e-12 * w:
        raise DomainError("controller delay does not match the travel time of the string")
    m = int(steps_per_delay)
    dt = w / m
    n_steps = int(round(t_end / dt))
    keep = 2.0 * w + 2.0 * dt

    # R_top = z - (c/G) u enters at the top, S_bit = 2 y - R(ell) leaves the bit
    R_top = HistoryBuffer(keep)
    S_bit = HistoryBuffer(keep)
    for n in range(-2 * m, 1):
        R_top.push(n * dt, 0.0)
    for n in range(-m, 1):
        S_bit.push(n * dt, 0.0)

    def Fe(y):
        return 0.0 if damping is None else float(damping.Fe(y))

    def z_from(S0, v):
        return (S0 - (c / G) * v) / (1.0 + 1.0 / G)

    def top(t, I):
        S0 = S_bit.sample(t - w)
        if controller.e_mode == "measured":
            y_del = 0.5 * (S0 + R_top.sample(t - 2.0 * w))
            psi = cfg.a * math.exp(-cfg.b * (t - w)) + cfg.d
            e_star = (y_del - controller.reference(t - w) + I) / psi
            v_star = controller_v(e_star, controller.state, cfg, t)
            sig = controller.signals(t, I, z=z_from(S0, v_star))
        else:
            sig = controller.signals(t, I, z=0.0)
        return z_from(S0, sig.v), sig

    def y_rate(t, y):
        return (-(G * Gam / c) * (y - R_top.sample(t - w)) + Fe(y)) / J

    # v(0) = v_hat is known, so z(0) follows from the rest history
    z0 = z_from(0.0, cfg.v_hat)
    controller.start(dt, z0=z0)
    R_top.replace_latest(z0 - (c / G) * (z0 / c + cfg.v_hat))

    keys = ("t", "y", "e", "v", "u", "z", "I")
    rows = {k: np.empty(n_steps + 1) for k in keys}
    rows["t"][0], rows["y"][0], rows["e"][0] = 0.0, 0.0, controller.state.e0
    rows["v"][0], rows["u"][0], rows["z"][0], rows["I"][0] = cfg.v_hat, z0 / c + cfg.v_hat, z0, 0.0

    y, I = 0.0, 0.0
    for n in range(n_steps):
        t = n * dt
        # y and I only couple through stored history within a step
        k1 = y_rate(t, y)
        k2 = y_rate(t + dt / 2, y + dt / 2 * k1)
        k3 = y_rate(t + dt / 2, y + dt / 2 * k2)
        k4 = y_rate(t + dt, y + dt * k3)
        y += dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        _, I = controller.advance_correction(lambda s, I_: top(s, I_)[1], t, I, dt)
        t_new = (n + 1) * dt
        S_bit.push(t_new, 2.0 * y - R_top.sample(t_new - w))
        controller.y_buf.push(t_new, y)
        z, sig = top(t_new, I)
        u = z / c + sig.v
        R_top.push(t_new, z - (c / G) * u)
        controller.record_top(t_new, sig.v, z)
        for key, val in zip(keys, (t_new, y, sig.e, sig.v, u, z, I)):
            rows[key][n + 1] = val
    return LoopTrace(**rows)
