"""Implicit resolvent stepping in the energy state space.

State ``x = (tau, L, L_b)``: cell strains ``tau_j`` (``N-1`` cells), nodal
angular momentum densities ``L_i = rho v_i`` on the string nodes
``0..N-2`` and the bit momentum ``L_b = J y``.  This is the same staggered
layout as the explicit solver, so both engines share one semi-discretization
and differ only in time stepping.

The dynamics read ``x' = -(D x + B(x) + f(t))`` with

* ``D`` skew in the energy inner product
  ``<x1, x2> = dxi sum G tau1 tau2 + dxi sum L1 L2 / rho + L_b1 L_b2 / (J Gamma)``,
* ``B`` diagonal and monotone: ``F_d(xi_i, L_i / rho)`` on the ``L`` rows,
  ``-F_e(L_b / J)`` on the bit row, plus an optional absorbing term
  ``L_0 / (rho c dxi)`` on the top row,
* ``f`` the inhomogeneity produced by lifting the boundary input.

Unknowns are interleaved as ``(L_0, tau_0, L_1, tau_1, ..., tau_{N-2}, L_b)``
which makes the Newton Jacobian tridiagonal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.linalg import solve_banded

from .errors import ConfigurationError, ConvergenceError, DomainError, FunnelViolation
from .fdsolver import SimResult, SpatialGrid, _finish_summary, _Recorder, build_model, choose_dt, initial_state
from .funnel import FunnelController
from .model import DampingSpec, DrillParams

__all__ = [
    "EnergyState",
    "DiscreteOperator",
    "energy_inner",
    "energy_norm",
    "check_skew",
    "resolvent_step",
    "yosida_apply",
    "run_implicit",
    "state_from_fields",
    "fields_from_state",
]

RESOLVENT_TOL = 1e-12
RESOLVENT_MAXITER = 30


@dataclass
class EnergyState:
    tau: np.ndarray
    L: np.ndarray
    L_b: float

    def __post_init__(self):
        self.tau = np.asarray(self.tau, dtype=float)
        self.L = np.asarray(self.L, dtype=float)
        self.L_b = float(self.L_b)
        if self.tau.shape != self.L.shape or self.tau.ndim != 1:
            raise DomainError("tau and L must be 1-D arrays of equal length (one entry per cell / string node)")

    @property
    def n_cells(self) -> int:
        return self.tau.size

    @classmethod
    def zeros(cls, n_points: int) -> "EnergyState":
        return cls(np.zeros(n_points - 1), np.zeros(n_points - 1), 0.0)

    @classmethod
    def random(cls, n_points: int, rng: np.random.Generator, scale: float = 1.0) -> "EnergyState":
        return cls(scale * rng.standard_normal(n_points - 1), scale * rng.standard_normal(n_points - 1),
                   scale * rng.standard_normal())

    def pack(self) -> np.ndarray:
        x = np.empty(2 * self.tau.size + 1)
        x[0:-1:2] = self.L
        x[1:-1:2] = self.tau
        x[-1] = self.L_b
        return x

    @classmethod
    def unpack(cls, x: np.ndarray) -> "EnergyState":
        return cls(x[1:-1:2].copy(), x[0:-1:2].copy(), float(x[-1]))

    def __add__(self, other: "EnergyState") -> "EnergyState":
        return EnergyState(self.tau + other.tau, self.L + other.L, self.L_b + other.L_b)

    def __sub__(self, other: "EnergyState") -> "EnergyState":
        return EnergyState(self.tau - other.tau, self.L - other.L, self.L_b - other.L_b)

    def __mul__(self, a: float) -> "EnergyState":
        return EnergyState(a * self.tau, a * self.L, a * self.L_b)

    __rmul__ = __mul__


def _check_same_grid(x1: EnergyState, x2: EnergyState, grid: SpatialGrid) -> None:
    if x1.n_cells != x2.n_cells or x1.n_cells != grid.n_points - 1:
        raise DomainError(
            f"grid mismatch: states with {x1.n_cells} and {x2.n_cells} cells on a grid of {grid.n_points} nodes"
        )


def energy_inner(x1: EnergyState, x2: EnergyState, params: DrillParams, grid: SpatialGrid) -> float:
    """Discrete energy inner product (cell and node sums times ``dxi``)."""
    _check_same_grid(x1, x2, grid)
    dxi = grid.dxi
    return (
        dxi * params.G * float(np.dot(x1.tau, x2.tau))
        + dxi / params.rho * float(np.dot(x1.L, x2.L))
        + x1.L_b * x2.L_b / (params.J * params.Gamma)
    )


def energy_norm(x: EnergyState, params: DrillParams, grid: SpatialGrid) -> float:
    return math.sqrt(max(energy_inner(x, x, params, grid), 0.0))


def state_from_fields(phi: np.ndarray, vel: np.ndarray, params: DrillParams, grid: SpatialGrid) -> EnergyState:
    return EnergyState(np.diff(phi) / grid.dxi, params.rho * vel[:-1], params.J * vel[-1])


def fields_from_state(x: EnergyState, params: DrillParams) -> np.ndarray:
    """Nodal angular velocities, bit last."""
    return np.append(x.L / params.rho, x.L_b / params.J)


class DiscreteOperator:
    """``D``, ``B`` and ``f`` on a fixed grid.

    Parameters
    ----------
    params, grid, damping
        Physical data; ``damping`` may be ``None``.
    absorb : float
        Coefficient ``a`` of the monotone top term ``a L_0`` (``1 / (rho c dxi)``
        realizes the ``z / c`` part of the boundary torque).
    f : callable, optional
        ``t -> EnergyState`` inhomogeneity; ``None`` means zero.
    """

    def __init__(
        self,
        params: DrillParams,
        grid: SpatialGrid,
        damping: DampingSpec | None = None,
        absorb: float = 0.0,
        f: Optional[Callable[[float], EnergyState]] = None,
    ):
        if abs(grid.ell - params.ell) > 1e-12 * params.ell:
            raise ConfigurationError("grid length and string length differ")
        if absorb < 0:
            raise ConfigurationError("absorbing coefficient must be nonnegative")
        self.params = params
        self.grid = grid
        self.damping = damping if damping is not None else DampingSpec()
        self.absorb = float(absorb)
        self.f = f
        self.n = 2 * (grid.n_points - 1) + 1
        self._xi = grid.nodes[:-1]
        self._D_banded = self._build_D()

    # -- D ---------------------------------------------------------------------
    def _build_D(self) -> np.ndarray:
        """Banded storage (1 super, 1 sub diagonal) of ``D`` on packed vectors."""
        p, dxi = self.params, self.grid.dxi
        G, rho = p.G, p.rho
        n = self.n
        ab = np.zeros((3, n))
        # row r, column c lives at ab[1 + r - c, c]
        for r in range(n - 1):
            if r % 2 == 0:  # L_i row: -(G tau_i - G tau_{i-1}) / dxi
                ab[1 + r - (r + 1), r + 1] = -G / dxi
                if r > 0:
                    ab[1 + r - (r - 1), r - 1] = G / dxi
            else:  # tau_j row: -(v_{j+1} - v_j) / dxi
                ab[1 + r - (r - 1), r - 1] = 1.0 / (rho * dxi)
                inv_mass = 1.0 / p.J if r + 1 == n - 1 else 1.0 / rho
                ab[1 + r - (r + 1), r + 1] = -inv_mass / dxi
        ab[1 + (n - 1) - (n - 2), n - 2] = p.Gamma * G  # bit row: Gamma G tau_{N-2}
        return ab

    def apply_D(self, x: EnergyState, g0: float = 0.0) -> EnergyState:
        """``D x``; a nonzero ``g0`` imposes ``(G tau)(0) = g0`` at the top instead of 0."""
        X = x.pack()
        ab = self._D_banded
        out = ab[1] * X
        out[:-1] += ab[0, 1:] * X[1:]
        out[1:] += ab[2, :-1] * X[:-1]
        out[0] += g0 / self.grid.dxi
        return EnergyState.unpack(out)

    def D_matrix(self) -> np.ndarray:
        n = self.n
        M = np.zeros((n, n))
        ab = self._D_banded
        for c in range(n):
            for k in range(3):
                r = c + k - 1
                if 0 <= r < n:
                    M[r, c] = ab[k, c]
        return M

    # -- B ---------------------------------------------------------------------
    def _B_packed(self, X: np.ndarray):
        p = self.params
        out = np.zeros_like(X)
        dout = np.zeros_like(X)
        v = X[0:-1:2] / p.rho
        out[0:-1:2] = self.damping.Fd(self._xi, v)
        dout[0:-1:2] = self.damping.dFd(self._xi, v) / p.rho
        out[0] += self.absorb * X[0]
        dout[0] += self.absorb
        y = X[-1] / p.J
        out[-1] = -float(self.damping.Fe(y))
        dout[-1] = -float(self.damping.dFe(y)) / p.J
        return out, dout

    def apply_B(self, x: EnergyState) -> EnergyState:
        return EnergyState.unpack(self._B_packed(x.pack())[0])

    def f_at(self, t: float) -> np.ndarray:
        if self.f is None:
            return np.zeros(self.n)
        return self.f(t).pack()

    def apply_A(self, x: EnergyState, t: float) -> EnergyState:
        """``A_t x = D x + B(x) + f(t)``."""
        X = x.pack()
        return EnergyState.unpack(self.apply_D(x).pack() + self._B_packed(X)[0] + self.f_at(t))


def check_skew(op: DiscreteOperator, trials: int = 10, rng: np.random.Generator | None = None,
               g0: float = 0.0) -> float:
    """Largest ``|<x, D x>| / <x, x>`` over random states.

    With ``g0 = 0`` this is zero up to rounding; a nonzero ``g0`` leaves the
    boundary work ``-v_0 g0`` and serves as a negative control.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for _ in range(trials):
        x = EnergyState.random(op.grid.n_points, rng)
        nrm = energy_inner(x, x, op.params, op.grid)
        worst = max(worst, abs(energy_inner(x, op.apply_D(x, g0), op.params, op.grid)) / nrm)
    return worst


def resolvent_step(
    x_prev: EnergyState,
    dt: float,
    t: float,
    op: DiscreteOperator,
    tol: float = RESOLVENT_TOL,
    maxiter: int = RESOLVENT_MAXITER,
) -> EnergyState:
    """Solve ``x + dt (D x + B(x) + f(t)) = x_prev`` by damped Newton.

    The Jacobian ``I + dt (D + B'(x))`` is tridiagonal in the packed ordering.
    Steps are backtracked (Armijo on the squared residual) when a full step
    fails to decrease it.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt!r}")
    X0 = x_prev.pack()
    rhs = X0 - dt * op.f_at(t)
    ab_D = op._D_banded
    scale = max(1.0, float(np.max(np.abs(X0))))

    def residual(X):
        B, dB = op._B_packed(X)
        DX = ab_D[1] * X
        DX[:-1] += ab_D[0, 1:] * X[1:]
        DX[1:] += ab_D[2, :-1] * X[:-1]
        return X + dt * (DX + B) - rhs, dB

    X = X0.copy()
    F, dB = residual(X)
    for _ in range(maxiter):
        norm = float(np.max(np.abs(F)))
        if norm <= tol * scale:
            return EnergyState.unpack(X)
        ab = dt * ab_D.copy()
        ab[1] += 1.0 + dt * dB
        step = solve_banded((1, 1), ab, -F)
        phi0 = float(np.dot(F, F))
        lam = 1.0
        while True:
            X_try = X + lam * step
            F_try, dB_try = residual(X_try)
            if float(np.dot(F_try, F_try)) <= (1.0 - 1e-4 * lam) * phi0 or lam < 1e-8:
                break
            lam *= 0.5
        X, F, dB = X_try, F_try, dB_try
    if float(np.max(np.abs(F))) <= tol * scale:
        return EnergyState.unpack(X)
    raise ConvergenceError(f"resolvent Newton did not converge at t={t}: residual {np.max(np.abs(F)):.3e}")


def yosida_apply(z: EnergyState, lam: float, t: float, op: DiscreteOperator) -> EnergyState:
    """``A_{t, lam} z = (z - J_lam z) / lam`` with ``J_lam`` the resolvent of ``A_t``."""
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam!r}")
    return (z - resolvent_step(z, lam, t, op)) * (1.0 / lam)


# --------------------------------------------------------------------------
# closed loop


def run_implicit(cfg, dt: float | None = None) -> SimResult:
    """Closed-loop run by implicit Euler (resolvent) steps.

    The top torque ``u = z / c + v`` is split: ``z / c`` becomes the monotone
    absorbing term on the top row, and ``v`` enters through the lifting
    ``x = x~ + p v`` with ``p = (1/G, 0, 0)`` so that ``x~`` always satisfies
    the homogeneous top condition.  The lifted inhomogeneity is
    ``f_k = Gamma v_k e_bit + p (v_k - v_{k-1}) / dt``.  The correction ``I``
    is advanced by backward Euler before each plant step, so ``v_k`` is known
    when the resolvent is solved.
    """
    if cfg.e_mode != "direct":
        raise ConfigurationError("the implicit engine supports the direct e-mode only")
    model = build_model(cfg)
    p, ts, ref = cfg.params, cfg.time, cfg.reference
    grid = model.grid
    omega = p.omega
    if dt is None:
        dt = choose_dt(model, ts.cfl_fraction, ts.dt, omega if cfg.control else None, ts.cfl_max)
    elif cfg.control:
        m = int(round(omega / dt))
        if m < 1 or abs(m * dt - omega) > 1e-9 * omega:
            raise ConfigurationError(f"dt={dt} must divide the delay omega={omega}")
    n_steps = int(math.ceil(ts.t_end / dt - 1e-9))

    s0 = initial_state(model, cfg.initial)
    x = state_from_fields(s0.phi, s0.vel, p, grid)
    lift = EnergyState(np.full(grid.n_points - 1, 1.0 / p.G), np.zeros(grid.n_points - 1), 0.0)
    bit = EnergyState.zeros(grid.n_points)
    bit.L_b = p.Gamma

    controller = None
    absorb = 0.0
    violation = None
    if cfg.control:
        controller = FunnelController(cfg.funnel, ref, p.c, p.G, "direct")
        y0, z0 = s0.y, s0.z
        try:
            controller.last = controller.start(dt, y_hist=lambda t: y0, z_hist=lambda t: z0, z0=z0)
        except FunnelViolation as exc:
            violation = exc
        absorb = 1.0 / (p.rho * p.c * grid.dxi)

    current = {"v": 0.0, "v_prev": 0.0}

    def f(t):
        v, v_prev = current["v"], current["v_prev"]
        return bit * v + lift * ((v - v_prev) / dt)

    op = DiscreteOperator(p, grid, cfg.damping, absorb, f)
    rec = _Recorder(n_steps + 1, None)

    def log(t, x, I, sig):
        vel = fields_from_state(x, p)
        y, z = float(vel[-1]), float(vel[0])
        v = sig.v if sig else 0.0
        rec.add(t=t, y=y, y_ref=float(ref(t)), e=sig.e if sig else math.nan, w=math.nan,
                psi_shift=sig.psi_shift if sig else math.nan, v=v, u=z / p.c + v if sig else 0.0,
                z=z, I=I, energy=energy_inner(x, x, p, grid))
        return y, z

    v_prev = controller.last.v if controller is not None and controller.last is not None else 0.0
    # lifted variable x~ = x - p v
    xt = x - lift * v_prev
    log(0.0, x, 0.0, controller.last if controller else None)
    I = 0.0
    try:
        for k in range(1, n_steps + 1 if violation is None else 1):
            t = k * dt
            sig = None
            if controller is not None:
                sig, I = controller.implicit_step(t, I, dt)
            v = sig.v if sig else 0.0
            current["v"], current["v_prev"] = v, v_prev
            xt = resolvent_step(xt, dt, t, op)
            x = xt + lift * v
            y, z = log(t, x, I, sig)
            if controller is not None:
                controller.record(t, y, v, z)
            v_prev = v
    except FunnelViolation as exc:
        violation = exc

    raw = rec.trace(omega)
    end = float(raw.t[-1]) if violation else ts.t_end
    return SimResult(raw, raw.resample(ts.n_output_rows, end), _finish_summary(raw, violation, dt, n_steps),
                     dt, "implicit", None, violation)

