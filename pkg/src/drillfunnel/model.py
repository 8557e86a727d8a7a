"""Physical parameters, damping laws and reference signals of the drill string.

Sign conventions
----------------
The string obeys ``rho * phi_tt = G * phi_xixi - F_d(xi, phi_t)`` with ``F_d``
nondecreasing in the velocity, and the bit obeys
``J * y' = -Gamma * G * phi_xi(ell) + F_e(y)`` where ``F_e`` is the torque
*added* to the bit.  Dissipative bit friction therefore satisfies
``v * F_e(v) <= 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .errors import ConfigurationError, DomainError

__all__ = [
    "DrillParams",
    "ArctanScale",
    "UserTable",
    "RegularizedCoulomb",
    "DampingSpec",
    "ReferenceSpec",
    "wave_speed",
    "eval_Fd",
    "eval_Fe",
]


@dataclass(frozen=True)
class DrillParams:
    """Constant physical coefficients of the torsional model.

    Parameters
    ----------
    ell : float
        String length.
    rho : float
        Mass density per unit length.
    G : float
        Shear stiffness.
    J : float
        Rotary inertia of the bit.
    Gamma : float
        Second moment of area at the bit end.
    """

    ell: float = 1.0
    rho: float = 1.0
    G: float = 1.0
    J: float = 1.0
    Gamma: float = 1.0

    def __post_init__(self):
        for name in ("ell", "rho", "G", "J", "Gamma"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise ConfigurationError(f"DrillParams.{name} must be a positive finite number, got {value!r}")

    @property
    def c(self) -> float:
        """Wave speed sqrt(G / rho)."""
        return math.sqrt(self.G / self.rho)

    @property
    def omega(self) -> float:
        """Travel time of a torsional wave along the string."""
        return self.ell / self.c


def wave_speed(params: DrillParams) -> float:
    return params.c


# --------------------------------------------------------------------------
# distributed damping laws F_d(xi, v)


@dataclass(frozen=True)
class ArctanScale:
    """``F_d(xi, v) = a * arctan(v)``."""

    a: float

    def __post_init__(self):
        if not self.a >= 0:
            raise ConfigurationError(f"ArctanScale gain must be nonnegative, got {self.a!r}")

    def __call__(self, xi, v):
        return self.a * np.arctan(v)

    def derivative(self, xi, v):
        v = np.asarray(v, dtype=float)
        return self.a / (1.0 + v * v)

    @property
    def sup(self) -> float:
        return self.a * math.pi / 2

    @property
    def lipschitz(self) -> float:
        return self.a


@dataclass(frozen=True)
class UserTable:
    """Piecewise-linear law in ``v``, held constant beyond the table ends.

    The values must be nondecreasing and pass through the origin so that the
    law stays monotone, bounded and neutral at rest.
    """

    v: tuple
    f: tuple

    def __post_init__(self):
        v = np.asarray(self.v, dtype=float)
        f = np.asarray(self.f, dtype=float)
        if v.ndim != 1 or v.shape != f.shape or v.size < 2:
            raise ConfigurationError("UserTable needs two equally long 1-D sequences with at least 2 entries")
        if np.any(np.diff(v) <= 0):
            raise ConfigurationError("UserTable velocities must be strictly increasing")
        if np.any(np.diff(f) < 0):
            raise ConfigurationError("UserTable values must be nondecreasing")
        if not (v[0] <= 0.0 <= v[-1]) or abs(float(np.interp(0.0, v, f))) > 1e-14:
            raise ConfigurationError("UserTable must cover v = 0 and vanish there")
        object.__setattr__(self, "v", tuple(v.tolist()))
        object.__setattr__(self, "f", tuple(f.tolist()))

    def __call__(self, xi, v):
        return np.interp(v, self.v, self.f)

    def derivative(self, xi, v):
        knots = np.asarray(self.v)
        slopes = np.diff(self.f) / np.diff(knots)
        idx = np.searchsorted(knots, v, side="right") - 1
        inside = (idx >= 0) & (idx < slopes.size)
        return np.where(inside, slopes[np.clip(idx, 0, slopes.size - 1)], 0.0)

    @property
    def sup(self) -> float:
        return float(max(abs(self.f[0]), abs(self.f[-1])))

    @property
    def lipschitz(self) -> float:
        return float(np.max(np.diff(self.f) / np.diff(self.v)))


DistributedLaw = Union[ArctanScale, UserTable]


# --------------------------------------------------------------------------
# bit friction F_e(v)


@dataclass(frozen=True)
class RegularizedCoulomb:
    """Smoothed Coulomb friction with a Stribeck bump.

    ``F_e(v) = -A v / s * (1 + h exp(-s / Delta))`` with ``s = sqrt(v^2 + eps^2)``.
    For ``h > 0`` the law is dissipative but not monotone.
    """

    A: float = 1.0
    eps: float = 1e-3
    h: float = 0.1
    Delta: float = 0.1

    def __post_init__(self):
        if not (self.A >= 0 and self.eps > 0 and self.h >= 0 and self.Delta > 0):
            raise ConfigurationError(
                f"RegularizedCoulomb needs A >= 0, eps > 0, h >= 0, Delta > 0; got {self}"
            )

    def __call__(self, v):
        s = np.sqrt(v * v + self.eps**2)
        return -self.A * v / s * (1.0 + self.h * np.exp(-s / self.Delta))

    def derivative(self, v):
        s = np.sqrt(v * v + self.eps**2)
        bump = self.h * np.exp(-s / self.Delta)
        return -self.A * (self.eps**2 / s**3 * (1.0 + bump) - bump * v * v / (self.Delta * s * s))

    @property
    def sup(self) -> float:
        return self.A * (1.0 + self.h)

    @property
    def max_slope(self) -> float:
        """Upper bound of ``|F_e'|``, used for explicit step-size limits."""
        return self.A * ((1.0 + self.h) / self.eps + self.h / self.Delta)


@dataclass(frozen=True)
class DampingSpec:
    """Pair of optional damping laws; ``None`` means no damping."""

    distributed: DistributedLaw | None = None
    boundary: RegularizedCoulomb | None = None

    def Fd(self, xi, v):
        if self.distributed is None:
            return 0.0 * (np.asarray(v, dtype=float) + np.asarray(xi, dtype=float))
        return self.distributed(xi, v)

    def dFd(self, xi, v):
        if self.distributed is None:
            return 0.0 * np.asarray(v, dtype=float)
        return self.distributed.derivative(xi, v)

    def Fe(self, v):
        if self.boundary is None:
            return 0.0 * v
        return self.boundary(v)

    def dFe(self, v):
        if self.boundary is None:
            return 0.0 * v
        return self.boundary.derivative(v)

    @property
    def Fd_sup(self) -> float:
        return 0.0 if self.distributed is None else self.distributed.sup

    @property
    def Fd_lipschitz(self) -> float:
        return 0.0 if self.distributed is None else self.distributed.lipschitz

    @property
    def Fe_max_slope(self) -> float:
        return 0.0 if self.boundary is None else self.boundary.max_slope


def eval_Fd(spec: DampingSpec, xi, v, ell: float):
    """Distributed damping torque density at position ``xi`` and velocity ``v``.

    Raises
    ------
    DomainError
        If any ``xi`` lies outside ``[0, ell]``.
    """
    xi_arr = np.asarray(xi, dtype=float)
    if np.any(xi_arr < 0.0) or np.any(xi_arr > ell):
        raise DomainError(f"position outside [0, {ell}]")
    return spec.Fd(xi, v)


def eval_Fe(spec: DampingSpec, v):
    return spec.Fe(v)


# --------------------------------------------------------------------------
# reference signal


@dataclass(frozen=True)
class ReferenceSpec:
    """Constant or piecewise-linear reference, held constant outside the table.

    Use :meth:`constant` or :meth:`table` rather than the raw constructor.
    """

    times: tuple = field(default=(0.0,))
    values: tuple = field(default=(5.0,))

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        y = np.asarray(self.values, dtype=float)
        if t.ndim != 1 or t.shape != y.shape or t.size == 0:
            raise ConfigurationError("reference table needs equally long, non-empty 1-D sequences")
        if np.any(np.diff(t) <= 0):
            raise ConfigurationError("reference table times must be strictly increasing")
        if not np.all(np.isfinite(y)):
            raise ConfigurationError("reference values must be finite")
        object.__setattr__(self, "times", tuple(t.tolist()))
        object.__setattr__(self, "values", tuple(y.tolist()))

    @classmethod
    def constant(cls, value: float) -> "ReferenceSpec":
        return cls((0.0,), (float(value),))

    @classmethod
    def table(cls, times, values) -> "ReferenceSpec":
        return cls(tuple(times), tuple(values))

    @property
    def is_constant(self) -> bool:
        return len(self.times) == 1

    def __call__(self, t):
        if self.is_constant:
            return self.values[0] + 0.0 * np.asarray(t, dtype=float) if np.ndim(t) else self.values[0]
        return np.interp(t, self.times, self.values)

    def derivative(self, t):
        if self.is_constant:
            return 0.0 * np.asarray(t, dtype=float) if np.ndim(t) else 0.0
        knots = np.asarray(self.times)
        slopes = np.diff(self.values) / np.diff(knots)
        idx = np.searchsorted(knots, t, side="right") - 1
        inside = (idx >= 0) & (idx < slopes.size)
        return np.where(inside, slopes[np.clip(idx, 0, slopes.size - 1)], 0.0)

    @property
    def sup(self) -> float:
        return float(np.max(np.abs(self.values)))
