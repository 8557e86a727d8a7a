"""Experiment configuration: schema, defaults, YAML loading and presets.

Defaults reproduce the ``ell = 1`` experiment.  Config files are YAML with
the nested sections ``params``, ``damping``, ``funnel``, ``reference``,
``grid``, ``time``, ``initial`` and the top-level keys ``engine``,
``e_mode``, ``i_sign``, ``seed`` and ``control``.  Missing keys take their
defaults, unknown keys are rejected.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any

import yaml

from .characteristics import InitialData, Profile
from .errors import ConfigurationError
from .funnel import E_MODES, I_SIGNS, FunnelConfig
from .model import ArctanScale, DampingSpec, DrillParams, ReferenceSpec, RegularizedCoulomb, UserTable

__all__ = [
    "GridSpec",
    "TimeSpec",
    "ExperimentConfig",
    "default_config",
    "load_config",
    "load_preset",
    "config_from_dict",
    "config_to_dict",
    "PRESETS",
]

ENGINES = ("explicit", "implicit", "both")
INTEGRATORS = ("rk4", "rk23")
PRESETS = ("l1", "l10")


@dataclass(frozen=True)
class GridSpec:
    dxi: float | None = 0.02
    n_points: int | None = None

    def resolve(self, ell: float) -> int:
        """Number of nodes; an explicit ``n_points`` wins over ``dxi``."""
        if self.n_points is not None:
            n = int(self.n_points)
            if n < 3:
                raise ConfigurationError(f"grid.n_points: need at least 3 nodes, got {n}")
            if self.dxi is not None:
                implied = ell / self.dxi + 1.0
                if abs(implied - n) > 1e-9 * implied:
                    warnings.warn(
                        f"grid.n_points={n} overrides grid.dxi={self.dxi} (which implies {implied:g} nodes)",
                        stacklevel=2,
                    )
            return n
        if self.dxi is None or not self.dxi > 0:
            raise ConfigurationError("grid: give a positive dxi or n_points")
        cells = ell / self.dxi
        n_cells = int(round(cells))
        if abs(cells - n_cells) > 1e-6 * max(cells, 1.0):
            warnings.warn(f"grid.dxi={self.dxi} does not divide ell={ell}; using {n_cells} cells", stacklevel=2)
        return max(n_cells, 2) + 1


@dataclass(frozen=True)
class TimeSpec:
    t_end: float = 10.0
    dt: float | None = None
    cfl_fraction: float = 0.5
    cfl_max: float = 0.9
    n_output_rows: int = 500
    integrator: str = "rk4"

    def __post_init__(self):
        problems = []
        if not (isinstance(self.t_end, (int, float)) and self.t_end > 0):
            problems.append(f"time.t_end: must be positive, got {self.t_end!r}")
        if self.dt is not None and not self.dt > 0:
            problems.append(f"time.dt: must be positive, got {self.dt!r}")
        if not 0 < self.cfl_fraction <= self.cfl_max:
            problems.append(f"time.cfl_fraction: must lie in (0, cfl_max={self.cfl_max}], got {self.cfl_fraction!r}")
        if int(self.n_output_rows) < 0:
            problems.append("time.n_output_rows: must be >= 0")
        if self.integrator not in INTEGRATORS:
            problems.append(f"time.integrator: must be one of {INTEGRATORS}")
        if problems:
            raise ConfigurationError("; ".join(problems))


@dataclass(frozen=True)
class ExperimentConfig:
    params: DrillParams = field(default_factory=DrillParams)
    damping: DampingSpec = field(
        default_factory=lambda: DampingSpec(ArctanScale(0.3), RegularizedCoulomb(1.0, 1e-3, 0.1, 0.1))
    )
    funnel: FunnelConfig = field(default_factory=FunnelConfig)
    reference: ReferenceSpec = field(default_factory=lambda: ReferenceSpec.constant(5.0))
    grid: GridSpec = field(default_factory=GridSpec)
    time: TimeSpec = field(default_factory=TimeSpec)
    initial: InitialData = field(default_factory=InitialData)
    engine: str = "explicit"
    e_mode: str = "direct"
    seed: int = 0
    control: bool = True
    name: str = "custom"

    def __post_init__(self):
        problems = []
        if self.engine not in ENGINES:
            problems.append(f"engine: must be one of {ENGINES}, got {self.engine!r}")
        if self.e_mode not in E_MODES:
            problems.append(f"e_mode: must be one of {E_MODES}, got {self.e_mode!r}")
        if abs(self.funnel.omega - self.params.omega) > 1e-12 * self.params.omega:
            problems.append(
                f"funnel.omega={self.funnel.omega} differs from the travel time ell/c={self.params.omega}"
            )
        if problems:
            raise ConfigurationError("invalid experiment config:\n  " + "\n  ".join(problems))

    @property
    def n_points(self) -> int:
        return self.grid.resolve(self.params.ell)

    @property
    def dxi(self) -> float:
        return self.params.ell / (self.n_points - 1)

    @property
    def omega(self) -> float:
        return self.params.omega

    def theorem_gains(self) -> dict:
        """Gains for which the global-existence guarantee is stated, and whether they are used."""
        p = self.params
        alpha_thm = p.G * p.Gamma / (p.c * p.J)
        beta_thm = p.G * p.Gamma / p.J
        return {
            "alpha_theorem": alpha_thm,
            "beta_theorem": beta_thm,
            "beta_equals_c_alpha": math.isclose(self.funnel.beta, p.c * self.funnel.alpha, rel_tol=1e-12),
            "matches_theorem": math.isclose(self.funnel.alpha, alpha_thm, rel_tol=1e-12)
            and math.isclose(self.funnel.beta, beta_thm, rel_tol=1e-12),
        }


def default_config() -> ExperimentConfig:
    return ExperimentConfig(name="l1")


# --------------------------------------------------------------------------
# dict <-> config


_SECTIONS = {"params", "damping", "funnel", "reference", "grid", "time", "initial",
             "engine", "e_mode", "i_sign", "seed", "control", "name"}


def _check_keys(section: str, given: dict, allowed) -> list:
    extra = sorted(set(given) - set(allowed))
    return [f"{section}.{k}: unknown key" for k in extra]


def _section(raw: dict, key: str) -> dict:
    value = raw.get(key) or {}
    if not isinstance(value, dict):
        raise ConfigurationError(f"{key}: expected a mapping, got {type(value).__name__}")
    return value


def _build(section: str, factory, kwargs: dict, problems: list):
    try:
        return factory(**kwargs)
    except (ConfigurationError, TypeError, ValueError) as exc:
        problems.append(f"{section}: {exc}")
        return None


def _distributed(raw, problems):
    if raw is None or raw == "none":
        return None
    kind = raw.get("type", "arctan")
    if kind == "arctan":
        problems.extend(_check_keys("damping.distributed", raw, {"type", "a"}))
        return _build("damping.distributed", ArctanScale, {"a": float(raw.get("a", 0.3))}, problems)
    if kind == "table":
        problems.extend(_check_keys("damping.distributed", raw, {"type", "v", "f"}))
        return _build("damping.distributed", UserTable, {"v": tuple(raw.get("v", ())), "f": tuple(raw.get("f", ()))}, problems)
    problems.append(f"damping.distributed.type: unknown law {kind!r} (use arctan or table)")
    return None


def _boundary(raw, problems):
    if raw is None or raw == "none":
        return None
    kind = raw.get("type", "coulomb")
    if kind != "coulomb":
        problems.append(f"damping.boundary.type: unknown law {kind!r} (use coulomb)")
        return None
    problems.extend(_check_keys("damping.boundary", raw, {"type", "A", "eps", "h", "Delta"}))
    kwargs = {k: float(raw[k]) for k in ("A", "eps", "h", "Delta") if k in raw}
    return _build("damping.boundary", RegularizedCoulomb, kwargs, problems)


def _profile(raw, where, problems):
    if raw is None or raw == "zero":
        return Profile.zero()
    if not isinstance(raw, dict):
        problems.append(f"{where}: expected a mapping or 'zero'")
        return Profile.zero()
    kind = raw.get("type", "zero")
    if kind == "zero":
        return Profile.zero()
    if kind == "sine":
        problems.extend(_check_keys(where, raw, {"type", "amplitude", "wavenumber", "phase"}))
        return Profile.sine(float(raw.get("amplitude", 1.0)), float(raw.get("wavenumber", math.pi)), float(raw.get("phase", 0.0)))
    if kind == "polynomial":
        problems.extend(_check_keys(where, raw, {"type", "coeffs"}))
        return Profile.polynomial(raw.get("coeffs", [0.0]))
    problems.append(f"{where}.type: unknown profile {kind!r}")
    return Profile.zero()


def config_from_dict(raw: dict | None, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Overlay ``raw`` on ``base`` (default: the ``ell = 1`` experiment)."""
    raw = dict(raw or {})
    base = base or default_config()
    problems = _check_keys("config", raw, _SECTIONS)

    p_raw = _section(raw, "params")
    problems.extend(_check_keys("params", p_raw, {"ell", "rho", "G", "J", "Gamma"}))
    params = _build("params", DrillParams, {**asdict(base.params), **p_raw}, problems)

    damping = base.damping
    if "damping" in raw:
        d_raw = raw["damping"] or {}
        problems.extend(_check_keys("damping", d_raw, {"distributed", "boundary"}))
        distributed = _distributed(d_raw["distributed"], problems) if "distributed" in d_raw else base.damping.distributed
        boundary = _boundary(d_raw["boundary"], problems) if "boundary" in d_raw else base.damping.boundary
        damping = DampingSpec(distributed, boundary)

    f_raw = _section(raw, "funnel")
    f_keys = {"a", "b", "d", "k", "alpha", "beta", "v_hat", "T_shaping", "i_sign"}
    problems.extend(_check_keys("funnel", f_raw, f_keys))
    f_args = {k: v for k, v in asdict(base.funnel).items()}
    f_args.update(f_raw)
    if "i_sign" in raw:
        f_args["i_sign"] = raw["i_sign"]
    if f_args.get("i_sign") not in I_SIGNS:
        problems.append(f"i_sign: must be one of {I_SIGNS}, got {f_args.get('i_sign')!r}")
    if params is not None:
        f_args["omega"] = params.omega
    funnel = _build("funnel", FunnelConfig, f_args, problems)

    reference = base.reference
    if "reference" in raw:
        r_raw = _section(raw, "reference")
        problems.extend(_check_keys("reference", r_raw, {"value", "times", "values"}))
        if "value" in r_raw:
            reference = _build("reference", ReferenceSpec.constant, {"value": float(r_raw["value"])}, problems)
        elif "times" in r_raw:
            reference = _build("reference", ReferenceSpec.table, {"times": r_raw["times"], "values": r_raw.get("values", ())}, problems)

    g_raw = _section(raw, "grid")
    problems.extend(_check_keys("grid", g_raw, {"dxi", "n_points"}))
    grid = base.grid
    if g_raw:
        grid = GridSpec(dxi=g_raw.get("dxi", grid.dxi if "n_points" not in g_raw else None),
                        n_points=g_raw.get("n_points", None if "dxi" in g_raw else grid.n_points))

    t_raw = _section(raw, "time")
    problems.extend(_check_keys("time", t_raw, {"t_end", "dt", "cfl_fraction", "cfl_max", "n_output_rows", "integrator"}))
    time = _build("time", TimeSpec, {**asdict(base.time), **t_raw}, problems)

    initial = base.initial
    if "initial" in raw:
        i_raw = _section(raw, "initial")
        problems.extend(_check_keys("initial", i_raw, {"phi0", "v0", "policy"}))
        initial = _build("initial", InitialData, {
            "phi0": _profile(i_raw.get("phi0"), "initial.phi0", problems),
            "v0": _profile(i_raw.get("v0"), "initial.v0", problems),
            "policy": i_raw.get("policy", "interior-only"),
        }, problems)

    if problems:
        raise ConfigurationError("invalid experiment config:\n  " + "\n  ".join(problems))
    try:
        if params is not None:
            GridSpec.resolve(grid, params.ell)
        return ExperimentConfig(
            params=params,
            damping=damping,
            funnel=funnel,
            reference=reference,
            grid=grid,
            time=time,
            initial=initial,
            engine=raw.get("engine", base.engine),
            e_mode=raw.get("e_mode", base.e_mode),
            seed=int(raw.get("seed", base.seed)),
            control=bool(raw.get("control", base.control)),
            name=str(raw.get("name", base.name)),
        )
    except ConfigurationError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"invalid experiment config: {exc}") from exc


def load_config(path: str | Path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"cannot parse config {path}: {exc}") from exc
    if raw is not None and not isinstance(raw, dict):
        raise ConfigurationError(f"config {path}: top level must be a mapping")
    raw = dict(raw or {})
    raw.setdefault("name", path.stem)
    return config_from_dict(raw, base=base)


def load_preset(name: str) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigurationError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}")
    text = resources.files("drillfunnel").joinpath("presets", f"{name}.yaml").read_text()
    return config_from_dict(yaml.safe_load(text))


# --------------------------------------------------------------------------
# echo


def _profile_dict(p: Profile) -> Any:
    if p.is_zero:
        return "zero"
    if p.kind == "sine":
        a, k, ph = p.params
        return {"type": "sine", "amplitude": a, "wavenumber": k, "phase": ph}
    return {"type": "polynomial", "coeffs": list(p.params)}


def config_to_dict(cfg: ExperimentConfig) -> dict:
    """Fully resolved config as plain data; feeding it back reproduces ``cfg``."""
    d = cfg.damping
    if d.distributed is None:
        dist = None
    elif isinstance(d.distributed, ArctanScale):
        dist = {"type": "arctan", "a": d.distributed.a}
    else:
        dist = {"type": "table", "v": list(d.distributed.v), "f": list(d.distributed.f)}
    bnd = None if d.boundary is None else {"type": "coulomb", **asdict(d.boundary)}
    funnel = asdict(cfg.funnel)
    funnel.pop("omega")
    ref = cfg.reference
    reference = {"value": ref.values[0]} if ref.is_constant else {"times": list(ref.times), "values": list(ref.values)}
    return {
        "name": cfg.name,
        "params": asdict(cfg.params),
        "damping": {"distributed": dist, "boundary": bnd},
        "funnel": funnel,
        "reference": reference,
        "grid": {"dxi": cfg.dxi, "n_points": cfg.n_points},
        "time": asdict(cfg.time),
        "initial": {"phi0": _profile_dict(cfg.initial.phi0), "v0": _profile_dict(cfg.initial.v0),
                    "policy": cfg.initial.policy},
        "engine": cfg.engine,
        "e_mode": cfg.e_mode,
        "seed": cfg.seed,
        "control": cfg.control,
    }


def with_overrides(cfg: ExperimentConfig, **changes) -> ExperimentConfig:
    """``dataclasses.replace`` that keeps the funnel delay in sync with the params."""
    new = replace(cfg, **changes) if "params" not in changes else replace(
        cfg, **{**changes, "funnel": changes.get("funnel", cfg.funnel).with_omega(changes["params"].omega)}
    )
    return new
