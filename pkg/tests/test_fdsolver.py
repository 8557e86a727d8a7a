import math

import numpy as np
import pytest

from drillfunnel.characteristics import InitialData, Profile
from drillfunnel.config import default_config, load_preset, with_overrides
from drillfunnel.errors import ConfigurationError
from drillfunnel.fdsolver import (
    SimState,
    SpatialGrid,
    WaveModel,
    choose_dt,
    discrete_energy,
    energy_rate,
    ghost_value,
    rhs,
    run_closed_loop,
    run_free,
    step_fixed,
)
from drillfunnel.model import ArctanScale, DampingSpec, DrillParams, ReferenceSpec, RegularizedCoulomb

P = DrillParams()
GRID = SpatialGrid(51, 1.0)
UNDAMPED = WaveModel(P, DampingSpec(), GRID)
DAMPED = WaveModel(P, DampingSpec(ArctanScale(0.3), RegularizedCoulomb()), GRID)


def test_grid():
    assert GRID.dxi == pytest.approx(0.02, rel=1e-15)
    assert GRID.nodes[-1] == 1.0
    assert SpatialGrid.from_spacing(10.0, 0.02).n_points == 501
    with pytest.raises(ConfigurationError):
        SpatialGrid(2, 1.0)


def test_ghost_value_examples():
    assert ghost_value(0.3, 0.0, 1.0, 0.02) == 0.3
    assert ghost_value(0.0, 1.0, 1.0, 0.02) == -0.02
    assert ghost_value(0.5, 1.0, 2.0, 0.02) == pytest.approx(0.49, rel=1e-15)


def test_rhs_equilibrium():
    z = np.zeros(51)
    d = rhs(SimState(z, z.copy()), UNDAMPED, 0.0)
    assert np.all(d.phi == 0) and np.all(d.vel == 0)


def test_rhs_sine_stencil():
    xi = GRID.nodes
    d = rhs(SimState(np.sin(np.pi * xi), np.zeros(51)), UNDAMPED, 0.0)
    interior = slice(1, -1)
    err = np.max(np.abs(d.vel[interior] + np.pi**2 * np.sin(np.pi * xi[interior])))
    assert err <= np.pi**4 / 12 * GRID.dxi**2


def test_rhs_single_node():
    phi = np.zeros(51)
    phi[20] = 1.0
    d = rhs(SimState(phi, np.zeros(51)), UNDAMPED, 0.0)
    assert d.vel[20] == pytest.approx(-5000.0, rel=1e-12)
    assert d.vel[19] == pytest.approx(2500.0, rel=1e-12)


def test_top_flux_from_input():
    d = rhs(SimState(np.zeros(51), np.zeros(51)), UNDAMPED, 1.0)
    assert d.vel[0] == pytest.approx(-1.0 / GRID.dxi, rel=1e-12)
    assert np.all(d.vel[1:] == 0)


def test_step_equilibrium():
    s = SimState(np.zeros(51), np.zeros(51))
    out = step_fixed(s, 0.01, UNDAMPED)
    assert np.all(out.phi == 0) and np.all(out.vel == 0)


def test_step_cfl_guard():
    with pytest.raises(ConfigurationError):
        step_fixed(SimState(np.zeros(51), np.zeros(51)), 1.5 * GRID.dxi, UNDAMPED)


def test_energy_examples():
    z = np.zeros(51)
    assert discrete_energy(SimState(z, z.copy()), P, GRID) == 0.0
    assert discrete_energy(SimState(z, np.ones(51)), P, GRID) == pytest.approx(2.0, rel=1e-14)
    assert discrete_energy(SimState(GRID.nodes.copy(), z), P, GRID) == pytest.approx(1.0, rel=1e-14)


def test_energy_identity_exact(rng):
    # semi-discrete summation by parts: dE/dt = -2 u z without damping
    for _ in range(10):
        s = SimState(rng.normal(size=51), rng.normal(size=51))
        u = rng.normal()
        assert energy_rate(s, UNDAMPED, u) == pytest.approx(-2 * u * s.z, abs=1e-9)


def test_energy_rate_damped_nonpositive(rng):
    for _ in range(10):
        s = SimState(rng.normal(size=51), rng.normal(size=51))
        assert energy_rate(s, DAMPED, 0.0) <= 1e-9


def test_free_wave_energy_drift_per_step():
    model = WaveModel(P, DampingSpec(), GRID, ends="fixed")
    data = InitialData(Profile.sine(1.0, math.pi), Profile.zero())
    run = run_free(model, data, 1.0, 0.5 * GRID.dxi)
    assert np.max(np.abs(np.diff(run.energy))) / run.energy[0] <= 1e-10


def test_damped_energy_nonincreasing():
    data = InitialData(Profile.sine(1.0, math.pi), Profile.sine(2.0, 2 * math.pi))
    dt = choose_dt(DAMPED)
    run = run_free(DAMPED, data, 2.0, dt)
    assert np.max(np.diff(run.energy)) <= 1e-9


def test_choose_dt_divides_delay():
    dt = choose_dt(DAMPED, omega=1.0)
    m = round(1.0 / dt)
    assert m * dt == pytest.approx(1.0, rel=1e-14)
    assert dt <= 2 * P.J / DAMPED.damping.Fe_max_slope


def test_uncontrolled_zero_run():
    cfg = with_overrides(default_config(), control=False, damping=DampingSpec())
    cfg = with_overrides(cfg, time=type(cfg.time)(t_end=2.0))
    res = run_closed_loop(cfg)
    assert np.all(res.raw.y == 0) and np.all(res.raw.energy == 0)
    assert res.violation is None


def test_closed_loop_trace_shape():
    res = run_closed_loop(load_preset("l1"))
    tr = res.trace
    assert len(tr) == 500
    np.testing.assert_allclose(np.diff(tr.t), 10 / 499, rtol=1e-9)
    assert res.raw.v[0] == 1.0
    assert np.isnan(tr.w[-1]) and np.isfinite(tr.w[0])
    # w = y - y_ref + I(t + w) equals psi(t) e(t + w) at integration nodes
    raw, m = res.raw, round(1.0 / res.dt)
    np.testing.assert_allclose(raw.w[:-m], raw.psi_shift[m:] * raw.e[m:], atol=1e-9)


def test_initial_funnel_violation_is_reported():
    cfg = load_preset("l1")
    tight = with_overrides(cfg, funnel=type(cfg.funnel)(a=0.0, d=4.0, omega=1.0))
    res = run_closed_loop(tight)
    assert res.violation is not None and res.violation.t == 0.0
    assert abs(res.violation.e) == pytest.approx(1.25)
    assert len(res.trace) == 1


def test_reference_jump_violation_is_reported():
    # a jump far wider than the funnel cannot be followed within one step
    cfg = with_overrides(load_preset("l1"), reference=ReferenceSpec.table((0.0, 5.0, 5.001), (5.0, 5.0, 20.0)))
    res = run_closed_loop(cfg)
    assert res.violation is not None
    assert 6.0 <= res.violation.t <= 6.01
    assert res.summary["violation_time"] == res.violation.t
    assert res.raw.t[-1] < res.violation.t
