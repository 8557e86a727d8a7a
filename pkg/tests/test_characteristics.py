import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from drillfunnel.characteristics import (
    InitialData,
    Profile,
    VelocityField,
    damping_line_integral,
    dalembert,
    dalembert_velocity,
    picard_damped,
    simulate_undamped_loop,
    y_delay_rhs,
)
from drillfunnel.errors import DomainError
from drillfunnel.funnel import FunnelConfig, FunnelController
from drillfunnel.model import ArctanScale, DampingSpec, DrillParams, ReferenceSpec, RegularizedCoulomb

P = DrillParams()
ZERO = Profile.zero()
SINE = Profile.sine(1.0, math.pi)
ARCTAN = DampingSpec(ArctanScale(0.3))


def test_dalembert_zero():
    assert dalembert(ZERO, ZERO, None, 0.5, 0.3, 1.0, ell=1.0) == 0.0


@given(st.floats(-3, 3), st.floats(0, 3), st.floats(0.5, 2))
def test_dalembert_standing_wave(xi, t, c):
    val = dalembert(SINE, ZERO, None, xi, t, c, policy="smooth-extension")
    assert val == pytest.approx(math.sin(math.pi * xi) * math.cos(math.pi * c * t), abs=1e-14)


def test_dalembert_unit_velocity():
    one = Profile.constant(1.0)
    assert dalembert(ZERO, one, None, 0.5, 0.4, 1.0, ell=1.0) == pytest.approx(0.4, rel=1e-12)


def test_dalembert_duhamel_constant_forcing():
    # phi_tt = phi_xixi + 1 from rest has phi = t^2 / 2
    val = dalembert(ZERO, ZERO, lambda s, tau: 1.0, 0.5, 0.3, 1.0, ell=1.0)
    assert val == pytest.approx(0.045, rel=1e-10)
    vel = dalembert_velocity(ZERO, ZERO, lambda s, tau: 1.0, 0.5, 0.3, 1.0, ell=1.0)
    assert vel == pytest.approx(0.3, rel=1e-10)


def test_dalembert_velocity_matches_difference():
    data = (Profile.sine(1.0, 3.0, 0.2), Profile.polynomial((0.1, 0.5, -0.3)))
    h = 1e-5
    num = (dalembert(*data, None, 0.5, 0.2 + h, 1.0, ell=1.0) - dalembert(*data, None, 0.5, 0.2 - h, 1.0, ell=1.0)) / (2 * h)
    assert dalembert_velocity(*data, None, 0.5, 0.2, 1.0, ell=1.0) == pytest.approx(num, rel=1e-8)


def test_dalembert_domain_guard():
    with pytest.raises(DomainError):
        dalembert(SINE, ZERO, None, 0.1, 0.2, 1.0, ell=1.0)
    with pytest.raises(DomainError):
        InitialData(policy="reflect")


def test_picard_undamped_one_iteration():
    data = InitialData(SINE, Profile.sine(0.5, 2 * math.pi, 0.3))
    res = picard_damped(data, DampingSpec(), 0.4, 1.0, 1.0, 0.02)
    assert res.iterations == 1
    n, j = 10, 25
    expected = dalembert_velocity(data.phi0, data.v0, None, res.xi[j], res.t[n], 1.0, ell=1.0)
    assert res.w[n, j] == pytest.approx(expected, abs=1e-14)
    assert np.isnan(res.w[10, 2])


def test_picard_zero_data_fixed_point():
    res = picard_damped(InitialData(), ARCTAN, 0.4, 1.0, 1.0, 0.02)
    valid = np.isfinite(res.w)
    assert np.all(res.w[valid] == 0.0)


def test_picard_contraction_ratio():
    data = InitialData(ZERO, Profile.constant(1.0), policy="smooth-extension")
    horizon = 0.5
    res = picard_damped(data, ARCTAN, horizon, 1.0, 1.0, 0.02)
    inc = np.asarray(res.increments)
    ratios = inc[1:] / inc[:-1]
    lip_t = ARCTAN.Fd_lipschitz * horizon / P.rho
    assert np.all(ratios[inc[1:] > 1e-13] <= lip_t)


def test_picard_uniform_decay_oracle():
    # with v0 = 1 everywhere the damped velocity stays uniform: w' = -0.3 arctan(w)
    data = InitialData(ZERO, Profile.constant(1.0), policy="smooth-extension")
    res = picard_damped(data, ARCTAN, 0.5, 1.0, 1.0, 0.01)
    ref = solve_ivp(lambda t, w: -0.3 * np.arctan(w), (0, 0.5), [1.0], t_eval=res.t, rtol=1e-12, atol=1e-14)
    assert np.max(np.abs(res.w[:, 50] - ref.y[0])) < 1e-5


def test_y_delay_rhs_examples():
    assert y_delay_rhs(0.0, 0.0, 0.0, 0.0, P, DampingSpec(boundary=RegularizedCoulomb())) == 0.0
    assert y_delay_rhs(1.0, 0.0, 0.0, 0.0, P) == -1.0
    assert y_delay_rhs(0.0, 1.0, 0.0, 0.0, P) == -1.0


def _field(value, ell=1.0):
    times = np.linspace(0.0, 3.0, 31)
    xi = np.linspace(0.0, ell, 11)
    return VelocityField(times, xi, np.full((31, 11), value))


def test_line_integral_examples():
    assert damping_line_integral(_field(1.0), 2.0, P, DampingSpec()) == 0.0
    assert damping_line_integral(_field(0.0), 2.0, P, ARCTAN) == 0.0
    kappa = 0.3 * math.atan(2.0)
    assert damping_line_integral(_field(2.0), 2.0, P, ARCTAN) == pytest.approx(kappa * P.omega, rel=1e-10)
    assert damping_line_integral(_field(2.0), 2.0, P, ARCTAN, n_nodes=7) == pytest.approx(kappa, rel=1e-12)


def test_line_integral_leaves_field():
    with pytest.raises(DomainError):
        damping_line_integral(_field(1.0), 5.0, P, ARCTAN)


def _loop(mode, k=None, t_end=4.0):
    cfg = FunnelConfig()
    cfg = dataclasses.replace(cfg, k=k if k is not None else 4 * cfg.psi_sup)
    ctl = FunnelController(cfg, ReferenceSpec.constant(5.0), P.c, P.G, mode)
    return simulate_undamped_loop(P, ctl, t_end, 100)


def test_undamped_loop_rest_start():
    tr = _loop("direct")
    assert tr.y[0] == 0.0 and tr.v[0] == 1.0
    # the top torque reaches the bit only after one travel time
    assert np.all(tr.y[tr.t < P.omega - 1e-12] == 0.0)
    assert np.all(np.abs(tr.e) < 1)


def test_undamped_loop_modes_agree():
    a, b = _loop("direct"), _loop("measured")
    assert np.max(np.abs(a.e - b.e)) <= 1e-8


def test_undamped_loop_rejects_distributed_damping():
    cfg = FunnelConfig()
    ctl = FunnelController(cfg, ReferenceSpec.constant(5.0), P.c, P.G, "direct")
    with pytest.raises(DomainError):
        simulate_undamped_loop(P, ctl, 1.0, 10, damping=ARCTAN)
