import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from drillfunnel.errors import ConfigurationError, DomainError
from drillfunnel.model import (
    ArctanScale,
    DampingSpec,
    DrillParams,
    ReferenceSpec,
    RegularizedCoulomb,
    UserTable,
    eval_Fd,
    eval_Fe,
    wave_speed,
)

TABLE1 = DampingSpec(ArctanScale(0.3), RegularizedCoulomb(1.0, 1e-3, 0.1, 0.1))


def test_wave_speed_unit():
    assert wave_speed(DrillParams()) == 1.0


def test_wave_speed_dense_string():
    assert wave_speed(DrillParams(rho=4.0)) == 0.5


def test_travel_time_long_string():
    assert DrillParams(ell=10.0).omega == 10.0


@given(st.floats(0.1, 10), st.floats(0.1, 10), st.floats(0.1, 20))
def test_derived_quantities_consistent(rho, G, ell):
    p = DrillParams(ell=ell, rho=rho, G=G)
    assert math.isclose(p.c**2 * rho, G, rel_tol=1e-14)
    assert math.isclose(p.omega * p.c, ell, rel_tol=1e-14)


@pytest.mark.parametrize("field", ["ell", "rho", "G", "J", "Gamma"])
def test_params_reject_nonpositive(field):
    with pytest.raises(ConfigurationError):
        DrillParams(**{field: -1.0})


def test_fd_arctan_values():
    assert eval_Fd(TABLE1, 0.3, 0.0, 1.0) == 0.0
    assert eval_Fd(TABLE1, 0.3, 1.0, 1.0) == pytest.approx(0.23561944901923449, rel=1e-15)
    assert eval_Fd(DampingSpec(), 0.5, 7.0, 1.0) == 0.0


def test_fd_outside_string():
    with pytest.raises(DomainError):
        eval_Fd(TABLE1, 1.5, 0.0, 1.0)


def test_fe_values():
    assert eval_Fe(TABLE1, 0.0) == 0.0
    # mpmath value of the regularized law at v = 10
    assert eval_Fe(TABLE1, 10.0) == pytest.approx(-0.99999999500000004, rel=1e-14)
    assert eval_Fe(DampingSpec(), 3.0) == 0.0


def test_fd_monotone_random(rng):
    xi = rng.uniform(0, 1, 1000)
    v1 = rng.uniform(-50, 50, 1000)
    v2 = v1 + rng.uniform(0, 10, 1000)
    assert np.all(TABLE1.Fd(xi, v1) <= TABLE1.Fd(xi, v2))


def test_fe_dissipative_random(rng):
    v = rng.normal(scale=5, size=1000)
    assert np.all(v * TABLE1.Fe(v) <= 0)


def test_laws_bounded(rng):
    v = np.concatenate([rng.normal(scale=1e3, size=2000), np.linspace(-1, 1, 2001)])
    assert np.max(np.abs(TABLE1.Fd(0.5, v))) <= 0.3 * math.pi / 2
    assert np.max(np.abs(TABLE1.Fe(v))) <= 1.0 * 1.1


def test_fe_slope_bound(rng):
    law = RegularizedCoulomb()
    v = np.concatenate([np.linspace(-0.05, 0.05, 20001), rng.normal(size=1000)])
    assert np.max(np.abs(law.derivative(v))) <= law.max_slope


def test_fe_derivative_matches_difference():
    law = RegularizedCoulomb()
    v = np.array([-2.0, -0.01, 0.0, 0.003, 0.5])
    h = 1e-7
    fd = (law(v + h) - law(v - h)) / (2 * h)
    np.testing.assert_allclose(law.derivative(v), fd, rtol=1e-5, atol=1e-3)


def test_user_table():
    law = UserTable((-1.0, 0.0, 2.0), (-0.5, 0.0, 1.0))
    assert law(0.0, 1.0) == 0.5
    assert law(0.0, 5.0) == 1.0
    assert law.sup == 1.0
    with pytest.raises(ConfigurationError):
        UserTable((-1.0, 1.0), (1.0, -1.0))
    with pytest.raises(ConfigurationError):
        UserTable((1.0, 2.0), (0.0, 1.0))


def test_reference_constant_and_table():
    ref = ReferenceSpec.constant(5.0)
    assert ref(3.0) == 5.0 and ref.derivative(3.0) == 0.0 and ref.sup == 5.0
    tab = ReferenceSpec.table((0.0, 2.0), (0.0, 4.0))
    assert tab(1.0) == 2.0 and tab.derivative(1.0) == 2.0 and tab(10.0) == 4.0
    with pytest.raises(ConfigurationError):
        ReferenceSpec.table((1.0, 0.0), (0.0, 0.0))
