import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import C2, weymouth_outlet
from monoflow.errors import DensityCavitation, NonPositiveDensity
from monoflow.physics import (
    CustomDissipation,
    GenericPotential,
    PotentialDissipation,
    check_monotone_v,
    edge_flow,
    edge_flow_derivatives,
    flow_from_gradient,
    gradient_for_flow,
    ideal_gas,
    reg_sqrt,
    reg_sqrt_inverse,
    shoot_edge,
    shoot_edge_flow,
    steady_edge_profile,
    wave_speed_squared,
)

D, LAM = 0.9144, 0.01
S = math.pi * D**2 / 4
GAS = ideal_gas(D, LAM)

densities = st.floats(5.0, 120.0)
gradients = st.floats(-1.0, 1.0).filter(lambda v: abs(v) > 1e-9)


def test_wave_speed_matches_constants():
    assert wave_speed_squared() == pytest.approx(C2, rel=1e-15)


def test_zero_gradient_gives_zero_flow():
    assert flow_from_gradient(GAS, 0.0, 50.0, 0.0) == 0.0


@given(densities, gradients)
def test_gas_flow_is_odd_in_gradient(u, v):
    a = flow_from_gradient(GAS, 0.0, u, v)
    b = flow_from_gradient(GAS, 0.0, u, -v)
    assert a == pytest.approx(-b, rel=1e-14)


def test_friction_balance_reference_point():
    u, v = 50.0, -0.01
    phi = float(flow_from_gradient(GAS, 0.0, u, v))
    assert phi > 0
    lhs = C2 * u * v
    rhs = -(LAM / (2 * D * S**2)) * phi * abs(phi)
    assert lhs == pytest.approx(rhs, rel=1e-10)


@given(densities, gradients)
def test_friction_balance_holds_everywhere(u, v):
    phi = float(flow_from_gradient(GAS, 0.0, u, v))
    y = C2 * u * v
    if abs(y) < 1.0:  # the regularized law departs from sqrt only for |y| ~ delta
        return
    assert C2 * u * v == pytest.approx(-(LAM / (2 * D * S**2)) * phi * abs(phi), rel=1e-9)


def test_negative_density_rejected():
    with pytest.raises(NonPositiveDensity):
        flow_from_gradient(GAS, 0.0, -1.0, 0.1)


@given(st.floats(-1e6, 1e6))
def test_regularized_sqrt_inverse(y):
    s = reg_sqrt(y, 1e-4)
    assert float(reg_sqrt_inverse(s, 1e-4)) == pytest.approx(y, rel=1e-9, abs=1e-12)


@given(densities, gradients)
def test_analytic_partials_match_central_differences(u, v):
    h_u, h_v = 1e-6 * u, 1e-6 * abs(v)
    fd_u = (GAS.eval(0, u + h_u, v) - GAS.eval(0, u - h_u, v)) / (2 * h_u)
    fd_v = (GAS.eval(0, u, v + h_v) - GAS.eval(0, u, v - h_v)) / (2 * h_v)
    assert float(GAS.d_du(0, u, v)) == pytest.approx(float(fd_u), rel=1e-6)
    assert float(GAS.d_dv(0, u, v)) == pytest.approx(float(fd_v), rel=1e-6)
    assert GAS.d_dv(0, u, v) > 0


def test_constant_profile_for_zero_flow():
    prof = steady_edge_profile(GAS, 0.0, 47.0, 20000.0)
    assert np.allclose(prof(np.linspace(0, 20000, 5)), 47.0)


def test_profile_hits_prescribed_outlet():
    p = GAS.potential
    L = 20000.0
    phi = float(p.g((p.h(55.0) - p.h(45.0)) / L))
    prof = steady_edge_profile(GAS, phi, 55.0, L)
    assert float(prof(L)) == pytest.approx(45.0, abs=1e-10)
    assert float(prof(L)) == pytest.approx(weymouth_outlet(55.0, phi, L, D, LAM), rel=1e-10)


def test_excessive_flow_cavitates():
    p = GAS.potential
    L = 20000.0
    phi = 1.01 * float(p.g(p.h(55.0) / L))
    with pytest.raises(DensityCavitation):
        steady_edge_profile(GAS, phi, 55.0, L)


@given(st.floats(20.0, 80.0), st.floats(-400.0, 400.0))
def test_potential_identity(rho_in, phi):
    p = GAS.potential
    L = 20000.0
    try:
        prof = steady_edge_profile(GAS, phi, rho_in, L)
    except DensityCavitation:
        return
    resid = float(p.h(rho_in) - p.h(prof(L)) - p.g_inv(phi) * L)
    assert abs(resid) <= 1e-10 * float(p.h(rho_in))


def test_monotone_check_passes_on_gas_grid():
    samples = [(0.0, u, v) for u in np.linspace(10, 100, 10) for v in np.linspace(-1, 1, 11)]
    verdict = check_monotone_v(GAS, samples)
    assert verdict.ok, verdict.failures[:3]


def test_monotone_check_flags_decreasing_closure():
    bad = CustomDissipation(lambda t, u, v: -v, dv_fn=lambda t, u, v: -1.0)
    verdict = check_monotone_v(bad, [(0.0, 10.0, 0.5), (0.0, 20.0, -0.2)])
    assert not verdict.ok and len(verdict.failures) == 2


def generic_linear_potential(k=3.0):
    return PotentialDissipation(
        GenericPotential(
            h_fn=lambda r: np.asarray(r, float) ** 3,
            h_prime_fn=lambda r: 3 * np.asarray(r, float) ** 2,
            h_inv_fn=lambda p: np.cbrt(p),
            g_fn=lambda y: k * np.asarray(y, float),
            g_prime_fn=lambda y: k + 0 * np.asarray(y, float),
            g_inv_fn=lambda phi: np.asarray(phi, float) / k,
        )
    )


def test_monotone_check_passes_for_generic_potential():
    m = generic_linear_potential()
    samples = [(0.0, u, v) for u in (5.0, 20.0) for v in (-0.1, 0.05, 0.3)]
    assert check_monotone_v(m, samples).ok


def test_shooting_agrees_with_closed_form():
    custom = CustomDissipation(GAS.eval, GAS.d_du, GAS.d_dv)
    rho_out = shoot_edge(custom, 0.0, 47.5, 150.0, 20000.0)
    assert rho_out == pytest.approx(weymouth_outlet(47.5, 150.0, 20000.0, D, LAM), rel=1e-8)
    phi = shoot_edge_flow(custom, 0.0, 47.5, rho_out, 20000.0)
    assert phi == pytest.approx(150.0, rel=1e-7)


def test_gradient_inversion():
    v = gradient_for_flow(GAS, 0.0, 40.0, 100.0)
    assert float(flow_from_gradient(GAS, 0.0, 40.0, v)) == pytest.approx(100.0, rel=1e-12)


def test_edge_flow_derivatives_signs_and_values():
    da, db = edge_flow_derivatives(GAS, 0.0, 47.0, 45.0, 20000.0)
    assert da > 0 > db
    h = 1e-6
    fd = (edge_flow(GAS, 0.0, 47.0 + h, 45.0, 20000.0) - edge_flow(GAS, 0.0, 47.0 - h, 45.0, 20000.0)) / (2 * h)
    assert da == pytest.approx(fd, rel=1e-6)
