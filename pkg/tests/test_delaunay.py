import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from cmckit import geom
from cmckit.delaunay import (
    CYLINDER,
    DelaunayParams,
    ParameterError,
    ProfileIntegrationError,
    cylinder_radius,
    f0_gradient,
    graph_function_f0,
    integrate_profile,
    neck_bulge_radii,
    period,
    shadow_domain,
    tau_max,
)


def radii_oracle(H, tau):
    # with x = e^rho, g(rho) = tau is (1 - 2H) x^2 + (4H - 2 tau) x - (1 + 2H) = 0
    roots = np.roots([1 - 2 * H, 4 * H - 2 * tau, -(1 + 2 * H)])
    return sorted(math.log(x.real) for x in roots)


def period_oracle(H, tau):
    # adaptive high-order integration of the meridian until the next bulge
    a, b = radii_oracle(H, tau)

    def rhs(t, y):
        rho, z, sig = y
        return [math.cos(sig), math.sin(sig), 2 * H - math.sin(sig) / math.tanh(rho)]

    def next_bulge(t, y):
        return math.cos(y[2])

    next_bulge.direction = -1
    sol = solve_ivp(rhs, (0, 50), [b, 0, math.pi / 2], method="DOP853", rtol=1e-13, atol=1e-13,
                    events=next_bulge)
    ev = sol.y_events[0]
    # first event with cos sigma decreasing through 0 after leaving the start
    zs = [row[1] for row in ev if row[1] > 1e-6]
    return zs[0]


def test_tau_max_examples():
    assert tau_max(1.0) == pytest.approx(2 - math.sqrt(3), rel=1e-15)
    assert tau_max(1.0) == pytest.approx(0.267949, abs=1e-6)
    assert tau_max(50.0) * 4 * 50 == pytest.approx(1.0, rel=0.01)
    for H in np.linspace(0.5001, 20, 60):
        assert tau_max(H) > 0
        assert tau_max(H) == pytest.approx(2 * H - math.sqrt(4 * H * H - 1), rel=1e-9)


@pytest.mark.parametrize("H", [0.5, 0.2, -1.0])
def test_tau_max_rejects_small_H(H):
    with pytest.raises(ParameterError):
        tau_max(H)


@pytest.mark.parametrize("H,tau", [(1.0, 0.0), (1.0, -0.1), (1.0, 0.3), (0.5, 0.1), (2.0, tau_max(2.0) * 1.01)])
def test_params_reject_out_of_range(H, tau):
    with pytest.raises(ParameterError):
        DelaunayParams(H, tau)


def test_tau_near_max_snaps_to_cylinder():
    p = DelaunayParams(1.0, 0.267949)
    assert p.is_cylinder and p.tau == tau_max(1.0)
    assert not DelaunayParams(1.0, 0.2679).is_cylinder


def test_radii_examples():
    a, b = neck_bulge_radii(DelaunayParams(1.0, tau_max(1.0)))
    assert a == b == pytest.approx(math.atanh(0.5), abs=1e-12)
    assert a == pytest.approx(0.549306, abs=1e-6)
    a, b = neck_bulge_radii(DelaunayParams(1.0, 0.2))
    assert a == pytest.approx(0.271, abs=1e-3)
    # closed-form oracle (the commonly quoted 0.827 is off in the third digit)
    assert b == pytest.approx(0.8285073, abs=1e-6)
    a, b = neck_bulge_radii(DelaunayParams(1.0, 1e-9))
    assert b == pytest.approx(math.log(3.0), abs=1e-7)
    assert b == pytest.approx(2 * math.atanh(0.5), abs=1e-7)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.51, 8.0), st.floats(0.01, 0.99))
def test_radii_match_quadratic_oracle(H, frac):
    tau = frac * tau_max(H)
    p = DelaunayParams(H, tau)
    a, b = neck_bulge_radii(p)
    oa, ob = radii_oracle(H, p.tau)
    assert a == pytest.approx(oa, abs=1e-10) and b == pytest.approx(ob, abs=1e-10)
    g = lambda x: math.sinh(x) - 2 * H * (math.cosh(x) - 1)
    assert g(a) == pytest.approx(p.tau, abs=1e-10) and g(b) == pytest.approx(p.tau, abs=1e-10)
    assert 0 < a < b


def test_cylinder_profile():
    p = DelaunayParams(2.0, tau_max(2.0))
    prof = integrate_profile(p, z_span=1.5)
    assert period(p) is CYLINDER and prof.period is CYLINDER
    assert np.all(prof.rho == cylinder_radius(2.0))
    assert np.all(prof.sigma == math.pi / 2)
    assert cylinder_radius(2.0) == pytest.approx(math.atanh(0.25), abs=1e-15)


@pytest.mark.parametrize("H,tau", [(1.0, 0.2), (1.0, 0.05), (2.0, 0.1), (0.6, 0.3)])
def test_period_matches_independent_integration(H, tau):
    assert period(DelaunayParams(H, tau)) == pytest.approx(period_oracle(H, tau), abs=1e-8)


def test_period_self_consistency():
    p = DelaunayParams(1.0, 0.2)
    prof = integrate_profile(p, z_span=2.2 * period(p))
    ext = prof.extrema()
    kinds = [k for _, k in ext]
    assert kinds[:4] == ["bulge", "neck", "bulge", "neck"]
    bulge_neck_gap = ext[1][0] - ext[0][0]
    assert 2 * bulge_neck_gap == pytest.approx(period(p), abs=1e-6)
    assert prof.measured_period() == pytest.approx(period(p), abs=1e-6)
    assert period(p) == pytest.approx(3.4034869269069876, abs=1e-12)


def test_period_continuous_in_tau():
    taus = np.linspace(0.05, tau_max(1.0) - 1e-3, 60)
    P = np.array([period(DelaunayParams(1.0, t)) for t in taus])
    assert np.all(np.isfinite(P)) and np.all(P > 0)
    assert np.max(np.abs(np.diff(P))) < 0.05


@pytest.fixture(scope="module")
def prof02():
    p = DelaunayParams(1.0, 0.2)
    return integrate_profile(p, z_span=2.1 * period(p))


def test_profile_invariants(prof02):
    assert np.max(np.abs(prof02.first_integral_residual())) <= 1e-8
    assert np.all(np.diff(prof02.z) > 0)
    assert np.all(np.sin(prof02.sigma) > 0)
    assert prof02.rho.min() == pytest.approx(prof02.rho_min, abs=1e-6)
    assert prof02.rho.max() == pytest.approx(prof02.rho_max, abs=1e-12)
    assert np.all((prof02.rho >= prof02.rho_min - 1e-9) & (prof02.rho <= prof02.rho_max + 1e-9))


def test_profile_symmetry_and_periodicity(prof02):
    P = prof02.period
    d = np.linspace(0, P / 2, 37)
    # mirror about the neck at P/2 and about the bulge at P
    assert np.allclose(prof02.rho_at(P / 2 + d), prof02.rho_at(P / 2 - d), atol=1e-8)
    assert np.allclose(prof02.rho_at(P + d), prof02.rho_at(P - d), atol=1e-8)
    z = np.linspace(0, P, 41)
    assert np.allclose(prof02.rho_at(z + P), prof02.rho_at(z), atol=1e-6)
    # negative heights come from the mirror about the starting bulge
    assert np.allclose(prof02.rho_at(-z), prof02.rho_at(z), atol=0)


def test_drift_halving_order():
    p = DelaunayParams(1.0, 0.2)
    span = 2 * period(p)
    d1 = np.max(np.abs(integrate_profile(p, z_span=span, step=2e-3, drift_tol=1).first_integral_residual()))
    d2 = np.max(np.abs(integrate_profile(p, z_span=span, step=1e-3, drift_tol=1).first_integral_residual()))
    assert d1 / d2 > 12


def test_drift_monitor_rejects():
    with pytest.raises(ProfileIntegrationError):
        integrate_profile(DelaunayParams(1.0, 0.2), z_span=3.0, step=0.2, drift_tol=1e-8)


def test_integrate_rejects_bad_args():
    p = DelaunayParams(1.0, 0.2)
    with pytest.raises(ValueError):
        integrate_profile(p, step=0)
    with pytest.raises(ValueError):
        integrate_profile(p, z_span=-1)


def test_state_interpolation_vs_fine_integration(prof02):
    fine = integrate_profile(prof02.params, z_span=3.5, step=1e-4)
    z = np.linspace(0.01, 3.4, 83)
    assert np.allclose(prof02.rho_at(z), fine.rho_at(z), atol=1e-11)
    assert np.allclose(prof02.sigma_at(z), fine.sigma_at(z), atol=1e-10)


def test_csv_export(prof02):
    text = prof02.to_csv()
    lines = text.splitlines()
    assert lines[0] == "t,z,rho,sigma"
    assert len(lines) == len(prof02.t) + 1
    vals = [float(x) for x in lines[5].split(",")]
    assert vals == [prof02.t[4], prof02.z[4], prof02.rho[4], prof02.sigma[4]]


def test_f0_examples(prof02):
    z = np.linspace(0, 3.3, 23)
    rho = prof02.rho_at(z)
    assert np.allclose(graph_function_f0(prof02, 0 * z, z), rho, atol=1e-15)
    assert np.allclose(graph_function_f0(prof02, rho, z), 0.0, atol=1e-15)
    rng = np.random.default_rng(3)
    zz = rng.uniform(0, 3.3, 200)
    rr = rng.uniform(-1, 1, 200) * prof02.rho_at(zz)
    f = graph_function_f0(prof02, rr, zz)
    assert np.all(f >= 0)
    d = geom.distance_h2((f, rr), (0.0, 0.0))
    assert np.max(np.abs(d - prof02.rho_at(zz))) <= 1e-10


def test_f0_rejects_outside(prof02):
    with pytest.raises(ValueError):
        graph_function_f0(prof02, 0.9, 0.0)


def test_f0_gradient_matches_finite_differences(prof02):
    r, z, h = 0.3, 1.1, 1e-6
    fr, fz = f0_gradient(prof02, r, z)
    assert fr == pytest.approx((graph_function_f0(prof02, r + h, z) - graph_function_f0(prof02, r - h, z)) / (2 * h), abs=1e-7)
    assert fz == pytest.approx((graph_function_f0(prof02, r, z + h) - graph_function_f0(prof02, r, z - h)) / (2 * h), abs=1e-7)


def test_f0_requires_centered_axis():
    prof = integrate_profile(DelaunayParams(1.0, 0.2), axis=(0.5, 0.0), z_span=1.0)
    with pytest.raises(ValueError):
        graph_function_f0(prof, 0.0, 0.5)


def test_shadow_domain(prof02):
    dom = shadow_domain(prof02)
    z = np.linspace(0, 3.3, 17)
    assert np.all(dom.contains(0 * z, z, strict=True))
    rho = prof02.rho_at(z)
    assert np.all(dom.contains(rho, z)) and not np.any(dom.contains(rho, z, strict=True))
    assert 2 * dom.half_width(0.0) == pytest.approx(2 * prof02.rho_max, abs=1e-14)
    assert 2 * dom.half_width(prof02.period) == pytest.approx(2 * prof02.rho_max, abs=1e-8)
    poly = dom.boundary(50)
    assert poly.shape == (100, 2)
    with pytest.raises(ValueError):
        shadow_domain(prof02, shrink=0)
