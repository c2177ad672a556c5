import json
import math

import numpy as np
import pytest

from cmckit import acceptance
from cmckit import killing_graph as kg
from cmckit.delaunay import DelaunayParams, integrate_profile, neck_bulge_radii, tau_max
from cmckit.flux import (
    FluxResult,
    KillingDirection,
    face_extent,
    flux_balance_report,
    flux_rotational,
    flux_sliced,
    rotational_conormal_term,
)
from cmckit.surface import RotationalSurface, estimate_normals, slice_rotational


@pytest.fixture(scope="module")
def rot():
    return RotationalSurface(integrate_profile(DelaunayParams(1.0, 0.2), (0.0, 0.0), z_span=4.0))


@pytest.fixture(scope="module")
def sliced():
    return acceptance.sliced_delaunay()


@pytest.mark.parametrize("H,tau", [(1.0, 0.2), (0.8, 0.1), (2.0, 0.05), (1.0, 0.25)])
def test_rotational_flux_quantized(H, tau):
    surf = RotationalSurface(integrate_profile(DelaunayParams(H, tau), (0.4, -0.1), z_span=3.0))
    vals = [flux_rotational(surf, "z", z).value for z in np.linspace(-2.9, 2.9, 23)]
    assert max(abs(v - 2 * math.pi * tau) for v in vals) <= 1e-12 * max(1.0, 2 * math.pi * tau) + 1e-9
    assert max(vals) - min(vals) <= 1e-12 + 1e-9


def test_rotational_flux_terms_split(rot):
    res = flux_rotational(rot, KillingDirection.VERTICAL, 0.0)
    _, rho_max = neck_bulge_radii(DelaunayParams(1.0, 0.2))
    assert res.boundary_term == pytest.approx(2 * math.pi * math.sinh(rho_max), rel=1e-10)
    assert res.cap_term == pytest.approx(-4 * math.pi * (math.cosh(rho_max) - 1), rel=1e-10)


def test_cylinder_flux():
    H = 1.3
    surf = RotationalSurface(integrate_profile(DelaunayParams(H, tau_max(H)), (0, 0), z_span=1.0))
    assert flux_rotational(surf, "z", 0.5).value == pytest.approx(2 * math.pi * tau_max(H), rel=1e-12)


def test_horizontal_flux_zero(rot, sliced):
    assert flux_rotational(rot, "s", 1.0).value == 0.0
    _, sl = sliced
    assert abs(flux_sliced(sl, "s", sl.heights[37], 1.0).value) <= 1e-9


def test_rotational_out_of_range(rot):
    with pytest.raises(ValueError):
        flux_rotational(rot, "z", 10.0)


def test_direction_parse():
    assert KillingDirection.parse("z") is KillingDirection.VERTICAL
    assert KillingDirection.parse("horizontal") is KillingDirection.HORIZONTAL
    with pytest.raises(ValueError):
        KillingDirection.parse("x")


def test_sliced_matches_exact(sliced):
    rot_s, sl = sliced
    N = estimate_normals(sl)
    for k in (0, 17, 50, 100, 151, 200):
        exact = flux_rotational(rot_s, "z", sl.heights[k]).value
        assert flux_sliced(sl, "z", sl.heights[k], 1.0, N).value == pytest.approx(exact, abs=1e-3)


def test_sliced_homology_invariance(sliced):
    _, sl = sliced
    N = estimate_normals(sl)
    a = flux_sliced(sl, "z", sl.heights[30], 1.0, N).value
    b = flux_sliced(sl, "z", sl.heights[140], 1.0, N).value
    assert a == pytest.approx(b, abs=1e-3)


def test_sliced_translation_equivariance(sliced):
    _, sl = sliced
    base = flux_sliced(sl, "z", sl.heights[60], 1.0).value
    moved = sl.translated_s(0.7).translated_z(1.25)
    assert flux_sliced(moved, "z", sl.heights[60] + 1.25, 1.0).value == pytest.approx(base, abs=1e-6)


def test_sliced_requires_slice_height_and_three_slices(sliced):
    _, sl = sliced
    with pytest.raises(ValueError):
        flux_sliced(sl, "z", 0.5 * (sl.heights[3] + sl.heights[4]), 1.0)
    rot_s, _ = sliced
    few = slice_rotational(rot_s, [0.0, 0.1], 64)
    with pytest.raises(ValueError):
        flux_sliced(few, "z", 0.0, 1.0)


def test_flux_result_json():
    res = FluxResult(1.5, 2.0, -0.5, 0.25, KillingDirection.HORIZONTAL)
    text = res.to_json()
    assert list(json.loads(text)) == ["height", "direction", "boundary_term", "cap_term", "value"]
    assert json.loads(text)["direction"] == "s"


def _balance(rot, n):
    _, rho_max = neck_bulge_radii(DelaunayParams(1.0, 0.2))
    dom = kg.GridDomain.delaunay_shadow((-rho_max, rho_max), (0.2, 1.4), n, n, 1.0, 0.2, 0.8)
    sol = kg.solve_dirichlet(dom, kg.bc_delaunay_f0(dom, 1.0, 0.2), 1.0)
    terms = {}
    for piece, up in (("bottom", False), ("top", True)):
        lo, hi, zf = face_extent(dom, piece)
        terms[piece] = rotational_conormal_term(rot, zf, (lo, hi), upward=up)
    return flux_balance_report(dom, sol.u, 1.0, terms)


def test_balance_equality_case_converges(rot):
    errs = [_balance(rot, n) for n in (32, 64, 128)]
    assert errs[0] > errs[1] > errs[2]
    assert errs[-1] < 1e-4


def test_balance_symmetric_heights(rot):
    # faces exactly at the bulge (z = 0) and neck (z = P/2) heights, where the profile is vertical
    P = acceptance.benchmark_domain(32).z_bounds[1]
    _, rho_max = neck_bulge_radii(DelaunayParams(1.0, 0.2))
    n = 40
    hz = (0.5 * P) / (n - 1)
    dom = kg.GridDomain.delaunay_shadow((-rho_max, rho_max), (-0.5 * hz, 0.5 * P + 0.5 * hz), 48, n, 1.0, 0.2, 0.8)
    assert face_extent(dom, "bottom")[2] == pytest.approx(0.0, abs=1e-14)
    assert face_extent(dom, "top")[2] == pytest.approx(0.5 * P, abs=1e-14)
    lo, hi, zf = face_extent(dom, "top")
    assert abs(rotational_conormal_term(rot, zf, (lo, hi))) <= 1e-12
    sol = kg.solve_dirichlet(dom, kg.bc_delaunay_f0(dom, 1.0, 0.2), 1.0)
    assert flux_balance_report(dom, sol.u, 1.0, {"bottom": 0.0, "top": 0.0}) < 5e-3


def test_balance_flat_exact():
    dom = kg.GridDomain.rect((-0.5, 0.5), (0.0, 1.0), 10, 10)
    u = kg.bc_constant(dom, 1.0)
    u[dom.interior] = 1.0
    assert flux_balance_report(dom, u, 0.0, {"bottom": 0.0, "top": 0.0, "lateral": 0.0}) == 0.0


def test_balance_rejects_mismatched_pieces():
    dom = kg.GridDomain.rect((-0.5, 0.5), (0.0, 1.0), 10, 10)
    u = np.where(dom.active, 1.0, np.nan)
    with pytest.raises(ValueError, match="unknown"):
        flux_balance_report(dom, u, 0.0, {"side": 0.0})
    with pytest.raises(ValueError):
        flux_balance_report(dom, u, 0.0, {})
    inside = np.zeros(dom.shape, bool)
    inside[4:7, 3:8] = True
    small = kg.GridDomain.from_interior(dom.r_bounds, dom.z_bounds, 10, 10, inside)
    v = np.where(small.active, 1.0, np.nan)
    with pytest.raises(ValueError, match="mismatch"):
        flux_balance_report(small, v, 0.0, {"bottom": 0.0})


def test_conormal_term_rejects_range(rot):
    with pytest.raises(ValueError):
        rotational_conormal_term(rot, 0.5, (-5.0, 5.0))
