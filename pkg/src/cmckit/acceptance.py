"""Acceptance suite: each criterion is a function returning a ``Criterion``.

Used by ``cmckit check`` and by the test suite.  Expensive shared data
(the Killing-graph benchmark solves, the sliced Delaunay surfaces) is cached
per process.
"""

from __future__ import annotations

import functools
import math
import time
from dataclasses import dataclass

import numpy as np

from . import alexandrov as alx
from . import killing_graph as kg
from .delaunay import (
    DelaunayParams,
    ParameterError,
    integrate_profile,
    neck_bulge_radii,
    period,
    tau_max,
)
from .flux import flux_rotational, flux_sliced
from .surface import RotationalSurface, area_between, estimate_normals, slice_rotational


@dataclass
class Criterion:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] {self.number:2d} {self.name}: {self.detail} ({self.seconds:.1f}s)"


BENCH_H, BENCH_TAU, BENCH_SHRINK = 1.0, 0.2, 0.8
BENCH_GRIDS = (32, 64, 128)


# --- shared fixtures -------------------------------------------------------------


@functools.lru_cache(maxsize=None)
def benchmark_domain(n: int) -> kg.GridDomain:
    params = DelaunayParams(BENCH_H, BENCH_TAU)
    _, rho_max = neck_bulge_radii(params)
    P = period(params)
    return kg.GridDomain.delaunay_shadow(
        (-rho_max, rho_max), (0.0, P), n, n, BENCH_H, BENCH_TAU, BENCH_SHRINK
    )


@functools.lru_cache(maxsize=None)
def benchmark_solution(n: int, tol: float = 1e-10) -> kg.GridSolution:
    dom = benchmark_domain(n)
    bc = kg.bc_delaunay_f0(dom, BENCH_H, BENCH_TAU)
    return kg.solve_dirichlet(dom, bc, BENCH_H, kg.SolveOptions(tol=tol))


def benchmark_error(n: int) -> float:
    sol = benchmark_solution(n)
    exact = kg.f0_on_grid(sol.dom, BENCH_H, BENCH_TAU)
    return float(np.max(np.abs(sol.u - exact)[sol.dom.interior]))


def comparison_pair(seed: int, n: int = 16, H0: float = 0.5):
    """Two solves on a rectangle with nodewise ordered, positive, smooth boundary data."""
    rng = np.random.default_rng(seed)
    dom = kg.GridDomain.rect((-0.6, 0.6), (0.0, 1.0), n, n)
    R, Z = dom.coords()
    a = rng.uniform(-1, 1, size=5)
    base = 0.6 + 0.25 * (a[0] * np.sin(2 * R + a[1]) + a[2] * np.cos(3 * Z + a[3]) + a[4] * R * Z)
    extra = rng.uniform(0.0, 0.2) * (1.0 + np.sin(4 * R * Z + a[1]) ** 2)
    b1 = np.where(dom.boundary, base, np.nan)
    b2 = np.where(dom.boundary, base + extra, np.nan)
    s1 = kg.solve_dirichlet(dom, b1, H0)
    s2 = kg.solve_dirichlet(dom, b2, H0)
    return s1, s2


@functools.lru_cache(maxsize=None)
def comparison_suite(count: int = 20):
    return tuple(comparison_pair(seed) for seed in range(count))


@functools.lru_cache(maxsize=None)
def sliced_delaunay(H=1.0, tau=0.2, n_per_circle=512, slices_per_period=200, periods=1.0):
    params = DelaunayParams(H, tau)
    P = 1.0 if params.is_cylinder else float(period(params))
    prof = integrate_profile(params, (0.0, 0.0), z_span=periods * P + 0.05)
    rot = RotationalSurface(prof)
    m = int(round(slices_per_period * periods))
    heights = np.linspace(0.0, periods * P, m + 1)
    return rot, slice_rotational(rot, heights, n_per_circle)


FOLIATIONS = (
    {"type": "translation", "isometry": {"shift_s": 0.3}},
    {"type": "translation", "isometry": {"shift_s": -1.1}},
    {"type": "translation", "isometry": {"shift_s": 2.0, "shift_r": 0.5}},
)


@functools.lru_cache(maxsize=None)
def foliation_traces():
    _, sliced = sliced_delaunay()
    out = []
    for desc in FOLIATIONS:
        surf = alx.apply_foliation(sliced, desc)
        trace = alx.alexandrov_trace(surf)
        iso = desc["isometry"]
        s_axis, _ = alx.boost_r(iso.get("shift_r", 0.0), 0.0, 0.0)
        out.append((desc, surf, trace, float(s_axis) + iso.get("shift_s", 0.0)))
    return tuple(out)


# --- criteria ---------------------------------------------------------------------


def criterion_1() -> Criterion:
    worst_rot, worst_sl = 0.0, 0.0
    rng = np.random.default_rng(7)
    for H, tau in ((1.0, 0.05), (1.0, 0.2), (1.0, tau_max(1.0)), (2.0, 0.1)):
        rot, sliced = sliced_delaunay(H, tau)
        exact = 2 * math.pi * rot.profile.params.tau
        zs = rng.uniform(-sliced.heights[-1], sliced.heights[-1], 10)
        for z in zs:
            v = flux_rotational(rot, "z", z).value
            worst_rot = max(worst_rot, abs(v - exact) / exact)
        normals = estimate_normals(sliced)
        for k in (0, 1, 17, 50, 100, 163, len(sliced) - 1):
            v = flux_sliced(sliced, "z", sliced.heights[k], H, normals).value
            worst_sl = max(worst_sl, abs(v - exact) / exact)
    ok = worst_rot <= 1e-8 and worst_sl <= 1e-3
    return Criterion(1, "flux quantization", ok,
                     f"rotational rel err {worst_rot:.2e} (<=1e-8), sliced rel err {worst_sl:.2e} (<=1e-3)")


def criterion_2() -> Criterion:
    worst_gap, min_open = 0.0, np.inf
    rejected = True
    for H in (0.6, 1.0, 2.0, 5.0):
        tm = tau_max(H)
        a, b = neck_bulge_radii(DelaunayParams(H, tm))
        worst_gap = max(worst_gap, abs(b - a))
        a, b = neck_bulge_radii(DelaunayParams(H, tm * (1 - 1e-3)))
        min_open = min(min_open, b - a)
        for bad in (0.0, -0.1, tm * (1 + 1e-3) + 1e-5):
            try:
                DelaunayParams(H, bad)
                rejected = False
            except ParameterError:
                pass
    for badH in (0.5, 0.3):
        try:
            DelaunayParams(badH, 0.1)
            rejected = False
        except ParameterError:
            pass
    ok = worst_gap <= 1e-8 and min_open > 1e-8 and rejected
    return Criterion(2, "tau-range consistency", ok,
                     f"gap at tau_max {worst_gap:.1e}, min gap below {min_open:.2e}, out-of-range rejected={rejected}")


def _drift(params, step):
    P = float(period(params))
    prof = integrate_profile(params, z_span=2 * P, step=step, drift_tol=1.0)
    return float(np.max(np.abs(prof.first_integral_residual())))


def criterion_3() -> Criterion:
    rows = []
    ok = True
    for H, tau in ((1.0, 0.2), (1.0, 0.05), (2.0, 0.1)):
        p = DelaunayParams(H, tau)
        d1, d2 = _drift(p, 1e-3), _drift(p, 5e-4)
        ratio = d1 / d2
        ok &= d1 <= 1e-8 and ratio >= 12
        rows.append(f"({H:g},{tau:g}) drift {d1:.1e} ratio {ratio:.1f}")
    return Criterion(3, "first-integral conservation", ok, "; ".join(rows))


def criterion_4() -> Criterion:
    errs = [benchmark_error(n) for n in BENCH_GRIDS]
    ratios = [errs[i] / errs[i + 1] for i in range(len(errs) - 1)]
    ok = all(3 <= q <= 5 for q in ratios) and errs[-1] <= 5e-4
    return Criterion(4, "solver order", ok,
                     "errors " + ", ".join(f"{e:.2e}" for e in errs)
                     + "; ratios " + ", ".join(f"{q:.2f}" for q in ratios))


def criterion_5() -> Criterion:
    worst = 0.0
    rng = np.random.default_rng(11)
    for n in BENCH_GRIDS:
        ref = benchmark_solution(n)
        dom = ref.dom
        exact = kg.f0_on_grid(dom, BENCH_H, BENCH_TAU)
        noisy = np.where(dom.active, exact + 0.1 * rng.standard_normal(dom.shape), np.nan)
        bc = kg.bc_delaunay_f0(dom, BENCH_H, BENCH_TAU)
        for init in (0.0, noisy):
            other = kg.solve_dirichlet(dom, bc, BENCH_H, kg.SolveOptions(initial=init))
            worst = max(worst, float(np.max(np.abs(other.u - ref.u)[dom.active])))
    return Criterion(5, "uniqueness", worst <= 1e-8, f"max nodewise difference {worst:.1e} (<=1e-8)")


def criterion_6() -> Criterion:
    worst = -np.inf
    for s1, s2 in comparison_suite():
        act = s1.dom.active
        worst = max(worst, float(np.max((s1.u - s2.u)[act])))
    return Criterion(6, "comparison principle", worst <= 1e-9,
                     f"max(u1 - u2) = {worst:.2e} over 20 pairs (<=1e-9)")


def _all_solutions():
    sols = [benchmark_solution(n) for n in BENCH_GRIDS]
    for pair in comparison_suite():
        sols.extend(pair)
    return sols


def criterion_7() -> Criterion:
    checked, bad, used = 0, 0, 0
    for sol in _all_solutions():
        if np.nanmin(sol.u[sol.dom.active]) < 0:
            continue
        used += 1
        c, viol = kg.check_gradient_bound(sol)
        checked += c
        bad += len(viol)
    return Criterion(7, "gradient bound", bad == 0 and checked > 0,
                     f"{checked} interior points on {used} solutions, {bad} violations")


def criterion_8() -> Criterion:
    ok = True
    worst_ratio = 0.0
    for sol in _all_solutions():
        dom = sol.dom
        r = kg.flux_identity_residual(dom, sol.u, sol.H0)
        lim = dom.nr * dom.nz * 1e-10
        worst_ratio = max(worst_ratio, r / lim)
        ok &= r <= lim
    b64 = benchmark_solution(64)
    r64 = kg.flux_identity_residual(b64.dom, b64.u, b64.H0)
    ok &= r64 <= 1e-6
    return Criterion(8, "flux-balance identity", ok,
                     f"64x64 benchmark residual {r64:.1e} (<=1e-6); worst residual/(nr*nz*tol) {worst_ratio:.1e}")


def criterion_9() -> Criterion:
    ok = True
    parts = []
    for desc, surf, trace, s_axis in foliation_traces():
        err = float(np.max(np.abs(trace.floats() - s_axis)))
        sym = alx.detect_symmetry_plane(surf, trace)
        found = sym.plane is not None and abs(sym.plane - s_axis) <= 2e-3
        ok &= err <= 2e-3 and found
        parts.append(f"s0={s_axis:+.3f}: err {err:.1e}, plane {'found' if found else 'MISSING'}")
    return Criterion(9, "Alexandrov constancy", ok, "; ".join(parts))


def synthetic_traces():
    z = np.linspace(0, 1, 41)
    return {
        "constant": np.full_like(z, 0.3),
        "V": np.abs(z - 0.4) + 0.1,
        "Lambda": 0.8 - np.abs(z - 0.55),
        "step": np.where(z < 0.5, 0.6, 0.2),
    }


def criterion_10() -> Criterion:
    traces = synthetic_traces()
    usc_ok = all(alx.check_usc(t).passed for t in traces.values())
    usc_ok &= all(alx.check_usc(tr).passed for _, _, tr, _ in foliation_traces())
    spiked = traces["constant"].copy()
    spiked[20] -= 0.1
    flagged = alx.check_usc(spiked).flagged == [20]
    shapes = {k: alx.check_monotone_structure(traces[k]) for k in ("constant", "V", "Lambda")}
    v_valley = int(np.argmin(traces["V"]))
    shape_ok = (
        shapes["constant"].shape is alx.Shape.MONOTONE
        and shapes["V"].shape is alx.Shape.DOWN_UP
        and shapes["V"].valley == v_valley
        and shapes["Lambda"].shape is alx.Shape.VIOLATION
    )
    ok = usc_ok and flagged and shape_ok
    return Criterion(10, "structural checks", ok,
                     f"usc passes={usc_ok}, dip flagged={flagged}, "
                     + ", ".join(f"{k}->{v.shape.value}" for k, v in shapes.items()))


def criterion_11() -> Criterion:
    worst = 0.0
    for H, tau in ((1.0, 0.2), (1.0, 0.05), (2.0, 0.1)):
        params = DelaunayParams(H, tau)
        P = float(period(params))
        rot = RotationalSurface(integrate_profile(params, z_span=5 * P + 0.01))
        one = area_between(rot, 0.0, P)
        for k in range(1, 6):
            ak = area_between(rot, 0.0, k * P)
            worst = max(worst, abs(ak - k * one) / (k * one))
    return Criterion(11, "linear area growth", worst <= 1e-6, f"max rel deviation {worst:.1e} (<=1e-6)")


CRITERIA = (
    criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6,
    criterion_7, criterion_8, criterion_9, criterion_10, criterion_11,
)


def run_criterion(fn) -> Criterion:
    t0 = time.perf_counter()
    try:
        res = fn()
    except Exception as exc:  # report, do not abort the suite
        num = int(fn.__name__.rsplit("_", 1)[1])
        res = Criterion(num, fn.__name__, False, f"raised {type(exc).__name__}: {exc}")
    res.seconds = time.perf_counter() - t0
    return res


def run_all(echo=print) -> list:
    results = []
    for fn in CRITERIA:
        res = run_criterion(fn)
        if echo is not None:
            echo(res.line())
        results.append(res)
    return results
