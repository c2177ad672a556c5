"""Horizontal Killing graphs ``s = u(r, z)`` with constant mean curvature.

The graph has mean curvature ``H0`` (normal with a ``-d_s`` component) iff

    div( cosh(r)^2 grad u / W ) = -2 H0 cosh(r),   W = sqrt(1 + cosh(r)^2 |grad u|^2)

with Euclidean ``div`` and ``grad`` in the (r, z) plane.  The discretisation
is a node-centred finite-volume scheme: face fluxes are evaluated once per
cell face (normal derivative by a two-point difference, tangential
derivative by averaging the central differences of the two face nodes) and
node residuals are face-flux differences, so the discrete divergence
theorem holds to rounding.

Arrays over the grid are indexed ``[j, i]`` with ``j`` along ``z`` and ``i``
along ``r``.  Inactive (exterior) nodes hold NaN.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.spatial import cKDTree

from .delaunay import DelaunayParams, graph_function_f0, integrate_profile, period

logger = logging.getLogger(__name__)

EXTERIOR, BOUNDARY, INTERIOR = 0, 1, 2


class DomainError(ValueError):
    pass


class NonConvergenceError(RuntimeError):
    """Newton (with continuation) failed; carries the diagnostics."""

    def __init__(self, message, last_residual, history):
        super().__init__(message)
        self.last_residual = last_residual
        self.history = history


@dataclass(frozen=True)
class GridDomain:
    """Masked rectangular grid with ``nr x nz`` cells (``(nz+1, nr+1)`` nodes).

    Active nodes are the interior ones plus every non-interior node that is
    among the eight neighbours of an interior node; that closure makes all
    face stencils of interior nodes available.
    """

    r_bounds: tuple[float, float]
    z_bounds: tuple[float, float]
    nr: int
    nz: int
    mask: np.ndarray

    @property
    def r(self):
        return np.linspace(*self.r_bounds, self.nr + 1)

    @property
    def z(self):
        return np.linspace(*self.z_bounds, self.nz + 1)

    @property
    def hr(self):
        return (self.r_bounds[1] - self.r_bounds[0]) / self.nr

    @property
    def hz(self):
        return (self.z_bounds[1] - self.z_bounds[0]) / self.nz

    @property
    def shape(self):
        return (self.nz + 1, self.nr + 1)

    def coords(self):
        """Meshgrid ``(R, Z)`` of node coordinates."""
        return np.meshgrid(self.r, self.z)

    @property
    def interior(self):
        return self.mask == INTERIOR

    @property
    def boundary(self):
        return self.mask == BOUNDARY

    @property
    def active(self):
        return self.mask != EXTERIOR

    @classmethod
    def from_interior(cls, r_bounds, z_bounds, nr, nz, inside) -> "GridDomain":
        """Build from a boolean array marking candidate interior nodes."""
        if nr < 2 or nz < 2:
            raise DomainError("grid needs at least 2 cells per direction")
        if not (r_bounds[0] < r_bounds[1] and z_bounds[0] < z_bounds[1]):
            raise DomainError("bounds must be increasing intervals")
        inside = np.array(inside, dtype=bool)
        if inside.shape != (nz + 1, nr + 1):
            raise DomainError("interior flags do not match the grid shape")
        inside[0, :] = inside[-1, :] = False
        inside[:, 0] = inside[:, -1] = False
        if not inside.any():
            raise DomainError("domain has no interior nodes")
        inside = _largest_component(inside)
        grow = inside.copy()
        for dj in (-1, 0, 1):
            for di in (-1, 0, 1):
                grow |= np.roll(np.roll(inside, dj, axis=0), di, axis=1)
        mask = np.where(inside, INTERIOR, np.where(grow, BOUNDARY, EXTERIOR))
        return cls(tuple(map(float, r_bounds)), tuple(map(float, z_bounds)), nr, nz, mask)

    @classmethod
    def rect(cls, r_bounds, z_bounds, nr, nz) -> "GridDomain":
        return cls.from_interior(r_bounds, z_bounds, nr, nz, np.ones((nz + 1, nr + 1), bool))

    @classmethod
    def delaunay_shadow(cls, r_bounds, z_bounds, nr, nz, H, tau, shrink=1.0):
        """Shadow of the Delaunay profile (H, tau), shrunk by ``shrink``.

        Interior nodes satisfy ``|r| < shrink * rho(z)`` and so do all their
        eight neighbours, so every active node lies in the shrunken region.
        """
        profile = _profile_for(H, tau, z_bounds)
        dom = cls.rect(r_bounds, z_bounds, nr, nz)
        R, Z = dom.coords()
        rho = profile.rho_at(Z)
        inside = np.abs(R) < shrink * rho
        # keep the whole stencil (boundary nodes included) in the closed shrunken shadow
        outside = np.abs(R) > shrink * rho
        near_out = outside.copy()
        for dj in (-1, 0, 1):
            for di in (-1, 0, 1):
                near_out |= np.roll(np.roll(outside, dj, axis=0), di, axis=1)
        return cls.from_interior(r_bounds, z_bounds, nr, nz, inside & ~near_out)


def _largest_component(flags):
    from scipy import ndimage

    lab, n = ndimage.label(flags)
    if n <= 1:
        return flags
    sizes = ndimage.sum(flags, lab, index=np.arange(1, n + 1))
    return lab == (1 + int(np.argmax(sizes)))


_PROFILE_CACHE: dict = {}


def _profile_for(H, tau, z_bounds):
    """Profile (axis at the origin) covering the heights ``z_bounds``."""
    params = DelaunayParams(H, tau)
    need = max(abs(z_bounds[0]), abs(z_bounds[1])) + 0.05
    key = (params.H, params.tau)
    prof = _PROFILE_CACHE.get(key)
    if prof is None or prof.z_max < need:
        P = period(params)
        span = need if params.is_cylinder else max(need, 1.1 * float(P))
        prof = integrate_profile(params, (0.0, 0.0), z_span=span)
        _PROFILE_CACHE[key] = prof
    return prof


# --- boundary data --------------------------------------------------------------


def bc_constant(dom: GridDomain, value: float) -> np.ndarray:
    out = np.full(dom.shape, np.nan)
    out[dom.boundary] = value
    return out


def bc_delaunay_f0(dom: GridDomain, H: float, tau: float) -> np.ndarray:
    profile = _profile_for(H, tau, dom.z_bounds)
    R, Z = dom.coords()
    out = np.full(dom.shape, np.nan)
    mask = dom.boundary
    try:
        out[mask] = graph_function_f0(profile, R[mask], Z[mask], clip=1e-9)
    except ValueError:
        raise DomainError("boundary nodes fall outside the Delaunay shadow") from None
    return out


def bc_samples(dom: GridDomain, values) -> np.ndarray:
    """Values for the boundary nodes listed in row-major (z outer) order."""
    values = np.asarray(values, dtype=float)
    nb = int(dom.boundary.sum())
    if values.shape != (nb,):
        raise DomainError(f"expected {nb} boundary samples, got {values.size}")
    out = np.full(dom.shape, np.nan)
    out[dom.boundary] = values
    return out


def f0_on_grid(dom: GridDomain, H: float, tau: float, nodes=None) -> np.ndarray:
    """``f0`` of the Delaunay surface at the active (or given) nodes."""
    profile = _profile_for(H, tau, dom.z_bounds)
    R, Z = dom.coords()
    sel = dom.active if nodes is None else nodes
    out = np.full(dom.shape, np.nan)
    out[sel] = graph_function_f0(profile, R[sel], Z[sel], clip=1e-9)
    return out


# --- discrete operator ---------------------------------------------------------


@dataclass
class FaceFluxes:
    """``F`` on r-faces (shape ``(nz+1, nr)``) and ``G`` on z-faces (``(nz, nr+1)``)."""

    F: np.ndarray
    G: np.ndarray
    # partial derivatives w.r.t. normal (p) and tangential (q) gradients
    dF: tuple | None = None
    dG: tuple | None = None


def face_fluxes(dom: GridDomain, u: np.ndarray, with_derivatives=False) -> FaceFluxes:
    hr, hz = dom.hr, dom.hz
    r = dom.r
    nz1, nr1 = dom.shape
    # r-faces between (j, i) and (j, i+1)
    p = (u[:, 1:] - u[:, :-1]) / hr
    q = np.full_like(p, np.nan)
    q[1:-1] = (u[2:, :-1] - u[:-2, :-1] + u[2:, 1:] - u[:-2, 1:]) / (4.0 * hz)
    c2 = np.cosh(0.5 * (r[1:] + r[:-1]))[None, :] ** 2
    W = np.sqrt(1.0 + c2 * (p * p + q * q))
    F = c2 * p / W
    # z-faces between (j, i) and (j+1, i)
    pz = (u[1:, :] - u[:-1, :]) / hz
    qz = np.full_like(pz, np.nan)
    qz[:, 1:-1] = (u[:-1, 2:] - u[:-1, :-2] + u[1:, 2:] - u[1:, :-2]) / (4.0 * hr)
    c2z = np.cosh(r)[None, :] ** 2
    Wz = np.sqrt(1.0 + c2z * (pz * pz + qz * qz))
    G = c2z * pz / Wz
    out = FaceFluxes(F, G)
    if with_derivatives:
        W3 = W ** 3
        out.dF = (c2 * (1.0 + c2 * q * q) / W3, -c2 * c2 * p * q / W3)
        W3z = Wz ** 3
        out.dG = (c2z * (1.0 + c2z * qz * qz) / W3z, -c2z * c2z * pz * qz / W3z)
    return out


def residual(dom: GridDomain, u: np.ndarray, H0: float, fluxes: FaceFluxes | None = None):
    """Node residual ``div(flux) + 2 H0 cosh r``; NaN off the interior."""
    ff = face_fluxes(dom, u) if fluxes is None else fluxes
    F, G = ff.F, ff.G
    out = np.full(dom.shape, np.nan)
    res = np.zeros((dom.nz - 1, dom.nr - 1))
    res += (F[1:-1, 1:] - F[1:-1, :-1]) / dom.hr
    res += (G[1:, 1:-1] - G[:-1, 1:-1]) / dom.hz
    res += 2.0 * H0 * np.cosh(dom.r[1:-1])[None, :]
    inner = dom.interior[1:-1, 1:-1]
    out[1:-1, 1:-1] = np.where(inner, res, np.nan)
    return out


def _unknown_index(dom):
    idx = -np.ones(dom.shape, dtype=np.int64)
    idx[dom.interior] = np.arange(int(dom.interior.sum()))
    return idx


def jacobian(dom: GridDomain, u: np.ndarray, fluxes: FaceFluxes | None = None):
    """Sparse d(residual)/d(u) over interior unknowns (row-major ordering)."""
    ff = face_fluxes(dom, u, with_derivatives=True) if fluxes is None or fluxes.dF is None else fluxes
    idx = _unknown_index(dom)
    n = int(dom.interior.sum())
    hr, hz = dom.hr, dom.hz
    rows, cols, vals = [], [], []

    def add(row_nodes, sign_scale, col_nodes, weight):
        # row_nodes, col_nodes: (j, i) index arrays; weight: values per face
        rj, ri = row_nodes
        cj, ci = col_nodes
        ridx = idx[rj, ri]
        cidx = idx[cj, ci]
        ok = (ridx >= 0) & (cidx >= 0)
        rows.append(ridx[ok])
        cols.append(cidx[ok])
        vals.append((sign_scale * weight)[ok])

    # r-faces: face (j, i+1/2) for j in 1..nz-1; nodes (j,i) left, (j,i+1) right
    dFp, dFq = ff.dF
    J, I = np.meshgrid(np.arange(1, dom.nz), np.arange(dom.nr), indexing="ij")
    Fp, Fq = dFp[1:-1], dFq[1:-1]
    left_in = dom.interior[J, I]
    right_in = dom.interior[J, I + 1]
    use = left_in | right_in
    J, I, Fp, Fq = J[use], I[use], Fp[use], Fq[use]
    stencil = [
        ((J, I + 1), Fp / hr),
        ((J, I), -Fp / hr),
        ((J + 1, I), Fq / (4 * hz)),
        ((J - 1, I), -Fq / (4 * hz)),
        ((J + 1, I + 1), Fq / (4 * hz)),
        ((J - 1, I + 1), -Fq / (4 * hz)),
    ]
    for col, w in stencil:
        # right face of (j, i), left face of (j, i+1)
        add((J, I), 1.0 / hr, col, w)
        add((J, I + 1), -1.0 / hr, col, w)
    # z-faces: face (j+1/2, i) for i in 1..nr-1; nodes (j,i) below, (j+1,i) above
    dGp, dGq = ff.dG
    J, I = np.meshgrid(np.arange(dom.nz), np.arange(1, dom.nr), indexing="ij")
    Gp, Gq = dGp[:, 1:-1], dGq[:, 1:-1]
    use = dom.interior[J, I] | dom.interior[J + 1, I]
    J, I, Gp, Gq = J[use], I[use], Gp[use], Gq[use]
    stencil = [
        ((J + 1, I), Gp / hz),
        ((J, I), -Gp / hz),
        ((J, I + 1), Gq / (4 * hr)),
        ((J, I - 1), -Gq / (4 * hr)),
        ((J + 1, I + 1), Gq / (4 * hr)),
        ((J + 1, I - 1), -Gq / (4 * hr)),
    ]
    for col, w in stencil:
        add((J, I), 1.0 / hz, col, w)
        add((J + 1, I), -1.0 / hz, col, w)
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


# --- expanded (non-divergence) form, used as an independent cross-check ------


def expanded_operator(r, ur, uz, urr, urz, uzz, H0):
    """Left minus right side of the expanded quasilinear form of the equation.

    Equals ``(div(c^2 grad u / W) + 2 H0 c) * W^3 / (c^2 (2 + c^2 |grad u|^2))``
    with ``c = cosh r``, so it vanishes exactly where the divergence form does.
    """
    c = np.cosh(r)
    c2 = c * c
    g2 = ur * ur + uz * uz
    D = 2.0 + c2 * g2
    lhs = ((1 + c2 * uz * uz) * urr - 2 * c2 * ur * uz * urz + (1 + c2 * ur * ur) * uzz) / D
    lhs = lhs + np.tanh(r) * ur
    rhs = -2.0 * H0 * (1.0 + c2 * g2) ** 1.5 / (c * D)
    return lhs - rhs


def expansion_factor(r, ur, uz):
    """``W^3 / (c^2 (2 + c^2 |grad u|^2))`` relating the two forms."""
    c2 = np.cosh(r) ** 2
    g2 = ur * ur + uz * uz
    return (1.0 + c2 * g2) ** 1.5 / (c2 * (2.0 + c2 * g2))


# --- solver --------------------------------------------------------------------


@dataclass
class SolveOptions:
    tol: float = 1e-10
    max_iter: int = 60
    continuation_step: float = 0.25
    continuation_floor: float = 1.0 / 64.0
    initial: object = None  # None (zero interior), an array over the grid, or a float


@dataclass
class GridSolution:
    dom: GridDomain
    u: np.ndarray
    H0: float
    residual_norm: float
    iterations: int
    history: list = field(default_factory=list)

    def W(self):
        ur, uz = gradient(self.dom, self.u)
        return np.sqrt(1.0 + np.cosh(self.dom.coords()[0]) ** 2 * (ur * ur + uz * uz))

    def to_csv(self, dest=None) -> str:
        return solution_csv(self.dom, self.u, dest)


def _max_norm(res, interior):
    return float(np.max(np.abs(res[interior]))) if interior.any() else 0.0


def _newton(dom, u, H0, tol, max_iter, history):
    """Damped Newton from ``u``; returns (u, ok, iterations)."""
    interior = dom.interior
    ff = face_fluxes(dom, u, with_derivatives=True)
    res = residual(dom, u, H0, ff)
    norm = _max_norm(res, interior)
    history.append({"H0": H0, "iter": 0, "residual": norm, "step": 0.0})
    if norm <= tol:
        return u, True, 0
    for it in range(1, max_iter + 1):
        J = jacobian(dom, u, ff)
        delta = spla.spsolve(J.tocsc(), -res[interior])
        if not np.all(np.isfinite(delta)):
            return u, False, it
        l2 = np.linalg.norm(res[interior])
        lam = 1.0
        while True:
            trial = u.copy()
            trial[interior] += lam * delta
            ff_t = face_fluxes(dom, trial, with_derivatives=True)
            res_t = residual(dom, trial, H0, ff_t)
            l2_t = np.linalg.norm(res_t[interior])
            if np.isfinite(l2_t) and l2_t <= (1.0 - 1e-4 * lam) * l2:
                break
            # near the rounding floor accept a full step that does not blow up
            if lam == 1.0 and np.isfinite(l2_t) and _max_norm(res_t, interior) <= max(10 * tol, 1e-13):
                break
            lam *= 0.5
            if lam < 2.0 ** -12:
                history.append({"H0": H0, "iter": it, "residual": norm, "step": 0.0})
                return u, False, it
        u, ff, res = trial, ff_t, res_t
        norm = _max_norm(res, interior)
        history.append({"H0": H0, "iter": it, "residual": norm, "step": lam})
        if norm <= tol:
            return u, True, it
    return u, False, max_iter


def _picard(dom, u, H0, max_iter, history, target):
    """Lagged-coefficient iterations: freeze ``c^2 / W`` and solve the linear problem.

    Globally much more robust than Newton when the start has steep jumps
    (the flux saturates there and Newton overshoots).  Stops once the
    residual max-norm drops below ``target`` or stagnates.
    """
    interior = dom.interior
    best = np.inf
    for it in range(1, max_iter + 1):
        ff = face_fluxes(dom, u)
        res = residual(dom, u, H0, ff)
        norm = _max_norm(res, interior)
        if norm <= target or not np.isfinite(norm):
            break
        if norm > 0.999 * best and it > 5:
            break
        best = min(best, norm)
        p = (u[:, 1:] - u[:, :-1]) / dom.hr
        pz = (u[1:, :] - u[:-1, :]) / dom.hz
        with np.errstate(invalid="ignore", divide="ignore"):
            kF = np.where(p != 0, ff.F / p, _kappa(ff.F, p, dom.r, ff, "F"))
            kG = np.where(pz != 0, ff.G / pz, _kappa(ff.G, pz, dom.r, ff, "G"))
        lin = FaceFluxes(ff.F, ff.G, (kF, np.zeros_like(kF)), (kG, np.zeros_like(kG)))
        A = jacobian(dom, u, lin)
        u = u.copy()
        u[interior] -= spla.spsolve(A.tocsc(), res[interior])
        history.append({"H0": H0, "iter": it, "residual": norm, "step": "picard"})
    return u


def _kappa(flux, p, r, ff, kind):
    # c^2 / W where the normal difference vanishes (W from the tangential part only)
    if kind == "F":
        c2 = np.cosh(0.5 * (r[1:] + r[:-1]))[None, :] ** 2
        dp = ff.dF
    else:
        c2 = np.cosh(r)[None, :] ** 2
        dp = ff.dG
    if dp is not None:
        return dp[0]
    return c2 * np.ones_like(p)


def _solve_at(dom, u, H0, tol, max_iter, history):
    u1, ok, n = _newton(dom, u.copy(), H0, tol, max_iter, history)
    if ok:
        return u1, True, n
    start_norm = history[-1]["residual"]
    u2 = _picard(dom, u.copy(), H0, 200, history, target=min(1e-2, 1e-3 * start_norm))
    u3, ok, m = _newton(dom, u2, H0, tol, max_iter, history)
    return u3, ok, n + m


def _initial_guess(dom, bc, initial):
    u = np.full(dom.shape, np.nan)
    u[dom.boundary] = bc[dom.boundary]
    if initial is None:
        u[dom.interior] = 0.0
    elif np.isscalar(initial):
        u[dom.interior] = float(initial)
    else:
        init = np.asarray(initial, dtype=float)
        if init.shape != dom.shape:
            raise DomainError("initial guess does not match the grid shape")
        u[dom.interior] = init[dom.interior]
    if not np.all(np.isfinite(u[dom.active])):
        raise DomainError("boundary data or initial guess not finite on active nodes")
    return u


def solve_dirichlet(dom: GridDomain, bc: np.ndarray, H0: float, opts: SolveOptions | None = None):
    """Solve the Dirichlet problem with damped Newton, falling back to continuation in ``H0``.

    Raises ``NonConvergenceError`` if neither route reaches ``opts.tol``.
    """
    opts = opts or SolveOptions()
    H0 = float(H0)
    u0 = _initial_guess(dom, bc, opts.initial)
    history: list = []
    total = 0
    u, ok, n = _solve_at(dom, u0, H0, opts.tol, opts.max_iter, history)
    total += n
    if not ok and H0 != 0.0:
        logger.info("direct Newton stalled at H0=%g; continuing from H0=0", H0)
        u = u0.copy()
        h, step = 0.0, min(opts.continuation_step, abs(H0))
        sign = math.copysign(1.0, H0)
        u, ok0, n = _solve_at(dom, u, 0.0, opts.tol, opts.max_iter, history)
        total += n
        if not ok0:
            raise NonConvergenceError("Newton failed on the minimal-surface equation",
                                      history[-1]["residual"], history)
        while abs(h) < abs(H0):
            target = sign * min(abs(h) + step, abs(H0))
            trial, ok_t, n = _solve_at(dom, u, target, opts.tol, opts.max_iter, history)
            total += n
            if ok_t:
                u, h = trial, target
                step = min(opts.continuation_step, 2 * step)
            else:
                step /= 2
                if step < opts.continuation_floor:
                    raise NonConvergenceError(
                        f"continuation stalled at H0={h:g}; domain may exceed the solvable scale",
                        history[-1]["residual"], history)
        ok = True
    if not ok:
        raise NonConvergenceError("Newton did not converge", history[-1]["residual"], history)
    res = residual(dom, u, H0)
    return GridSolution(dom, u, H0, _max_norm(res, dom.interior), total, history)


# --- derived fields ---------------------------------------------------------------


def gradient(dom: GridDomain, u: np.ndarray):
    """``(u_r, u_z)`` at active nodes: central differences, one-sided where a neighbour is missing."""
    return _diff(u, dom.hr, axis=1), _diff(u, dom.hz, axis=0)


def _diff(u, h, axis):
    v = np.moveaxis(u, axis, 0)
    out = np.full_like(v, np.nan)
    fwd = np.full_like(v, np.nan)
    bwd = np.full_like(v, np.nan)
    fwd[:-1] = (v[1:] - v[:-1]) / h
    bwd[1:] = (v[1:] - v[:-1]) / h
    cen = np.full_like(v, np.nan)
    cen[1:-1] = (v[2:] - v[:-2]) / (2 * h)
    out = np.where(np.isfinite(cen), cen, np.where(np.isfinite(fwd), fwd, bwd))
    return np.moveaxis(out, 0, axis)


def normal_field(dom: GridDomain, u: np.ndarray):
    """Unit normal ``(-d_s + c^2 grad u) / (c W)`` as coefficient arrays ``(a_s, a_r, a_z)``."""
    ur, uz = gradient(dom, u)
    R, _ = dom.coords()
    c = np.cosh(R)
    W = np.sqrt(1.0 + c * c * (ur * ur + uz * uz))
    return -1.0 / (c * W), c * ur / W, c * uz / W


def gradient_bound(r_p, z_p, R, H0, h0):
    """A priori bound on ``|grad u|(p)`` for a nonnegative solution on the disk ``B(p, R)``."""
    if not R > 0:
        raise ValueError(f"radius must be positive, got {R}")
    if H0 < 0 or h0 < 0:
        raise ValueError("H0 and u(p) must be nonnegative")
    M = math.cosh(abs(r_p) + R) * math.sqrt(4.0 + 2.0 * R + 2.0 * H0 * R)
    q = h0 / R
    expo = 6.0 * M * h0 + 4.0 * M * M * q * q
    if expo > 700.0:
        return math.inf  # the bound exceeds any float; it holds trivially
    return max(2.0, 32.0 * M * q) * math.exp(expo)


def check_gradient_bound(sol: GridSolution):
    """Compare ``|grad u|`` with the bound at every interior node.

    ``R`` is half the distance to the nearest non-interior active node.  Returns
    ``(checked, violations)`` where violations lists ``(j, i, grad, bound)``.
    Nodes with ``u < 0`` are skipped since the bound needs ``u >= 0``.
    """
    dom, u = sol.dom, sol.u
    R, Z = dom.coords()
    bpts = np.column_stack([R[dom.boundary], Z[dom.boundary]])
    tree = cKDTree(bpts)
    ur, uz = gradient(dom, u)
    grad = np.hypot(ur, uz)
    checked, bad = 0, []
    for j, i in zip(*np.nonzero(dom.interior)):
        if u[j, i] < 0:
            continue
        d, _ = tree.query([R[j, i], Z[j, i]])
        bound = gradient_bound(R[j, i], Z[j, i], 0.5 * d, sol.H0, u[j, i])
        checked += 1
        if not grad[j, i] <= bound:
            bad.append((int(j), int(i), float(grad[j, i]), bound))
    return checked, bad


# --- discrete divergence theorem ------------------------------------------------


def boundary_face_terms(dom: GridDomain, u: np.ndarray):
    """Outgoing face fluxes times face length on the faces leaving the interior.

    Returns a dict ``piece -> value`` with pieces ``bottom`` and ``top`` (z-faces
    whose outer node lies on the first or last grid row) and ``lateral``.
    """
    ff = face_fluxes(dom, u)
    inside = dom.interior
    terms = {"bottom": 0.0, "top": 0.0, "lateral": 0.0}
    # r-faces: (j, i) | (j, i+1)
    out_right = inside[:, :-1] & ~inside[:, 1:]
    out_left = ~inside[:, :-1] & inside[:, 1:]
    F = np.where(out_right | out_left, ff.F, 0.0)
    terms["lateral"] += float(np.sum(np.where(out_right, F, 0.0)) - np.sum(np.where(out_left, F, 0.0))) * dom.hz
    # z-faces: (j, i) below (j+1, i)
    out_up = inside[:-1, :] & ~inside[1:, :]
    out_down = ~inside[:-1, :] & inside[1:, :]
    G = np.where(out_up | out_down, ff.G, 0.0)
    rows = np.arange(dom.nz)[:, None]
    up_top = out_up & (rows + 1 == dom.nz)
    down_bottom = out_down & (rows == 0)
    terms["top"] += float(np.sum(np.where(up_top, G, 0.0))) * dom.hr
    terms["bottom"] -= float(np.sum(np.where(down_bottom, G, 0.0))) * dom.hr
    lat = float(np.sum(np.where(out_up & ~up_top, G, 0.0)) - np.sum(np.where(out_down & ~down_bottom, G, 0.0)))
    terms["lateral"] += lat * dom.hr
    return terms


def source_integral(dom: GridDomain, H0: float) -> float:
    R, _ = dom.coords()
    return float(2.0 * H0 * np.sum(np.cosh(R[dom.interior])) * dom.hr * dom.hz)


def flux_identity_residual(dom: GridDomain, u: np.ndarray, H0: float) -> float:
    """``|sum of outgoing boundary fluxes + interior source|`` for the discrete scheme."""
    terms = boundary_face_terms(dom, u)
    return abs(math.fsum(terms.values()) + source_integral(dom, H0))


# --- I/O ------------------------------------------------------------------------


def solution_csv(dom: GridDomain, u: np.ndarray, dest=None) -> str:
    R, Z = dom.coords()
    lines = ["r,z,u"]
    for j, i in zip(*np.nonzero(dom.active)):
        lines.append(f"{R[j, i]:.17g},{Z[j, i]:.17g},{u[j, i]:.17g}")
    text = "\n".join(lines) + "\n"
    if dest is not None:
        with open(dest, "w") as fh:
            fh.write(text)
    return text


def _get(obj, key, where):
    if not isinstance(obj, dict) or key not in obj:
        raise DomainError(f"missing field '{key}' in {where}")
    return obj[key]


def problem_from_json(cfg: dict):
    """Build ``(GridDomain, boundary values)`` from a domain/BC description."""
    bounds = _get(cfg, "bounds", "problem")
    rb = tuple(map(float, _get(bounds, "r", "bounds")))
    zb = tuple(map(float, _get(bounds, "z", "bounds")))
    grid = _get(cfg, "grid", "problem")
    if len(grid) != 2 or any(int(g) != g for g in grid):
        raise DomainError("grid must be [nr, nz] integers")
    nr, nz = int(grid[0]), int(grid[1])
    mask = cfg.get("mask", "rect")
    if mask == "rect":
        dom = GridDomain.rect(rb, zb, nr, nz)
    elif isinstance(mask, dict) and mask.get("type") == "delaunay_shadow":
        dom = GridDomain.delaunay_shadow(rb, zb, nr, nz, float(_get(mask, "H", "mask")),
                                         float(_get(mask, "tau", "mask")), float(mask.get("shrink", 1.0)))
    else:
        raise DomainError(f"unknown mask {mask!r}")
    bc = _get(cfg, "bc", "problem")
    kind = _get(bc, "type", "bc")
    if kind == "constant":
        vals = bc_constant(dom, float(_get(bc, "value", "bc")))
    elif kind == "delaunay_f0":
        vals = bc_delaunay_f0(dom, float(_get(bc, "H", "bc")), float(_get(bc, "tau", "bc")))
    elif kind == "samples":
        vals = bc_samples(dom, _get(bc, "values", "bc"))
    else:
        raise DomainError(f"unknown boundary data type {kind!r}")
    return dom, vals
