"""Rotationally invariant CMC surfaces (Delaunay unduloids) in H^2 x R.

The meridian of a rotational surface is parametrised by arc length ``t``:
``rho`` is the distance to the vertical axis, ``z`` the height and ``sigma``
the angle of the meridian tangent measured from the outward radial
direction.  Constant mean curvature ``H`` (with the normal pointing to the
axis) reads

    d rho / dt   = cos sigma
    d z / dt     = sin sigma
    d sigma / dt = 2H - coth(rho) sin sigma

and has the first integral ``sinh(rho) sin(sigma) - 2H (cosh(rho) - 1) = tau``.
Profiles start at a bulge (``rho = rho_max``, ``sigma = pi / 2``, ``z = 0``).
The cumulative lateral area ``2 pi int sinh(rho) dt`` is recovered from the
samples by Gauss-Legendre quadrature of the Hermite interpolant, so loaded
and freshly integrated profiles share one code path.
"""

from __future__ import annotations

import enum
import io
import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np
from scipy import integrate, optimize

from .geom import PointH2

FIRST_INTEGRAL_TOL = 1e-8
# tau within this distance of tau_max(H) is treated as the cylinder
CYLINDER_SNAP = 1e-6


class ParameterError(ValueError):
    """Raised for (H, tau) outside the unduloid range."""


class ProfileIntegrationError(RuntimeError):
    """Raised when the conservation monitor rejects an integration step."""


class PeriodKind(enum.Enum):
    CYLINDER = "CYLINDER"

    def __str__(self):
        return self.value


CYLINDER = PeriodKind.CYLINDER


def tau_max(H: float) -> float:
    """Largest admissible flux parameter, attained by the vertical cylinder."""
    if not H > 0.5:
        raise ParameterError(f"mean curvature must exceed 1/2, got H={H}")
    # 2H - sqrt(4H^2 - 1) rewritten to avoid cancellation at large H
    return 1.0 / (2.0 * H + math.sqrt(4.0 * H * H - 1.0))


def cylinder_radius(H: float) -> float:
    """Radius of the CMC cylinder, ``tanh(rho) = 1 / (2H)``."""
    if not H > 0.5:
        raise ParameterError(f"mean curvature must exceed 1/2, got H={H}")
    return math.atanh(1.0 / (2.0 * H))


@dataclass(frozen=True)
class DelaunayParams:
    H: float
    tau: float

    def __post_init__(self):
        tmax = tau_max(self.H)
        if not self.tau > 0:
            raise ParameterError(f"tau must be positive, got tau={self.tau}")
        if self.tau > tmax + CYLINDER_SNAP:
            raise ParameterError(
                f"tau={self.tau} exceeds tau_max(H={self.H})={tmax:.17g}"
            )
        if abs(self.tau - tmax) <= CYLINDER_SNAP:
            object.__setattr__(self, "tau", tmax)

    @property
    def is_cylinder(self) -> bool:
        return self.tau == tau_max(self.H)


def _g(rho, H):
    return np.sinh(rho) - 2.0 * H * (np.cosh(rho) - 1.0)


def neck_bulge_radii(params: DelaunayParams) -> tuple[float, float]:
    """Neck and bulge radii: the two roots of ``sinh r - 2H(cosh r - 1) = tau``."""
    H, tau = params.H, params.tau
    rstar = cylinder_radius(H)
    if params.is_cylinder:
        return rstar, rstar
    f = lambda x: _g(x, H) - tau
    rho_min = optimize.brentq(f, 0.0, rstar, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    rho_max = optimize.brentq(
        f, rstar, 2.0 * rstar, xtol=1e-15, rtol=4 * np.finfo(float).eps
    )
    return rho_min, rho_max


def sin_sigma_of_rho(rho, params: DelaunayParams):
    return (params.tau + 2.0 * params.H * (np.cosh(rho) - 1.0)) / np.sinh(rho)


def period(params: DelaunayParams):
    """Vertical period ``2 int tan(sigma) d rho`` over [rho_min, rho_max]."""
    if params.is_cylinder:
        return CYLINDER
    a, b = neck_bulge_radii(params)
    H, tau = params.H, params.tau

    # With x = e^rho, g(rho) - tau = (2H - 1)(x - e^a)(e^b - x) / (2x) exactly.  Under
    # rho = a + u sin^2(th/2), u = b - a, both factors become u sin^2 / u cos^2 times
    # E(y) = expm1(y)/y, so tan(sigma) d rho / d th is smooth up to the endpoints.
    u = b - a
    scale = 0.5 * (2.0 * H - 1.0) * math.exp(a)

    def E(y):
        return math.expm1(y) / y if y > 1e-300 else 1.0

    def integrand(th):
        s2 = math.sin(0.5 * th) ** 2
        c2 = 1.0 - s2
        rho = a + u * s2
        q = tau + 2.0 * H * (math.cosh(rho) - 1.0)
        sh = math.sinh(rho)
        return q / math.sqrt((sh + q) * scale * E(u * s2) * E(u * c2))

    val, _ = integrate.quad(integrand, 0.0, math.pi, epsabs=1e-14, epsrel=1e-13, limit=200)
    return 2.0 * val


def _rhs(y, H):
    rho, _z, sig = y
    ss = math.sin(sig)
    return np.array([math.cos(sig), ss, 2.0 * H - ss / math.tanh(rho)])


def _rhs_vec(rho, sig, H):
    ss = np.sin(sig)
    return (
        np.cos(sig),
        ss,
        2.0 * H - ss / np.tanh(rho),
        2.0 * np.pi * np.sinh(rho),
    )


@dataclass(frozen=True)
class DelaunayProfile:
    """Arc-length samples of a meridian starting at a bulge at height 0.

    ``area`` is the cumulative lateral area from ``t = 0``.  Heights below
    zero are served through the mirror symmetry about the starting bulge.
    """

    params: DelaunayParams
    axis: PointH2
    t: np.ndarray
    z: np.ndarray
    rho: np.ndarray
    sigma: np.ndarray
    area: np.ndarray
    rho_min: float
    rho_max: float
    period: float | PeriodKind

    @classmethod
    def from_samples(cls, params, axis, t, z, rho, sigma) -> "DelaunayProfile":
        """Build a profile from raw samples, validating its invariants."""
        t, z, rho, sigma = (np.asarray(a, dtype=float) for a in (t, z, rho, sigma))
        if not (len(t) == len(z) == len(rho) == len(sigma)) or len(t) < 2:
            raise ValueError("profile columns must have equal length >= 2")
        if np.any(np.diff(z) <= 0) or z[0] != 0.0:
            raise ValueError("profile heights must start at 0 and increase strictly")
        rho_min, rho_max = neck_bulge_radii(params)
        area = _cumulative_area(t, rho, sigma, params.H)
        return cls(
            params, PointH2(*map(float, axis)), t, z, rho, sigma, area,
            rho_min, rho_max, period(params),
        )

    @property
    def z_max(self) -> float:
        return float(self.z[-1])

    def first_integral_residual(self) -> np.ndarray:
        H, tau = self.params.H, self.params.tau
        return np.sinh(self.rho) * np.sin(self.sigma) - 2.0 * H * (np.cosh(self.rho) - 1.0) - tau

    def state_at(self, z) -> dict[str, np.ndarray]:
        """Interpolated ``t, rho, sigma, area`` at heights ``|z| <= z_max``.

        Cubic Hermite interpolation in ``t`` using the ODE right-hand side
        as nodal derivatives; the height equation is inverted by Newton's
        method inside the bracketing step.
        """
        z = np.asarray(z, dtype=float)
        scalar = z.ndim == 0
        z = np.atleast_1d(z)
        if np.any(np.abs(z) > self.z_max * (1 + 1e-14)):
            raise ValueError(
                f"height outside profile range [-{self.z_max}, {self.z_max}]"
            )
        neg = z < 0
        za = np.abs(z)
        k = np.clip(np.searchsorted(self.z, za, side="right") - 1, 0, len(self.z) - 2)
        h = self.t[k + 1] - self.t[k]
        dz = self.z[k + 1] - self.z[k]
        th = np.where(dz > 0, (za - self.z[k]) / np.where(dz > 0, dz, 1.0), 0.0)
        for _ in range(6):
            d = self._herm_eval(k, 1, th, deriv=True)
            th = th - (self._herm_eval(k, 1, th) - za) / np.where(d > 0, d, 1.0)
            th = np.clip(th, 0.0, 1.0)
        rho = np.clip(self._herm_eval(k, 0, th), self.rho_min, self.rho_max)
        sig = self._herm_eval(k, 2, th)
        area = self._herm_eval(k, 3, th)
        t = self.t[k] + th * h
        t = np.where(neg, -t, t)
        sig = np.where(neg, np.pi - sig, sig)
        area = np.where(neg, -area, area)
        out = {"t": t, "rho": rho, "sigma": sig, "area": area}
        if scalar:
            out = {key: float(val[0]) for key, val in out.items()}
        return out

    def rho_at(self, z):
        return self.state_at(z)["rho"]

    def sigma_at(self, z):
        return self.state_at(z)["sigma"]

    def extrema(self) -> list[tuple[float, str]]:
        """Heights where the meridian turns vertical, tagged bulge/neck."""
        c = np.cos(self.sigma)
        out = [(0.0, "bulge")]
        for k in np.nonzero(np.sign(c[:-1]) * np.sign(c[1:]) < 0)[0]:
            # root of cos(sigma(t)) in the step, sigma Hermite-interpolated
            th = optimize.brentq(
                lambda x, k=k: math.cos(self._herm_eval(k, 2, x)), 0.0, 1.0, xtol=1e-15
            )
            zz = float(self._herm_eval(k, 1, th))
            if zz < 1e-9:
                continue  # the starting bulge itself
            # rho increasing before the turn means a maximum
            out.append((zz, "bulge" if c[k] > 0 else "neck"))
        return out

    def _herm_eval(self, k, i, th, deriv=False):
        """Cubic Hermite of state component ``i`` on step ``k`` at fraction ``th``.

        Nodal slopes come from the ODE right-hand side; ``deriv`` returns the
        derivative with respect to ``th``.
        """
        H = self.params.H
        h = self.t[k + 1] - self.t[k]
        ys = (self.rho, self.z, self.sigma, self.area)
        a, b = ys[i][k], ys[i][k + 1]
        ma = h * _rhs_vec(self.rho[k], self.sigma[k], H)[i]
        mb = h * _rhs_vec(self.rho[k + 1], self.sigma[k + 1], H)[i]
        th2 = th * th
        if deriv:
            return (
                (6 * th2 - 6 * th) * a + (3 * th2 - 4 * th + 1) * ma
                + (-6 * th2 + 6 * th) * b + (3 * th2 - 2 * th) * mb
            )
        th3 = th2 * th
        return (
            (2 * th3 - 3 * th2 + 1) * a + (th3 - 2 * th2 + th) * ma
            + (-2 * th3 + 3 * th2) * b + (th3 - th2) * mb
        )

    def measured_period(self):
        """Bulge-to-bulge height gap of the integrated samples."""
        if self.period is CYLINDER:
            return CYLINDER
        bulges = [zz for zz, kind in self.extrema() if kind == "bulge"]
        if len(bulges) < 2:
            raise ValueError("profile shorter than one period")
        return float(np.mean(np.diff(bulges)))

    def to_csv(self, dest=None) -> str:
        """CSV with header ``t,z,rho,sigma``; written to ``dest`` if given."""
        buf = io.StringIO()
        buf.write("t,z,rho,sigma\n")
        for row in zip(self.t, self.z, self.rho, self.sigma):
            buf.write(",".join(f"{v:.17g}" for v in row) + "\n")
        text = buf.getvalue()
        if dest is not None:
            with open(dest, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        return text


def integrate_profile(
    params: DelaunayParams,
    axis: Iterable[float] = (0.0, 0.0),
    z_span: float = 1.0,
    step: float = 1e-3,
    drift_tol: float = FIRST_INTEGRAL_TOL,
) -> DelaunayProfile:
    """Integrate the meridian with fixed-step RK4 until ``z >= z_span``."""
    if not step > 0:
        raise ValueError(f"step must be positive, got {step}")
    if not z_span > 0:
        raise ValueError(f"z_span must be positive, got {z_span}")
    axis = PointH2(*map(float, axis))
    rho_min, rho_max = neck_bulge_radii(params)
    H, tau = params.H, params.tau

    if params.is_cylinder:
        n = int(math.ceil(z_span / step)) + 1
        t = step * np.arange(n)
        return DelaunayProfile.from_samples(
            params, axis, t, t.copy(), np.full(n, rho_max), np.full(n, math.pi / 2)
        )

    y = np.array([rho_max, 0.0, math.pi / 2])
    comp = np.zeros(3)  # Kahan compensation for the state update
    rows = [y.copy()]
    guard = 0.5 * rho_min
    n_steps = 0
    while y[1] < z_span:
        k1 = _rhs(y, H)
        k2 = _rhs(y + 0.5 * step * k1, H)
        k3 = _rhs(y + 0.5 * step * k2, H)
        k4 = _rhs(y + step * k3, H)
        incr = (step / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4) - comp
        y_new = y + incr
        comp = (y_new - y) - incr
        y = y_new
        n_steps += 1
        if y[0] < guard:
            raise ProfileIntegrationError(
                f"radius {y[0]:.3e} fell below half the neck radius at step {n_steps}"
            )
        resid = math.sinh(y[0]) * math.sin(y[2]) - 2.0 * H * (math.cosh(y[0]) - 1.0) - tau
        if abs(resid) > drift_tol:
            raise ProfileIntegrationError(
                f"first-integral drift {resid:.3e} exceeds {drift_tol:.1e} at step {n_steps}"
            )
        rows.append(y.copy())
    arr = np.array(rows)
    t = step * np.arange(len(arr))
    return DelaunayProfile.from_samples(params, axis, t, arr[:, 1], arr[:, 0], arr[:, 2])


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(4)


def _cumulative_area(t, rho, sigma, H):
    h = np.diff(t)
    m0 = np.cos(sigma[:-1]) * h
    m1 = np.cos(sigma[1:]) * h
    inc = np.zeros_like(h)
    for x, w in zip(_GL_NODES, _GL_WEIGHTS):
        th = 0.5 * (x + 1.0)
        th2, th3 = th * th, th * th * th
        r = (
            (2 * th3 - 3 * th2 + 1) * rho[:-1] + (th3 - 2 * th2 + th) * m0
            + (-2 * th3 + 3 * th2) * rho[1:] + (th3 - th2) * m1
        )
        inc += 0.5 * w * np.sinh(r)
    return np.concatenate([[0.0], np.cumsum(2.0 * np.pi * inc * h)])


def graph_function_f0(profile: DelaunayProfile, r, z, clip: float = 1e-12):
    """Horizontal Killing graph over the shadow of the half ``{s > 0}``.

    The point ``(f0(r, z), r, z)`` lies at distance ``rho(z)`` from the axis
    at ``(0, 0)``; ``f0 = arcosh(cosh rho(z) / cosh r)``.
    """
    _check_axis(profile)
    r = np.asarray(r, dtype=float)
    rho = profile.rho_at(z)
    excess = np.abs(r) - rho
    if np.any(excess > clip):
        raise ValueError("point outside the shadow domain |r| <= rho(z)")
    x = np.maximum(np.cosh(rho) / np.cosh(r), 1.0)
    out = np.arccosh(x)
    return float(out) if np.ndim(out) == 0 else out


def f0_gradient(profile: DelaunayProfile, r, z):
    """Analytic ``(d f0 / dr, d f0 / dz)`` in the open shadow domain."""
    _check_axis(profile)
    r = np.asarray(r, dtype=float)
    st = profile.state_at(z)
    rho, sig = st["rho"], st["sigma"]
    cr = np.cosh(r)
    x = np.cosh(rho) / cr
    root = np.sqrt(x * x - 1.0)
    drho_dz = np.cos(sig) / np.sin(sig)
    fr = -np.cosh(rho) * np.sinh(r) / (cr * cr) / root
    fz = np.sinh(rho) * drho_dz / cr / root
    return fr, fz


def _check_axis(profile):
    if profile.axis != PointH2(0.0, 0.0):
        raise ValueError("graph functions require the axis at (s, r) = (0, 0)")


@dataclass(frozen=True)
class ShadowDomain:
    """Region ``{(r, z) : |r| <= shrink * rho(z)}`` in the (r, z) plane."""

    profile: DelaunayProfile
    shrink: float = 1.0

    def half_width(self, z):
        return self.shrink * self.profile.rho_at(z)

    def contains(self, r, z, strict: bool = False):
        r = np.asarray(r, dtype=float)
        w = self.half_width(z)
        return np.abs(r) < w if strict else np.abs(r) <= w

    def boundary(self, n: int = 400, z_range: tuple[float, float] | None = None):
        """Closed boundary polyline as an ``(m, 2)`` array of ``(r, z)``."""
        lo, hi = z_range if z_range is not None else (0.0, self.profile.z_max)
        zz = np.linspace(lo, hi, n)
        w = self.half_width(zz)
        right = np.column_stack([w, zz])
        left = np.column_stack([-w[::-1], zz[::-1]])
        return np.vstack([right, left])


def shadow_domain(profile: DelaunayProfile, shrink: float = 1.0) -> ShadowDomain:
    _check_axis(profile)
    if not 0 < shrink <= 1:
        raise ValueError(f"shrink must lie in (0, 1], got {shrink}")
    return ShadowDomain(profile, shrink)
