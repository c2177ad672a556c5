"""Hyperbolic plane and H^2 x R in Fermi coordinates about a base geodesic.

A point of H^2 is ``(s, r)``: ``s`` is arc length along the base geodesic
``{r = 0}`` and ``r`` the signed distance to it.  The metric is
``dr^2 + cosh(r)^2 ds^2``; the vertical factor adds ``dz^2``.

The hyperboloid embedding used throughout is

    X = (cosh r cosh s, cosh r sinh s, sinh r),   <X, X> = -1

with the Minkowski form ``<X, Y> = -X0 Y0 + X1 Y1 + X2 Y2``.  The Klein
chart ``(X1 / X0, X2 / X0)`` maps geodesics to straight chords, which is
what the polyline code relies on.

Functions accept scalars or numpy arrays and broadcast.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

GEOM_TOL = 1e-12


class PointH2(NamedTuple):
    s: float
    r: float


class PointH2xR(NamedTuple):
    s: float
    r: float
    z: float


class TangentVec(NamedTuple):
    """Coefficients in the coordinate basis (d_s, d_r, d_z)."""

    a_s: float
    a_r: float
    a_z: float


DS = TangentVec(1.0, 0.0, 0.0)
DR = TangentVec(0.0, 1.0, 0.0)
DZ = TangentVec(0.0, 0.0, 1.0)


def metric_inner(p, u, v):
    """Inner product of tangent vectors ``u`` and ``v`` based at ``p``."""
    c = np.cosh(p[1])
    return u[0] * v[0] * c * c + u[1] * v[1] + u[2] * v[2]


def metric_norm(p, u):
    return np.sqrt(metric_inner(p, u, u))


def to_hyperboloid(s, r):
    """Hyperboloid coordinates, stacked on the last axis."""
    s = np.asarray(s, dtype=float)
    r = np.asarray(r, dtype=float)
    cr = np.cosh(r)
    return np.stack([cr * np.cosh(s), cr * np.sinh(s), np.sinh(r)], axis=-1)


def from_hyperboloid(X):
    X = np.asarray(X, dtype=float)
    r = np.arcsinh(X[..., 2])
    # X0 = cosh r cosh s and X1 = cosh r sinh s
    s = np.arcsinh(X[..., 1] / np.cosh(r))
    return s, r


def minkowski(X, Y):
    return -X[..., 0] * Y[..., 0] + X[..., 1] * Y[..., 1] + X[..., 2] * Y[..., 2]


def to_klein(s, r):
    """Klein chart coordinates ``(tanh s, tanh r / cosh s)``."""
    s = np.asarray(s, dtype=float)
    r = np.asarray(r, dtype=float)
    return np.stack([np.tanh(s), np.tanh(r) / np.cosh(s)], axis=-1)


def from_klein(k):
    k = np.asarray(k, dtype=float)
    s = np.arctanh(k[..., 0])
    cs = np.cosh(s)
    r = np.arctanh(k[..., 1] * cs)
    return s, r


def klein_jacobian(s, r):
    """d(klein)/d(s, r) as an array of shape (..., 2, 2)."""
    s = np.asarray(s, dtype=float)
    r = np.asarray(r, dtype=float)
    cs, ts = np.cosh(s), np.tanh(s)
    tr = np.tanh(r)
    J = np.empty(np.broadcast(s, r).shape + (2, 2))
    J[..., 0, 0] = 1.0 / (cs * cs)
    J[..., 0, 1] = 0.0
    J[..., 1, 0] = -tr * ts / cs
    J[..., 1, 1] = 1.0 / (np.cosh(r) ** 2 * cs)
    return J


def cosh_distance(s1, r1, s2, r2):
    """``cosh`` of the hyperbolic distance, clipped to be >= 1."""
    val = np.cosh(r1) * np.cosh(r2) * np.cosh(np.subtract(s1, s2)) - np.sinh(r1) * np.sinh(r2)
    return np.maximum(val, 1.0)


def distance_h2(p, q):
    """Geodesic distance between two points of H^2 (array-friendly)."""
    # arcosh loses half the digits near 1; use the sinh form for small gaps
    cd = cosh_distance(p[0], p[1], q[0], q[1])
    small = cd < 1.5
    d = np.arccosh(cd)
    if np.any(small):
        ds = np.subtract(p[0], q[0])
        dr = np.subtract(p[1], q[1])
        # cosh d - 1 = 2 sinh^2(d/2), evaluated without cancellation
        half = (
            np.cosh(p[1]) * np.cosh(q[1]) * 2.0 * np.sinh(ds / 2.0) ** 2
            + 2.0 * np.sinh(dr / 2.0) ** 2
        )
        d_small = 2.0 * np.arcsinh(np.sqrt(np.maximum(half, 0.0) / 2.0))
        d = np.where(small, d_small, d)
    return d if np.ndim(d) else float(d)


def reflect(t, p):
    """Mirror ``p`` across the vertical plane ``{s = t}``."""
    return PointH2xR(2.0 * t - p[0], p[1], p[2])


def translate_s(a, p):
    """Hyperbolic translation by ``a`` along the base geodesic."""
    return PointH2xR(p[0] + a, p[1], p[2])


def translate_z(a, p):
    return PointH2xR(p[0], p[1], p[2] + a)


def circle_sample(center, rho, n):
    """``n`` points on the hyperbolic circle of radius ``rho`` about ``center``.

    Points are the images of equally spaced directions under the exponential
    map, starting from the direction of increasing ``s`` and turning
    counter-clockwise in the (s, r) chart.  Returns an ``(n, 2)`` array of
    ``(s, r)``; closure is implicit (the last point connects to the first).
    """
    if not rho > 0:
        raise ValueError(f"circle radius must be positive, got {rho}")
    if n < 8:
        raise ValueError(f"need at least 8 points per circle, got {n}")
    s0, r0 = float(center[0]), float(center[1])
    theta = 2.0 * np.pi * np.arange(n) / n
    # unit tangent frame at the center: e_s = d_s / cosh r0, e_r = d_r
    P = to_hyperboloid(s0, r0)
    Es = np.array([np.sinh(s0), np.cosh(s0), 0.0])
    Er = np.array([np.sinh(r0) * np.cosh(s0), np.sinh(r0) * np.sinh(s0), np.cosh(r0)])
    V = np.cos(theta)[:, None] * Es + np.sin(theta)[:, None] * Er
    X = np.cosh(rho) * P + np.sinh(rho) * V
    s, r = from_hyperboloid(X)
    return np.column_stack([s, r])


def triangle_area(P, A, B):
    """Signed area of geodesic triangles given in hyperboloid coordinates.

    Uses ``tan(area / 2) = det(P, A, B) / (1 + cosh a + cosh b + cosh c)``.
    Positive for counter-clockwise vertices in the (s, r) chart.
    """
    det = np.einsum("...i,...i->...", P, np.cross(A, B))
    denom = 1.0 - minkowski(P, A) - minkowski(A, B) - minkowski(B, P)
    return 2.0 * np.arctan2(det, denom)
