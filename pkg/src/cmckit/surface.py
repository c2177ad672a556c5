"""Discrete surfaces: stacks of closed horizontal slices, and rotational ones.

Slice curves are closed polylines in the (s, r) chart whose edges are read
as geodesic segments.  Normals are estimated by shooting the horizontal
geodesic normal from each vertex to the neighbouring slices (a straight
line in the Klein chart) and differencing the signed offsets in height.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import geom
from .delaunay import DelaunayParams, DelaunayProfile
from .geom import PointH2


class SchemaError(ValueError):
    """Raised for malformed surface files; the message names the location."""


class DegenerateVertexError(ValueError):
    pass


@dataclass(frozen=True)
class SlicedSurface:
    """Closed curves at strictly increasing heights.

    ``curves[k]`` is an ``(n_k, 2)`` array of ``(s, r)`` vertices; the edge
    from the last vertex back to the first is implicit.
    """

    heights: np.ndarray
    curves: tuple
    source: str | None = None

    def __post_init__(self):
        h = np.asarray(self.heights, dtype=float)
        object.__setattr__(self, "heights", h)
        object.__setattr__(
            self, "curves", tuple(np.asarray(c, dtype=float) for c in self.curves)
        )
        if len(h) != len(self.curves):
            raise SchemaError("heights and curves differ in length")
        if np.any(np.diff(h) <= 0):
            k = int(np.nonzero(np.diff(h) <= 0)[0][0]) + 1
            raise SchemaError(f"slices[{k}]: heights must increase strictly")
        for k, c in enumerate(self.curves):
            if c.ndim != 2 or c.shape[1] != 2 or len(c) < 8:
                raise SchemaError(f"slices[{k}]: need >= 8 vertices of (s, r)")
            if not np.all(np.isfinite(c)):
                raise SchemaError(f"slices[{k}]: non-finite coordinates")

    def __len__(self):
        return len(self.heights)

    def map_points(self, fn) -> "SlicedSurface":
        """Apply ``fn(s, r) -> (s', r')`` to every vertex."""
        out = []
        for c in self.curves:
            s, r = fn(c[:, 0], c[:, 1])
            out.append(np.column_stack([s, r]))
        return SlicedSurface(self.heights.copy(), tuple(out), self.source)

    def translated_s(self, a: float) -> "SlicedSurface":
        return self.map_points(lambda s, r: (s + a, r))

    def translated_z(self, a: float) -> "SlicedSurface":
        return SlicedSurface(self.heights + a, self.curves, self.source)

    def reflected(self, t: float) -> "SlicedSurface":
        """Mirror image across ``{s = t}``; curve orientation reverses."""
        return self.map_points(lambda s, r: (2.0 * t - s, r))

    def replace_curve(self, k: int, curve) -> "SlicedSurface":
        curves = list(self.curves)
        curves[k] = np.asarray(curve, dtype=float)
        return SlicedSurface(self.heights.copy(), tuple(curves), self.source)

    def __eq__(self, other):
        if not isinstance(other, SlicedSurface):
            return NotImplemented
        return (
            np.array_equal(self.heights, other.heights)
            and len(self.curves) == len(other.curves)
            and all(np.array_equal(a, b) for a, b in zip(self.curves, other.curves))
        )

    __hash__ = None


@dataclass(frozen=True)
class RotationalSurface:
    profile: DelaunayProfile

    @property
    def axis(self) -> PointH2:
        return self.profile.axis

    def __eq__(self, other):
        if not isinstance(other, RotationalSurface):
            return NotImplemented
        a, b = self.profile, other.profile
        return (
            a.params == b.params
            and a.axis == b.axis
            and all(np.array_equal(getattr(a, f), getattr(b, f)) for f in ("t", "z", "rho", "sigma"))
        )

    __hash__ = None


@dataclass
class SurfaceNormalField:
    """Per-slice outward unit normals and the data they were built from.

    ``normals[k]`` has rows ``(a_s, a_r, a_z)``; ``horizontal[k]`` holds the
    unit outward normal of the slice curve inside its horizontal plane and
    ``slope[k]`` the rate at which the surface moves along it per unit
    height.
    """

    normals: list = field(default_factory=list)
    horizontal: list = field(default_factory=list)
    slope: list = field(default_factory=list)


# --- polyline helpers -------------------------------------------------------


def orientation(curve) -> float:
    """+1 for counter-clockwise curves in the (s, r) chart, -1 otherwise."""
    s, r = curve[:, 0], curve[:, 1]
    a = np.sum(s * np.roll(r, -1) - np.roll(s, -1) * r)
    return 1.0 if a > 0 else -1.0


def edge_lengths(curve) -> np.ndarray:
    """Hyperbolic lengths of the edges ``i -> i+1`` (closing edge included)."""
    nxt = np.roll(curve, -1, axis=0)
    return geom.distance_h2((curve[:, 0], curve[:, 1]), (nxt[:, 0], nxt[:, 1]))


def enclosed_area(curve) -> float:
    """Hyperbolic area of the geodesic polygon (fan of signed triangles)."""
    X = geom.to_hyperboloid(curve[:, 0], curve[:, 1])
    base = X.mean(axis=0)
    base /= math.sqrt(-geom.minkowski(base, base))
    area = geom.triangle_area(base, X, np.roll(X, -1, axis=0)).sum()
    return abs(float(area))


def closed_integral(values, curve) -> float:
    """Trapezoid rule for a vertex field around a closed curve."""
    ell = edge_lengths(curve)
    return float(np.sum(0.5 * (values + np.roll(values, -1)) * ell))


def horizontal_normals(curve) -> np.ndarray:
    """Outward unit normals of a closed curve in the hyperbolic metric."""
    T = np.roll(curve, -1, axis=0) - np.roll(curve, 1, axis=0)
    c2 = np.cosh(curve[:, 1]) ** 2
    n = np.column_stack([T[:, 1], -c2 * T[:, 0]])
    nrm = np.sqrt(n[:, 0] ** 2 * c2 + n[:, 1] ** 2)
    if np.any(nrm == 0):
        bad = np.nonzero(nrm == 0)[0].tolist()
        raise DegenerateVertexError(f"zero tangent at vertices {bad}")
    return orientation(curve) * n / nrm[:, None]


def is_simple(curve) -> bool:
    """True when no two non-adjacent edges of the closed polyline cross."""
    a = curve
    b = np.roll(curve, -1, axis=0)
    n = len(a)
    d = b - a

    def cross(u, v):
        return u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]

    for i in range(n):
        j = np.arange(i + 2, n)
        if i == 0:
            j = j[j != n - 1]
        if len(j) == 0:
            continue
        o1 = cross(d[i], a[j] - a[i])
        o2 = cross(d[i], b[j] - a[i])
        o3 = cross(d[j], a[i] - a[j])
        o4 = cross(d[j], b[i] - a[j])
        if np.any((o1 * o2 < 0) & (o3 * o4 < 0)):
            return False
    return True


def _normal_offsets(curve, normals, other) -> np.ndarray:
    """Signed distance along the geodesic normal from each vertex to ``other``.

    Positive when the neighbouring curve lies on the outward side.
    """
    P = geom.to_klein(curve[:, 0], curve[:, 1])
    J = geom.klein_jacobian(curve[:, 0], curve[:, 1])
    D = np.einsum("nij,nj->ni", J, normals)
    Q = geom.to_klein(other[:, 0], other[:, 1])
    Q1 = np.roll(Q, -1, axis=0)
    m = len(Q)
    kk = min(8, m)
    _, idx = cKDTree(Q).query(P, k=kk)
    idx = np.atleast_2d(idx)
    cand = np.concatenate([idx, (idx - 1) % m], axis=1)  # edges starting at j and j-1
    lam_best = _pick_nearest(_ray_edges(P, D, Q[cand], Q1[cand]))
    miss = np.isnan(lam_best)
    if np.any(miss):
        allc = np.broadcast_to(np.arange(m), (int(miss.sum()), m))
        lam_best[miss] = _pick_nearest(_ray_edges(P[miss], D[miss], Q[allc], Q1[allc]))
        if np.any(np.isnan(lam_best)):
            raise DegenerateVertexError("normal ray misses the neighbouring slice")
    hit = P + lam_best[:, None] * D
    s, r = geom.from_klein(hit)
    dist = geom.distance_h2((curve[:, 0], curve[:, 1]), (s, r))
    return np.sign(lam_best) * dist


def _pick_nearest(lam):
    a = np.where(np.isfinite(lam), np.abs(lam), np.inf)
    j = np.argmin(a, axis=1)
    out = lam[np.arange(len(lam)), j]
    return np.where(np.isfinite(a[np.arange(len(lam)), j]), out, np.nan)


def _ray_edges(P, D, A, B):
    """Line parameters ``lam`` where ``P + lam D`` meets segments ``A -> B``."""
    E = B - A
    den = D[:, None, 0] * E[..., 1] - D[:, None, 1] * E[..., 0]
    W = A - P[:, None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        lam = (W[..., 0] * E[..., 1] - W[..., 1] * E[..., 0]) / den
        mu = (W[..., 0] * D[:, None, 1] - W[..., 1] * D[:, None, 0]) / den
    ok = (den != 0) & (mu >= 0) & (mu <= 1)
    return np.where(ok, lam, np.nan)


# --- operations ---------------------------------------------------------------


def slice_rotational(surf: RotationalSurface, heights, n_per_circle: int) -> SlicedSurface:
    heights = np.asarray(heights, dtype=float)
    zmax = surf.profile.z_max
    if np.any(np.abs(heights) > zmax):
        raise ValueError(f"heights must lie within [-{zmax}, {zmax}]")
    rho = np.atleast_1d(surf.profile.rho_at(heights))
    curves = tuple(geom.circle_sample(surf.axis, rk, n_per_circle) for rk in rho)
    return SlicedSurface(heights, curves, source="rotational")


def estimate_normals(surf: SlicedSurface) -> SurfaceNormalField:
    if len(surf) < 2:
        raise ValueError("normal estimation needs at least two slices")
    z = surf.heights
    field_ = SurfaceNormalField()
    nh_all = [horizontal_normals(c) for c in surf.curves]
    n = len(surf)
    for k, c in enumerate(surf.curves):
        nh = nh_all[k]
        if 0 < k < n - 1:
            up = _normal_offsets(c, nh, surf.curves[k + 1])
            dn = _normal_offsets(c, nh, surf.curves[k - 1])
            hp, hm = z[k + 1] - z[k], z[k] - z[k - 1]
            # derivative of the quadratic through (-hm, dn), (0, 0), (hp, up)
            w = (up * hm * hm - dn * hp * hp) / (hp * hm * (hp + hm))
        elif n == 2:
            j = 1 - k
            w = _normal_offsets(c, nh, surf.curves[j]) / (z[j] - z[k])
        else:
            # one-sided quadratic through the two nearest slices on one side
            j1, j2 = (k + 1, k + 2) if k == 0 else (k - 1, k - 2)
            h1, h2 = z[j1] - z[k], z[j2] - z[k]
            d1 = _normal_offsets(c, nh, surf.curves[j1])
            d2 = _normal_offsets(c, nh, surf.curves[j2])
            w = (d1 * h2 * h2 - d2 * h1 * h1) / (h1 * h2 * (h2 - h1))
        root = np.sqrt(1.0 + w * w)
        N = np.column_stack([nh[:, 0] / root, nh[:, 1] / root, -w / root])
        field_.normals.append(N)
        field_.horizontal.append(nh)
        field_.slope.append(w)
    return field_


def area_between(surf, a: float, b: float, normals: SurfaceNormalField | None = None) -> float:
    """Lateral area of the part of the surface with ``a <= z <= b``."""
    if not a < b:
        raise ValueError(f"need a < b, got [{a}, {b}]")
    if isinstance(surf, RotationalSurface):
        zmax = surf.profile.z_max
        if a < -zmax or b > zmax:
            raise ValueError(f"interval [{a}, {b}] leaves the profile range")
        st = surf.profile.state_at(np.array([a, b]))
        return float(st["area"][1] - st["area"][0])
    z = surf.heights
    if a < z[0] or b > z[-1]:
        raise ValueError(f"interval [{a}, {b}] leaves the slice range [{z[0]}, {z[-1]}]")
    if normals is None:
        normals = estimate_normals(surf)
    # area density per unit height at each slice
    dens = np.array(
        [
            closed_integral(np.sqrt(1.0 + w * w), c)
            for w, c in zip(normals.slope, surf.curves)
        ]
    )
    return _integrate_linear(z, dens, a, b)


def _integrate_linear(z, f, a, b):
    """Exact integral of the piecewise-linear interpolant of ``f`` over [a, b]."""
    fa, fb = np.interp([a, b], z, f)
    inner = (z > a) & (z < b)
    zz = np.concatenate([[a], z[inner], [b]])
    ff = np.concatenate([[fa], f[inner], [fb]])
    return float(np.sum(0.5 * (ff[1:] + ff[:-1]) * np.diff(zz)))


# --- serialisation -------------------------------------------------------------


def _num(x) -> str:
    x = float(x)
    if not math.isfinite(x):
        raise SchemaError(f"cannot serialise non-finite number {x}")
    return format(x, ".17g")


def _dump(obj) -> str:
    if isinstance(obj, dict):
        return "{" + ", ".join(f"{json.dumps(k)}: {_dump(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(_dump(v) for v in obj) + "]"
    if isinstance(obj, str):
        return json.dumps(obj)
    return _num(obj)


def dumps(surf) -> str:
    if isinstance(surf, SlicedSurface):
        doc = {
            "type": "sliced",
            "slices": [
                {"z": z, "points": [list(p) for p in c] + [list(c[0])]}
                for z, c in zip(surf.heights, surf.curves)
            ],
        }
    elif isinstance(surf, RotationalSurface):
        p = surf.profile
        doc = {
            "type": "rotational",
            "H": p.params.H,
            "tau": p.params.tau,
            "axis": {"s": p.axis.s, "r": p.axis.r},
            "profile": [list(row) for row in zip(p.t, p.z, p.rho, p.sigma)],
        }
    else:
        raise TypeError(f"not a surface: {type(surf).__name__}")
    return _dump(doc) + "\n"


def save(surf, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(surf))


def _require(cond, where, msg):
    if not cond:
        raise SchemaError(f"{where}: {msg}")


def loads(text: str):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    _require(isinstance(doc, dict), "$", "top level must be an object")
    kind = doc.get("type")
    if kind == "sliced":
        slices = doc.get("slices")
        _require(isinstance(slices, list) and slices, "$.slices", "must be a non-empty list")
        heights, curves = [], []
        for k, sl in enumerate(slices):
            where = f"$.slices[{k}]"
            _require(isinstance(sl, dict), where, "must be an object")
            _require(isinstance(sl.get("z"), (int, float)), f"{where}.z", "must be a number")
            pts = sl.get("points")
            _require(isinstance(pts, list) and len(pts) >= 2, f"{where}.points", "must be a list")
            try:
                arr = np.array(pts, dtype=float)
            except (TypeError, ValueError):
                raise SchemaError(f"{where}.points: entries must be [s, r] pairs") from None
            _require(arr.ndim == 2 and arr.shape[1] == 2, f"{where}.points", "entries must be [s, r] pairs")
            _require(np.array_equal(arr[0], arr[-1]), f"{where}.points", "polyline is not closed (last point must repeat the first)")
            arr = arr[:-1]
            _require(len(arr) >= 8, f"{where}.points", "need >= 8 distinct vertices")
            _require(is_simple(arr), f"{where}.points", "polyline intersects itself")
            if heights:
                _require(sl["z"] > heights[-1], f"{where}.z", "heights must increase strictly")
            heights.append(float(sl["z"]))
            curves.append(arr)
        return SlicedSurface(np.array(heights), tuple(curves), source="file")
    if kind == "rotational":
        for key in ("H", "tau"):
            _require(isinstance(doc.get(key), (int, float)), f"$.{key}", "must be a number")
        axis = doc.get("axis")
        _require(isinstance(axis, dict) and {"s", "r"} <= set(axis), "$.axis", "must have s and r")
        prof = doc.get("profile")
        _require(isinstance(prof, list) and len(prof) >= 2, "$.profile", "must be a list of rows")
        arr = np.array(prof, dtype=float)
        _require(arr.ndim == 2 and arr.shape[1] == 4, "$.profile", "rows must be [t, z, rho, sigma]")
        try:
            params = DelaunayParams(float(doc["H"]), float(doc["tau"]))
            profile = DelaunayProfile.from_samples(
                params, (axis["s"], axis["r"]), arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3]
            )
        except ValueError as exc:
            raise SchemaError(f"$.profile: {exc}") from None
        return RotationalSurface(profile)
    raise SchemaError(f"$.type: expected 'sliced' or 'rotational', got {kind!r}")


def load(path):
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())
