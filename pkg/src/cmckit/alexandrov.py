"""Moving-plane (Alexandrov) reflection data of sliced surfaces.

The standard translation foliation of H^2 x R is by the vertical planes
``{s = t}``.  For a slice curve at height ``z``:

* ``t1`` is the largest ``s`` on the curve;
* ``t2`` is the first ``t`` (coming down from ``t1``) at which the mirror
  image of the part ``{s > t}`` touches the curve again;
* ``t3`` is the largest ``s`` at which the surface normal is orthogonal to
  ``d_s``, i.e. the surface crosses a plane of the foliation orthogonally;

and the Alexandrov value is ``max(t2, t3)``.  An empty slice has the value
EMPTY, which orders below every real number.

``t2`` is computed exactly for the polyline: the mirror of ``p`` across
``{s = t}`` stays on the row ``r = r(p)``, so it lands on the curve iff
``t = (s(p) + c) / 2`` for a crossing ``c < s(p)`` of that row.  Pairs with
``s(p) - c <= 2 tol_strict`` are discarded, which excludes the points on
the plane itself and their immediate neighbours.
"""

from __future__ import annotations

import enum
import io
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import geom
from .surface import SlicedSurface, SurfaceNormalField, estimate_normals

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-3
DEFAULT_ANGLE_TOL = 1e-2


class AlexandrovError(RuntimeError):
    """No contact and no orthogonal crossing found on a non-empty slice."""


class Provenance(enum.Enum):
    T2 = "T2"
    T3 = "T3"
    BOTH = "BOTH"


@dataclass(frozen=True)
class AlexandrovValue:
    """A real Alexandrov value with provenance, or EMPTY (``value is None``)."""

    value: float | None
    provenance: Provenance | None = None

    @property
    def is_empty(self) -> bool:
        return self.value is None

    def as_float(self) -> float:
        return -np.inf if self.value is None else self.value

    def shifted(self, a: float) -> "AlexandrovValue":
        return self if self.value is None else AlexandrovValue(self.value + a, self.provenance)


EMPTY = AlexandrovValue(None, None)


@dataclass
class AlexandrovTrace:
    heights: np.ndarray
    values: list
    tol: float
    angle_tol: float

    def __post_init__(self):
        if len(self.heights) != len(self.values):
            raise ValueError("heights and values must have the same length")

    def floats(self) -> np.ndarray:
        return np.array([v.as_float() for v in self.values])

    def to_csv(self, dest=None) -> str:
        buf = io.StringIO()
        buf.write("z,alpha,provenance\n")
        for z, v in zip(self.heights, self.values):
            if v.is_empty:
                buf.write(f"{z:.17g},,EMPTY\n")
            else:
                buf.write(f"{z:.17g},{v.value:.17g},{v.provenance.value}\n")
        text = buf.getvalue()
        if dest is not None:
            with open(dest, "w") as fh:
                fh.write(text)
        return text


def _is_empty(curve) -> bool:
    return curve is None or len(curve) == 0


def t1(curve):
    """Largest ``s`` on the slice (attained at a vertex), or EMPTY."""
    if _is_empty(curve):
        return EMPTY
    return float(np.max(np.asarray(curve)[:, 0]))


def row_crossings(curve, r):
    """``s`` values where the closed polyline meets the row ``{r = const}``.

    Edges are counted on the half-open range ``min <= r < max``, so a vertex
    on the row is counted once per monotone pass and horizontal edges never.
    """
    a = np.asarray(curve)
    b = np.roll(a, -1, axis=0)
    lo = np.minimum(a[:, 1], b[:, 1])
    hi = np.maximum(a[:, 1], b[:, 1])
    hit = (lo <= r) & (r < hi)
    a, b = a[hit], b[hit]
    lam = (r - a[:, 1]) / (b[:, 1] - a[:, 1])
    return a[:, 0] + lam * (b[:, 0] - a[:, 0])


def t2(curve, tol: float = DEFAULT_TOL):
    """First reflection-contact parameter, EMPTY, or ``None`` (no contact)."""
    if _is_empty(curve):
        return EMPTY
    a = np.asarray(curve, dtype=float)
    margin = 2.0 * (tol / 4.0)
    b = np.roll(a, -1, axis=0)
    lo = np.minimum(a[:, 1], b[:, 1])[None, :]
    hi = np.maximum(a[:, 1], b[:, 1])[None, :]
    rp = a[:, 1][:, None]
    hit = (lo <= rp) & (rp < hi)
    dr = (b[:, 1] - a[:, 1])[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        lam = np.where(hit, (rp - a[:, 1][None, :]) / dr, np.nan)
    c = a[:, 0][None, :] + lam * (b[:, 0] - a[:, 0])[None, :]
    sp = a[:, 0][:, None]
    ok = hit & (sp - c > margin)
    if not ok.any():
        return None
    cand = np.where(ok, 0.5 * (sp + c), -np.inf)
    return float(cand.max())


def t3(curve, normals, angle_tol: float = DEFAULT_ANGLE_TOL, upper: float | None = None):
    """Largest ``s <= upper`` where ``(N, d_s)`` vanishes along the slice.

    ``normals`` holds the unit surface normals ``(a_s, a_r, a_z)`` at the
    vertices.  Sign changes of ``(N, d_s) / cosh r`` between consecutive
    vertices are located by linear interpolation; a vertex where the value
    has a local minimum of modulus at most ``angle_tol`` also counts.
    Returns EMPTY, or ``None`` when no crossing is found.
    """
    if _is_empty(curve):
        return EMPTY
    a = np.asarray(curve, dtype=float)
    N = np.asarray(normals, dtype=float)
    if upper is None:
        upper = t1(a)
    # (N, d_s) / cosh r = cosh(r) * a_s
    g = np.cosh(a[:, 1]) * N[:, 0]
    g = np.where(np.abs(g) <= 1e-14, 0.0, g)
    gn = np.roll(g, -1)
    sn = np.roll(a[:, 0], -1)
    cands = []
    zero = g == 0.0
    cands.append(a[zero, 0])
    flip = (g * gn < 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        lam = g[flip] / (g[flip] - gn[flip])
    cands.append(a[flip, 0] + lam * (sn[flip] - a[flip, 0]))
    ag = np.abs(g)
    local_min = (ag <= np.roll(ag, 1)) & (ag <= np.roll(ag, -1)) & (ag <= angle_tol)
    cands.append(a[local_min, 0])
    s = np.concatenate(cands)
    s = s[s <= upper + 1e-12]
    if s.size == 0:
        return None
    return float(min(s.max(), upper))


def _slice_index(surface: SlicedSurface, z: float):
    h = surface.heights
    if z < h[0] - 1e-12 or z > h[-1] + 1e-12:
        return None
    k = int(np.argmin(np.abs(h - z)))
    if abs(h[k] - z) > 1e-9 * max(1.0, abs(z)):
        raise ValueError(f"height {z} is not a slice height")
    return k


def _value_at(surface, k, normals, tol, angle_tol):
    curve = surface.curves[k]
    top = t1(curve)
    a2 = t2(curve, tol)
    a3 = t3(curve, normals.normals[k], angle_tol, upper=top)
    if a2 is None and a3 is None:
        raise AlexandrovError(f"no reflection contact and no orthogonal crossing at z={surface.heights[k]}")
    if a3 is None or (a2 is not None and a2 > a3 + tol):
        return AlexandrovValue(a2, Provenance.T2)
    if a2 is None or a3 > a2 + tol:
        return AlexandrovValue(a3, Provenance.T3)
    return AlexandrovValue(max(a2, a3), Provenance.BOTH)


def alexandrov_at(surface: SlicedSurface, z: float, tol: float = DEFAULT_TOL,
                  angle_tol: float = DEFAULT_ANGLE_TOL, normals: SurfaceNormalField | None = None):
    """Alexandrov value at a slice height; EMPTY outside the height range."""
    k = _slice_index(surface, z)
    if k is None:
        return EMPTY
    if normals is None:
        normals = estimate_normals(surface)
    return _value_at(surface, k, normals, tol, angle_tol)


def thread_count() -> int:
    """Worker count from ``CMC_THREADS`` (default: all cores)."""
    raw = os.environ.get("CMC_THREADS")
    if raw:
        try:
            n = int(raw)
        except ValueError:
            raise ValueError(f"CMC_THREADS must be a positive integer, got {raw!r}") from None
        if n < 1:
            raise ValueError(f"CMC_THREADS must be a positive integer, got {raw!r}")
        return n
    return os.cpu_count() or 1


def alexandrov_trace(surface: SlicedSurface, tol: float = DEFAULT_TOL,
                     angle_tol: float = DEFAULT_ANGLE_TOL, normals: SurfaceNormalField | None = None,
                     threads: int | None = None) -> AlexandrovTrace:
    if normals is None:
        normals = estimate_normals(surface)
    n = len(surface)
    workers = thread_count() if threads is None else threads

    def one(k):
        return _value_at(surface, k, normals, tol, angle_tol)

    if workers > 1 and n > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            values = list(ex.map(one, range(n)))
    else:
        values = [one(k) for k in range(n)]
    return AlexandrovTrace(np.array(surface.heights), values, tol, angle_tol)


# --- structural checks ------------------------------------------------------------


@dataclass
class USCReport:
    passed: bool
    flagged: list = field(default_factory=list)


def check_usc(trace, jump_tol: float = DEFAULT_TOL) -> USCReport:
    """Discrete upper semicontinuity: no isolated dips below both one-sided limits.

    The limit from each side of ``k`` is estimated by linear extrapolation
    from the two samples on that side (the single neighbour next to an end).
    ``k`` is flagged when its value lies more than ``jump_tol`` below both
    limits and both neighbours.  A kink or a continuous minimum matches its
    limits, a smooth maximum sits above its neighbours, and a jump matches
    one side, so only isolated dips are flagged.  Endpoints are not
    tested; EMPTY counts as ``-inf``.
    """
    a = trace.floats() if isinstance(trace, AlexandrovTrace) else np.asarray(trace, dtype=float)
    n = len(a)
    flagged = []
    for k in range(1, n - 1):
        left = 2 * a[k - 1] - a[k - 2] if k >= 2 else a[k - 1]
        right = 2 * a[k + 1] - a[k + 2] if k + 2 < n else a[k + 1]
        if not np.isfinite(left):
            left = a[k - 1]
        if not np.isfinite(right):
            right = a[k + 1]
        if a[k] < min(a[k - 1], a[k + 1], left, right) - jump_tol:
            flagged.append(k)
    return USCReport(not flagged, flagged)


class Shape(enum.Enum):
    MONOTONE = "MONOTONE"
    DOWN_UP = "DOWN_UP"
    VIOLATION = "VIOLATION"


@dataclass
class MonotoneReport:
    shape: Shape
    valley: int | None = None
    indices: list = field(default_factory=list)


def check_monotone_structure(trace, tol: float = DEFAULT_TOL) -> MonotoneReport:
    """Classify as monotone, decreasing-then-increasing, or report violations.

    ``k`` violates the shape when it sits more than ``tol`` above some earlier
    value and also above some later value.
    """
    if isinstance(trace, AlexandrovTrace):
        if any(v.is_empty for v in trace.values):
            raise ValueError("monotone structure needs a trace without EMPTY values")
        a = trace.floats()
    else:
        a = np.asarray(trace, dtype=float)
    n = len(a)
    if n == 0:
        raise ValueError("empty trace")
    pre = np.minimum.accumulate(a)
    suf = np.minimum.accumulate(a[::-1])[::-1]
    bad = [k for k in range(1, n - 1) if a[k] > max(pre[k - 1], suf[k + 1]) + tol]
    if bad:
        return MonotoneReport(Shape.VIOLATION, None, bad)
    c = int(np.argmin(a))
    left_flat = np.max(a[: c + 1]) - a[c] <= tol
    right_flat = np.max(a[c:]) - a[c] <= tol
    if c in (0, n - 1) or left_flat or right_flat:
        return MonotoneReport(Shape.MONOTONE)
    return MonotoneReport(Shape.DOWN_UP, c)


@dataclass
class SymmetryReport:
    plane: float | None
    failing: list = field(default_factory=list)
    hausdorff: list = field(default_factory=list)


def polyline_hausdorff_to(points, curve) -> float:
    """Max over ``points`` of the hyperbolic distance to the closed polyline ``curve``.

    Distances to an edge use the Euclidean foot point in the Klein chart,
    where edges are geodesic chords; this is exact up to a second-order
    term in the edge length and never underestimates.
    """
    K = geom.to_klein(curve[:, 0], curve[:, 1])
    Kn = np.roll(K, -1, axis=0)
    Q = geom.to_klein(points[:, 0], points[:, 1])
    tree = cKDTree(K)
    k = min(6, len(K))
    _, nbr = tree.query(Q, k=k)
    nbr = np.atleast_2d(nbr)
    best = np.full(len(Q), np.inf)
    for col in range(nbr.shape[1]):
        for e in (nbr[:, col], (nbr[:, col] - 1) % len(K)):
            A, B = K[e], Kn[e]
            AB = B - A
            lam = np.clip(np.einsum("ij,ij->i", Q - A, AB) / np.einsum("ij,ij->i", AB, AB), 0.0, 1.0)
            F = A + lam[:, None] * AB
            fs, fr = geom.from_klein(F)
            d = geom.distance_h2((points[:, 0], points[:, 1]), (fs, fr))
            best = np.minimum(best, d)
    return float(best.max())


def detect_symmetry_plane(surface: SlicedSurface, trace: AlexandrovTrace, tol: float = DEFAULT_TOL):
    """Return the plane ``{s = t*}`` if the trace is constant and every slice is mirror symmetric."""
    vals = trace.floats()
    finite = np.isfinite(vals)
    if not finite.any():
        return SymmetryReport(None, list(range(len(vals))))
    t_star = float(np.median(vals[finite]))
    failing = set(np.nonzero(~finite | (np.abs(vals - t_star) > tol))[0].tolist())
    hd = []
    for k, c in enumerate(surface.curves):
        mirrored = np.column_stack([2.0 * t_star - c[:, 0], c[:, 1]])
        d = polyline_hausdorff_to(mirrored, c)
        hd.append(d)
        if d > tol:
            failing.add(k)
    failing = sorted(failing)
    return SymmetryReport(None if failing else t_star, failing, hd)


# --- foliation descriptor --------------------------------------------------------


def boost_r(b: float, s, r):
    """Hyperbolic translation by ``b`` along the geodesic ``{s = 0}``."""
    X = geom.to_hyperboloid(s, r)
    ch, sh = np.cosh(b), np.sinh(b)
    Y = X.copy()
    Y[..., 0] = ch * X[..., 0] + sh * X[..., 2]
    Y[..., 2] = sh * X[..., 0] + ch * X[..., 2]
    return geom.from_hyperboloid(Y)


def apply_foliation(surface: SlicedSurface, descriptor: dict | None) -> SlicedSurface:
    """Pre-apply the isometry of a translation-foliation descriptor.

    ``{"type": "translation", "isometry": {"shift_s": a, "shift_r": b}}``:
    translate by ``b`` along ``{s = 0}`` and then by ``a`` along ``{r = 0}``.
    Both fields are optional.
    """
    if not descriptor:
        return surface
    if descriptor.get("type") != "translation":
        raise ValueError(f"only translation foliations are supported, got {descriptor.get('type')!r}")
    iso = descriptor.get("isometry", {}) or {}
    extra = set(iso) - {"shift_s", "shift_r"}
    if extra:
        raise ValueError(f"unknown isometry fields {sorted(extra)}")
    b = float(iso.get("shift_r", 0.0))
    a = float(iso.get("shift_s", 0.0))
    out = surface
    if b:
        out = out.map_points(lambda s, r: boost_r(b, s, r))
    if a:
        out = out.translated_s(a)
    return out
