"""Flux of CMC surfaces across horizontal slices, for the Killing fields d_z and d_s.

The flux through a closed slice curve ``gamma`` bounding the horizontal cap
``Q`` is ``int_gamma (Y, nu) - 2 H0 int_Q (Y, n_Q)``.  Conventions: ``nu`` is
the upward unit conormal (tangent to the surface, orthogonal to the
curve) and ``n_Q = +d_z`` is the outgoing normal of the region below the slice.
With these, a Delaunay surface with first integral ``tau`` has vertical
flux ``+2 pi tau``.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import integrate

from . import killing_graph as kg
from .delaunay import graph_function_f0
from .surface import (
    RotationalSurface,
    SlicedSurface,
    SurfaceNormalField,
    closed_integral,
    enclosed_area,
    estimate_normals,
)


class KillingDirection(enum.Enum):
    VERTICAL = "z"
    HORIZONTAL = "s"

    @classmethod
    def parse(cls, tag):
        if isinstance(tag, cls):
            return tag
        for d in cls:
            if tag in (d.value, d.name, d.name.lower()):
                return d
        raise ValueError(f"unknown Killing direction {tag!r} (use 'z' or 's')")


@dataclass(frozen=True)
class FluxResult:
    value: float
    boundary_term: float
    cap_term: float
    height: float
    direction: KillingDirection = KillingDirection.VERTICAL

    def to_dict(self):
        d = asdict(self)
        d["direction"] = self.direction.value
        return {k: d[k] for k in ("height", "direction", "boundary_term", "cap_term", "value")}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _result(boundary, cap, z, direction):
    return FluxResult(boundary + cap, boundary, cap, float(z), direction)


def flux_rotational(surf: RotationalSurface, direction, z: float) -> FluxResult:
    """Exact flux of a rotational surface at height ``z``."""
    direction = KillingDirection.parse(direction)
    prof = surf.profile
    if not abs(z) <= prof.z_max:
        raise ValueError(f"height {z} outside the profile range [-{prof.z_max}, {prof.z_max}]")
    if direction is KillingDirection.HORIZONTAL:
        # the mirror through the axis plane reverses d_s and preserves the slice
        return _result(0.0, 0.0, z, direction)
    st = prof.state_at(float(z))
    rho, sig = float(st["rho"]), float(st["sigma"])
    H = prof.params.H
    boundary = 2.0 * math.pi * math.sinh(rho) * math.sin(sig)
    cap = -2.0 * H * 2.0 * math.pi * (math.cosh(rho) - 1.0)
    return _result(boundary, cap, z, direction)


def _slice_index(surf: SlicedSurface, z: float) -> int:
    z_arr = surf.heights
    k = int(np.argmin(np.abs(z_arr - z)))
    if abs(z_arr[k] - z) > 1e-9 * max(1.0, abs(z)):
        raise ValueError(f"height {z} is not a slice height")
    return k


def flux_sliced(
    surf: SlicedSurface,
    direction,
    z: float,
    H0: float,
    normals: SurfaceNormalField | None = None,
) -> FluxResult:
    """Discrete flux at the slice of height ``z``.

    The conormal comes from the slope estimated with the two nearest slices
    on each side (or two on one side at the ends), so at least three slices
    are needed.
    """
    direction = KillingDirection.parse(direction)
    if len(surf) < 3:
        raise ValueError("flux on a sliced surface needs at least 3 slices for conormals")
    k = _slice_index(surf, z)
    if normals is None:
        normals = estimate_normals(surf)
    curve = surf.curves[k]
    w = normals.slope[k]
    root = np.sqrt(1.0 + w * w)
    if direction is KillingDirection.VERTICAL:
        boundary = closed_integral(1.0 / root, curve)
        cap = -2.0 * H0 * enclosed_area(curve)
    else:
        nh = normals.horizontal[k]
        ds_dot_nh = np.cosh(curve[:, 1]) ** 2 * nh[:, 0]
        boundary = closed_integral(w * ds_dot_nh / root, curve)
        cap = 0.0
    return _result(boundary, cap, surf.heights[k], direction)


# --- graph / surface balance ------------------------------------------------------

PIECES = ("bottom", "top", "lateral")


def face_extent(dom: kg.GridDomain, piece: str):
    """``(r_lo, r_hi, z_face)`` covered by the outgoing faces on the bottom or top row."""
    inside = dom.interior
    if piece == "bottom":
        cols = np.nonzero(inside[1] & ~inside[0])[0]
        zf = dom.z[0] + 0.5 * dom.hz
    elif piece == "top":
        cols = np.nonzero(inside[-2] & ~inside[-1])[0]
        zf = dom.z[-1] - 0.5 * dom.hz
    else:
        raise ValueError(f"face extent is defined for 'bottom' and 'top', not {piece!r}")
    if cols.size == 0:
        raise ValueError(f"domain has no faces on the {piece} row")
    r = dom.r
    return float(r[cols[0]] - 0.5 * dom.hr), float(r[cols[-1]] + 0.5 * dom.hr), float(zf)


def rotational_conormal_term(surf: RotationalSurface, z: float, r_range, upward: bool = True) -> float:
    """``int (nu, d_s)`` along the half slice ``{s > 0}`` at height ``z`` over ``r`` in ``r_range``.

    The half slice is the graph ``s = f0(r, z)``; ``nu`` is the upward unit
    conormal, or the downward one if ``upward`` is false.  Uses adaptive
    quadrature in ``r``.  The axis must sit at the origin.
    """
    prof = surf.profile
    st = prof.state_at(float(z))
    rho, sig = float(st["rho"]), float(st["sigma"])
    lo, hi = map(float, r_range)
    if not (-rho < lo < hi < rho):
        raise ValueError("r range must lie strictly inside the slice's shadow")
    sh = math.sinh(rho)

    def integrand(r):
        f = graph_function_f0(prof, r, z)
        cr = math.cosh(r)
        # s-derivative along the circle cosh r cosh s = cosh rho
        fr = -math.cosh(rho) * math.sinh(r) / (cr * cr) / math.sqrt((math.cosh(rho) / cr) ** 2 - 1.0)
        dl = math.sqrt(1.0 + cr * cr * fr * fr)
        ds_dot_nh = cr * math.sinh(f) / sh
        return math.cos(sig) * ds_dot_nh * dl

    val, _ = integrate.quad(integrand, lo, hi, epsabs=1e-13, epsrel=1e-12, limit=200)
    return val if upward else -val


def flux_balance_report(dom: kg.GridDomain, u: np.ndarray, H0: float, surface_terms: dict) -> float:
    """``|sum of graph boundary fluxes - sum of surface conormal terms|`` over the given pieces.

    ``surface_terms`` maps boundary pieces (``bottom``, ``top``, ``lateral``)
    to ``int (nu, d_s)`` along the matching surface curves, with ``nu``
    pointing out of the surface piece.  Every named piece must exist on the
    grid.
    """
    unknown = set(surface_terms) - set(PIECES)
    if unknown:
        raise ValueError(f"unknown boundary pieces {sorted(unknown)}; expected a subset of {PIECES}")
    if not surface_terms:
        raise ValueError("no boundary pieces given")
    counts = _piece_face_counts(dom)
    missing = [p for p in surface_terms if counts[p] == 0]
    if missing:
        raise ValueError(f"boundary decomposition mismatch: grid has no faces on {missing}")
    graph = kg.boundary_face_terms(dom, u)
    g = math.fsum(graph[p] for p in surface_terms)
    s = math.fsum(float(v) for v in surface_terms.values())
    return abs(g - s)


def _piece_face_counts(dom):
    inside = dom.interior
    bottom = int(np.sum(inside[1] & ~inside[0]))
    top = int(np.sum(inside[-2] & ~inside[-1]))
    out_r = int(np.sum(inside[:, :-1] ^ inside[:, 1:]))
    out_z = int(np.sum(inside[:-1] ^ inside[1:]))
    return {"bottom": bottom, "top": top, "lateral": out_r + out_z - bottom - top}
