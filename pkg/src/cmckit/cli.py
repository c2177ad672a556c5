"""Command-line front end.  Every output file is plain CSV or JSON.

Exit codes: 0 success, 1 invalid input, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys

import numpy as np

from . import acceptance
from . import alexandrov as alx
from . import killing_graph as kg
from . import surface as srf
from .delaunay import (
    CYLINDER,
    DelaunayParams,
    ProfileIntegrationError,
    integrate_profile,
    neck_bulge_radii,
    period,
)
from .flux import KillingDirection, flux_rotational, flux_sliced

log = logging.getLogger("cmckit")


class NumericalFailure(RuntimeError):
    pass


def _fmt(x) -> str:
    return format(float(x), ".12g")


def cmd_delaunay(args):
    params = DelaunayParams(args.h, args.tau)
    rho_min, rho_max = neck_bulge_radii(params)
    P = period(params)
    if P is CYLINDER:
        span = args.periods * args.cylinder_length
        print("period: CYLINDER")
        print(f"rho: {_fmt(rho_max)}")
    else:
        span = args.periods * P
        print(f"rho_min: {_fmt(rho_min)}")
        print(f"rho_max: {_fmt(rho_max)}")
        print(f"period: {_fmt(P)}")
    print(f"flux: {_fmt(2 * math.pi * params.tau)}")
    prof = integrate_profile(params, (args.axis_s, args.axis_r), z_span=span, step=args.step)
    if args.out:
        prof.to_csv(args.out)
    if args.save_surface:
        srf.save(srf.RotationalSurface(prof), args.save_surface)
    if args.save_sliced:
        m = max(2, int(round(args.slices * (span / (P if P is not CYLINDER else args.cylinder_length)))))
        heights = np.linspace(0.0, span, m + 1)
        heights = heights[heights <= prof.z_max]
        srf.save(srf.slice_rotational(srf.RotationalSurface(prof), heights, args.points), args.save_sliced)
    return 0


def _load_json(path):
    with open(path, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None


def cmd_solve(args):
    dom, bc = kg.problem_from_json(_load_json(args.domain))
    opts = kg.SolveOptions(tol=args.tol, max_iter=args.max_iter)
    sol = kg.solve_dirichlet(dom, bc, args.h0, opts)
    if args.out:
        sol.to_csv(args.out)
    print(f"residual: {sol.residual_norm:.3e}")
    print(f"iterations: {sol.iterations}")
    print(f"flux identity residual: {kg.flux_identity_residual(dom, sol.u, sol.H0):.3e}")
    return 0


def cmd_flux(args):
    surf = srf.load(args.surface)
    direction = KillingDirection.parse(args.dir)
    if isinstance(surf, srf.RotationalSurface):
        if args.h0 is not None and not math.isclose(args.h0, surf.profile.params.H):
            raise ValueError("--h0 differs from the mean curvature of the rotational surface")
        res = flux_rotational(surf, direction, args.height)
    else:
        if args.h0 is None:
            raise ValueError("--h0 is required for sliced surfaces")
        res = flux_sliced(surf, direction, args.height, args.h0)
    print(res.to_json())
    return 0


def cmd_alexandrov(args):
    surf = srf.load(args.surface)
    if not isinstance(surf, srf.SlicedSurface):
        raise ValueError("the Alexandrov trace needs a sliced surface")
    if args.foliation:
        surf = alx.apply_foliation(surf, _load_json(args.foliation))
    trace = alx.alexandrov_trace(surf, tol=args.tol, angle_tol=args.angle_tol)
    if args.out:
        trace.to_csv(args.out)
    usc = alx.check_usc(trace, args.tol)
    print(f"usc: {'pass' if usc.passed else 'fail'}" + (f" flagged={usc.flagged}" if usc.flagged else ""))
    if any(v.is_empty for v in trace.values):
        print("monotone structure: skipped (trace has EMPTY values)")
    else:
        mono = alx.check_monotone_structure(trace, args.tol)
        extra = f" valley={mono.valley}" if mono.valley is not None else ""
        extra += f" indices={mono.indices}" if mono.indices else ""
        print(f"monotone structure: {mono.shape.value}{extra}")
    sym = alx.detect_symmetry_plane(surf, trace, args.tol)
    if sym.plane is None:
        print(f"symmetry plane: none (failing slices {sym.failing[:20]})")
    else:
        print(f"symmetry plane: s = {_fmt(sym.plane)}")
    return 0


def cmd_grad_bound(args):
    print(_fmt(kg.gradient_bound(args.rp, args.zp, args.radius, args.h0cmc, args.height)))
    return 0


def cmd_area(args):
    surf = srf.load(args.surface)
    print(_fmt(srf.area_between(surf, args.a, args.b)))
    return 0


def cmd_check(args):
    results = acceptance.run_all(echo=print)
    failed = [r.number for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed")
    return 0 if not failed else 1


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    ap = argparse.ArgumentParser(prog="cmckit", description=__doc__, formatter_class=fmt)
    ap.add_argument("-v", "--verbose", action="store_true", help="log solver progress")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("delaunay", help="integrate a Delaunay profile", formatter_class=fmt)
    p.add_argument("--h", type=float, required=True, help="mean curvature H > 1/2")
    p.add_argument("--tau", type=float, required=True, help="flux parameter in (0, tau_max(H)]")
    p.add_argument("--periods", type=float, default=1.0, help="number of vertical periods")
    p.add_argument("--step", type=float, default=1e-3, help="RK4 arc-length step")
    p.add_argument("--out", help="profile CSV (t,z,rho,sigma)")
    p.add_argument("--axis-s", type=float, default=0.0, help="s-coordinate of the axis")
    p.add_argument("--axis-r", type=float, default=0.0, help="r-coordinate of the axis")
    p.add_argument("--cylinder-length", type=float, default=1.0,
                   help="height of one 'period' for the cylinder")
    p.add_argument("--save-surface", help="rotational surface JSON")
    p.add_argument("--save-sliced", help="sliced surface JSON")
    p.add_argument("--slices", type=int, default=200, help="slices per period for --save-sliced")
    p.add_argument("--points", type=int, default=512, help="points per circle for --save-sliced")
    p.set_defaults(func=cmd_delaunay)

    p = sub.add_parser("solve", help="solve a Killing-graph Dirichlet problem", formatter_class=fmt)
    p.add_argument("--domain", required=True, help="domain and boundary data JSON")
    p.add_argument("--h0", type=float, required=True, help="mean curvature H0")
    p.add_argument("--tol", type=float, default=1e-10, help="residual max-norm tolerance")
    p.add_argument("--max-iter", type=int, default=60, help="Newton iterations per solve")
    p.add_argument("--out", help="solution CSV (r,z,u)")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("flux", help="flux across a slice", formatter_class=fmt)
    p.add_argument("--surface", required=True, help="surface JSON")
    p.add_argument("--dir", choices=["z", "s"], default="z", help="Killing direction")
    p.add_argument("--height", type=float, required=True, help="slice height")
    p.add_argument("--h0", type=float, default=None,
                   help="mean curvature (required for sliced surfaces)")
    p.set_defaults(func=cmd_flux)

    p = sub.add_parser("alexandrov", help="Alexandrov trace and structural checks", formatter_class=fmt)
    p.add_argument("--surface", required=True, help="sliced surface JSON")
    p.add_argument("--tol", type=float, default=alx.DEFAULT_TOL, help="contact / deadband tolerance")
    p.add_argument("--angle-tol", type=float, default=alx.DEFAULT_ANGLE_TOL,
                   help="orthogonality tolerance")
    p.add_argument("--foliation", help="translation-foliation descriptor JSON")
    p.add_argument("--out", help="trace CSV (z,alpha,provenance)")
    p.set_defaults(func=cmd_alexandrov)

    p = sub.add_parser("grad-bound", help="a priori gradient bound", formatter_class=fmt)
    p.add_argument("--rp", type=float, required=True, help="r-coordinate of p")
    p.add_argument("--zp", type=float, required=True, help="z-coordinate of p")
    p.add_argument("--radius", type=float, required=True, help="disk radius R")
    p.add_argument("--h0cmc", type=float, required=True, help="mean curvature H0")
    p.add_argument("--height", type=float, required=True, help="u(p) >= 0")
    p.set_defaults(func=cmd_grad_bound)

    p = sub.add_parser("area", help="lateral area between two heights", formatter_class=fmt)
    p.add_argument("--surface", required=True, help="surface JSON")
    p.add_argument("--from", dest="a", type=float, required=True, help="lower height")
    p.add_argument("--to", dest="b", type=float, required=True, help="upper height")
    p.set_defaults(func=cmd_area)

    p = sub.add_parser("check", help="run the acceptance suite", formatter_class=fmt)
    p.set_defaults(func=cmd_check)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        alx.thread_count()
        return args.func(args)
    except kg.NonConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(f"last residual: {exc.last_residual:.3e}", file=sys.stderr)
        for h in exc.history[-10:]:
            print(f"  H0={h['H0']:g} iter={h['iter']} residual={h['residual']:.3e} step={h['step']}",
                  file=sys.stderr)
        return 2
    except (ProfileIntegrationError, alx.AlexandrovError, NumericalFailure) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
