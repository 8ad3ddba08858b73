"""Command-line entry point ``mfpd``.

Exit codes: 0 success, 1 validation error (bad flags, inputs or files),
2 numerical failure (resonance, solver breakdown). Every run first prints
its fully resolved configuration; numbers are printed in full precision.

File formats:

- mesh: ``$Vertices n`` then ``id x1 x2``; ``$Triangles m`` then
  ``id v0 v1 v2 region``; ``$BoundaryEdges b`` then ``id v0 v1 marker``.
- field CSV: header ``id,value`` or ``id,x1,x2,value``, one row per vertex
  or cell, values in ``%.16e``.
- power densities: ``e_k{l}_{i}{j}.csv`` (vertices) and ``E_k{l}_{i}{j}.csv``
  (cells) for ``i <= j``, listed in ``manifest.json`` with their
  ``(k, k_index, i, j)`` identity, the frequencies, illuminations and region.
- coefficients CSV: header ``id,a,q``, one row per cell.
- VTK: legacy ASCII ``UNSTRUCTURED_GRID`` with triangle cells; vertex
  fields under ``POINT_DATA``, cell fields under ``CELL_DATA``.
- experiment config: flat ``key = value`` lines, ``#`` comments, lists
  comma-separated; command-line flags override file values.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

from . import experiments as ex
from . import io
from .coefficients import parse_coefficients
from .errors import NumericalError, ValidationError
from .frequency_selection import COMPLETE, PROPER, AdmissibilityThresholds, evaluate_conditions, select_frequency_set
from .helmholtz import DEFAULT_GAP_TOL, HelmholtzOperator
from .mesh import check_mesh, gen_disk_mesh, load_mesh, save_mesh, submesh
from .power_density import export_power_density, load_power_density, synthesize_from_operator
from .reconstruction import DEFAULT_DENOM_THRESHOLD, error_norms, reconstruct

log = logging.getLogger("mfpd")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(f"{self.prog}: {message}")


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _str_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _add_mesh_source(p):
    p.add_argument("--mesh", help="mesh file; default: generate a disk from --radius/--h")
    p.add_argument("--radius", type=float, default=1.0)
    p.add_argument("--h", type=float, default=0.05)


def _add_coefficients(p, default="homogeneous"):
    p.add_argument(
        "--coefficients",
        default=default,
        help="homogeneous, homogeneous:A,Q, paper-2d, balls:a1,..,a4,b1,..,b4 or an id,a,q CSV file",
    )
    p.add_argument("--ball-width", type=float, default=0.02)


def _add_thresholds(p):
    p.add_argument("--p", type=float, default=1e-3)
    p.add_argument("--r", type=float, default=1e-3)
    p.add_argument("--s", type=float, default=1e-3)


def build_parser() -> argparse.ArgumentParser:
    top = _Parser(prog="mfpd", description="multi-frequency power density reconstruction")
    top.add_argument("--threads", type=int, default=None, help="cap on worker parallelism")
    top.add_argument("-v", "--verbose", action="store_true")
    sub = top.add_subparsers(dest="command", required=True, parser_class=_Parser)

    mesh = sub.add_parser("mesh", help="mesh utilities")
    msub = mesh.add_subparsers(dest="mesh_command", required=True, parser_class=_Parser)
    gd = msub.add_parser("gen-disk", help="structured disk mesh")
    gd.add_argument("--radius", type=float, default=1.0)
    gd.add_argument("--h", type=float, required=True)
    gd.add_argument("--center", type=_float_list, default=[0.0, 0.0])
    gd.add_argument("-o", "--output", required=True)

    sp = sub.add_parser("spectrum", help="two smallest Dirichlet eigenvalues")
    _add_mesh_source(sp)
    _add_coefficients(sp)
    sp.add_argument("-o", "--output", help="optional JSON output")

    so = sub.add_parser("solve", help="one Helmholtz solve")
    _add_mesh_source(so)
    _add_coefficients(so)
    so.add_argument("--k", type=float, required=True)
    so.add_argument("--phi", default="x1")
    so.add_argument("--gap-tol", type=float, default=DEFAULT_GAP_TOL)
    so.add_argument("--no-resonance-check", action="store_true")
    so.add_argument("--out", default="runs/solve")

    sy = sub.add_parser("synthesize", help="power densities for frequencies x illuminations")
    _add_mesh_source(sy)
    _add_coefficients(sy)
    sy.add_argument("--freqs", type=_float_list, required=True)
    sy.add_argument("--illuminations", type=_str_list, required=True)
    sy.add_argument("--out", default="runs/synthesize")

    for name, helptext in (
        ("admissibility", "evaluate proper/complete conditions for given frequencies"),
        ("select-frequencies", "greedy frequency sweep until every cell is admissible"),
    ):
        ad = sub.add_parser(name, help=helptext)
        _add_mesh_source(ad)
        _add_coefficients(ad)
        ad.add_argument("--illuminations", type=_str_list, default=["1", "x1", "x2"])
        ad.add_argument("--mode", choices=(PROPER, COMPLETE), default=PROPER)
        ad.add_argument("--omega-prime", type=float, default=None, help="restrict to cells in B(0, R)")
        _add_thresholds(ad)
        ad.add_argument("--out", default=f"runs/{name}")
        if name == "admissibility":
            ad.add_argument("--freqs", type=_float_list, required=True)
        else:
            ad.add_argument("--max-l", type=int, default=10)

    rc = sub.add_parser("reconstruct", help="reconstruct G, q and a from exported power densities")
    rc.add_argument("--data", required=True, help="manifest.json written by synthesize")
    rc.add_argument("--mesh", required=True, help="mesh file the data lives on")
    rc.add_argument("--omega-prime", type=float, default=0.8)
    rc.add_argument("--truth", default=None, help="true coefficients, for error norms")
    rc.add_argument("--ball-width", type=float, default=0.02)
    rc.add_argument("--denom-threshold", type=float, default=DEFAULT_DENOM_THRESHOLD)
    rc.add_argument("--out", default="runs/reconstruct")

    exp = sub.add_parser("experiment", help="canned experiments")
    esub = exp.add_subparsers(dest="experiment", required=True, parser_class=_Parser)
    for name in (ex.PAPER_2D, ex.FREQUENCY_COUNT):
        e = esub.add_parser(name)
        e.add_argument("--config", help="flat key = value config file; flags override it")
        e.add_argument("--out", dest="out_dir")
        e.add_argument("--h", dest="mesh_h", type=float)
        e.add_argument("--freqs")
        e.add_argument("--illuminations")
        e.add_argument("--p", dest="threshold_p", type=float)
        e.add_argument("--r", dest="threshold_r", type=float)
        e.add_argument("--s", dest="threshold_s", type=float)
        e.add_argument("--seed", type=int)
        if name == ex.PAPER_2D:
            e.add_argument("--omega-prime", dest="omega_prime_radius", type=float)
            e.add_argument("--denom-threshold", type=float)
            e.add_argument("--coefficients")
        else:
            e.add_argument("--sample-count", type=int)
            e.add_argument("--full", action="store_true", help="run all 6561 combinations")
            e.add_argument("--max-l", type=int)
    return top


def _echo(args):
    print("# resolved configuration")
    for key, val in sorted(vars(args).items()):
        if isinstance(val, float):
            val = io.fmt(val)
        elif isinstance(val, list):
            val = ", ".join(io.fmt(v) if isinstance(v, float) else str(v) for v in val)
        print(f"{key} = {val}")


def _mesh_from(args):
    if args.mesh:
        mesh = load_mesh(args.mesh)
        problems = check_mesh(mesh)
        if problems:
            raise ValidationError(f"{args.mesh}: invalid mesh: {problems[0]}")
        return mesh
    return gen_disk_mesh(args.radius, args.h)


def _thresholds(args):
    return AdmissibilityThresholds(args.p, args.r, args.s)


def _out(path) -> Path:
    p = Path(path)
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ValidationError(f"cannot create output directory {p}: {exc.strerror}") from None
    return p


def cmd_mesh(args):
    mesh = gen_disk_mesh(args.radius, args.h, tuple(args.center))
    save_mesh(mesh, args.output)
    print(f"vertices = {mesh.n_vertices}")
    print(f"triangles = {mesh.n_triangles}")
    print(f"max edge = {io.fmt(mesh.max_edge_length())}")
    print(f"wrote {args.output}")


def cmd_spectrum(args):
    mesh = _mesh_from(args)
    coeffs = parse_coefficients(args.coefficients, mesh, args.ball_width)
    spec = HelmholtzOperator(mesh, coeffs).spectrum()
    print(f"lambda0 = {io.fmt(spec.lambda0)}")
    print(f"lambda1 = {io.fmt(spec.lambda1)}")
    if args.output:
        io.write_json(args.output, {"lambda0": io.fmt(spec.lambda0), "lambda1": io.fmt(spec.lambda1), "n_vertices": mesh.n_vertices})


def cmd_solve(args):
    mesh = _mesh_from(args)
    coeffs = parse_coefficients(args.coefficients, mesh, args.ball_width)
    op = HelmholtzOperator(mesh, coeffs)
    spec = None if args.no_resonance_check else op.spectrum()
    sol = op.solve(args.k, args.phi, spec, args.gap_tol)
    out = _out(args.out)
    io.write_csv(sol.u, out / "u.csv", coords=mesh.vertices)
    io.write_vtk(mesh, out / "u.vtk", {"u": sol.u, "grad_u": sol.vertex_grad}, {"grad_u_cell": sol.grad}, f"u for k={args.k}")
    for key, val in sorted(sol.diagnostics.items()):
        print(f"{key} = {io.fmt(val) if isinstance(val, float) else val}")
    print(f"wrote {out / 'u.csv'} and {out / 'u.vtk'}")


def cmd_synthesize(args):
    mesh = _mesh_from(args)
    coeffs = parse_coefficients(args.coefficients, mesh, args.ball_width)
    op = HelmholtzOperator(mesh, coeffs)
    data, _ = synthesize_from_operator(op, args.freqs, args.illuminations, op.spectrum(), args.threads)
    out = _out(args.out)
    save_mesh(mesh, out / "mesh.mesh")
    manifest = export_power_density(data, out)
    print(f"power density files = {2 * len(args.freqs) * len(args.illuminations) * (len(args.illuminations) + 1) // 2}")
    print(f"wrote {manifest}")


def _cells(mesh, radius):
    if radius is None:
        return None
    return submesh(mesh, (0.0, 0.0), radius).parent_triangles


def _print_report(report, out):
    s = report.summary()
    for key in ("mode", "n_cells", "n_covered", "is_proper", "is_complete", "min_K"):
        print(f"{key} = {s[key]}")
    print("frequencies = " + ", ".join(io.fmt(k) for k in report.ks))
    report.write_csv(out / "admissibility.csv")
    io.write_json(out / "summary.json", s)
    print(f"wrote {out / 'admissibility.csv'}")


def cmd_admissibility(args):
    mesh = _mesh_from(args)
    coeffs = parse_coefficients(args.coefficients, mesh, args.ball_width)
    op = HelmholtzOperator(mesh, coeffs)
    spec = op.spectrum()
    sols = [[op.solve(k, p, spec) for p in args.illuminations] for k in args.freqs]
    report = evaluate_conditions(sols, _thresholds(args), args.mode, cells=_cells(mesh, args.omega_prime))
    _print_report(report, _out(args.out))


def cmd_select(args):
    mesh = _mesh_from(args)
    coeffs = parse_coefficients(args.coefficients, mesh, args.ball_width)
    ks, report, _ = select_frequency_set(
        mesh, coeffs, args.illuminations, _thresholds(args), args.mode, args.max_l, cells=_cells(mesh, args.omega_prime)
    )
    print(f"lambda0 = {io.fmt(report.info['lambda0'])}")
    print(f"lambda1 = {io.fmt(report.info['lambda1'])}")
    print(f"#K = {len(ks)}, covered = {bool(report.covered.all())}")
    _print_report(report, _out(args.out))


def cmd_reconstruct(args):
    mesh = load_mesh(args.mesh)
    truth = parse_coefficients(args.truth, mesh, args.ball_width) if args.truth else parse_coefficients("homogeneous", mesh)
    data = load_power_density(args.data, mesh, truth)
    sub = submesh(mesh, (0.0, 0.0), args.omega_prime)
    recon = reconstruct(data.restrict(sub), None, args.denom_threshold)
    out = _out(args.out)
    point, cell = recon.fields()
    io.write_csv(recon.a_star, out / "a_star.csv", coords=sub.barycenters)
    io.write_csv(recon.q_star, out / "q_star.csv", coords=sub.vertices)
    io.write_csv(recon.G.values, out / "G.csv", coords=sub.barycenters)
    io.write_vtk(sub, out / "reconstruction.vtk", point, cell, "reconstruction")
    print(f"cells used by G = {len(recon.G.used_cells)} of {sub.n_triangles}")
    if args.truth:
        ea, eq = error_norms(recon, truth)
        print(f"||a - a*||_2 = {io.fmt(ea)}")
        print(f"||q - q*||_2 = {io.fmt(eq)}")
    print(f"wrote {out}")


def _experiment_overrides(args) -> dict:
    over = {}
    for key, name in ex.KEYS.items():
        v = getattr(args, name, None)
        if v is not None:
            over[key] = v if isinstance(v, str) else str(v)
    if getattr(args, "full", False):
        over["sample_count"] = str(ex.N_COMBINATIONS)
    return over


def cmd_experiment(args):
    cfg = ex.load_config(args.experiment, args.config, _experiment_overrides(args))
    print(cfg.echo(), end="")
    if args.experiment == ex.PAPER_2D:
        rep = ex.run_paper_2d(cfg, args.threads)
        print(f"||a - a*||_2 = {io.fmt(rep.a_error)}")
        print(f"||q - q*||_2 = {io.fmt(rep.q_error)}")
        print(f"proper = {rep.proper}")
        print(f"power density count = {rep.n_energies}")
    else:
        rep = ex.run_frequency_count(cfg, args.threads)
        for b, c in rep.histogram.items():
            print(f"#K = {b}: {c}")
        print(f"failures = {len(rep.failures)}")
        print(f"fraction needing exactly 2 = {io.fmt(rep.fraction_two)}")
    print(f"runtime = {io.fmt(rep.runtime)} s")
    print(f"wrote {Path(cfg.out_dir) / 'summary.txt'}")


COMMANDS = {
    "mesh": cmd_mesh,
    "spectrum": cmd_spectrum,
    "solve": cmd_solve,
    "synthesize": cmd_synthesize,
    "admissibility": cmd_admissibility,
    "select-frequencies": cmd_select,
    "reconstruct": cmd_reconstruct,
    "experiment": cmd_experiment,
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
        if args.threads is not None and args.threads < 1:
            raise ValidationError("--threads must be at least 1")
        if args.command != "experiment":
            _echo(args)  # experiments echo their merged config instead
        t0 = time.perf_counter()
        COMMANDS[args.command](args)
        log.info("%s finished in %.3f s", args.command, time.perf_counter() - t0)
        return 0
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc.filename}: {exc.strerror}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
