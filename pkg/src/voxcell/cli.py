"""``voxcell`` command-line interface.

Every subcommand can write a JSON report (``--report``) whose manifest echoes
the full configuration, so a run can be repeated from its report alone.
Usage errors exit with status 2; runtime failures exit with status 1 and a
JSON error object on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import shlex
import sys
import time
from pathlib import Path

import numpy as np

THREADS_ENV = "VOXCELL_THREADS"
log = logging.getLogger("voxcell")


def _triple_int(text: str):
    parts = [int(p) for p in text.replace("x", ",").split(",") if p]
    if len(parts) == 1:
        parts *= 3
    if len(parts) != 3 or min(parts) < 1:
        raise argparse.ArgumentTypeError(f"expected one or three positive integers, got {text!r}")
    return tuple(parts)


def _float_list(text: str):
    try:
        return [float(p) for p in text.split(",") if p.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _variants(text: str):
    out = []
    for item in text.split(","):
        try:
            vpc, p = item.split(":")
            out.append((int(vpc), int(p)))
        except ValueError as exc:
            raise argparse.ArgumentTypeError(f"variant {item!r} is not VPC:P") from exc
    return out


def _variant(text: str):
    return _variants(text)[0]


def _json_arg(text: str) -> dict:
    """Inline JSON object or a path to a JSON file."""
    path = Path(text)
    raw = path.read_text(encoding="utf-8") if path.exists() else text
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise argparse.ArgumentTypeError(f"invalid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise argparse.ArgumentTypeError("expected a JSON object")
    return data


# ---------------------------------------------------------------- shared options

def _add_material(p):
    p.add_argument("--E-MPa", dest="E_MPa", type=float, default=190000.0, help="bulk Young's modulus")
    p.add_argument("--nu", type=float, default=0.3, help="bulk Poisson ratio")
    p.add_argument("--alpha-void", type=float, default=1e-11, help="indicator value in void voxels")


def _add_input(p):
    p.add_argument("--input", required=True, help="RAW payload or its .json sidecar")
    p.add_argument("--threshold", type=float, default=None,
                   help="segment grey values at this level (default: nonzero = material)")
    p.add_argument("--exclusive", action="store_true", help="use > instead of >= when segmenting")


def _add_discretization(p, vpc="4", degree=2):
    p.add_argument("--voxels-per-cell", type=_triple_int, default=_triple_int(vpc))
    p.add_argument("--p", dest="degree", type=int, default=degree, help="polynomial degree")


def _add_solver(p):
    p.add_argument("--solver", choices=("direct", "cg"), default="direct")
    p.add_argument("--preconditioner", choices=("none", "jacobi"), default="jacobi")
    p.add_argument("--rel-tol", type=float, default=1e-10)
    p.add_argument("--max-iter", type=int, default=20000)


def _add_octet(p):
    p.add_argument("--cell-mm", type=float, default=4.0)
    p.add_argument("--d-horizontal", type=float, default=0.8, help="mm")
    p.add_argument("--d-inclined", type=float, default=0.4, help="mm")
    p.add_argument("--build-axis", choices=("x", "y", "z"), default="x")
    p.add_argument("--strut-rule", choices=("cell-face", "build-plane"), default="cell-face")
    p.add_argument("--spacing-um", type=float, default=25.0)
    p.add_argument("--supersample", type=int, default=2)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="voxcell", description="Finite cell analysis of voxel lattices.")
    ap.add_argument("--threads", type=int, default=None,
                    help=f"BLAS/worker threads (default: ${THREADS_ENV} or all cores)")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True, metavar="COMMAND")

    g = sub.add_parser("generate", help="voxelize a lattice cell or specimen")
    g.add_argument("kind", choices=("octet",))
    _add_octet(g)
    g.add_argument("--reps", type=_triple_int, default=(1, 1, 1), help="tiling, e.g. 2,2,10")
    g.add_argument("--defects", type=_json_arg, default=None, help="defect JSON (inline or file)")
    g.add_argument("--seed", type=int, default=None, help="defect RNG seed (overrides the JSON)")
    g.add_argument("--output", required=True, help="RAW output path")
    g.add_argument("--report")

    s = sub.add_parser("segment", help="threshold a grey-value volume into a mask")
    _add_input(s)
    s.add_argument("--output", required=True)
    s.add_argument("--report")

    po = sub.add_parser("porosity", help="print the void fraction")
    _add_input(po)
    po.add_argument("--report")

    h = sub.add_parser("homogenize", help="apparent stiffness of an RVE or of several unit cells")
    _add_input(h)
    _add_material(h)
    _add_discretization(h, "1", 1)
    _add_solver(h)
    h.add_argument("--bc", choices=("pbc", "kubc", "subc"), default="pbc")
    h.add_argument("--cells", type=int, default=None, help="homogenize the first N unit cells")
    h.add_argument("--cell-voxels", type=_triple_int, default=None, help="unit-cell size in voxels")
    h.add_argument("--report")

    d = sub.add_parser("dns", help="tensile test on a specimen")
    _add_input(d)
    _add_material(d)
    _add_discretization(d)
    _add_solver(d)
    d.add_argument("--pull-axis", choices=("x", "y", "z"), default="z")
    d.add_argument("--displacement-mm", type=float, default=0.01)
    d.add_argument("--gage", type=_float_list, default=[0.25, 0.75], help="gage planes as length fractions")
    d.add_argument("--lateral", choices=("free", "clamped"), default="free")
    d.add_argument("--penalty", type=float, default=None, help="penalty beta (default 1e8 E/h)")
    d.add_argument("--vtk", help="also write fields to this VTK file")
    d.add_argument("--report")

    sw = sub.add_parser("sweep", help="porosity sweep of the octet cell")
    _add_octet(sw)
    sw.set_defaults(spacing_um=50.0)
    _add_material(sw)
    _add_discretization(sw, "8", 2)
    _add_solver(sw)
    sw.add_argument("--increments-mm", type=_float_list, default=[0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6])
    sw.add_argument("--axis", choices=("x", "y", "z"), default="z")
    sw.add_argument("--csv")
    sw.add_argument("--report")

    c = sub.add_parser("convergence", help="p/h convergence of the tensile modulus")
    _add_input(c)
    _add_material(c)
    _add_solver(c)
    c.add_argument("--variants", type=_variants, default=_variants("4:1,4:2,4:3,2:1,2:2"),
                   help="comma list of VPC:P")
    c.add_argument("--reference", type=_variant, default=None, help="extra overkill run VPC:P")
    c.add_argument("--pull-axis", choices=("x", "y", "z"), default="z")
    c.add_argument("--csv")
    c.add_argument("--report")

    e = sub.add_parser("export-vtk", help="write alpha, displacement and von Mises to legacy VTK")
    _add_input(e)
    _add_material(e)
    _add_discretization(e)
    _add_solver(e)
    e.add_argument("--pull-axis", choices=("x", "y", "z"), default="z")
    e.add_argument("--alpha-only", action="store_true", help="skip the tensile solve")
    e.add_argument("--output", required=True)
    e.add_argument("--report")
    return ap


# ---------------------------------------------------------------- helpers

def configure_threads(n: int | None) -> int | None:
    if n is None:
        env = os.environ.get(THREADS_ENV)
        n = int(env) if env else None
    if n is None:
        return None
    if n < 1:
        raise ValueError("thread count must be >= 1")
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover - best effort only
        return n
    threadpool_limits(n)
    return n


def load_grid(args):
    from .voxel_model import SegmentationConfig, VoxelGrid, load_raw_volume, threshold_segment

    vol = load_raw_volume(args.input)
    alpha_void = getattr(args, "alpha_void", 1e-11)
    if args.threshold is None:
        return VoxelGrid(vol.values != 0, vol.spacing, alpha_void)
    return threshold_segment(vol, SegmentationConfig(args.threshold, not args.exclusive), alpha_void)


def _material(args):
    from .fcm.material import ElasticMaterial

    return ElasticMaterial(args.E_MPa, args.nu)


def _solver_cfg(args):
    from .solver import SolverConfig

    return SolverConfig(args.rel_tol, args.max_iter, args.preconditioner, args.solver)


def _octet_spec(args):
    from .lattice import OctetCellSpec

    return OctetCellSpec(args.cell_mm, args.d_horizontal, args.d_inclined, args.build_axis, args.strut_rule)


def _config(args) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k not in ("verbose", "argv")}
    return json.loads(json.dumps(cfg, default=list))


def _emit(args, kind, results, timings=None):
    from .report import build_report, write_report

    command = " ".join(["voxcell", *map(shlex.quote, args.argv)])
    report = build_report(kind, results, command, _config(args), timings)
    if getattr(args, "report", None):
        write_report(report, args.report)
    return report


# ---------------------------------------------------------------- commands

def cmd_generate(args):
    from .lattice import DefectSpec, apply_defects, tile, voxelize_octet
    from .voxel_model import porosity, save_grid

    spec = _octet_spec(args)
    spacing = args.spacing_um / 1000.0
    cell = voxelize_octet(spec, spacing, args.supersample)
    grid = tile(cell, args.reps)
    phi_ideal = porosity(grid)
    defects = None
    if args.defects is not None or args.seed is not None:
        d = dict(args.defects or {})
        if args.seed is not None:
            d["rng_seed"] = args.seed
        defects = DefectSpec.from_dict(d)
        grid = apply_defects(grid, defects, spec.build_axis, cell.dims)
    sidecar = save_grid(grid, args.output)
    res = {"output": str(sidecar), "dims": list(grid.dims), "spacing_mm": list(grid.spacing),
           "porosity": porosity(grid), "porosity_ideal": phi_ideal}
    _emit(args, "generate", res)
    print(json.dumps(res))


def cmd_segment(args):
    from .voxel_model import porosity, save_grid

    grid = load_grid(args)
    sidecar = save_grid(grid, args.output)
    res = {"output": str(sidecar), "porosity": porosity(grid)}
    _emit(args, "segment", res)
    print(json.dumps(res))


def cmd_porosity(args):
    from .voxel_model import porosity

    phi = porosity(load_grid(args))
    _emit(args, "porosity", {"porosity": phi})
    print(phi)


def cmd_homogenize(args):
    from .homogenization import ensemble_homogenize, homogenize
    from .voxel_model import extract_unit_cells

    grid = load_grid(args)
    mat = _material(args)
    cfg = _solver_cfg(args)
    t0 = time.perf_counter()
    if args.cells is None:
        et = homogenize(grid, mat, args.bc, args.voxels_per_cell, args.degree, cfg)
        res, kind = et.to_dict(), "homogenize"
    else:
        cell = args.cell_voxels or grid.dims
        cells = extract_unit_cells(grid, cell, args.cells)
        stats = ensemble_homogenize(cells, mat, args.bc, args.voxels_per_cell, args.degree, cfg)
        res, kind = stats.to_dict(), "ensemble"
    _emit(args, kind, res, {"total": time.perf_counter() - t0})
    print(json.dumps(res if kind == "ensemble" else {k: res[k] for k in ("bc", "C_star", "E_dir",
                                                                             "hill_mandel_residual")}))


def cmd_dns(args):
    from .dns import TensileSetup, tensile_test
    from .vtk import voxel_fields, write_vtk

    grid = load_grid(args)
    mat = _material(args)
    setup = TensileSetup(args.pull_axis, args.displacement_mm, tuple(args.gage), args.lateral, args.penalty)
    r = tensile_test(grid, mat, setup, args.voxels_per_cell, args.degree, _solver_cfg(args))
    if args.vtk:
        write_vtk(args.vtk, grid, voxel_fields(r.mesh, grid, mat, r.solution))
    res = r.to_dict()
    _emit(args, "dns", res)
    print(json.dumps({"E_star_MPa": r.E_star, "dofs": r.dofs}))


def cmd_sweep(args):
    from .dns import porosity_sweep, sweep_rows
    from .report import write_csv

    pts = porosity_sweep(_octet_spec(args), args.increments_mm, args.spacing_um / 1000.0, _material(args),
                         args.voxels_per_cell[0], args.degree, args.axis, args.supersample, _solver_cfg(args))
    rows = sweep_rows(pts)
    if args.csv:
        write_csv(rows, args.csv, ("increment_mm", "d_horizontal_mm", "d_inclined_mm", "error"))
    _emit(args, "sweep", {"points": rows}, {f"point[{i}]": p.seconds for i, p in enumerate(pts)})
    for row in rows:
        print(f"{row['phi']:.4f} {row['E_star_MPa']:.1f}")
    if any(p.error for p in pts):
        raise RuntimeError(f"{sum(1 for p in pts if p.error)} sweep point(s) failed")


def cmd_convergence(args):
    from .dns import TensileSetup, convergence_study
    from .report import write_csv

    grid = load_grid(args)
    st = convergence_study(grid, _material(args), TensileSetup(args.pull_axis), args.variants,
                           args.reference, _solver_cfg(args))
    rows = st.rows()
    if args.csv:
        write_csv(rows, args.csv, ("rel_error", "error"))
    _emit(args, "convergence", st.to_dict())
    for r in st.runs:
        print(f"vpc={r.voxels_per_cell[0]} p={r.degree} E*={r.E_star:.1f} err={r.rel_error:.3e}")


def cmd_export_vtk(args):
    from .dns import TensileSetup, tensile_test
    from .vtk import voxel_fields, write_vtk

    grid = load_grid(args)
    n = int(np.prod(grid.dims))
    if args.alpha_only:
        fields = {"alpha": grid.alpha.ravel(order="F"), "displacement": np.zeros((n, 3)),
                  "von_mises": np.zeros(n)}
    else:
        mat = _material(args)
        r = tensile_test(grid, mat, TensileSetup(args.pull_axis), args.voxels_per_cell, args.degree,
                         _solver_cfg(args))
        fields = voxel_fields(r.mesh, grid, mat, r.solution)
    path = write_vtk(args.output, grid, fields)
    _emit(args, "export-vtk", {"output": str(path), "cells": n})
    print(str(path))


COMMANDS = {
    "generate": cmd_generate, "segment": cmd_segment, "porosity": cmd_porosity,
    "homogenize": cmd_homogenize, "dns": cmd_dns, "sweep": cmd_sweep,
    "convergence": cmd_convergence, "export-vtk": cmd_export_vtk,
}


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse: 2 on usage errors, 0 for --help
        return int(exc.code or 0)
    args.argv = argv
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        configure_threads(args.threads)
        COMMANDS[args.command](args)
    except Exception as exc:
        err = {"error": type(exc).__name__, "message": str(exc), "command": args.command}
        print(json.dumps(err), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
