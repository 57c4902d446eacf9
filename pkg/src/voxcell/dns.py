"""Direct numerical simulation of tensile tests on voxel specimens.

The specimen is held at one end and stretched at the other through penalty
terms on the axial displacement only; the end faces may contract laterally,
so a homogeneous bar stays in a uniaxial stress state.  The few lateral
rigid motions left are removed by pinning lateral DOFs of two vertices on the
clamp face.  E* = (reaction / bounding-box area) / gage strain.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import GeometryError, SolverError, VoxcellError
from .fcm.assembly import DirichletFace, PenaltyConfig, assemble_system
from .fcm.fields import evaluate_fields
from .fcm.kernels import face_table, precompute_voxel_kernels
from .fcm.mesh import CellMesh
from .homogenization import effective_tensor, RVE, material_dofs
from .lattice import OctetCellSpec, voxelize_octet
from .solver import Solver, SolverConfig
from .voxel_model import porosity

log = logging.getLogger(__name__)

AXIS_INDEX = {"x": 0, "y": 1, "z": 2}
LATERAL_MODES = ("free", "clamped")


def direct_solver() -> SolverConfig:
    return SolverConfig(method="direct")


@dataclass(frozen=True)
class TensileSetup:
    """Tensile test definition.

    ``gage`` holds the two gage planes as fractions of the specimen length;
    they are snapped to voxel-layer centres.  ``lateral="clamped"`` also
    fixes the lateral displacement on both end faces (grip-like ends).
    """

    pull_axis: str = "z"
    displacement: float = 0.01
    gage: tuple[float, float] = (0.25, 0.75)
    lateral: str = "free"
    beta: float | None = None

    def __post_init__(self):
        if self.pull_axis not in AXIS_INDEX:
            raise ValueError(f"pull_axis must be x, y or z, got {self.pull_axis!r}")
        if self.displacement == 0 or not math.isfinite(self.displacement):
            raise ValueError("prescribed displacement must be finite and non-zero")
        lo, hi = self.gage
        if not 0.0 <= lo < hi <= 1.0:
            raise ValueError(f"gage fractions must satisfy 0 <= lo < hi <= 1, got {self.gage}")
        if self.lateral not in LATERAL_MODES:
            raise ValueError(f"lateral must be one of {LATERAL_MODES}")
        object.__setattr__(self, "gage", (float(lo), float(hi)))

    @property
    def axis(self) -> int:
        return AXIS_INDEX[self.pull_axis]

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TensileResult:
    E_star: float
    stress: float
    strain: float
    reaction: float
    reaction_from_volume: float
    area: float
    gage_length: float
    gage_planes: tuple[float, float]
    dofs: int
    degree: int
    voxels_per_cell: tuple[int, int, int]
    report: object
    seconds: float
    mesh: CellMesh = field(repr=False, default=None)
    solution: np.ndarray = field(repr=False, default=None)

    def to_dict(self) -> dict:
        return {
            "E_star_MPa": self.E_star,
            "stress_MPa": self.stress,
            "gage_strain": self.strain,
            "reaction_N": self.reaction,
            "reaction_from_volume_N": self.reaction_from_volume,
            "area_mm2": self.area,
            "gage_length_mm": self.gage_length,
            "gage_planes_mm": list(self.gage_planes),
            "dofs": self.dofs,
            "p": self.degree,
            "voxels_per_cell": list(self.voxels_per_cell),
            "seconds": self.seconds,
            "solver": self.report.to_dict(),
        }


def _face_points(mesh: CellMesh, axis: int, side: int):
    """Cells, Gauss points, weights and shape values on one end face."""
    ft = face_table(mesh, axis, side)
    face = "xyz"[axis] + ("-", "+")[side]
    return ft, mesh.boundary_cells(face)


def _face_alpha(mesh, grid, ft, cells):
    return mesh.cell_alphas(grid)[cells][:, ft.voxel]


def pull_reaction(mesh: CellMesh, grid, u: np.ndarray, setup: TensileSetup, beta: float) -> float:
    """beta * int alpha (u_hat - u_a) over the pull face."""
    a = setup.axis
    ft, cells = _face_points(mesh, a, 1)
    alpha = _face_alpha(mesh, grid, ft, cells)
    ue = u[mesh.cell_dofs[cells]].reshape(len(cells), -1, 3)[..., a]     # (cells, nm)
    ua = np.einsum("pga,ca->cpg", ft.N, ue)
    return float(beta * np.einsum("cp,pg,cpg->", alpha, ft.weights, setup.displacement - ua))


def _material_vertex(mesh: CellMesh, grid, slots_face, axis: int) -> np.ndarray:
    """Vertex modes on the clamp face touching a material voxel of the first layer."""
    mat = np.take(grid.material, 0, axis=axis)          # (n1, n2) first layer
    lat = [d for d in range(3) if d != axis]
    p = mesh.degree
    vpc = [mesh.voxels_per_cell[d] for d in lat]
    out = []
    for s1, s2 in slots_face:
        i1, i2 = (s1 // p) * vpc[0], (s2 // p) * vpc[1]
        block = mat[max(i1 - 1, 0):i1 + 1, max(i2 - 1, 0):i2 + 1]
        out.append(bool(block.any()))
    return np.array(out, dtype=bool)


def lateral_pins(mesh: CellMesh, grid, axis: int) -> np.ndarray:
    """Lateral DOFs pinned against in-plane translation and rotation about the axis.

    Point A gets both lateral components fixed; point B, the material vertex
    farthest from A, gets the component that a rotation about A would move.
    """
    lat = [d for d in range(3) if d != axis]
    shape = mesh.lattice_shape
    p = mesh.degree
    s1, s2 = np.meshgrid(np.arange(0, shape[lat[0]], p), np.arange(0, shape[lat[1]], p), indexing="ij")
    slots = np.stack([s1.ravel(), s2.ravel()], axis=1)
    mat = _material_vertex(mesh, grid, slots, axis)
    cand = slots[mat] if mat.any() else slots
    A = cand[0]
    d = (cand - A) * np.array([mesh.cell_size[lat[0]], mesh.cell_size[lat[1]]]) / p
    B = cand[int(np.argmax(np.sum(d**2, axis=1)))]
    dB = (B - A).astype(float)

    def dof(slot2, comp):
        idx = [0, 0, 0]
        idx[lat[0]], idx[lat[1]] = int(slot2[0]), int(slot2[1])
        return 3 * int(mesh.mode_index(*idx)) + comp

    # rotation about the axis moves B along (-dB[1], dB[0]) in lateral coordinates
    comp_B = lat[0] if abs(dB[1]) >= abs(dB[0]) else lat[1]
    return np.array([dof(A, lat[0]), dof(A, lat[1]), dof(B, comp_B)])


def gage_planes(grid, setup: TensileSetup) -> tuple[float, float]:
    """Gage plane coordinates snapped to voxel-layer centres (same phase in the layer)."""
    a = setup.axis
    n = grid.dims[a]
    h = grid.spacing[a]
    k1 = min(max(int(round(setup.gage[0] * n - 0.5)), 0), n - 1)
    k2 = min(k1 + max(int(round((setup.gage[1] - setup.gage[0]) * n)), 1), n - 1)
    if k2 <= k1:
        raise GeometryError("gage region collapses to a single voxel layer")
    return (k1 + 0.5) * h, (k2 + 0.5) * h


def plane_mean_displacement(mesh: CellMesh, grid, mat, u: np.ndarray, axis: int, coord: float,
                            n_gauss: int | None = None) -> float:
    """Alpha-weighted mean axial displacement over a cross-section plane."""
    from .fcm.basis import gauss_rule

    lat = [d for d in range(3) if d != axis]
    ng = n_gauss or mesh.degree + 1
    xg, wg = gauss_rule(ng)
    k = int(coord // grid.spacing[axis])
    axes_pts, axes_w = [], []
    for d in lat:
        h = grid.spacing[d]
        base = (np.arange(grid.dims[d])[:, None] + 0.5 * (1.0 + xg[None, :])) * h
        axes_pts.append(base.ravel())
        axes_w.append(np.tile(0.5 * h * wg, grid.dims[d]))
    P1, P2 = np.meshgrid(axes_pts[0], axes_pts[1], indexing="ij")
    W = np.outer(axes_w[0], axes_w[1])
    pts = np.empty(P1.shape + (3,))
    pts[..., axis] = coord
    pts[..., lat[0]], pts[..., lat[1]] = P1, P2
    vox1 = (np.arange(P1.shape[0]) // ng)
    vox2 = (np.arange(P1.shape[1]) // ng)
    alpha_plane = np.take(grid.alpha, k, axis=axis)[np.ix_(vox1, vox2)]
    disp, _, _ = evaluate_fields(mesh, None, mat, u, pts.reshape(-1, 3))
    ua = disp[:, axis].reshape(P1.shape)
    wa = W * alpha_plane
    tot = float(wa.sum())
    if tot <= 0.0:
        raise GeometryError("gage plane has zero weight")
    return float((wa * ua).sum() / tot)


def tensile_test(grid, mat, setup: TensileSetup | None = None, voxels_per_cell=(4, 4, 4), degree: int = 2,
                 solver_cfg: SolverConfig | None = None, drop_void_dofs: bool = True,
                 table=None) -> TensileResult:
    """Simulate a displacement-driven tensile test and extract E*."""
    setup = setup or TensileSetup()
    cfg = solver_cfg or direct_solver()
    t0 = time.perf_counter()
    a = setup.axis
    mesh = CellMesh.for_grid(grid, voxels_per_cell, degree)
    comps = (0, 1, 2) if setup.lateral == "clamped" else (a,)
    hat = np.zeros(3)
    hat[a] = setup.displacement
    name = setup.pull_axis
    penalty = PenaltyConfig((DirichletFace(name + "-", (0.0, 0.0, 0.0), comps),
                             DirichletFace(name + "+", tuple(hat), comps)), setup.beta)
    table = table or precompute_voxel_kernels(mesh, mat)
    system = assemble_system(mesh, grid, mat, penalty, table=table)
    keep = material_dofs(mesh, grid) if drop_void_dofs else np.ones(mesh.total_dofs, dtype=bool)
    if setup.lateral == "free":
        keep[lateral_pins(mesh, grid, a)] = False
    idx = np.flatnonzero(keep)
    K = system.operator.to_sparse()
    A = K[idx][:, idx].tocsr()
    b = system.rhs[idx]
    try:
        x, report = Solver(A, cfg)(b)
    except VoxcellError:
        raise
    except Exception as exc:  # factorization failures surface as solver errors
        raise SolverError(f"tensile solve failed: {exc}") from exc
    if not report.converged:
        raise SolverError(f"solver stopped at residual {report.final_residual:.3e}")
    u = np.zeros(mesh.total_dofs)
    u[idx] = x

    ext = np.asarray(grid.extent)
    area = float(np.prod([ext[d] for d in range(3) if d != a]))
    length = float(ext[a])
    R = pull_reaction(mesh, grid, u, setup, system.beta)
    z1, z2 = gage_planes(grid, setup)
    u1 = plane_mean_displacement(mesh, grid, mat, u, a, z1)
    u2 = plane_mean_displacement(mesh, grid, mat, u, a, z2)
    strain = (u2 - u1) / (z2 - z1)
    if strain == 0.0 or not math.isfinite(strain):
        raise GeometryError("gage strain is zero; E* undefined")
    from .homogenization import average_stress

    sig = average_stress(mesh, grid, mat, u, table)
    R_vol = float(sig[a] * mesh.volume / length)
    stress = R / area
    E = stress / strain
    log.info("tensile test: E*=%.1f MPa (R=%.4g, R_vol=%.4g, eps=%.4g)", E, R, R_vol, strain)
    return TensileResult(E, stress, strain, R, R_vol, area, z2 - z1, (z1, z2), int(len(idx)), degree,
                         tuple(mesh.voxels_per_cell), report, time.perf_counter() - t0, mesh, u)


@dataclass
class ConvergenceRun:
    voxels_per_cell: tuple[int, int, int]
    degree: int
    E_star: float = math.nan
    dofs: int = 0
    solver_iters: int = 0
    seconds: float = 0.0
    rel_error: float = math.nan
    error: str | None = None


@dataclass
class ConvergenceStudy:
    runs: list
    reference: ConvergenceRun | None

    def errors_by_mesh(self) -> dict:
        """{voxels_per_cell: [(p, rel_error), ...]} sorted by p, successful runs only."""
        out = {}
        for r in self.runs:
            if r.error is None:
                out.setdefault(r.voxels_per_cell, []).append((r.degree, r.rel_error))
        return {k: sorted(v) for k, v in out.items()}

    def rows(self) -> list[dict]:
        return [{"phi": None, "E_star_MPa": r.E_star, "dofs": r.dofs, "p": r.degree,
                 "voxels_per_cell": "x".join(map(str, r.voxels_per_cell)),
                 "solver_iters": r.solver_iters, "rel_error": r.rel_error, "error": r.error}
                for r in self.runs]

    def to_dict(self) -> dict:
        ref = asdict(self.reference) if self.reference else None
        return {"runs": [asdict(r) for r in self.runs], "reference": ref}


def convergence_study(grid, mat, setup: TensileSetup | None = None, variants=(), reference=None,
                      solver_cfg: SolverConfig | None = None) -> ConvergenceStudy:
    """Run every (voxels_per_cell, p) variant; errors are relative to the most resolved run.

    ``reference`` optionally adds an extra (voxels_per_cell, p) run that must
    be the most resolved one (an overkill resolution).  Otherwise the variant
    with the most DOFs serves as reference.
    """
    variants = [(tuple(int(v) for v in np.broadcast_to(vpc, (3,))), int(p)) for vpc, p in variants]
    if len(variants) < 2:
        raise ValueError("a convergence study needs at least two variants")
    todo = list(variants)
    if reference is not None:
        ref_key = (tuple(int(v) for v in np.broadcast_to(reference[0], (3,))), int(reference[1]))
        if ref_key not in todo:
            todo.append(ref_key)
    runs = []
    for vpc, p in todo:
        run = ConvergenceRun(vpc, p)
        try:
            res = tensile_test(grid, mat, setup, vpc, p, solver_cfg)
            run.E_star, run.dofs, run.seconds = res.E_star, res.dofs, res.seconds
            run.solver_iters = res.report.iterations
        except Exception as exc:  # keep the study going, record the failure
            log.warning("variant %s p=%d failed: %s", vpc, p, exc)
            run.error = str(exc)
        runs.append(run)
    ok = [r for r in runs if r.error is None]
    ref = None
    if ok:
        if reference is not None:
            ref = next((r for r in ok if (r.voxels_per_cell, r.degree) == ref_key), None)
            if ref is not None and any(r.dofs > ref.dofs for r in ok):
                raise ValueError("the reference run must be the most resolved configuration")
        else:
            ref = max(ok, key=lambda r: r.dofs)
        if ref is not None:
            for r in ok:
                r.rel_error = abs(r.E_star - ref.E_star) / abs(ref.E_star)
    return ConvergenceStudy(runs, ref)


@dataclass
class SweepPoint:
    increment: float
    d_horizontal: float
    d_inclined: float
    phi: float = math.nan
    E_star_MPa: float = math.nan
    dofs: int = 0
    p: int = 0
    voxels_per_cell: int = 0
    solver_iters: int = 0
    seconds: float = 0.0
    error: str | None = None


def porosity_sweep(base_spec: OctetCellSpec, diameter_increments, spacing_mm: float, mat,
                   voxels_per_cell: int = 4, degree: int = 2, axis: str = "z", supersample: int = 2,
                   solver_cfg: SolverConfig | None = None) -> list[SweepPoint]:
    """Grow both strut diameters by each increment, voxelize, homogenize (PBC), record (phi, E*)."""
    a = AXIS_INDEX[axis]
    points = []
    for inc in diameter_increments:
        spec = base_spec.grown(float(inc))
        pt = SweepPoint(float(inc), spec.d_horizontal, spec.d_inclined, p=degree, voxels_per_cell=voxels_per_cell)
        t0 = time.perf_counter()
        try:
            cell = voxelize_octet(spec, spacing_mm, supersample)
            pt.phi = porosity(cell)
            rve = RVE(cell, mat, (voxels_per_cell,) * 3, degree)
            et = effective_tensor(rve, "pbc", solver_cfg or direct_solver(), check_energy=False)
            pt.E_star_MPa = et.E_dir[a]
            pt.dofs = rve.mesh.total_dofs
            pt.solver_iters = sum(r.iterations for r in et.reports)
        except Exception as exc:  # a failing point is recorded, the sweep continues
            log.warning("sweep point %+.3f mm failed: %s", inc, exc)
            pt.error = str(exc)
        pt.seconds = time.perf_counter() - t0
        points.append(pt)
    return points


def interpolate_modulus(points, phi: float) -> float:
    """Linear interpolation of E*(phi) between the bracketing sweep points."""
    good = sorted((p.phi, p.E_star_MPa) for p in points if p.error is None)
    x = np.array([g[0] for g in good])
    y = np.array([g[1] for g in good])
    if len(x) < 2 or not x[0] <= phi <= x[-1]:
        raise ValueError(f"phi={phi} lies outside the swept range")
    return float(np.interp(phi, x, y))


def tensile_specimen(spec: OctetCellSpec, spacing_mm: float, reps=(2, 2, 10), supersample: int = 2):
    from .lattice import tile

    return tile(voxelize_octet(spec, spacing_mm, supersample), reps)


def sweep_rows(points) -> list[dict]:
    return [{"phi": p.phi, "E_star_MPa": p.E_star_MPa, "dofs": p.dofs, "p": p.p,
             "voxels_per_cell": p.voxels_per_cell, "solver_iters": p.solver_iters,
             "increment_mm": p.increment, "d_horizontal_mm": p.d_horizontal,
             "d_inclined_mm": p.d_inclined, "error": p.error} for p in points]


__all__ = ["TensileSetup", "TensileResult", "tensile_test", "convergence_study", "ConvergenceStudy",
           "ConvergenceRun", "porosity_sweep", "SweepPoint", "interpolate_modulus", "tensile_specimen",
           "lateral_pins", "gage_planes", "pull_reaction", "sweep_rows"]
