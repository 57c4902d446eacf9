"""Acceptance criteria 1-10, each printing one verdict line.

Run with ``pytest tests/test_acceptance.py -s`` to see the lines as they
happen; they are also collected in the "acceptance criteria" section of the
terminal summary.
"""

import time

import numpy as np
import pytest
import scipy.sparse.linalg as spla

import oracles
from voxcell.dns import (
    TensileSetup,
    convergence_study,
    interpolate_modulus,
    porosity_sweep,
    tensile_specimen,
    tensile_test,
)
from voxcell.fcm.assembly import PenaltyConfig, assemble_system
from voxcell.fcm.kernels import cell_stiffness, precompute_voxel_kernels
from voxcell.fcm.mesh import CellMesh
from voxcell.homogenization import RVE, bound_ordering_check, effective_tensor, solve_load_case
from voxcell.lattice import OctetCellSpec, voxelize_octet
from voxcell.voxel_model import VoxelGrid, porosity

E, NU = 190000.0, 0.3
C_ISO = oracles.isotropic(E, NU)
BCS = ("pbc", "kubc", "subc")
HM_TOL = 1e-6


def rel(a, b):
    return float(np.linalg.norm(np.asarray(a) - b) / np.linalg.norm(b))


def solid_rve(steel):
    return RVE(VoxelGrid.solid((8, 8, 8), (0.5, 0.5, 0.5)), steel, 4, 2)


def laminate_rve(steel):
    m = np.zeros((4, 4, 8), dtype=bool)
    m[:, :, :4] = True
    return RVE(VoxelGrid(m, (0.25, 0.25, 0.25), alpha_void=0.01), steel, 1, 1)


@pytest.fixture(scope="module")
def solid_results(steel):
    t0 = time.perf_counter()
    rve = solid_rve(steel)
    out = {bc: effective_tensor(rve, bc) for bc in BCS}
    return out, time.perf_counter() - t0


@pytest.fixture(scope="module")
def laminate_results(steel):
    t0 = time.perf_counter()
    rve = laminate_rve(steel)
    out = {bc: effective_tensor(rve, bc) for bc in BCS}
    return out, time.perf_counter() - t0


@pytest.fixture(scope="module")
def octet_200um():
    return voxelize_octet(OctetCellSpec(), 0.2)


def test_criterion_01_homogeneous_recovery(solid_results, criterion):
    res, secs = solid_results
    errs = {bc: rel(res[bc].C_star, C_ISO) for bc in BCS}
    ok = max(errs.values()) <= 1e-6 and secs < 10.0
    detail = ", ".join(f"{bc} {e:.1e}" for bc, e in errs.items())
    assert criterion(1, ok, f"solid 8^3 rel. error {detail} (tol 1e-6); {secs:.1f} s (< 10 s)")


def test_criterion_02_laminate(laminate_results, criterion):
    res, secs = laminate_results
    C = {bc: res[bc].C_star for bc in BCS}
    ref = oracles.laminate_stiffness([C_ISO, 0.01 * C_ISO], [0.5, 0.5])
    err = rel(C["pbc"], ref)
    order = bound_ordering_check(C["kubc"], C["pbc"], C["subc"], tol=1e-3)
    ok = err <= 1e-4 and order.passed and secs < 30.0
    assert criterion(2, ok, f"PBC vs closed form {err:.1e} (tol 1e-4); ordering min eig "
                            f"{order.min_eig_kubc_pbc:.3g}/{order.min_eig_pbc_subc:.3g} "
                            f"vs {order.threshold:.3g}; {secs:.2f} s (< 30 s)")


def test_criterion_03_hill_mandel(solid_results, laminate_results, octet_200um, steel, criterion):
    worst = {}
    for name, (res, _) in (("solid", solid_results), ("laminate", laminate_results)):
        for bc in ("pbc", "kubc"):
            worst[f"{name}/{bc}"] = max(res[bc].hill_mandel)
    octet = effective_tensor(RVE(octet_200um, steel, 4, 2), "pbc")
    worst["octet/pbc"] = max(octet.hill_mandel)
    top = max(worst.values())
    ok = top <= HM_TOL
    assert criterion(3, ok, f"max residual {top:.1e} over {len(worst) * 6} load cases (tol 1e-6)")


@pytest.mark.filterwarnings("ignore::voxcell.errors.SingularSystemWarning")
def test_criterion_04_patch_and_rigid_modes(steel, criterion):
    grid = VoxelGrid.solid((4, 4, 4), (0.25, 0.25, 0.25))
    eps = np.array([1.0e-3, -4.0e-4, 2.5e-4, 3.0e-4, -2.0e-4, 6.0e-4])
    T = np.array([[eps[0], eps[5] / 2, eps[4] / 2],
                  [eps[5] / 2, eps[1], eps[3] / 2],
                  [eps[4] / 2, eps[3] / 2, eps[2]]])
    patch, rigid = [], []
    for p in (1, 2, 3):
        rve = RVE(grid, steel, 2, p)
        u, _, _ = solve_load_case(rve, "kubc", eps)
        exact = rve.mesh.affine_field(T)
        patch.append(float(np.abs(u - exact).max() / np.abs(exact).max()))
        K = assemble_system(rve.mesh, grid, steel, PenaltyConfig(())).operator.to_sparse()
        k2 = float(spla.eigsh(K, 1, which="LA", return_eigenvectors=False)[0])
        R = rve.mesh.rigid_modes()
        rigid.append(max(float(r @ (K @ r)) / (k2 * float(r @ r)) for r in R.T))
    ok = max(patch) <= 1e-10 and max(rigid) <= 1e-10
    assert criterion(4, ok, f"affine error {max(patch):.1e} (p=1..3); "
                            f"rigid energy {max(rigid):.1e} * ||K|| ||u||^2 (tol 1e-10)")


def test_criterion_05_preintegration(criterion):
    rng = np.random.default_rng(5)
    worst = 0.0
    for p, vpc in ((1, (2, 2, 2)), (2, (3, 2, 2)), (3, (2, 2, 2))):
        h = (0.3, 0.4, 0.5)                       # cell size
        mesh = CellMesh((1, 1, 1), vpc, p, tuple(hi / v for hi, v in zip(h, vpc)))
        table = precompute_voxel_kernels(mesh, C_ISO)
        for kind in ("binary", "continuous"):
            n = int(np.prod(vpc))
            alpha = np.where(rng.random(n) < 0.5, 1.0, 1e-11) if kind == "binary" else rng.random(n)
            K_ref = oracles.cell_stiffness_direct(C_ISO, p, vpc, h, alpha, p + 1)
            K = cell_stiffness(table, alpha)
            worst = max(worst, float(np.abs(K - K_ref).max() / np.abs(K_ref).max()))
    ok = worst <= 1e-12
    assert criterion(5, ok, f"max rel. difference {worst:.1e} over 6 random patterns (tol 1e-12)")


def test_criterion_06_octet_porosity(criterion):
    t0 = time.perf_counter()
    phi = porosity(voxelize_octet(OctetCellSpec(), 0.025, supersample=2))
    secs = time.perf_counter() - t0
    ok = abs(phi - 0.756) <= 0.02 and secs < 60.0
    assert criterion(6, ok, f"phi = {phi:.4f} at 25 um (target 0.756 +- 0.02); {secs:.1f} s (< 60 s)")


@pytest.mark.slow
def test_criterion_07_porosity_sweep(steel, criterion):
    t0 = time.perf_counter()
    incs = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6]
    pts = porosity_sweep(OctetCellSpec(), incs, 0.05, steel, voxels_per_cell=8, degree=2)
    secs = time.perf_counter() - t0
    good = sorted((p.phi, p.E_star_MPa) for p in pts if p.error is None)
    E_sorted = [e for _, e in good]
    monotone = len(good) == len(incs) and all(a > b for a, b in zip(E_sorted, E_sorted[1:]))
    E668 = interpolate_modulus(pts, 0.668)
    dev = E668 / 16178.0 - 1.0
    ok = monotone and abs(dev) <= 0.15 and secs < 1200.0
    span = f"phi {good[0][0]:.3f}..{good[-1][0]:.3f}"
    assert criterion(7, ok, f"monotone={monotone} over {span}; E*(0.668) = {E668:.0f} MPa "
                            f"({dev:+.1%} vs 16178, tol 15%); {secs:.0f} s (< 1200 s)")


@pytest.mark.slow
def test_criterion_08_dns_vs_homogenization(octet_200um, steel, criterion):
    t0 = time.perf_counter()
    rve = RVE(octet_200um, steel, 4, 2)
    E_hom = effective_tensor(rve, "pbc").E_dir[2]
    specimen = tensile_specimen(OctetCellSpec(), 0.2, (2, 2, 10))
    res = tensile_test(specimen, steel, TensileSetup(pull_axis="z"), 4, 2)
    secs = time.perf_counter() - t0
    dev = res.E_star / E_hom - 1.0
    ok = abs(dev) <= 0.10 and secs < 900.0
    assert criterion(8, ok, f"DNS {res.E_star:.0f} MPa vs homogenized {E_hom:.0f} MPa ({dev:+.1%}, "
                            f"tol 10%); {res.dofs} DOFs; {secs:.0f} s (< 900 s)")


def test_criterion_09_convergence(steel, criterion):
    specimen = tensile_specimen(OctetCellSpec(), 0.25, (1, 1, 2))
    variants = [(4, 1), (4, 2), (4, 3), (4, 4), (2, 1), (2, 2), (2, 3)]
    study = convergence_study(specimen, steel, TensileSetup(pull_axis="z"), variants)
    ref = study.reference
    curves = {vpc: errs for vpc, errs in study.errors_by_mesh().items()}
    ok = not any(r.error for r in study.runs)
    parts = []
    for vpc, errs in sorted(curves.items(), reverse=True):
        e = [err for p, err in errs if (vpc, p) != (ref.voxels_per_cell, ref.degree)]
        ok &= all(a > b for a, b in zip(e, e[1:]))
        parts.append(f"vpc {vpc[0]}: " + " > ".join(f"{x:.3f}" for x in e))
    detail = "; ".join(parts) + f" (reference vpc {ref.voxels_per_cell[0]}, p={ref.degree})"
    assert criterion(9, ok, f"error decreasing in p: {detail}")


def test_criterion_10_replacement_properties(steel, criterion):
    """The scan-derived moduli and the measured tensor cannot be recomputed
    without the original CT volumes; this criterion checks the replacement
    invariants instead."""
    cell = voxelize_octet(OctetCellSpec(), 0.2)
    rve = RVE(cell, steel, 2, 1)
    C = effective_tensor(rve, "pbc").C_star
    # material scaling
    C3 = effective_tensor(RVE(cell, steel.scaled(3.0), 2, 1), "pbc").C_star
    lin = rel(C3, 3.0 * C)
    # quarter turn about the build axis, equal strut diameters
    eq = voxelize_octet(OctetCellSpec(d_horizontal=0.6, d_inclined=0.6), 0.2)
    Ceq = effective_tensor(RVE(eq, steel, 2, 1), "pbc").C_star
    turned = VoxelGrid(np.rot90(eq.material, 1, (1, 2)), eq.spacing)
    Ct = effective_tensor(RVE(turned, steel, 2, 1), "pbc").C_star
    Qx = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]])
    rot = max(rel(Ct, Ceq), rel(oracles.rotate_voigt(Ceq, Qx), Ct))
    # load magnitude
    bar = tensile_specimen(OctetCellSpec(), 0.4, (1, 1, 2))
    a = tensile_test(bar, steel, TensileSetup(displacement=0.01), 2, 1)
    b = tensile_test(bar, steel, TensileSetup(displacement=0.37), 2, 1)
    load = abs(b.E_star / a.E_star - 1.0)
    ok = lin <= 1e-10 and rot <= 1e-8 and load <= 1e-5
    statement = "scan-based moduli and the measured tensor need the original CT data and are not reproduced"
    assert criterion(10, ok, f"{statement}; replacements: scaling {lin:.1e}, quarter turn {rot:.1e}, "
                             f"load magnitude {load:.1e}")
