import itertools
import math

import numpy as np
import pytest

import oracles
from voxcell.errors import ConvergenceError, RankError
from voxcell.fcm.basis import gauss_rule
from voxcell.fcm.fields import evaluate_fields
from voxcell.fcm.mesh import CellMesh
from voxcell.homogenization import (
    RVE,
    EnsembleStats,
    average_strain,
    average_stress,
    bound_ordering_check,
    constrain_kubc,
    constrain_pbc,
    constrain_subc,
    directional_modulus,
    effective_tensor,
    ensemble_homogenize,
    ensemble_stats,
    hill_mandel_residual,
    homogenize,
    material_dofs,
    paired_face_modes,
    solve_load_case,
)
from voxcell.lattice import DefectSpec, OctetCellSpec, apply_defects, tile, voxelize_octet
from voxcell.solver import SolverConfig
from voxcell.voxel_model import VoxelGrid, extract_unit_cells

E, NU = 190000.0, 0.3
C_ISO = oracles.isotropic(E, NU)
UNIT = np.eye(6)


def laminate(alpha_void=0.01, dims=(4, 4, 8)):
    m = np.zeros(dims, dtype=bool)
    m[:, :, : dims[2] // 2] = True
    return VoxelGrid(m, (0.25, 0.25, 0.25), alpha_void)


def rel(a, b):
    return np.linalg.norm(np.asarray(a) - np.asarray(b)) / np.linalg.norm(b)


@pytest.fixture(scope="module")
def octet_tensors():
    from voxcell import ElasticMaterial

    cell = voxelize_octet(OctetCellSpec(), 0.2)
    rve = RVE(cell, ElasticMaterial(E, NU), 4, 2)
    return {bc: effective_tensor(rve, bc) for bc in ("pbc", "kubc", "subc")}


# ---------------------------------------------------------------- constraints

class TestPeriodicConstraint:
    @pytest.mark.parametrize("p", [1, 2, 3])
    def test_dof_count_by_enumeration(self, p):
        mesh = CellMesh((2, 1, 1), (1, 1, 1), p, (1, 1, 1))
        # independent lattice positions modulo the period, enumerated by hand
        period = (2 * p, p, p)
        distinct = {tuple(i % P for i, P in zip(idx, period))
                    for idx in itertools.product(*(range(n) for n in mesh.lattice_shape))}
        assert len(distinct) == 2 * p * p * p
        cs = constrain_pbc(mesh, np.zeros(6))
        assert cs.n_reduced == 3 * len(distinct) - 3
        assert cs.n_reduced == mesh.total_dofs - 3 * paired_face_modes(mesh) - 3

    def test_zero_strain_zero_fluctuation(self, steel):
        rve = RVE(VoxelGrid.solid((4, 4, 4), (0.25,) * 3), steel, 2, 2)
        u, _, _ = solve_load_case(rve, "pbc", np.zeros(6))
        assert np.abs(u).max() == 0.0

    @pytest.mark.parametrize("p", [1, 2, 3])
    def test_uniaxial_solid_is_affine(self, p, steel):
        rve = RVE(VoxelGrid.solid((4, 4, 4), (0.25,) * 3), steel, 2, p)
        eps = np.array([1.0, 0, 0, 0, 0, 0])
        u, _, _ = solve_load_case(rve, "pbc", eps)
        affine = rve.mesh.affine_field(np.diag([1.0, 0, 0]))
        assert np.abs(u - affine).max() <= 1e-10

    def test_pbc_average_strain_equals_load(self, steel, rng):
        grid = VoxelGrid(rng.random((4, 4, 4)) < 0.6, (0.25,) * 3, 1e-4)
        rve = RVE(grid, steel, 2, 2)
        for j in range(6):
            e = UNIT[j] * 0.01
            u, _, _ = solve_load_case(rve, "pbc", e)
            assert np.abs(average_strain(rve.mesh, u, rve.table) - e).max() <= 1e-10 * 0.01 + 1e-16

    def test_periodic_fluctuation(self, steel, rng):
        grid = VoxelGrid(rng.random((4, 4, 4)) < 0.6, (0.25,) * 3, 1e-4)
        rve = RVE(grid, steel, 2, 2, drop_void_dofs=False)
        eps = np.array([0.0, 0.0, 0.0, 0.0, 0.0, 1.0])
        u, _, _ = solve_load_case(rve, "pbc", eps)
        shear = np.array([[0, 0.5, 0], [0.5, 0, 0], [0, 0, 0]])
        w = (u - rve.mesh.affine_field(shear)).reshape(-1, 3)
        lat = rve.mesh.lattice_indices()
        n = rve.mesh.lattice_shape
        for axis in range(3):
            lo = np.flatnonzero(lat[axis] == 0)
            hi = np.flatnonzero(lat[axis] == n[axis] - 1)
            np.testing.assert_allclose(w[lo], w[hi], atol=1e-12)


class TestKinematicConstraint:
    def test_zero_strain(self, steel):
        rve = RVE(VoxelGrid.solid((2, 2, 2), (1, 1, 1)), steel, 1, 2)
        u, _, _ = solve_load_case(rve, "kubc", np.zeros(6))
        assert not u.any()

    def test_boundary_trace_is_affine(self, steel, rng):
        grid = VoxelGrid(rng.random((4, 4, 4)) < 0.5, (0.25,) * 3, 1e-4)
        mesh = CellMesh.for_grid(grid, 2, 2)
        eps = np.array([0.1, 0.2, -0.1, 0.05, 0.0, 0.3])
        cs = constrain_kubc(mesh, eps)
        u = cs.expand(rng.normal(size=cs.n_reduced))
        for face in ("x-", "x+", "y-", "y+", "z-", "z+"):
            pts = rng.uniform(0, 1, (10, 3)) * mesh.extent
            axis = "xyz".index(face[0])
            pts[:, axis] = 0.0 if face[1] == "-" else mesh.extent[axis]
            disp, _, _ = evaluate_fields(mesh, grid, steel, u, pts)
            eps_t = np.array([[0.1, 0.15, 0.0], [0.15, 0.2, 0.025], [0.0, 0.025, -0.1]])
            np.testing.assert_allclose(disp, pts @ eps_t.T, atol=1e-12)


class TestTractionConstraint:
    def test_zero_stress(self, steel):
        rve = RVE(VoxelGrid.solid((2, 2, 2), (1, 1, 1)), steel, 1, 1)
        u, _, _ = solve_load_case(rve, "subc", np.zeros(6))
        assert np.abs(u).max() == 0.0

    def test_load_is_self_equilibrated(self, rng):
        mesh = CellMesh((2, 2, 2), (1, 1, 1), 2, (0.5, 0.5, 0.5))
        cs = constrain_subc(mesh, rng.normal(size=6))
        R = mesh.rigid_modes()
        assert np.abs(R.T @ cs.load).max() <= 1e-12 * np.abs(cs.load).max()

    def test_rigid_part_removed(self, steel):
        rve = RVE(VoxelGrid.solid((2, 2, 2), (0.5,) * 3), steel, 1, 2)
        u, _, _ = solve_load_case(rve, "subc", np.array([0, 0, 0, 0, 1.0, 0]))
        R = rve.mesh.rigid_modes()
        assert np.abs(R.T @ u).max() <= 1e-10 * np.abs(u).max() * len(u)


# ---------------------------------------------------------------- averages

class TestAverages:
    def test_zero_solution(self, steel):
        mesh = CellMesh((2, 2, 2), (1, 1, 1), 2, (1, 1, 1))
        grid = VoxelGrid.solid((2, 2, 2), (1, 1, 1))
        assert not average_stress(mesh, grid, steel, np.zeros(mesh.total_dofs)).any()

    def test_affine_state(self, steel):
        grid = VoxelGrid.solid((4, 4, 4), (0.25,) * 3)
        mesh = CellMesh.for_grid(grid, 2, 3)
        e0 = np.array([1e-3, -2e-4, 5e-4, 1e-4, -3e-4, 2e-4])
        t = np.array([[e0[0], e0[5] / 2, e0[4] / 2], [e0[5] / 2, e0[1], e0[3] / 2], [e0[4] / 2, e0[3] / 2, e0[2]]])
        u = mesh.affine_field(t)
        np.testing.assert_allclose(average_strain(mesh, u, mat=steel), e0, atol=1e-16)
        np.testing.assert_allclose(average_stress(mesh, grid, steel, u), C_ISO @ e0, rtol=1e-12)

    @staticmethod
    def _face_quadrature(mesh, n_per_voxel):
        """Points, weights and outward normals on the six box faces, Gauss per voxel face."""
        g, w = gauss_rule(n_per_voxel)
        pts, wts, nrm = [], [], []
        ext = mesh.extent
        dims = mesh.grid_dims
        h = np.asarray(mesh.spacing)
        for axis in range(3):
            a, b = [d for d in range(3) if d != axis]
            xa = ((np.arange(dims[a])[:, None] + 0.5 * (g + 1)) * h[a]).ravel()
            xb = ((np.arange(dims[b])[:, None] + 0.5 * (g + 1)) * h[b]).ravel()
            wa = np.tile(0.5 * h[a] * w, dims[a])
            wb = np.tile(0.5 * h[b] * w, dims[b])
            A, B = np.meshgrid(xa, xb, indexing="ij")
            W = np.outer(wa, wb).ravel()
            for side, sign in ((0.0, -1.0), (ext[axis], 1.0)):
                p = np.empty((A.size, 3))
                p[:, axis], p[:, a], p[:, b] = side, A.ravel(), B.ravel()
                n = np.zeros(3)
                n[axis] = sign
                pts.append(p)
                wts.append(W)
                nrm.append(np.tile(n, (A.size, 1)))
        return np.vstack(pts), np.concatenate(wts), np.vstack(nrm)

    def test_strain_equals_boundary_form(self, steel, rng):
        grid = VoxelGrid(rng.random((4, 4, 4)) < 0.5, (0.25,) * 3)
        mesh = CellMesh.for_grid(grid, 2, 2)
        u = rng.normal(size=mesh.total_dofs)
        x, w, n = self._face_quadrature(mesh, 3)
        disp, _, _ = evaluate_fields(mesh, grid, steel, u, x)
        T = np.einsum("g,gi,gj->ij", w, disp, n)
        T = 0.5 * (T + T.T) / mesh.volume
        ref = np.array([T[0, 0], T[1, 1], T[2, 2], 2 * T[1, 2], 2 * T[0, 2], 2 * T[0, 1]])
        assert np.abs(average_strain(mesh, u, mat=steel) - ref).max() <= 1e-8 * np.abs(ref).max()

    def test_stress_equals_boundary_traction_moment(self, steel):
        grid = laminate()
        rve = RVE(grid, steel, 1, 1)
        for j in (0, 2, 3):
            u, _, _ = solve_load_case(rve, "pbc", UNIT[j])
            x, w, n = self._face_quadrature(rve.mesh, 2)
            _, _, sig = evaluate_fields(rve.mesh, grid, steel, u, x)
            S = np.zeros((x.shape[0], 3, 3))
            for k, (a, b) in enumerate(oracles.VOIGT):
                S[:, a, b] = S[:, b, a] = sig[:, k]
            t = np.einsum("gij,gj->gi", S, n)
            M = np.einsum("g,gi,gj->ij", w, t, x) / rve.mesh.volume
            ref = np.array([M[0, 0], M[1, 1], M[2, 2], M[1, 2], M[0, 2], M[0, 1]])
            got = average_stress(rve.mesh, grid, steel, u, rve.table)
            assert np.abs(got - ref).max() <= 1e-8 * np.abs(ref).max()


# ---------------------------------------------------------------- effective tensors

class TestEffectiveTensor:
    @pytest.mark.parametrize("bc", ["pbc", "kubc", "subc"])
    def test_solid_is_isotropic(self, bc, steel):
        et = homogenize(VoxelGrid.solid((4, 4, 4), (0.25,) * 3), steel, bc, 2, 2)
        assert rel(et.C_star, C_ISO) <= 1e-8
        assert et.asymmetry <= 1e-6

    def test_void_scales_by_alpha(self, steel):
        et = homogenize(VoxelGrid.void((2, 2, 2), (0.5,) * 3), steel, "pbc", 1, 1)
        np.testing.assert_allclose(et.C_star, 1e-11 * C_ISO, rtol=1e-6, atol=1e-6 * 1e-11 * E)

    def test_laminate_closed_form(self, steel):
        et = homogenize(laminate(), steel, "pbc", 1, 1)
        ref = oracles.laminate_stiffness([C_ISO, 0.01 * C_ISO], [0.5, 0.5])
        assert rel(et.C_star, ref) <= 1e-4
        # the normal stiffness is the series (Reuss-type) one, visibly below the in-plane value
        assert et.C_star[2, 2] < 0.2 * et.C_star[0, 0]

    def test_laminate_ordering(self, steel):
        rve = RVE(laminate(), steel, 1, 1)
        Cs = {bc: effective_tensor(rve, bc).C_star for bc in ("kubc", "pbc", "subc")}
        assert bound_ordering_check(Cs["kubc"], Cs["pbc"], Cs["subc"]).passed
        assert not bound_ordering_check(Cs["pbc"], Cs["kubc"], Cs["subc"]).passed

    def test_symmetric_and_psd(self, steel, rng):
        grid = VoxelGrid(rng.random((4, 4, 4)) < 0.6, (0.25,) * 3)
        for bc in ("pbc", "kubc"):
            et = homogenize(grid, steel, bc, 2, 1)
            assert et.asymmetry <= 1e-6
            assert np.linalg.eigvalsh(et.C_star).min() >= -1e-8 * np.linalg.norm(et.C_star)

    def test_void_dof_dropping_is_negligible(self, steel):
        cell = voxelize_octet(OctetCellSpec(), 0.2)
        a = homogenize(cell, steel, "pbc", 2, 1, drop_void_dofs=True)
        b = homogenize(cell, steel, "pbc", 2, 1, drop_void_dofs=False)
        assert rel(a.C_star, b.C_star) <= 1e-6
        rve = RVE(cell, steel, 2, 1)
        assert rve.active.sum() < rve.mesh.total_dofs

    def test_no_dropping_for_soft_phase(self, steel):
        mesh = CellMesh((2, 2, 4), (2, 2, 2), 1, (0.25,) * 3)
        assert material_dofs(mesh, laminate()).all()

    def test_convergence_error_names_case(self, steel):
        grid = VoxelGrid.solid((2, 2, 2), (0.5,) * 3)
        rve = RVE(grid, steel, 1, 2)
        with pytest.raises(ConvergenceError) as exc:
            effective_tensor(rve, "pbc", SolverConfig(max_iterations=1, preconditioner="none"))
        assert exc.value.case == 0

    def test_unknown_bc(self, steel):
        with pytest.raises(ValueError):
            homogenize(VoxelGrid.solid((1, 1, 1), (1, 1, 1)), steel, "mixed")

    def test_report_dict(self, steel):
        d = homogenize(VoxelGrid.solid((2, 2, 2), (0.5,) * 3), steel, "pbc", 1, 1).to_dict()
        assert set(d) == {"bc", "C_star", "E_dir", "hill_mandel_residual", "solver"}
        assert len(d["solver"]) == 6

    def test_octet_ordering_and_symmetry(self, octet_tensors):
        C = {k: v.C_star for k, v in octet_tensors.items()}
        rep = bound_ordering_check(C["kubc"], C["pbc"], C["subc"], tol=1e-3)
        assert rep.passed
        Cp = C["pbc"]
        # cubic cell: shear/normal coupling and off-diagonal shear terms vanish
        assert np.abs(Cp[:3, 3:]).max() <= 1e-6 * Cp[0, 0]
        off = Cp[3:, 3:] - np.diag(np.diag(Cp[3:, 3:]))
        assert np.abs(off).max() <= 1e-6 * Cp[3, 3]
        Ex, Ey, Ez = octet_tensors["pbc"].E_dir
        assert abs(Ex - Ez) <= 1e-6 * Ez and abs(Ey - Ez) <= 1e-6 * Ez

    def test_octet_hill_mandel(self, octet_tensors):
        for bc in ("pbc", "kubc"):
            assert max(octet_tensors[bc].hill_mandel) <= 1e-6


# ---------------------------------------------------------------- Hill-Mandel

class TestHillMandel:
    def test_affine_solid(self, steel):
        grid = VoxelGrid.solid((2, 2, 2), (0.5,) * 3)
        mesh = CellMesh.for_grid(grid, 1, 2)
        u = mesh.affine_field(np.array([[1e-3, 2e-4, 0], [2e-4, 0, 0], [0, 0, -1e-3]]))
        assert hill_mandel_residual(mesh, grid, steel, u) <= 1e-12

    def test_zero_energy_sentinel(self, steel):
        grid = VoxelGrid.solid((1, 1, 1), (1, 1, 1))
        mesh = CellMesh.for_grid(grid, 1, 1)
        assert math.isnan(hill_mandel_residual(mesh, grid, steel, np.zeros(24)))

    def test_inadmissible_boundary_detected(self, steel):
        from voxcell.dns import TensileSetup, tensile_test

        bar = VoxelGrid.solid((4, 4, 16), (0.25,) * 3)
        clamped = tensile_test(bar, steel, TensileSetup(lateral="clamped"), 2, 2)
        free = tensile_test(bar, steel, TensileSetup(), 2, 2)
        assert hill_mandel_residual(clamped.mesh, bar, steel, clamped.solution) > 1e-3
        assert hill_mandel_residual(free.mesh, bar, steel, free.solution) <= 1e-10


# ---------------------------------------------------------------- directional moduli

class TestDirectionalModulus:
    def test_isotropic(self):
        np.testing.assert_allclose(directional_modulus(C_ISO), (E, E, E), rtol=1e-12)

    def test_diagonal(self):
        C = np.diag([1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
        np.testing.assert_allclose(directional_modulus(C), (1.0, 2.0, 3.0), rtol=1e-14)

    def test_printed_tensor_exact_inverse(self):
        C = [[22665, 4967, 14366, -328, -66, 328],
             [4967, 13396, 5968, -287, -65, -50],
             [14366, 5968, 23035, -7, 84, 300],
             [-328, -287, -7, 5351, -80, -9],
             [-66, -65, 84, -80, 6280, 5],
             [328, -50, 300, -9, 5, 13120]]
        expected = []
        for i in range(3):
            e = [0] * 6
            e[i] = 1
            expected.append(1.0 / float(oracles.rational_solve(C, e)[i]))
        got = directional_modulus(np.array(C, dtype=float))
        np.testing.assert_allclose(got, expected, rtol=1e-12)
        assert 13000 < expected[2] < 14500

    def test_singular(self):
        with pytest.raises(RankError):
            directional_modulus(np.zeros((6, 6)))


# ---------------------------------------------------------------- ensembles

class TestEnsemble:
    def test_identical_cells_zero_std(self, steel):
        cell = VoxelGrid(np.random.default_rng(2).random((2, 2, 2)) < 0.7, (0.5,) * 3, 1e-3)
        st = ensemble_homogenize([cell] * 4, steel, "pbc", 1, 1)
        assert st.n == 4 and np.all(st.std == 0.0)

    def test_single_cell(self, steel):
        cell = VoxelGrid.solid((2, 2, 2), (0.5,) * 3)
        st = ensemble_homogenize([cell], steel)
        assert st.single_sample and np.all(st.std == 0.0)
        np.testing.assert_allclose(st.mean, (E, E, E), rtol=1e-8)

    def test_failure_recorded_and_rest_kept(self, steel):
        good = VoxelGrid.solid((2, 2, 2), (0.5,) * 3)
        bad = VoxelGrid.solid((3, 3, 3), (0.5,) * 3)        # not divisible by 2 voxels per cell
        st = ensemble_homogenize([good, bad, good], steel, "pbc", 2, 1)
        assert st.n == 2 and [i for i, _ in st.failures] == [1]

    def test_empty(self):
        mean, std = ensemble_stats([])
        assert np.all(np.isnan(mean)) and np.all(np.isnan(std))
        st = ensemble_homogenize([], None)
        assert st.n == 0 and st.to_dict()["E_cells"] == []

    def test_sample_std(self):
        mean, std = ensemble_stats([[1.0, 2.0, 3.0], [3.0, 2.0, 1.0]])
        np.testing.assert_allclose(mean, [2, 2, 2])
        np.testing.assert_allclose(std, [math.sqrt(2), 0, math.sqrt(2)])

    def test_defect_ensemble_spread(self, steel):
        cell = voxelize_octet(OctetCellSpec(), 0.1)
        specimen = tile(cell, (2, 2, 10))
        spec = DefectSpec(0.5, (0.03, 0.06), 0.0, rng_seed=7, oversize_jitter_mm=0.15)
        perturbed = apply_defects(specimen, spec, "x", cell.dims)
        cells = extract_unit_cells(perturbed, cell.dims, 24)
        st = ensemble_homogenize(cells, steel, "pbc", 4, 1)
        assert st.n == 24 and not st.failures
        assert np.all(st.std > 0)
        assert np.all((0.05 <= st.cv) & (st.cv <= 0.20))
        assert isinstance(st, EnsembleStats)
