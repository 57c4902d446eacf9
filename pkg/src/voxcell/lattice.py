"""Parametric octet-truss cells, voxelization, tiling and synthetic print defects."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import GeometryError
from .voxel_model import DEFAULT_ALPHA_VOID, VoxelGrid

AXES = {"x": 0, "y": 1, "z": 2}
DEFAULT_MAX_VOXELS = 2**30
STRUT_RULES = ("cell-face", "build-plane")


@dataclass(frozen=True)
class OctetCellSpec:
    """Octet-truss cell; lengths in mm.

    ``strut_rule`` decides which struts are "horizontal" (``d_horizontal``):

    * ``"cell-face"``: the 12 face diagonals lying on the cell faces; the 12
      octahedron edges are inclined.  Independent of ``build_axis``.
    * ``"build-plane"``: struts whose axis lies in a plane normal to
      ``build_axis``.

    Every other strut gets ``d_inclined``.
    """

    cell_size: float = 4.0
    d_horizontal: float = 0.8
    d_inclined: float = 0.4
    build_axis: str = "x"
    strut_rule: str = "cell-face"

    def __post_init__(self):
        if self.build_axis not in AXES:
            raise ValueError(f"build_axis must be one of x|y|z, got {self.build_axis!r}")
        if self.strut_rule not in STRUT_RULES:
            raise ValueError(f"strut_rule must be one of {STRUT_RULES}, got {self.strut_rule!r}")
        if not self.cell_size > 0:
            raise ValueError("cell_size must be positive")
        for name in ("d_horizontal", "d_inclined"):
            d = getattr(self, name)
            if d < 0 or d >= self.cell_size:
                raise ValueError(f"{name}={d} must lie in [0, cell_size)")

    def grown(self, increment: float) -> "OctetCellSpec":
        return OctetCellSpec(self.cell_size, self.d_horizontal + increment,
                             self.d_inclined + increment, self.build_axis, self.strut_rule)


@dataclass(frozen=True)
class Capsule:
    """Segment p0-p1 swept by a ball of ``radius`` (a sphere when p0 == p1)."""

    p0: tuple[float, float, float]
    p1: tuple[float, float, float]
    radius: float
    flat_ends: bool = False

    @classmethod
    def sphere(cls, center, radius) -> "Capsule":
        c = tuple(float(v) for v in center)
        return cls(c, c, float(radius))

    @property
    def lower(self) -> np.ndarray:
        return np.minimum(self.p0, self.p1) - self.radius

    @property
    def upper(self) -> np.ndarray:
        return np.maximum(self.p0, self.p1) + self.radius

    def contains(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        a = np.asarray(self.p0)
        d = np.asarray(self.p1) - a
        dd = float(d @ d)
        rel = x - a
        t = rel @ d / dd if dd > 0 else np.zeros(x.shape[:-1])
        inside_axis = (t >= 0.0) & (t <= 1.0) if self.flat_ends else True
        tc = np.clip(t, 0.0, 1.0)
        dist2 = np.sum((rel - tc[..., None] * d) ** 2, axis=-1)
        return (dist2 < self.radius**2) & inside_axis


@dataclass(frozen=True)
class ImplicitSolid:
    primitives: tuple[Capsule, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "primitives", tuple(self.primitives))

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1], dtype=bool)
        for prim in self.primitives:
            out |= prim.contains(x)
        return out


def octet_edges(a: float) -> list[tuple[np.ndarray, np.ndarray]]:
    """The 36 strut axes of an octet-truss cell [0, a]^3.

    24 corner-to-face-centre half diagonals (two per face diagonal) and the 12
    edges of the octahedron joining adjacent face centres.
    """
    h = 0.5 * a
    faces = []
    for axis in range(3):
        for side in (0.0, a):
            c = np.full(3, h)
            c[axis] = side
            faces.append((axis, c))
    edges = []
    for axis, c in faces:
        others = [d for d in range(3) if d != axis]
        for u, v in itertools.product((0.0, a), repeat=2):
            corner = c.copy()
            corner[others[0]] = u
            corner[others[1]] = v
            edges.append((corner, c.copy()))
    for (ax1, c1), (ax2, c2) in itertools.combinations(faces, 2):
        if ax1 != ax2:
            edges.append((c1.copy(), c2.copy()))
    return edges


def octet_solid(spec: OctetCellSpec, periodic: bool = True) -> ImplicitSolid:
    """Union of capsules on the octet edge set.

    With ``periodic`` the struts of the 26 neighbouring cells that reach into
    [0, a]^3 are included too, so the voxelized cell tiles seamlessly.
    """
    a = spec.cell_size
    b = AXES[spec.build_axis]
    base = []
    for i, (p0, p1) in enumerate(octet_edges(a)):
        if spec.strut_rule == "cell-face":
            horizontal = i < 24
        else:
            horizontal = abs(p1[b] - p0[b]) < 1e-12 * a
        r = 0.5 * (spec.d_horizontal if horizontal else spec.d_inclined)
        if r > 0:
            base.append((p0, p1, r))
    shifts = itertools.product((-a, 0.0, a), repeat=3) if periodic else [(0.0, 0.0, 0.0)]
    prims = []
    for s in shifts:
        s = np.asarray(s)
        for p0, p1, r in base:
            q0, q1 = p0 + s, p1 + s
            lo = np.minimum(q0, q1) - r
            hi = np.maximum(q0, q1) + r
            if np.all(hi > 0.0) and np.all(lo < a):
                prims.append(Capsule(tuple(q0), tuple(q1), r))
    return ImplicitSolid(_dedupe(prims))


def _dedupe(prims):
    seen, out = set(), []
    for p in prims:
        ends = tuple(sorted((tuple(np.round(p.p0, 12)), tuple(np.round(p.p1, 12)))))
        key = (ends, round(p.radius, 12), p.flat_ends)
        if key not in seen:
            seen.add(key)
            out.append(p)
    return out


def _sample_axis(n: int, spacing: float, k: int, origin: float) -> np.ndarray:
    i = np.arange(n * k)
    return origin + (i // k + ((i % k) + 0.5) / k) * spacing


def _mark_capsule(inside: np.ndarray, coords, prim: Capsule) -> None:
    """Set ``inside`` on the sample lattice for one primitive, slice by slice."""
    p0 = np.asarray(prim.p0, dtype=float)
    d = np.asarray(prim.p1, dtype=float) - p0
    r = prim.radius
    ax = int(np.argmax(np.abs(d))) if np.any(d) else 0
    o1, o2 = [q for q in range(3) if q != ax]
    c = coords[ax]
    lo_ax, hi_ax = np.searchsorted(c, prim.lower[ax]), np.searchsorted(c, prim.upper[ax], side="right")
    for s in range(lo_ax, hi_ax):
        z0 = c[s]
        if d[ax] != 0.0:
            t = np.sort(np.clip([(z0 - r - p0[ax]) / d[ax], (z0 + r - p0[ax]) / d[ax]], 0.0, 1.0))
        else:
            t = np.array([0.0, 1.0])
        seg = p0 + t[:, None] * d
        bounds = []
        for q in (o1, o2):
            lo = np.searchsorted(coords[q], seg[:, q].min() - r)
            hi = np.searchsorted(coords[q], seg[:, q].max() + r, side="right")
            bounds.append((lo, hi))
        (l1, h1), (l2, h2) = bounds
        if h1 <= l1 or h2 <= l2:
            continue
        pts = np.empty((h1 - l1, h2 - l2, 3))
        pts[..., ax] = z0
        pts[..., o1] = coords[o1][l1:h1, None]
        pts[..., o2] = coords[o2][None, l2:h2]
        hit = prim.contains(pts)
        idx = [slice(None)] * 3
        idx[ax] = s
        idx[o1] = slice(l1, h1)
        idx[o2] = slice(l2, h2)
        inside[tuple(idx)] |= hit


def voxelize(solid: ImplicitSolid, dims, spacing, supersample: int = 2, origin=(0.0, 0.0, 0.0),
             alpha_void: float = DEFAULT_ALPHA_VOID) -> VoxelGrid:
    """Majority vote over k^3 equispaced samples per voxel (k = 1: voxel centre)."""
    k = int(supersample)
    if k < 1:
        raise ValueError("supersample must be >= 1")
    dims = tuple(int(n) for n in dims)
    spacing = tuple(float(s) for s in np.broadcast_to(spacing, (3,)))
    coords = [_sample_axis(dims[d], spacing[d], k, origin[d]) for d in range(3)]
    inside = np.zeros(tuple(n * k for n in dims), dtype=bool)
    prims = getattr(solid, "primitives", ())
    if isinstance(solid, ImplicitSolid) and all(isinstance(p, Capsule) for p in prims):
        for prim in prims:
            _mark_capsule(inside, coords, prim)
    else:
        # any other membership test: evaluate slab by slab
        Y, Z = np.meshgrid(coords[1], coords[2], indexing="ij")
        for i, x in enumerate(coords[0]):
            pts = np.stack([np.full_like(Y, x), Y, Z], axis=-1)
            inside[i] = np.asarray(solid.contains(pts), dtype=bool)
    counts = inside.reshape(dims[0], k, dims[1], k, dims[2], k).sum(axis=(1, 3, 5))
    return VoxelGrid(2 * counts >= k**3, spacing, alpha_void)


def voxelize_octet(spec: OctetCellSpec, spacing_mm: float, supersample: int = 2,
                   alpha_void: float = DEFAULT_ALPHA_VOID) -> VoxelGrid:
    n = spec.cell_size / spacing_mm
    if abs(n - round(n)) > 1e-6:
        raise GeometryError(f"cell size {spec.cell_size} mm is not a whole number of {spacing_mm} mm voxels")
    n = int(round(n))
    return voxelize(octet_solid(spec), (n, n, n), spacing_mm, supersample, alpha_void=alpha_void)


def tile(cell: VoxelGrid, reps, max_voxels: int = DEFAULT_MAX_VOXELS) -> VoxelGrid:
    reps = tuple(int(r) for r in reps)
    if len(reps) != 3 or min(reps) < 1:
        raise ValueError(f"reps must be three positive integers, got {reps}")
    total = int(np.prod(cell.dims)) * int(np.prod(reps))
    if total > max_voxels:
        raise GeometryError(f"tiling would create {total} voxels, limit is {max_voxels}")
    return VoxelGrid(np.tile(cell.material, reps), cell.spacing, cell.alpha_void)


@dataclass(frozen=True)
class DefectSpec:
    """Synthetic powder adhesion on downskin surfaces.

    ``powder_blob_density`` is the expected number of blobs per mm^2 of
    downskin area, ``blob_radius_mm`` the (min, max) of a uniform radius
    draw, ``strut_oversize_mm`` a thickening grown from downskin faces
    against the build direction.  ``oversize_jitter_mm`` adds a uniform
    random extra thickening drawn once per unit cell (melt-pool scatter);
    it needs the cell size passed to :func:`apply_defects`.
    """

    powder_blob_density: float = 0.0
    blob_radius_mm: tuple[float, float] = (0.03, 0.06)
    strut_oversize_mm: float = 0.0
    rng_seed: int = 0
    oversize_jitter_mm: float = 0.0

    def __post_init__(self):
        lo, hi = self.blob_radius_mm
        values = (self.powder_blob_density, lo, hi, self.strut_oversize_mm, self.oversize_jitter_mm)
        if min(values) < 0 or hi < lo:
            raise ValueError("defect parameters must be non-negative with rmin <= rmax")
        object.__setattr__(self, "blob_radius_mm", (float(lo), float(hi)))

    @classmethod
    def from_dict(cls, d: dict) -> "DefectSpec":
        known = {"powder_blob_density", "blob_radius_mm", "strut_oversize_mm", "rng_seed",
                 "oversize_jitter_mm"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown defect keys: {sorted(unknown)}")
        d = dict(d)
        if "blob_radius_mm" in d:
            d["blob_radius_mm"] = tuple(d["blob_radius_mm"])
        return cls(**d)


def downskin_mask(material: np.ndarray, build_axis: int) -> np.ndarray:
    """Material voxels whose neighbour against the build direction is void."""
    below = np.zeros_like(material)
    src = [slice(None)] * 3
    dst = [slice(None)] * 3
    src[build_axis] = slice(0, -1)
    dst[build_axis] = slice(1, None)
    below[tuple(dst)] = material[tuple(src)]
    return material & ~below


def _growth_depth(grid: VoxelGrid, spec: DefectSpec, b: int, rng, cell_voxels) -> np.ndarray | int:
    """Downskin growth in voxels: a constant, or one draw per unit cell block."""
    h = grid.spacing[b]
    base = spec.strut_oversize_mm
    if spec.oversize_jitter_mm == 0.0:
        return int(round(base / h))
    if cell_voxels is None:
        raise ValueError("oversize_jitter_mm needs the unit-cell size in voxels")
    cv = tuple(int(c) for c in np.broadcast_to(cell_voxels, (3,)))
    counts = [-(-n // c) for n, c in zip(grid.dims, cv)]
    draws = base + rng.uniform(0.0, spec.oversize_jitter_mm, size=counts[::-1]).T   # x-fastest draw order
    depth = np.rint(draws / h).astype(np.int64)
    for d in range(3):
        depth = np.repeat(depth, cv[d], axis=d)
    return depth[: grid.dims[0], : grid.dims[1], : grid.dims[2]]


def apply_defects(grid: VoxelGrid, spec: DefectSpec, build_axis: str = "x", cell_voxels=None) -> VoxelGrid:
    """Add downskin thickening and attached powder blobs; never removes material."""
    b = AXES[build_axis]
    mat = grid.material.copy()
    s = np.asarray(grid.spacing)
    down = downskin_mask(grid.material, b)
    rng = np.random.Generator(np.random.Philox(key=int(spec.rng_seed)))

    depth = _growth_depth(grid, spec, b, rng, cell_voxels)
    for shift in range(1, int(np.max(depth)) + 1):
        src = [slice(None)] * 3
        dst = [slice(None)] * 3
        src[b] = slice(shift, None)
        dst[b] = slice(0, -shift)
        grow = down[tuple(src)]
        if not np.isscalar(depth):
            grow = grow & (depth[tuple(src)] >= shift)
        mat[tuple(dst)] |= grow

    face_area = float(np.prod([s[d] for d in range(3) if d != b]))
    area = np.count_nonzero(down) * face_area
    n_blobs = int(rng.poisson(spec.powder_blob_density * area)) if area > 0 else 0
    if n_blobs:
        sites = np.argwhere(down)
        pick = sites[rng.integers(0, len(sites), size=n_blobs)]
        radii = rng.uniform(spec.blob_radius_mm[0], spec.blob_radius_mm[1], size=n_blobs)
        centers = (pick + 0.5) * s
        centers[:, b] -= 0.5 * s[b] + radii * 0.5
        coords = [(np.arange(n) + 0.5) * s[d] for d, n in enumerate(grid.dims)]
        for c, r in zip(centers, radii):
            _mark_capsule(mat, coords, Capsule.sphere(c, r))
    return VoxelGrid(mat, grid.spacing, grid.alpha_void)
