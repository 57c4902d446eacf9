"""Voxel volumes: RAW+JSON ingestion, threshold segmentation, porosity, unit-cell extraction.

Arrays are indexed ``[ix, iy, iz]``; on disk and in every scan order the x index
runs fastest.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import GeometryError, SizeMismatchError, VoxelFormatError

DEFAULT_ALPHA_VOID = 1e-11

DTYPES = {"u8": "u1", "u16": "u2", "f32": "f4"}
ENDIAN = {"little": "<", "big": ">"}
SIDECAR_KEYS = ("dims", "spacing_mm", "dtype", "endianness")


def _triple(values, kind=float, name="value"):
    t = tuple(kind(v) for v in values)
    if len(t) != 3:
        raise ValueError(f"{name} needs three entries, got {len(t)}")
    return t


@dataclass(frozen=True)
class GrayscaleVolume:
    values: np.ndarray
    spacing: tuple[float, float, float]

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 3 or min(values.shape) < 1:
            raise ValueError(f"volume must be 3D with non-empty axes, got shape {values.shape}")
        spacing = _triple(self.spacing, name="spacing")
        if min(spacing) <= 0:
            raise ValueError(f"spacing must be positive, got {spacing}")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "spacing", spacing)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(n) for n in self.values.shape)


@dataclass(frozen=True)
class SegmentationConfig:
    threshold: float
    inclusive: bool = True

    def __post_init__(self):
        if not np.isfinite(self.threshold):
            raise ValueError("threshold must be finite")


@dataclass(frozen=True)
class VoxelGrid:
    """Binary indicator field on a regular grid.

    ``material`` is a boolean mask; ``alpha`` is 1 on material and
    ``alpha_void`` elsewhere.
    """

    material: np.ndarray
    spacing: tuple[float, float, float]
    alpha_void: float = DEFAULT_ALPHA_VOID
    _alpha: np.ndarray | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        mask = np.array(self.material, dtype=bool)
        if mask.ndim != 3 or min(mask.shape) < 1:
            raise ValueError(f"grid must be 3D with non-empty axes, got shape {mask.shape}")
        spacing = _triple(self.spacing, name="spacing")
        if min(spacing) <= 0:
            raise ValueError(f"spacing must be positive, got {spacing}")
        if not 0.0 < self.alpha_void < 1.0:
            raise ValueError(f"alpha_void must lie in (0, 1), got {self.alpha_void}")
        mask.flags.writeable = False
        object.__setattr__(self, "material", mask)
        object.__setattr__(self, "spacing", spacing)

    @classmethod
    def solid(cls, dims, spacing, alpha_void=DEFAULT_ALPHA_VOID) -> "VoxelGrid":
        return cls(np.ones(_triple(dims, int, "dims"), dtype=bool), spacing, alpha_void)

    @classmethod
    def void(cls, dims, spacing, alpha_void=DEFAULT_ALPHA_VOID) -> "VoxelGrid":
        return cls(np.zeros(_triple(dims, int, "dims"), dtype=bool), spacing, alpha_void)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(n) for n in self.material.shape)

    @property
    def alpha(self) -> np.ndarray:
        if self._alpha is None:
            a = np.where(self.material, 1.0, self.alpha_void)
            a.flags.writeable = False
            object.__setattr__(self, "_alpha", a)
        return self._alpha

    @property
    def extent(self) -> tuple[float, float, float]:
        return tuple(n * s for n, s in zip(self.dims, self.spacing))

    @property
    def volume(self) -> float:
        return float(np.prod(self.extent))

    def with_alpha_void(self, alpha_void: float) -> "VoxelGrid":
        return VoxelGrid(self.material, self.spacing, alpha_void)

    def to_grayscale(self, low: float = 0.0, high: float = 1.0, dtype=np.float32) -> GrayscaleVolume:
        return GrayscaleVolume(np.where(self.material, high, low).astype(dtype), self.spacing)

    def __eq__(self, other):
        if not isinstance(other, VoxelGrid):
            return NotImplemented
        return (
            self.spacing == other.spacing
            and self.alpha_void == other.alpha_void
            and np.array_equal(self.material, other.material)
        )

    __hash__ = None


def read_sidecar(path) -> dict:
    path = Path(path)
    try:
        meta = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise VoxelFormatError(f"{path}: invalid JSON sidecar ({exc})") from exc
    return validate_sidecar(meta, source=path)


def validate_sidecar(meta: dict, source="sidecar") -> dict:
    missing = [k for k in SIDECAR_KEYS if k not in meta]
    unknown = sorted(set(meta) - set(SIDECAR_KEYS))
    if missing or unknown:
        raise VoxelFormatError(f"{source}: missing keys {missing}, unknown keys {unknown}")
    if meta["dtype"] not in DTYPES:
        raise VoxelFormatError(f"{source}: unknown scalar type {meta['dtype']!r}")
    if meta["endianness"] not in ENDIAN:
        raise VoxelFormatError(f"{source}: unknown endianness {meta['endianness']!r}")
    dims = _triple(meta["dims"], int, "dims")
    spacing = _triple(meta["spacing_mm"], float, "spacing_mm")
    if min(dims) < 1 or min(spacing) <= 0:
        raise VoxelFormatError(f"{source}: dims must be >= 1 and spacing > 0")
    return {"dims": list(dims), "spacing_mm": list(spacing),
            "dtype": meta["dtype"], "endianness": meta["endianness"]}


def _split_paths(path) -> tuple[Path, Path]:
    """Accept either the payload path or its ``.json`` sidecar."""
    path = Path(path)
    if path.suffix == ".json":
        return path.with_suffix(""), path
    return path, path.with_name(path.name + ".json")


def load_raw_volume(path, meta: dict | None = None) -> GrayscaleVolume:
    raw_path, sidecar_path = _split_paths(path)
    meta = read_sidecar(sidecar_path) if meta is None else validate_sidecar(meta)
    dims = tuple(meta["dims"])
    dtype = np.dtype(ENDIAN[meta["endianness"]] + DTYPES[meta["dtype"]])
    expected = int(np.prod(dims)) * dtype.itemsize
    actual = raw_path.stat().st_size
    if actual != expected:
        raise SizeMismatchError(raw_path, expected, actual)
    flat = np.fromfile(raw_path, dtype=dtype)
    values = flat.reshape(dims, order="F").astype(dtype.newbyteorder("="))
    return GrayscaleVolume(values, tuple(meta["spacing_mm"]))


def save_raw_volume(vol: GrayscaleVolume, path, dtype: str = "u16", endianness: str = "little") -> Path:
    """Write ``vol`` as RAW payload plus JSON sidecar; returns the sidecar path."""
    if dtype not in DTYPES:
        raise VoxelFormatError(f"unknown scalar type {dtype!r}")
    if endianness not in ENDIAN:
        raise VoxelFormatError(f"unknown endianness {endianness!r}")
    raw_path, sidecar_path = _split_paths(path)
    np_dtype = np.dtype(ENDIAN[endianness] + DTYPES[dtype])
    values = np.asarray(vol.values)
    if np_dtype.kind == "u":
        info = np.iinfo(np_dtype)
        if values.min() < info.min or values.max() > info.max:
            raise VoxelFormatError(f"values out of range for {dtype}")
    raw_path.parent.mkdir(parents=True, exist_ok=True)
    values.astype(np_dtype).ravel(order="F").tofile(raw_path)
    meta = {"dims": list(vol.dims), "spacing_mm": list(vol.spacing),
            "dtype": dtype, "endianness": endianness}
    sidecar_path.write_text(json.dumps(meta, indent=2) + "\n")
    return sidecar_path


def save_grid(grid: VoxelGrid, path) -> Path:
    """Store a segmented grid as a u8 mask (material = 1)."""
    return save_raw_volume(grid.to_grayscale(0, 1, np.uint8), path, dtype="u8")


def threshold_segment(vol: GrayscaleVolume, cfg: SegmentationConfig,
                      alpha_void: float = DEFAULT_ALPHA_VOID) -> VoxelGrid:
    values = vol.values
    mask = values >= cfg.threshold if cfg.inclusive else values > cfg.threshold
    return VoxelGrid(mask, vol.spacing, alpha_void)


def porosity(grid: VoxelGrid) -> float:
    """Void volume fraction ``1 - V_material / V``."""
    n_material = int(np.count_nonzero(grid.material))
    return 1.0 - n_material / grid.material.size


def extract_unit_cells(grid: VoxelGrid, cell_size_voxels, count: int) -> list[VoxelGrid]:
    """First ``count`` whole cells of the grid, cell index x-fastest."""
    cell = _triple(cell_size_voxels, int, "cell_size_voxels")
    if min(cell) < 1:
        raise GeometryError(f"cell size must be positive, got {cell}")
    if any(c > n for c, n in zip(cell, grid.dims)):
        raise GeometryError(f"cell {cell} does not fit in grid {grid.dims}")
    ncell = [n // c for n, c in zip(grid.dims, cell)]
    available = int(np.prod(ncell))
    if count < 0 or count > available:
        raise GeometryError(f"requested {count} cells, only {available} available")
    cx, cy, cz = cell
    out = []
    for k in range(count):
        i = k % ncell[0]
        j = (k // ncell[0]) % ncell[1]
        l = k // (ncell[0] * ncell[1])
        block = grid.material[i * cx:(i + 1) * cx, j * cy:(j + 1) * cy, l * cz:(l + 1) * cz]
        out.append(VoxelGrid(block, grid.spacing, grid.alpha_void))
    return out


def cell_origins(grid: VoxelGrid, cell_size_voxels, count: int) -> list[tuple[int, int, int]]:
    """Voxel index of the lower corner of each cell returned by :func:`extract_unit_cells`."""
    cell = _triple(cell_size_voxels, int, "cell_size_voxels")
    ncell = [n // c for n, c in zip(grid.dims, cell)]
    return [
        ((k % ncell[0]) * cell[0], ((k // ncell[0]) % ncell[1]) * cell[1],
         (k // (ncell[0] * ncell[1])) * cell[2])
        for k in range(count)
    ]
