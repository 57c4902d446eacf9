"""Finite cell discretization on voxel grids."""

from .basis import ShapeBasis, gauss_rule
from .material import ElasticMaterial, isotropic_stiffness, von_mises
from .mesh import CellMesh

__all__ = ["CellMesh", "ElasticMaterial", "ShapeBasis", "gauss_rule", "isotropic_stiffness", "von_mises"]
