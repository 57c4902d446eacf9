"""Voxel-native finite cell analysis of lattice structures."""

from .fcm.material import ElasticMaterial
from .voxel_model import GrayscaleVolume, SegmentationConfig, VoxelGrid

__version__ = "0.1.0"

__all__ = ["ElasticMaterial", "GrayscaleVolume", "SegmentationConfig", "VoxelGrid", "__version__"]
