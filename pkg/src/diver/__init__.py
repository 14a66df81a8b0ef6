"""diver: deterministic-integration CPU volume renderer for voxel feature fields."""

__version__ = "0.1.0"
