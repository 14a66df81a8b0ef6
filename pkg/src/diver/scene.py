"""Scene: feature grid + decoder + grid-to-world transform.

The grid-to-world transform is origin (world position of vertex (0,0,0))
plus a uniform voxel edge length.  Scenes are immutable during rendering;
edits produce new scenes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .decoder import DecoderWeights, FusedDecoderWeights, fuse, premultiply_features
from .grid import FeatureGrid, GridDims, build_octree


@dataclass
class Scene:
    grid: FeatureGrid
    decoder: DecoderWeights | FusedDecoderWeights
    origin: np.ndarray = field(default_factory=lambda: np.zeros(3))
    voxel_size: float = 1.0
    # feature vectors are stored raw and squashed by tanh on use (the mode
    # that allows uint8 storage); plain scenes use features directly
    tanh_mode: bool = False
    # per-voxel max blended alpha from training views; in-memory only
    vis_alpha: np.ndarray | None = None
    name: str = ""

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64)
        if self.voxel_size <= 0:
            raise ValueError("voxel_size must be positive")

    @property
    def dims(self) -> GridDims:
        return self.grid.dims

    @property
    def is_fused(self) -> bool:
        return isinstance(self.decoder, FusedDecoderWeights)

    def effective_pool(self) -> np.ndarray:
        if self.tanh_mode:
            return np.tanh(self.grid.feature_pool)
        return self.grid.feature_pool

    def world_aabb(self) -> tuple[np.ndarray, np.ndarray]:
        lo = self.origin
        hi = self.origin + self.voxel_size * np.array([self.dims.nx, self.dims.ny, self.dims.nz])
        return lo, hi

    def with_grid(self, grid: FeatureGrid) -> "Scene":
        return Scene(grid, self.decoder, self.origin.copy(), self.voxel_size,
                     self.tanh_mode, None, self.name)


def premultiply_scene(scene: Scene) -> Scene:
    """Fold the decoder's first layer into the feature pool.

    The result renders through the fused decoder; tanh squashing (if any) is
    materialized first because the fold is only linear in the effective
    features.
    """
    if scene.is_fused:
        raise ValueError("scene is already pre-multiplied")
    fw = fuse(scene.decoder)
    grid = scene.grid
    if scene.tanh_mode:
        grid = FeatureGrid(grid.dims, grid.feature_dim, grid.vertex_index.copy(),
                           np.tanh(grid.feature_pool), grid.occupancy.copy())
    grid = premultiply_features(grid, fw.w1, fw.b1)
    return Scene(grid, fw, scene.origin.copy(), scene.voxel_size, False,
                 scene.vis_alpha, scene.name)


@dataclass
class CompositeScene:
    """Blend of several scenes on a shared voxel lattice.

    Every source has been re-homed onto the composite lattice (same dims);
    source_of holds the winning source index per occupied voxel, -1 where
    empty.  Rendering dispatches each ray interval to its source's features
    and decoder.
    """

    dims: GridDims
    occupancy: np.ndarray       # (nz, ny, nx) bool, union
    source_of: np.ndarray       # (nz, ny, nx) int16, -1 = empty
    sources: list               # list[Scene], grids re-homed to `dims`
    origin: np.ndarray = field(default_factory=lambda: np.zeros(3))
    voxel_size: float = 1.0
    name: str = ""

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64)

    @property
    def is_fused(self) -> bool:
        return False

    def world_aabb(self) -> tuple[np.ndarray, np.ndarray]:
        lo = self.origin
        hi = self.origin + self.voxel_size * np.array([self.dims.nx, self.dims.ny, self.dims.nz])
        return lo, hi


def scene_octree(scene):
    """Occupancy pyramid for a Scene or CompositeScene."""
    occ = scene.occupancy if isinstance(scene, CompositeScene) else scene.grid.occupancy
    return build_octree(occ)


def scene_occupancy(scene) -> np.ndarray:
    return scene.occupancy if isinstance(scene, CompositeScene) else scene.grid.occupancy
