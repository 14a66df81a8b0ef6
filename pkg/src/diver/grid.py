"""Sparse voxel feature grid: vertex feature pool, occupancy, octree pyramid.

Features live on voxel vertices.  A vertex is active iff at least one of its
incident voxels is occupied; active vertices own a row in a 1D feature pool
and the dense vertex index array maps lattice positions to pool rows.

Layout conventions (these fix the file format):
  * arrays are indexed [z, y, x]; the linear vertex index is
    i + (nx+1)*(j + (ny+1)*k) for vertex (i,j,k), i.e. x-fastest C order;
  * the voxel occupancy bitmask uses the same x-fastest order packed into
    little-endian 64-bit words;
  * the feature pool lists active vertices in increasing linear index order
    (canonical scan order), so pool layout is reproducible from occupancy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .integrator import CORNER_OFFSETS

#: Marker for inactive vertices in the dense index array (keeps it 4 bytes/vertex).
SENTINEL = np.uint32(0xFFFFFFFF)


@dataclass(frozen=True)
class GridDims:
    nx: int
    ny: int
    nz: int

    def __post_init__(self):
        if min(self.nx, self.ny, self.nz) < 1:
            raise ValueError(f"voxel counts must be >= 1, got {self}")

    @property
    def n_voxels(self) -> int:
        return self.nx * self.ny * self.nz

    @property
    def vertex_shape(self) -> tuple[int, int, int]:
        return (self.nz + 1, self.ny + 1, self.nx + 1)

    @property
    def voxel_shape(self) -> tuple[int, int, int]:
        return (self.nz, self.ny, self.nx)


@dataclass
class FeatureGrid:
    dims: GridDims
    feature_dim: int
    vertex_index: np.ndarray  # (nz+1, ny+1, nx+1) uint32, SENTINEL = inactive
    feature_pool: np.ndarray  # (n_active, feature_dim)
    occupancy: np.ndarray     # (nz, ny, nx) bool

    @property
    def n_active_vertices(self) -> int:
        return self.feature_pool.shape[0]

    @property
    def n_occupied(self) -> int:
        return int(self.occupancy.sum())

    def copy(self) -> "FeatureGrid":
        return FeatureGrid(
            self.dims,
            self.feature_dim,
            self.vertex_index.copy(),
            self.feature_pool.copy(),
            self.occupancy.copy(),
        )


@dataclass
class OctreePyramid:
    """Max-pooled occupancy hierarchy, level 0 at full resolution."""

    levels: list = field(default_factory=list)

    @property
    def n_levels(self) -> int:
        return len(self.levels)


def vertex_activity(occupancy: np.ndarray) -> np.ndarray:
    """Active-vertex mask for an occupancy array; (nz,ny,nx) -> (nz+1,ny+1,nx+1)."""
    nz, ny, nx = occupancy.shape
    active = np.zeros((nz + 1, ny + 1, nx + 1), dtype=bool)
    for dz, dy, dx in ((a, b, c) for a in (0, 1) for b in (0, 1) for c in (0, 1)):
        active[dz : nz + dz, dy : ny + dy, dx : nx + dx] |= occupancy
    return active


def index_from_occupancy(occupancy: np.ndarray) -> tuple[np.ndarray, int]:
    """Canonical vertex index array: pool rows assigned in scan order."""
    active = vertex_activity(occupancy)
    vertex_index = np.full(active.shape, SENTINEL, dtype=np.uint32)
    n_active = int(active.sum())
    vertex_index[active] = np.arange(n_active, dtype=np.uint32)
    return vertex_index, n_active


def build_grid(dims: GridDims, feature_dim: int, occupied, init=None,
               dtype=np.float32) -> FeatureGrid:
    """Assemble a grid from occupied voxel coordinates.

    occupied: iterable of (x, y, z) voxel coords (no duplicates) or a boolean
    occupancy array of shape (nz, ny, nx).  init: None for zeros, a scalar
    std for seeded normal noise is not done here -- pass a callable
    (n_active, feature_dim) -> array, or an array of that shape.
    """
    if feature_dim < 1:
        raise ValueError("feature_dim must be >= 1")
    occ = np.zeros(dims.voxel_shape, dtype=bool)
    if isinstance(occupied, np.ndarray) and occupied.dtype == bool:
        if occupied.shape != dims.voxel_shape:
            raise ValueError(f"occupancy shape {occupied.shape} != {dims.voxel_shape}")
        occ[:] = occupied
    else:
        coords = np.asarray(list(occupied), dtype=np.int64).reshape(-1, 3)
        if coords.size:
            if np.any(coords < 0) or np.any(coords >= [dims.nx, dims.ny, dims.nz]):
                raise ValueError("occupied voxel coordinate out of range")
            if len(np.unique(coords, axis=0)) != len(coords):
                raise ValueError("duplicate occupied voxel coordinates")
            occ[coords[:, 2], coords[:, 1], coords[:, 0]] = True

    vertex_index, n_active = index_from_occupancy(occ)
    if init is None:
        pool = np.zeros((n_active, feature_dim), dtype=dtype)
    elif callable(init):
        pool = np.asarray(init(n_active, feature_dim), dtype=dtype)
    else:
        pool = np.asarray(init, dtype=dtype)
    if pool.shape != (n_active, feature_dim):
        raise ValueError(f"init produced shape {pool.shape}, expected {(n_active, feature_dim)}")
    return FeatureGrid(dims, feature_dim, vertex_index, pool, occ)


def corner_pool_indices(grid: FeatureGrid, voxels: np.ndarray) -> np.ndarray:
    """Pool rows of the 8 corners for voxels (..., 3) xyz -> (..., 8) int64.

    Corner order matches the trilinear basis: slot k sits at
    voxel + CORNER_OFFSETS[k].
    """
    voxels = np.asarray(voxels, dtype=np.int64)
    corners = voxels[..., None, :] + CORNER_OFFSETS  # (..., 8, 3) xyz
    idx = grid.vertex_index[corners[..., 2], corners[..., 1], corners[..., 0]]
    if np.any(idx == SENTINEL):
        raise ValueError("voxel has an inactive corner vertex; is it occupied?")
    return idx.astype(np.int64)


def corner_features(grid: FeatureGrid, voxel) -> np.ndarray:
    """The 8 corner feature vectors of one occupied voxel, basis-slot order."""
    voxel = np.asarray(voxel, dtype=np.int64)
    if not grid.occupancy[voxel[2], voxel[1], voxel[0]]:
        raise ValueError(f"voxel {tuple(voxel)} is not occupied")
    return grid.feature_pool[corner_pool_indices(grid, voxel)]


def _max_pool2(level: np.ndarray) -> np.ndarray:
    """Halve each axis (ceil) by OR-pooling 2x2x2 blocks."""
    nz, ny, nx = level.shape
    pz, py, px = (nz + 1) // 2 * 2, (ny + 1) // 2 * 2, (nx + 1) // 2 * 2
    padded = np.zeros((pz, py, px), dtype=bool)
    padded[:nz, :ny, :nx] = level
    return padded.reshape(pz // 2, 2, py // 2, 2, px // 2, 2).any(axis=(1, 3, 5))


def build_octree(grid_or_occ) -> OctreePyramid:
    """Occupancy pyramid: level L+1 cells are the OR of their child blocks."""
    occ = grid_or_occ.occupancy if isinstance(grid_or_occ, FeatureGrid) else np.asarray(grid_or_occ, dtype=bool)
    n_levels = int(np.ceil(np.log2(max(occ.shape)))) + 1 if max(occ.shape) > 1 else 1
    levels = [occ.copy()]
    for _ in range(n_levels - 1):
        levels.append(_max_pool2(levels[-1]))
    return OctreePyramid(levels)


def cull(grid: FeatureGrid, max_blended_alpha: np.ndarray, tau_vis: float) -> FeatureGrid:
    """Drop voxels whose maximum blended alpha over training views is < tau_vis.

    Surviving pool rows keep their relative order, so serialization of a
    culled grid is deterministic.
    """
    if not 0.0 <= tau_vis < 1.0:
        raise ValueError(f"tau_vis must be in [0, 1), got {tau_vis}")
    max_blended_alpha = np.asarray(max_blended_alpha)
    if max_blended_alpha.shape != grid.dims.voxel_shape:
        raise ValueError(
            f"alpha map shape {max_blended_alpha.shape} != occupancy {grid.dims.voxel_shape}"
        )
    keep = grid.occupancy & ~(max_blended_alpha < tau_vis)
    new_index, _ = index_from_occupancy(keep)
    survivors = new_index != SENTINEL
    old_rows = grid.vertex_index[survivors]
    if np.any(old_rows == SENTINEL):
        raise AssertionError("culling produced a vertex that was not active before")
    pool = grid.feature_pool[old_rows.astype(np.int64)]
    return FeatureGrid(grid.dims, grid.feature_dim, new_index, pool, keep)
