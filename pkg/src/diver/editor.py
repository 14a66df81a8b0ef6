"""Scene editing: voxel-grid blending and feature-cluster object swapping.

Edits never mutate their inputs; they return new scenes (copy-on-edit), so a
renderer holding the old scene keeps a consistent snapshot.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import FeatureGrid, GridDims, SENTINEL, index_from_occupancy
from .mc_reference import philox
from .scene import CompositeScene, Scene


@dataclass(frozen=True)
class Cuboid:
    """Inclusive voxel-coordinate box [vmin, vmax]."""

    vmin: tuple
    vmax: tuple

    def __post_init__(self):
        lo, hi = np.asarray(self.vmin, np.int64), np.asarray(self.vmax, np.int64)
        if np.any(lo > hi):
            raise ValueError(f"cuboid min {self.vmin} exceeds max {self.vmax}")

    @property
    def shape(self) -> tuple:
        lo, hi = np.asarray(self.vmin), np.asarray(self.vmax)
        return tuple(hi - lo + 1)

    def validate_within(self, dims: GridDims):
        lo, hi = np.asarray(self.vmin), np.asarray(self.vmax)
        if np.any(lo < 0) or np.any(hi >= [dims.nx, dims.ny, dims.nz]):
            raise ValueError(f"cuboid {self} outside grid {dims}")

    def vertex_slices(self):
        """Array slices of the cuboid's vertex range, (z, y, x) order.

        Voxels [lo, hi] span vertices [lo, hi+1]."""
        lo, hi = np.asarray(self.vmin), np.asarray(self.vmax)
        return tuple(slice(int(lo[a]), int(hi[a]) + 2) for a in (2, 1, 0))

    def voxel_slices(self):
        lo, hi = np.asarray(self.vmin), np.asarray(self.vmax)
        return tuple(slice(int(lo[a]), int(hi[a]) + 1) for a in (2, 1, 0))


@dataclass
class ClusterResult:
    k: int
    labels: np.ndarray        # per active vertex inside the cuboid
    centroids: np.ndarray     # (k, feature_dim)
    background_label: int     # label of the largest cluster
    positions: np.ndarray     # (n, 3) vertex coords (x, y, z) of the labeled vertices
    inertia: float            # within-cluster sum of squares


def _cuboid_active_vertices(scene: Scene, cuboid: Cuboid):
    """Active vertices inside the cuboid's vertex range: (positions, pool rows)."""
    cuboid.validate_within(scene.dims)
    zs, ys, xs = cuboid.vertex_slices()
    sub = scene.grid.vertex_index[zs, ys, xs]
    kji = np.argwhere(sub != SENTINEL)
    rows = sub[kji[:, 0], kji[:, 1], kji[:, 2]].astype(np.int64)
    lo = np.asarray(cuboid.vmin, np.int64)
    positions = kji[:, ::-1] + lo  # back to absolute (x, y, z)
    return positions, rows


def _kmeans_pp_seed(feats: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding; deterministic given the generator state."""
    n = feats.shape[0]
    centroids = np.empty((k, feats.shape[1]), dtype=np.float64)
    first = int(rng.integers(n))
    centroids[0] = feats[first]
    d2 = ((feats - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            centroids[j] = feats[int(rng.integers(n))]
            continue
        probs = d2 / total
        pick = int(np.searchsorted(np.cumsum(probs), rng.random(), side="right"))
        pick = min(pick, n - 1)
        centroids[j] = feats[pick]
        d2 = np.minimum(d2, ((feats - centroids[j]) ** 2).sum(axis=1))
    return centroids


def kmeans_features(scene: Scene, cuboid: Cuboid, k: int = 12, seed: int = 0,
                    max_iters: int = 100, tol: float = 1e-6) -> ClusterResult:
    """Lloyd's algorithm over the active vertex features inside the cuboid.

    The largest cluster (ties to the lowest label) is the background.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    positions, rows = _cuboid_active_vertices(scene, cuboid)
    if len(rows) < k:
        raise ValueError(f"cuboid holds {len(rows)} active vertices < k={k}")
    feats = scene.effective_pool()[rows].astype(np.float64)
    centroids, labels, inertia = _lloyd(feats, k, seed, max_iters, tol)
    background = int(np.argmax(np.bincount(labels, minlength=k)))
    return ClusterResult(k, labels, centroids, background, positions, inertia)


def _lloyd(data: np.ndarray, k: int, seed: int, max_iters: int = 100,
           tol: float = 1e-6):
    """k-means++ seeded Lloyd iterations; returns (centroids, labels, inertia)."""
    centroids = _kmeans_pp_seed(data, k, philox(seed))
    for _ in range(max_iters):
        d2 = ((data[:, None, :] - centroids[None]) ** 2).sum(axis=2)
        labels = np.argmin(d2, axis=1)
        new_centroids = centroids.copy()
        for j in range(k):
            sel = labels == j
            if sel.any():
                new_centroids[j] = data[sel].mean(axis=0)
        shift = np.sqrt(((new_centroids - centroids) ** 2).sum(axis=1)).max()
        centroids = new_centroids
        if shift < tol:
            break
    d2 = ((data[:, None, :] - centroids[None]) ** 2).sum(axis=2)
    labels = np.argmin(d2, axis=1)
    inertia = float(d2[np.arange(len(data)), labels].sum())
    return centroids, labels, inertia


def swap_objects(scene: Scene, cuboid_a: Cuboid, cuboid_b: Cuboid, k: int = 12,
                 seed: int = 0) -> Scene:
    """Exchange the non-background feature content of two equal-size cuboids.

    One clustering runs over the pooled features of both cuboids (sorted into
    a canonical order first, so the clustering is a function of the feature
    multiset); the largest cluster is the background.  Features at the union
    of non-background relative positions are exchanged and the voxel
    occupancy of the two sub-blocks is exchanged; background vertices keep
    their features.  Because the pooled multiset is invariant under the
    exchange, applying the same swap twice restores the scene bit-exactly.
    """
    if cuboid_a.shape != cuboid_b.shape:
        raise ValueError(f"cuboid shapes differ: {cuboid_a.shape} vs {cuboid_b.shape}")
    cuboid_a.validate_within(scene.dims)
    cuboid_b.validate_within(scene.dims)
    identical = cuboid_a.vmin == cuboid_b.vmin and cuboid_a.vmax == cuboid_b.vmax
    # vertex ranges [vmin, vmax+1] must not intersect: a vertex shared by both
    # cuboids would sit in two exchange pairs, breaking the involution
    share_vertices = all(cuboid_a.vmin[a] <= cuboid_b.vmax[a] + 1
                         and cuboid_b.vmin[a] <= cuboid_a.vmax[a] + 1
                         for a in range(3))
    if share_vertices and not identical:
        raise ValueError("cuboids share vertices; separate them by at least one voxel")

    pos_a, rows_a = _cuboid_active_vertices(scene, cuboid_a)
    pos_b, rows_b = _cuboid_active_vertices(scene, cuboid_b)
    all_rows = np.concatenate([rows_a, rows_b])
    if len(all_rows) < k:
        raise ValueError(f"cuboids hold {len(all_rows)} active vertices < k={k}")
    feats = scene.effective_pool()[all_rows].astype(np.float64)
    canon = np.lexsort(feats.T[::-1])  # row-lexicographic data order
    centroids, labels_sorted, _ = _lloyd(feats[canon], k, seed)
    counts = np.bincount(labels_sorted, minlength=k)
    background = int(np.argmax(counts))
    # assign every vertex by nearest centroid of its current feature
    d2 = ((feats[:, None, :] - centroids[None]) ** 2).sum(axis=2)
    labels = np.argmin(d2, axis=1)
    nonbg_a = labels[: len(rows_a)] != background
    nonbg_b = labels[len(rows_a):] != background

    lo_a = np.asarray(cuboid_a.vmin, np.int64)
    lo_b = np.asarray(cuboid_b.vmin, np.int64)
    rel_a = {tuple(p) for p in (pos_a - lo_a)[nonbg_a]}
    rel_b = {tuple(p) for p in (pos_b - lo_b)[nonbg_b]}
    union = sorted(rel_a | rel_b)

    # feature map keyed by absolute vertex position, values are pool rows
    grid = scene.grid
    old_rows = {}
    for rel in union:
        for lo in (lo_a, lo_b):
            p = np.asarray(rel) + lo
            row = grid.vertex_index[p[2], p[1], p[0]]
            old_rows[tuple(p)] = int(row) if row != SENTINEL else None

    # exchange occupancy of the sub-blocks wholesale
    occ = grid.occupancy.copy()
    sa, sb = cuboid_a.voxel_slices(), cuboid_b.voxel_slices()
    occ[sa], occ[sb] = grid.occupancy[sb].copy(), grid.occupancy[sa].copy()

    new_index, n_active = index_from_occupancy(occ)
    pool = np.zeros((n_active, grid.feature_dim), dtype=grid.feature_pool.dtype)
    # default: carry features of vertices that stay active
    still = (new_index != SENTINEL) & (grid.vertex_index != SENTINEL)
    pool[new_index[still].astype(np.int64)] = grid.feature_pool[grid.vertex_index[still].astype(np.int64)]
    # exchange features across the union of non-background positions
    for rel in union:
        pa = np.asarray(rel) + lo_a
        pb = np.asarray(rel) + lo_b
        ra = new_index[pa[2], pa[1], pa[0]]
        rb = new_index[pb[2], pb[1], pb[0]]
        src_b = old_rows[tuple(pb)]
        src_a = old_rows[tuple(pa)]
        if ra != SENTINEL:
            pool[int(ra)] = grid.feature_pool[src_b] if src_b is not None else 0.0
        if rb != SENTINEL:
            pool[int(rb)] = grid.feature_pool[src_a] if src_a is not None else 0.0

    new_grid = FeatureGrid(grid.dims, grid.feature_dim, new_index, pool, occ)
    out = scene.with_grid(new_grid)
    out.name = scene.name
    return out


def blend_scenes(scenes: list, placements: list | None = None) -> CompositeScene:
    """Union the voxel grids of several scenes into one composite.

    placements are integer voxel offsets of each scene inside the composite
    lattice (default: all zero).  Scenes must share feature_dim and voxel
    size; each occupied voxel is tagged with its source scene, overlaps
    resolved by the higher recorded max blended alpha (missing maps count
    as 1.0), ties to the earlier scene.  Rendering dispatches every interval
    to its source's features and decoder.
    """
    if not scenes:
        raise ValueError("need at least one scene")
    fdims = {s.grid.feature_dim for s in scenes}
    if len(fdims) > 1:
        raise ValueError(f"feature_dim mismatch across scenes: {fdims}")
    vs = {float(s.voxel_size) for s in scenes}
    if len(vs) > 1:
        raise ValueError(f"voxel size mismatch across scenes: {vs}")
    voxel_size = scenes[0].voxel_size
    if placements is None:
        placements = [np.zeros(3, np.int64)] * len(scenes)
    placements = [np.asarray(p, np.int64) for p in placements]
    if len(placements) != len(scenes):
        raise ValueError("one placement per scene required")
    if any(np.any(p < 0) for p in placements):
        raise ValueError("placements must be nonnegative voxel offsets")

    ext = np.max([p + [s.dims.nx, s.dims.ny, s.dims.nz] for p, s in zip(placements, scenes)], axis=0)
    dims = GridDims(int(ext[0]), int(ext[1]), int(ext[2]))
    occupancy = np.zeros(dims.voxel_shape, dtype=bool)
    source_of = np.full(dims.voxel_shape, -1, dtype=np.int16)
    best_alpha = np.full(dims.voxel_shape, -1.0)

    rehomed = []
    for s_id, (scene, off) in enumerate(zip(scenes, placements)):
        sz = (slice(off[2], off[2] + scene.dims.nz),
              slice(off[1], off[1] + scene.dims.ny),
              slice(off[0], off[0] + scene.dims.nx))
        occ_s = np.zeros(dims.voxel_shape, dtype=bool)
        occ_s[sz] = scene.grid.occupancy
        vis = np.zeros(dims.voxel_shape)
        vis[sz] = scene.vis_alpha if scene.vis_alpha is not None else np.where(scene.grid.occupancy, 1.0, 0.0)

        win = occ_s & (vis > best_alpha)
        occupancy |= occ_s
        source_of[win] = s_id
        best_alpha[win] = vis[win]

        # re-home the source grid onto the composite lattice
        vindex = np.full((dims.nz + 1, dims.ny + 1, dims.nx + 1), SENTINEL, dtype=np.uint32)
        vz = (slice(off[2], off[2] + scene.dims.nz + 1),
              slice(off[1], off[1] + scene.dims.ny + 1),
              slice(off[0], off[0] + scene.dims.nx + 1))
        vindex[vz] = scene.grid.vertex_index
        g = FeatureGrid(dims, scene.grid.feature_dim, vindex,
                        scene.grid.feature_pool, occ_s)
        rehomed.append(Scene(g, scene.decoder, np.zeros(3), voxel_size,
                             scene.tanh_mode, None, scene.name))

    origin = scenes[0].origin - placements[0] * voxel_size
    for s in rehomed:
        s.origin = origin
    return CompositeScene(dims, occupancy, source_of, rehomed,
                          origin=origin, voxel_size=voxel_size)
