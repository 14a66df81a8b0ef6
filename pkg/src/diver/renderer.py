"""Ray generation, octree-accelerated voxel traversal, and alpha compositing.

Traversal is two-phase, per the sparse-grid scheme: an occupancy-pyramid
descent skips empty space up to the first occupied voxel, then a plain 3D
DDA walks voxel boundaries.  All rays of an image march in lockstep so the
hot loops are vectorized; per-ray work is limited to gathers and masked
updates.  Geometry runs in float64 throughout; decoding runs in the scene's
parameter dtype; compositing accumulates in float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .decoder import DecoderWeights, FusedDecoderWeights, pos_encode, softplus
from .grid import FeatureGrid, OctreePyramid, corner_pool_indices
from .integrator import basis_weights
from .scene import CompositeScene, Scene, scene_occupancy, scene_octree
from scipy.special import expit

_TANGENT_EPS = 1e-12  # direction components below this are nudged off zero
_SLIVER = 1e-12       # intervals shorter than this are dropped


@dataclass
class CameraPose:
    """Pinhole camera: x right, y down, z forward (camera-to-world rotation)."""

    position: np.ndarray
    rotation: np.ndarray  # (3, 3) orthonormal, camera-to-world
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64)
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        err = np.abs(self.rotation @ self.rotation.T - np.eye(3)).max()
        if err > 1e-6:
            raise ValueError(f"rotation is not orthonormal (max deviation {err:.2e})")


@dataclass
class RenderConfig:
    tau_t: float = 0.01            # transmittance cutoff for early termination
    max_hits_per_pass: int = 16
    background: np.ndarray = field(default_factory=lambda: np.zeros(3))
    white_background: bool = False
    # debug switch: bypass the termination/color-skip branches entirely; with
    # tau_t == 0 the output must be bit-identical to the normal path
    disable_termination: bool = False

    def __post_init__(self):
        self.background = np.asarray(self.background, dtype=np.float64)
        if not 0.0 <= self.tau_t < 1.0:
            raise ValueError("tau_t must be in [0, 1)")

    def effective_background(self) -> np.ndarray:
        return np.ones(3) if self.white_background else self.background


@dataclass
class RayHit:
    """One occupied-voxel interval along a ray."""

    voxel: np.ndarray   # (3,) int, xyz
    t_in: float
    t_out: float
    x0: np.ndarray      # local entry point in [0,1]^3
    x1: np.ndarray      # local exit point


@dataclass
class RenderResult:
    rgb: np.ndarray            # (H, W, 3) float64 in [0, 1]
    transmittance: np.ndarray  # (H, W) float64
    n_rays: int = 0
    mlp_calls: int = 0         # density evaluations (= intervals decoded)
    color_calls: int = 0


def generate_ray(pose: CameraPose, px) -> tuple[np.ndarray, np.ndarray]:
    """World ray through the center of pixel px = (x, y)."""
    x, y = px
    d_cam = np.array([(x + 0.5 - pose.cx) / pose.fx, (y + 0.5 - pose.cy) / pose.fy, 1.0])
    d = pose.rotation @ d_cam
    return pose.position.copy(), d / np.linalg.norm(d)


def generate_rays(pose: CameraPose) -> tuple[np.ndarray, np.ndarray]:
    """All pixel rays, row-major: index y * width + x. Returns (origins, dirs)."""
    xs = np.arange(pose.width) + 0.5
    ys = np.arange(pose.height) + 0.5
    gx, gy = np.meshgrid(xs, ys)  # (H, W)
    d_cam = np.stack([(gx - pose.cx) / pose.fx, (gy - pose.cy) / pose.fy, np.ones_like(gx)], axis=-1)
    d = d_cam.reshape(-1, 3) @ pose.rotation.T
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    o = np.broadcast_to(pose.position, d.shape).copy()
    return o, d


class BatchMarcher:
    """Lockstep traversal of many rays through one occupancy grid.

    Construction runs the pyramid-skip phase for every ray (up to the first
    occupied voxel); next_hits() then advances the plain DDA, returning at
    most max_hits occupied intervals per ray per call so the caller can
    interleave decoding, compositing, and early termination (kill()).
    """

    def __init__(self, occupancy: np.ndarray, pyramid: OctreePyramid,
                 origins: np.ndarray, dirs: np.ndarray,
                 grid_origin, voxel_size: float, t_start=0.0):
        self.occ = occupancy
        nz, ny, nx = occupancy.shape
        self.n = np.array([nx, ny, nz], dtype=np.float64)
        self.pyramid = pyramid

        dirs = np.asarray(dirs, dtype=np.float64).copy()
        tiny = np.abs(dirs) < _TANGENT_EPS
        dirs[tiny] = np.where(np.signbit(dirs[tiny]), -_TANGENT_EPS, _TANGENT_EPS)

        self.og = (np.asarray(origins, dtype=np.float64) - np.asarray(grid_origin)) / voxel_size
        self.dg = dirs / voxel_size
        self.R = self.og.shape[0]

        # slab intersection with the grid AABB [0, n]^3 (t stays in world units)
        ta = (0.0 - self.og) / self.dg
        tb = (self.n - self.og) / self.dg
        t0 = np.maximum.reduce(np.minimum(ta, tb), axis=-1)
        t1 = np.minimum.reduce(np.maximum(ta, tb), axis=-1)
        t0 = np.maximum(t0, np.broadcast_to(np.asarray(t_start, dtype=np.float64), t0.shape))
        self.t1 = t1
        self.alive = t1 > t0 + _SLIVER

        self.t_cur = np.where(self.alive, t0, 0.0)  # dead rays never march
        self.v = self._voxel_at(self.t_cur)
        self.marching = np.zeros(self.R, dtype=bool)  # past the skip phase
        self.step = np.where(self.dg > 0, 1, -1).astype(np.int64)
        self.t_max = np.full((self.R, 3), np.inf)
        self.t_delta = 1.0 / np.abs(self.dg)
        self._skip_to_first_hit()

    # -- phase A: pyramid descent to the closest occupied voxel ------------

    def _voxel_at(self, t, rows=None):
        og = self.og if rows is None else self.og[rows]
        dg = self.dg if rows is None else self.dg[rows]
        nudge = 1e-9 * (1.0 + np.abs(t))
        g = og + (t + nudge)[:, None] * dg
        return np.clip(np.floor(g).astype(np.int64), 0, (self.n - 1).astype(np.int64))

    def _occ_at(self, v):
        return self.occ[v[:, 2], v[:, 1], v[:, 0]]

    def _start_marching(self, idx):
        if len(idx) == 0:
            return
        boundary = self.v[idx] + (self.step[idx] > 0)
        t_max = (boundary - self.og[idx]) / self.dg[idx]
        self.t_max[idx] = np.maximum(t_max, self.t_cur[idx][:, None])
        self.marching[idx] = True

    def _skip_to_first_hit(self):
        max_iters = int(4 * self.n.sum()) + 8
        for _ in range(max_iters):
            pending = self.alive & ~self.marching
            if not pending.any():
                break
            idx = np.nonzero(pending)[0]
            hit = self._occ_at(self.v[idx])
            self._start_marching(idx[hit])
            if hit.all():
                break
            miss = idx[~hit]
            vm = self.v[miss]
            # coarsest pyramid level at which the containing cell is empty
            lvl = np.zeros(len(miss), dtype=np.int64)
            for L in range(self.pyramid.n_levels - 1, 0, -1):
                c = vm >> L
                empty = ~self.pyramid.levels[L][c[:, 2], c[:, 1], c[:, 0]]
                lvl = np.where((lvl == 0) & empty, L, lvl)
            size = (1 << lvl)[:, None].astype(np.float64)
            lo = ((vm >> lvl[:, None]) << lvl[:, None]).astype(np.float64)
            bound = np.where(self.dg[miss] > 0, lo + size, lo)
            t_exit = np.min((bound - self.og[miss]) / self.dg[miss], axis=-1)
            t_new = np.maximum(t_exit, self.t_cur[miss] + 1e-9 * (1.0 + np.abs(self.t_cur[miss])))
            self.t_cur[miss] = t_new
            self.alive[miss] &= t_new < self.t1[miss] - _SLIVER
            still = miss[self.alive[miss]]
            self.v[still] = self._voxel_at(self.t_cur[still], rows=still)

    # -- phase B: plain DDA -------------------------------------------------

    def kill(self, ray_indices):
        """Stop marching the given rays (early termination)."""
        self.alive[ray_indices] = False

    @property
    def any_alive(self) -> bool:
        return bool(self.alive.any())

    def next_hits(self, max_hits: int):
        """March until every live ray produced max_hits occupied intervals
        (or finished).  Returns flat arrays sorted by (ray, t):
        (ray_idx, voxel_xyz, t_in, t_out) or None when everything is done.
        """
        quota = np.zeros(self.R, dtype=np.int64)
        out_ray, out_vox, out_tin, out_tout = [], [], [], []
        while True:
            act = self.alive & self.marching & (quota < max_hits)
            if not act.any():
                break
            idx = np.nonzero(act)[0]
            t_max = self.t_max[idx]
            axis = np.argmin(t_max, axis=-1)
            t_next = t_max[np.arange(len(idx)), axis]
            v = self.v[idx]
            emit = self._occ_at(v) & (t_next - self.t_cur[idx] > _SLIVER)
            if emit.any():
                e = np.nonzero(emit)[0]
                out_ray.append(idx[e])
                out_vox.append(v[e])
                out_tin.append(self.t_cur[idx[e]])
                out_tout.append(t_next[e])
                quota[idx[e]] += 1
            # advance
            self.v[idx, axis] += self.step[idx, axis]
            self.t_cur[idx] = t_next
            self.t_max[idx, axis] += self.t_delta[idx, axis]
            moved = self.v[idx]
            inside = np.all((moved >= 0) & (moved < self.n.astype(np.int64)), axis=-1)
            self.alive[idx] &= inside & (self.t_cur[idx] < self.t1[idx] - _SLIVER)
        if not out_ray:
            return None
        ray = np.concatenate(out_ray)
        vox = np.concatenate(out_vox)
        t_in = np.concatenate(out_tin)
        t_out = np.concatenate(out_tout)
        order = np.lexsort((t_in, ray))
        return ray[order], vox[order], t_in[order], t_out[order]

    def local_points(self, ray, vox, t_in, t_out):
        """Voxel-local entry/exit points for flat hits, clamped into [0,1]^3."""
        g_in = self.og[ray] + t_in[:, None] * self.dg[ray] - vox
        g_out = self.og[ray] + t_out[:, None] * self.dg[ray] - vox
        return np.clip(g_in, 0.0, 1.0), np.clip(g_out, 0.0, 1.0)


def traverse(grid: FeatureGrid, octree: OctreePyramid, origin, direction,
             t_start: float = 0.0, grid_origin=(0.0, 0.0, 0.0), voxel_size: float = 1.0):
    """Iterate occupied-voxel intervals along one ray in increasing t order."""
    m = BatchMarcher(grid.occupancy, octree,
                     np.asarray(origin, dtype=np.float64)[None],
                     np.asarray(direction, dtype=np.float64)[None],
                     grid_origin, voxel_size, t_start)
    while True:
        hits = m.next_hits(4096)
        if hits is None:
            return
        ray, vox, t_in, t_out = hits
        x0, x1 = m.local_points(ray, vox, t_in, t_out)
        for i in range(len(ray)):
            yield RayHit(vox[i].copy(), float(t_in[i]), float(t_out[i]), x0[i], x1[i])


def composite(intervals, tau_t: float, background) -> tuple[np.ndarray, float]:
    """Front-to-back alpha compositing of (sigma, color) intervals.

    alpha_i = 1 - exp(-sigma_i); intervals whose alpha falls below tau_t do
    not contribute color (their attenuation still applies); accumulation
    stops once transmittance drops below tau_t; the remaining transmittance
    times the background is always added.
    """
    background = np.asarray(background, dtype=np.float64)
    rgb = np.zeros(3)
    transmittance = 1.0
    for sigma, color in intervals:
        if sigma < 0:
            raise ValueError(f"negative density {sigma}")
        alpha = -np.expm1(-float(sigma))
        if alpha >= tau_t:
            rgb += transmittance * alpha * np.asarray(color, dtype=np.float64)
        transmittance *= 1.0 - alpha
        if transmittance < tau_t:
            break
    return rgb + transmittance * background, transmittance


# -- batched decoding ------------------------------------------------------

def _integrated_features(scene: Scene, pool_eff, vox, x0, x1):
    """sum_k f_k X_k for flat hits; weights in f64, contraction in pool dtype."""
    xw = basis_weights(x0, x1).astype(pool_eff.dtype)  # (N, 8)
    rows = corner_pool_indices(scene.grid, vox)        # (N, 8)
    corners = pool_eff[rows]                           # (N, 8, F)
    return np.einsum("nk,nkf->nf", xw, corners), xw, rows


def _decode_sigma(decoder, feats):
    """Density half of the decoder; returns (sigma, h2) for lazy color eval."""
    if isinstance(decoder, FusedDecoderWeights):
        h1 = np.maximum(feats + decoder.b1, 0)
        h2 = np.maximum(h1 @ decoder.w2.T + decoder.b2, 0)
        sigma = softplus(h2 @ decoder.w3_sigma + decoder.b3_sigma)
        return sigma, h2
    w = decoder
    h1 = np.maximum(feats @ w.w1.T + w.b1, 0)
    h2 = np.maximum(h1 @ w.w2.T + w.b2, 0)
    sigma = softplus(h2 @ w.w3[0] + w.b3[0])
    return sigma, h2


def _decode_color(decoder, h2, dirs):
    gd = pos_encode(np.asarray(dirs).astype(h2.dtype), decoder.n_bands)
    if isinstance(decoder, FusedDecoderWeights):
        e4 = gd @ decoder.w4d.T + h2 @ decoder.w4p.T + decoder.b4p
        h4 = np.maximum(e4, 0)
        return expit(h4 @ decoder.w5.T + decoder.b5)
    w = decoder
    e = w.enc_dim
    h3 = h2 @ w.w3[1:].T + w.b3[1:]
    e4 = gd @ w.w4[:, :e].T + h3 @ w.w4[:, e:].T + w.b4
    h4 = np.maximum(e4, 0)
    return expit(h4 @ w.w5.T + w.b5)


class _SceneEval:
    """Precomputed per-scene state for decoding flat hits."""

    def __init__(self, scene):
        self.scene = scene
        self.composite = isinstance(scene, CompositeScene)
        if self.composite:
            self.pools = [s.effective_pool() for s in scene.sources]
        else:
            self.pool = scene.effective_pool()

    def decode(self, vox, x0, x1, dirs, tau_t):
        """sigma, color, color_mask for flat hits; color only where
        alpha >= tau_t (lazy color evaluation)."""
        n = len(vox)
        if self.composite:
            src = self.scene.source_of[vox[:, 2], vox[:, 1], vox[:, 0]]
            sigma = np.zeros(n)
            color = np.zeros((n, 3))
            cmask = np.zeros(n, dtype=bool)
            for s_id in np.unique(src):
                sel = src == s_id
                s, c, m = _decode_hits(self.scene.sources[s_id], self.pools[s_id],
                                       vox[sel], x0[sel], x1[sel], dirs[sel], tau_t)
                sigma[sel], color[sel], cmask[sel] = s, c, m
            return sigma, color, cmask
        return _decode_hits(self.scene, self.pool, vox, x0, x1, dirs, tau_t)


def _decode_hits(scene: Scene, pool_eff, vox, x0, x1, dirs, tau_t):
    feats, _, _ = _integrated_features(scene, pool_eff, vox, x0, x1)
    sigma, h2 = _decode_sigma(scene.decoder, feats)
    sigma = sigma.astype(np.float64)
    alpha = -np.expm1(-sigma)
    cmask = alpha >= tau_t
    color = np.zeros((len(vox), 3))
    if cmask.any():
        color[cmask] = _decode_color(scene.decoder, h2[cmask], dirs[cmask]).astype(np.float64)
    return sigma, color, cmask


def _dense_slots(ray, n_rays):
    """Position of each flat hit within its ray (hits sorted by ray)."""
    counts = np.bincount(ray, minlength=n_rays)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    return np.arange(len(ray)) - starts[ray], counts


def _render_rays(scene, origins, dirs, config: RenderConfig, vis_map=None):
    """Shared engine: composite images and optionally record per-voxel max
    blended alpha into vis_map (in place)."""
    occ = scene_occupancy(scene)
    pyramid = scene_octree(scene)
    marcher = BatchMarcher(occ, pyramid, origins, dirs, scene.origin, scene.voxel_size)
    ev = _SceneEval(scene)
    R = len(origins)
    rgb = np.zeros((R, 3))
    transmittance = np.ones(R)
    mlp_calls = 0
    color_calls = 0
    nz, ny, nx = occ.shape

    skip_checks = config.disable_termination
    while marcher.any_alive:
        hits = marcher.next_hits(config.max_hits_per_pass)
        if hits is None:
            break
        ray, vox, t_in, t_out = hits
        x0, x1 = marcher.local_points(ray, vox, t_in, t_out)
        tau_color = 0.0 if skip_checks else config.tau_t
        sigma, color, cmask = ev.decode(vox, x0, x1, dirs[ray], tau_color)
        mlp_calls += len(ray)
        color_calls += int(cmask.sum())
        alpha = -np.expm1(-sigma)

        slot, _ = _dense_slots(ray, R)
        n_slots = int(slot.max()) + 1
        stopped = np.zeros(R, dtype=bool)
        for s in range(n_slots):
            sel = (slot == s)
            r = ray[sel]
            live = ~stopped[r]
            r, a = r[live], alpha[sel][live]
            if len(r) == 0:
                continue
            contrib = cmask[sel][live]
            w = transmittance[r] * a
            rgb[r[contrib]] += (w[contrib, None] * color[sel][live][contrib])
            if vis_map is not None:
                flat = vox[sel][live][:, 0] + nx * (vox[sel][live][:, 1] + ny * vox[sel][live][:, 2])
                np.maximum.at(vis_map.reshape(-1), flat, w)
            transmittance[r] *= 1.0 - a
            if not skip_checks:
                newly = transmittance[r] < config.tau_t
                stopped[r[newly]] = True
        if not skip_checks:
            marcher.kill(np.nonzero(stopped)[0])

    rgb += transmittance[:, None] * config.effective_background()
    return rgb, transmittance, mlp_calls, color_calls


def render_image(scene, pose: CameraPose, config: RenderConfig | None = None) -> RenderResult:
    """Render a full image; deterministic for identical inputs."""
    config = config or RenderConfig()
    origins, dirs = generate_rays(pose)
    rgb, tr, mlp_calls, color_calls = _render_rays(scene, origins, dirs, config)
    h, w = pose.height, pose.width
    return RenderResult(rgb.reshape(h, w, 3), tr.reshape(h, w),
                        n_rays=h * w, mlp_calls=mlp_calls, color_calls=color_calls)


def record_max_blended_alpha(scene, poses, config: RenderConfig | None = None) -> np.ndarray:
    """Per-voxel maximum blended alpha T_i * alpha_i over all training rays.

    Voxels hit by no ray record 0.  Defaults to tau_t=0 so every
    contribution is counted exactly.
    """
    config = config or RenderConfig(tau_t=0.0)
    occ = scene_occupancy(scene)
    vis = np.zeros(occ.shape)
    for pose in poses:
        origins, dirs = generate_rays(pose)
        _render_rays(scene, origins, dirs, config, vis_map=vis)
    return vis
