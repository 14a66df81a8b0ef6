"""Desk-scale training: photometric + sparsity losses, exact backprop through
compositing -> decoder -> feature integration, Adam updates, implicit-MLP
feature initialization, and the coarse-to-fine schedule.

Because the integrator is deterministic, so are the gradients; with a fixed
seed the whole parameter trajectory is reproducible.  Ray batches are drawn
from a per-epoch Philox permutation of all training pixels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .decoder import DecoderGrads, backward as decoder_backward, forward as decoder_forward, init_decoder, pos_encode
from .grid import GridDims, build_grid, corner_pool_indices, cull
from .integrator import basis_weights, chi_all
from .mc_reference import philox, stratified_samples
from .renderer import BatchMarcher, CameraPose, RenderConfig, generate_rays, record_max_blended_alpha, render_image
from .scene import Scene, scene_octree


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr_fine: float = 5e-4
    lr_coarse: float = 1e-3
    lambda_s: float = 1e-5
    batch_size: int = 1024
    # one epoch is ceil(n_pixels / batch_size) steps; stages are budgeted in
    # steps so experiment budgets are exact
    coarse_steps: int = 500
    implicit_steps: int = 0
    fine_steps: int = 2000
    coarse_scale: int = 4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    tau_vis: float = 0.01
    feat_init_std: float = 0.01
    tanh_mode: bool = False
    log_every: int = 1  # loss history granularity in steps

    def __post_init__(self):
        if self.lr_fine <= 0 or self.lr_coarse <= 0:
            raise ValueError("learning rates must be positive")
        if self.lambda_s < 0:
            raise ValueError("lambda_s must be >= 0")


@dataclass
class ImplicitInitConfig:
    n_bands: int = 10
    hidden_width: int = 64
    hidden_layers: int = 3
    steps: int = 1000


@dataclass
class TrainSet:
    """Posed training images; pixel values in [0, 1]."""

    views: list  # [(CameraPose, image (H,W,3))]
    white_background: bool = True

    def __post_init__(self):
        shapes = {v[1].shape for v in self.views}
        if len(shapes) > 1:
            raise ValueError(f"inconsistent image shapes: {shapes}")
        for pose, img in self.views:
            if img.shape[:2] != (pose.height, pose.width):
                raise ValueError("image shape does not match pose dimensions")

    def rays(self):
        """All training rays: (origins, dirs, targets), each (P, 3)."""
        os_, ds_, ts_ = [], [], []
        for pose, img in self.views:
            o, d = generate_rays(pose)
            os_.append(o)
            ds_.append(d)
            ts_.append(np.asarray(img, dtype=np.float64).reshape(-1, 3))
        return np.concatenate(os_), np.concatenate(ds_), np.concatenate(ts_)

    def render_config(self, tau_t: float = 0.0) -> RenderConfig:
        return RenderConfig(tau_t=tau_t, white_background=self.white_background)


# -- losses -----------------------------------------------------------------

def photometric_loss(rendered, target):
    """Summed squared error and its gradient 2*(rendered - target)."""
    rendered = np.asarray(rendered, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if rendered.shape != target.shape:
        raise ValueError(f"shape mismatch {rendered.shape} vs {target.shape}")
    diff = rendered - target
    return float((diff**2).sum()), 2.0 * diff


def sparsity_loss(sigmas, lambda_s: float):
    """lambda_s * sum log(1 + sigma^2/0.5) and its exact derivative."""
    sigmas = np.asarray(sigmas, dtype=np.float64)
    if np.any(sigmas < 0):
        raise ValueError("densities must be nonnegative")
    value = lambda_s * float(np.log1p(2.0 * sigmas**2).sum())
    grad = lambda_s * 4.0 * sigmas / (1.0 + 2.0 * sigmas**2)
    return value, grad


# -- differentiable render pipeline ------------------------------------------

def _exclusive_cumprod(x):
    out = np.cumprod(x, axis=1)
    out = np.roll(out, 1, axis=1)
    out[:, 0] = 1.0
    return out


def _dense(values, ray, slot, shape, fill=0.0):
    out = np.full(shape, fill)
    out[ray, slot] = values
    return out


class RenderGraph:
    """Forward/backward through march -> integrate -> decode -> composite.

    Holds the per-scene immutables (occupancy pyramid, background); the
    feature pool and decoder weights are read fresh on every call so the
    optimizer can update them in place.
    """

    def __init__(self, scene: Scene, background, lambda_s: float = 0.0):
        self.scene = scene
        self.pyramid = scene_octree(scene)
        self.background = np.asarray(background, dtype=np.float64)
        self.lambda_s = lambda_s

    # ---- forward ----

    def forward_det(self, origins, dirs):
        """Deterministic path: closed-form basis weights per ray/voxel hit."""
        scene = self.scene
        marcher = BatchMarcher(scene.grid.occupancy, self.pyramid, origins, dirs,
                               scene.origin, scene.voxel_size)
        hits = marcher.next_hits(1 << 30)
        r = len(origins)
        if hits is None:
            return self._forward(np.zeros((0, 8), np.int64), np.zeros((0, 8)),
                                 np.zeros(0), np.zeros(0, np.int64), dirs, r)
        ray, vox, t_in, t_out = hits
        x0, x1 = marcher.local_points(ray, vox, t_in, t_out)
        xw = basis_weights(x0, x1)
        rows = corner_pool_indices(self.scene.grid, vox)
        return self._forward(rows, xw, np.ones(len(ray)), ray, dirs, r)

    def forward_stoch(self, origins, dirs, n_samples: int, seed: int):
        """Stochastic path: pointwise weights, alpha = 1-exp(-sigma*delta)."""
        scene = self.scene
        t, delta, ok = stratified_samples(scene, origins, dirs, n_samples, seed)
        r, s = t.shape
        pts = (np.asarray(origins)[:, None, :] + t[..., None] * np.asarray(dirs)[:, None, :])
        g = (pts - scene.origin) / scene.voxel_size
        n = np.array([scene.dims.nx, scene.dims.ny, scene.dims.nz])
        vox = np.clip(np.floor(g).astype(np.int64), 0, n - 1)
        occ = scene.grid.occupancy[vox[..., 2], vox[..., 1], vox[..., 0]]
        occ &= ok[:, None] & np.all((g >= 0) & (g <= n), axis=-1)

        ray = np.repeat(np.arange(r), s)[occ.ravel()]
        vox_f = vox.reshape(-1, 3)[occ.ravel()]
        local = np.clip(g.reshape(-1, 3)[occ.ravel()] - vox_f, 0.0, 1.0)
        xw = chi_all(local)
        rows = corner_pool_indices(scene.grid, vox_f)
        scale = delta.ravel()[occ.ravel()]
        return self._forward(rows, xw, scale, ray, dirs, r)

    def _forward(self, rows, xw, scale, ray, dirs, n_rays):
        scene = self.scene
        raw = scene.grid.feature_pool
        pool_eff = np.tanh(raw) if scene.tanh_mode else raw
        corners = pool_eff[rows]                                   # (N, 8, F)
        xw_t = xw.astype(pool_eff.dtype)
        feats = np.einsum("nk,nkf->nf", xw_t, corners)
        dirs_hit = np.asarray(dirs, dtype=np.float64)[ray]
        if len(ray):
            sigma, color, cache = decoder_forward(scene.decoder, feats, dirs_hit, with_cache=True)
            sigma = sigma.astype(np.float64)
            color = color.astype(np.float64)
        else:
            sigma = np.zeros(0)
            color = np.zeros((0, 3))
            cache = None

        slot, counts = _ray_slots(ray, n_rays)
        n_slots = max(int(slot.max()) + 1 if len(slot) else 1, 1)
        shape = (n_rays, n_slots)
        alpha_flat = -np.expm1(-sigma * scale)
        alpha = _dense(alpha_flat, ray, slot, shape)
        color_d = np.zeros(shape + (3,))
        color_d[ray, slot] = color

        t_prev = _exclusive_cumprod(1.0 - alpha)
        weights = t_prev * alpha
        t_final = t_prev[:, -1] * (1.0 - alpha[:, -1])
        contrib = weights[..., None] * color_d
        rgb = contrib.sum(axis=1) + t_final[:, None] * self.background

        state = dict(rows=rows, xw=xw_t, scale=scale, ray=ray, slot=slot,
                     sigma=sigma, cache=cache, alpha=alpha, color_d=color_d,
                     t_prev=t_prev, weights=weights, t_final=t_final,
                     contrib=contrib, shape=shape, pool_eff=pool_eff)
        return rgb, state

    # ---- backward ----

    def backward(self, state, g_rgb):
        """Gradients of (loss fed via g_rgb) + sparsity wrt pool and decoder.

        Returns (touched_rows, pool_grad (T, F), DecoderGrads, sparsity_value).
        """
        scene = self.scene
        rows, xw, ray, slot = state["rows"], state["xw"], state["ray"], state["slot"]
        n_pool, fdim = scene.grid.feature_pool.shape
        if len(ray) == 0:
            zero = DecoderGrads(*[np.zeros_like(a) for _, a in scene.decoder.params()])
            return np.zeros(0, np.int64), np.zeros((0, fdim), np.float64), zero, 0.0

        g_rgb = np.asarray(g_rgb, dtype=np.float64)
        alpha, color_d = state["alpha"], state["color_d"]
        t_prev, weights, contrib = state["t_prev"], state["weights"], state["contrib"]

        # suffix radiance after each slot: everything behind it (incl. bg term)
        total = contrib.sum(axis=1) + state["t_final"][:, None] * self.background
        incl = np.cumsum(contrib, axis=1)
        suffix = total[:, None, :] - incl + 0.0
        # d(loss)/d(sigma_slot): scale * g . (T_prev c (1-a) - suffix)
        core = (t_prev[..., None] * color_d * (1.0 - alpha[..., None])) - suffix
        d_sigma_dense = np.einsum("rc,rlc->rl", g_rgb, core)
        d_color_dense = weights[..., None] * g_rgb[:, None, :]

        d_sigma = d_sigma_dense[ray, slot] * state["scale"]
        sp_val, sp_grad = sparsity_loss(state["sigma"], self.lambda_s)
        d_sigma = d_sigma + sp_grad
        d_color = d_color_dense[ray, slot]

        dec_dtype = scene.decoder.dtype
        grads, d_feat = decoder_backward(scene.decoder, state["cache"],
                                         d_sigma.astype(dec_dtype), d_color.astype(dec_dtype))

        d_corner = xw[..., None] * d_feat[:, None, :]  # (N,8,F) in decoder dtype
        touched, pg = _segment_scatter(rows.ravel(), d_corner.reshape(-1, fdim))
        pg = pg.astype(np.float64)
        if scene.tanh_mode:
            pg = pg * (1.0 - state["pool_eff"][touched].astype(np.float64) ** 2)
        return touched, pg, grads, sp_val


def _segment_scatter(idx, vals):
    """Sum rows of vals sharing an index: returns (unique sorted idx, sums).

    Sort + reduceat replacement for np.add.at, which is much slower."""
    order = np.argsort(idx, kind="stable")
    sorted_idx = idx[order]
    starts = np.concatenate([[0], np.nonzero(np.diff(sorted_idx))[0] + 1])
    sums = np.add.reduceat(vals[order], starts, axis=0)
    return sorted_idx[starts], sums


def _ray_slots(ray, n_rays):
    counts = np.bincount(ray, minlength=n_rays)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    if len(ray) == 0:
        return np.zeros(0, dtype=np.int64), counts
    return np.arange(len(ray)) - starts[ray], counts


def backprop_ray(scene: Scene, ray, target, lambda_s: float = 0.0,
                 background=(0.0, 0.0, 0.0)):
    """Loss and exact gradients for a single ray.

    ray = (origin, direction); target is the ground-truth rgb.  Returns
    (loss, touched_pool_rows, pool_grad, DecoderGrads).
    """
    graph = RenderGraph(scene, background, lambda_s)
    origin, direction = ray
    rgb, state = graph.forward_det(np.asarray(origin, float)[None],
                                   np.asarray(direction, float)[None])
    loss, g_rgb = photometric_loss(rgb, np.asarray(target, float)[None])
    touched, pool_grad, dec_grads, sp = graph.backward(state, g_rgb)
    return loss + sp, touched, pool_grad, dec_grads


# -- optimizers ---------------------------------------------------------------

class DenseAdam:
    def __init__(self, arrays, beta1=0.9, beta2=0.999, eps=1e-8):
        self.b1, self.b2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(a, dtype=np.float64) for a in arrays]
        self.v = [np.zeros_like(a, dtype=np.float64) for a in arrays]
        self.t = 0

    def step(self, arrays, grads, lr):
        self.t += 1
        bc1 = 1.0 - self.b1**self.t
        bc2 = 1.0 - self.b2**self.t
        for a, g, m, v in zip(arrays, grads, self.m, self.v):
            g = np.asarray(g, dtype=np.float64)
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            a -= (lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)).astype(a.dtype)


class SparseRowAdam:
    """Adam over pool rows with per-row step counts; untouched rows keep
    their moments and miss no bias correction."""

    def __init__(self, n_rows, row_shape, beta1=0.9, beta2=0.999, eps=1e-8):
        self.b1, self.b2, self.eps = beta1, beta2, eps
        self.m = np.zeros((n_rows,) + row_shape)
        self.v = np.zeros((n_rows,) + row_shape)
        self.t = np.zeros(n_rows, dtype=np.int64)

    def step(self, pool, rows, grad_rows, lr):
        if len(rows) == 0:
            return
        self.t[rows] += 1
        t = self.t[rows].astype(np.float64)[:, None]
        m = self.m[rows] * self.b1 + (1 - self.b1) * grad_rows
        v = self.v[rows] * self.b2 + (1 - self.b2) * grad_rows**2
        self.m[rows] = m
        self.v[rows] = v
        mhat = m / (1.0 - self.b1**t)
        vhat = v / (1.0 - self.b2**t)
        pool[rows] -= (lr * mhat / (np.sqrt(vhat) + self.eps)).astype(pool.dtype)


# -- training loops -----------------------------------------------------------

def _batches(n_pixels, batch_size, n_steps, seed):
    """Yield index batches from per-epoch Philox permutations."""
    step = 0
    epoch = 0
    while step < n_steps:
        perm = philox(seed, epoch).permutation(n_pixels)
        for lo in range(0, n_pixels, batch_size):
            if step >= n_steps:
                return
            yield perm[lo : lo + batch_size]
            step += 1
        epoch += 1


def train_explicit(scene: Scene, train_set: TrainSet, config: TrainConfig, *,
                   steps: int | None = None, lr: float | None = None,
                   integrator: str = "deterministic", mc_samples: int = 32,
                   seed_stream: int = 0):
    """Optimize pool features and decoder weights in place.

    integrator: "deterministic" uses the closed-form per-voxel integrals;
    "stochastic" trains through the sampled baseline with mc_samples points
    per ray.  Returns (scene, history) where history rows are dicts with
    step / loss / photometric / sparsity / mlp_calls.
    """
    steps = config.fine_steps if steps is None else steps
    lr = config.lr_fine if lr is None else lr
    origins, dirs, targets = train_set.rays()
    bg = train_set.render_config().effective_background()
    graph = RenderGraph(scene, bg, config.lambda_s)

    dec_arrays = [a for _, a in scene.decoder.params()]
    opt_dec = DenseAdam(dec_arrays, config.beta1, config.beta2, config.eps)
    opt_pool = SparseRowAdam(scene.grid.feature_pool.shape[0],
                             scene.grid.feature_pool.shape[1:],
                             config.beta1, config.beta2, config.eps)

    history = []
    for step, batch in enumerate(_batches(len(origins), config.batch_size, steps,
                                          config.seed + 101 * seed_stream)):
        o, d, y = origins[batch], dirs[batch], targets[batch]
        if integrator == "deterministic":
            rgb, state = graph.forward_det(o, d)
        elif integrator == "stochastic":
            rgb, state = graph.forward_stoch(o, d, mc_samples,
                                             seed=config.seed + 7919 * seed_stream + step)
        else:
            raise ValueError(f"unknown integrator {integrator!r}")
        photo, g_rgb = photometric_loss(rgb, y)
        touched, pool_grad, dec_grads, sp = graph.backward(state, g_rgb)
        loss = photo + sp
        if not np.isfinite(loss):
            raise TrainingDiverged(f"non-finite loss {loss} at step {step}")
        opt_dec.step(dec_arrays, [a for _, a in dec_grads.params()], lr)
        opt_pool.step(scene.grid.feature_pool, touched, pool_grad, lr)
        if step % config.log_every == 0 or step == steps - 1:
            history.append({"step": step, "loss": loss, "photometric": photo,
                            "sparsity": sp, "mlp_calls": len(state["ray"]),
                            "batch": len(batch)})
    return scene, history


# -- implicit initialization ---------------------------------------------------

class ImplicitMLP:
    """Coordinate MLP: positional-encoded vertex position -> feature vector."""

    def __init__(self, out_dim: int, cfg: ImplicitInitConfig, seed: int, dtype=np.float32):
        rng = np.random.Generator(np.random.Philox(key=seed))
        dims = [3 * (1 + 2 * cfg.n_bands)] + [cfg.hidden_width] * cfg.hidden_layers + [out_dim]
        self.n_bands = cfg.n_bands
        self.layers = []
        for i in range(len(dims) - 1):
            bound = 1.0 / np.sqrt(dims[i])
            w = rng.uniform(-bound, bound, size=(dims[i + 1], dims[i])).astype(dtype)
            b = rng.uniform(-bound, bound, size=dims[i + 1]).astype(dtype)
            self.layers.append([w, b])

    def arrays(self):
        return [a for layer in self.layers for a in layer]

    def forward(self, pos, with_cache=False):
        x = pos_encode(pos, self.n_bands).astype(self.layers[0][0].dtype)
        acts = [x]
        for i, (w, b) in enumerate(self.layers):
            x = x @ w.T + b
            if i < len(self.layers) - 1:
                x = np.maximum(x, 0)
            acts.append(x)
        if with_cache:
            return x, acts
        return x

    def backward(self, acts, d_out):
        grads = []
        d = np.asarray(d_out, dtype=self.layers[0][0].dtype)
        for i in range(len(self.layers) - 1, -1, -1):
            w, _ = self.layers[i]
            x_in = acts[i]
            if i < len(self.layers) - 1:
                d = d * (acts[i + 1] > 0)
            grads.append(d.sum(axis=0))     # bias
            grads.append(d.T @ x_in)        # weight
            d = d @ w
        grads.reverse()
        return grads  # ordered like arrays()


def vertex_positions(grid_dims: GridDims, vertex_index) -> np.ndarray:
    """Normalized positions in [0,1]^3 of active vertices, pool order."""
    from .grid import SENTINEL

    kji = np.argwhere(vertex_index != SENTINEL)
    order = np.argsort(vertex_index[kji[:, 0], kji[:, 1], kji[:, 2]])
    kji = kji[order]
    n = np.array([grid_dims.nx, grid_dims.ny, grid_dims.nz], dtype=np.float64)
    return kji[:, ::-1].astype(np.float64) / n


def init_implicit(scene: Scene, train_set: TrainSet, init_config: ImplicitInitConfig,
                  config: TrainConfig, seed_stream: int = 3,
                  integrator: str = "deterministic", mc_samples: int = 32):
    """Train vertex features through a coordinate MLP, then materialize them.

    The implicit MLP correlates nearby vertex features during early training;
    afterwards it is discarded and the returned scene carries a plain pool
    (plus the decoder trained jointly with it).  Returns (scene, history).
    """
    pos = vertex_positions(scene.dims, scene.grid.vertex_index)
    mlp = ImplicitMLP(scene.grid.feature_dim, init_config, seed=config.seed + 977,
                      dtype=scene.grid.feature_pool.dtype)
    origins, dirs, targets = train_set.rays()
    bg = train_set.render_config().effective_background()
    graph = RenderGraph(scene, bg, config.lambda_s)

    def render_batch(o, d, step):
        if integrator == "stochastic":
            return graph.forward_stoch(o, d, mc_samples,
                                       seed=config.seed + 7919 * seed_stream + step)
        return graph.forward_det(o, d)

    dec_arrays = [a for _, a in scene.decoder.params()]
    opt_dec = DenseAdam(dec_arrays, config.beta1, config.beta2, config.eps)
    opt_mlp = DenseAdam(mlp.arrays(), config.beta1, config.beta2, config.eps)

    history = []
    for step, batch in enumerate(_batches(len(origins), config.batch_size,
                                          init_config.steps,
                                          config.seed + 101 * seed_stream)):
        o, d, y = origins[batch], dirs[batch], targets[batch]
        # march first so only touched vertices go through the implicit MLP
        rgb, state = render_batch(o, d, step)
        touched_all = np.unique(state["rows"]) if len(state["ray"]) else np.zeros(0, np.int64)
        if len(touched_all):
            feats, acts = mlp.forward(pos[touched_all], with_cache=True)
            scene.grid.feature_pool[touched_all] = feats
            rgb, state = render_batch(o, d, step)  # re-render with fresh features
        photo, g_rgb = photometric_loss(rgb, y)
        touched, pool_grad, dec_grads, sp = graph.backward(state, g_rgb)
        loss = photo + sp
        if not np.isfinite(loss):
            raise TrainingDiverged(f"non-finite loss {loss} at step {step}")
        opt_dec.step(dec_arrays, [a for _, a in dec_grads.params()], config.lr_fine)
        if len(touched):
            # same hits, so touched == touched_all; pool_grad is already in
            # raw-feature space (tanh chain applied in backward), which is
            # the space the implicit MLP predicts
            mlp_grads = mlp.backward(acts, pool_grad)
            opt_mlp.step(mlp.arrays(), mlp_grads, config.lr_fine)
        if step % config.log_every == 0 or step == init_config.steps - 1:
            history.append({"step": step, "loss": loss, "photometric": photo,
                            "sparsity": sp, "mlp_calls": len(state["ray"]),
                            "batch": len(batch)})

    scene.grid.feature_pool[:] = mlp.forward(pos)
    return scene, history


# -- coarse to fine -------------------------------------------------------------

def downsample_view(pose: CameraPose, image: np.ndarray, k: int):
    """Box-filter an image by k and rescale the intrinsics to match."""
    h, w = image.shape[:2]
    if h % k or w % k:
        raise ValueError(f"image size {w}x{h} not divisible by {k}")
    img = image.reshape(h // k, k, w // k, k, -1).mean(axis=(1, 3))
    pose2 = CameraPose(pose.position.copy(), pose.rotation.copy(),
                       fx=pose.fx / k, fy=pose.fy / k,
                       cx=(pose.cx + 0.5) / k - 0.5, cy=(pose.cy + 0.5) / k - 0.5,
                       width=w // k, height=h // k)
    return pose2, img


def _fresh_scene(dims: GridDims, occupancy, feature_dim, hidden, origin, voxel_size,
                 config: TrainConfig, seed: int) -> Scene:
    rng = philox(seed)
    grid = build_grid(dims, feature_dim, occupancy,
                      init=lambda n, f: (config.feat_init_std * rng.normal(size=(n, f))).astype(np.float32))
    dec = init_decoder(feature_dim, hidden=hidden, seed=seed + 1)
    return Scene(grid, dec, origin=origin, voxel_size=voxel_size, tanh_mode=config.tanh_mode)


def coarse_to_fine(train_set: TrainSet, config: TrainConfig, *, dims: GridDims,
                   origin=(0.0, 0.0, 0.0), voxel_size: float = 1.0,
                   feature_dim: int = 32, hidden: int = 32,
                   implicit_config: ImplicitInitConfig | None = None,
                   integrator: str = "deterministic",
                   mc_samples_coarse: int = 8, mc_samples_fine: int = 32):
    """Two-stage schedule: train small, cull empty space, retrain fresh.

    Stage 1 runs at 1/coarse_scale grid and image resolution; its visibility
    map seeds the fine occupancy (each coarse voxel expands to a
    scale^3 block).  Stage 2 discards coarse features and weights, optionally
    initializes through the implicit MLP, trains at full scale, and culls
    again.  The stochastic integrator variant threads mc_samples_* through
    both stages.  Returns (scene, history).
    """
    k = config.coarse_scale
    if dims.nx % k or dims.ny % k or dims.nz % k:
        raise ValueError(f"dims {dims} not divisible by coarse scale {k}")
    cdims = GridDims(dims.nx // k, dims.ny // k, dims.nz // k)
    coarse_views = [downsample_view(p, i, k) for p, i in train_set.views]
    coarse_set = TrainSet(coarse_views, train_set.white_background)

    history = {}
    coarse = _fresh_scene(cdims, np.ones(cdims.voxel_shape, dtype=bool), feature_dim,
                          hidden, origin, voxel_size * k, config, config.seed)
    coarse, history["coarse"] = train_explicit(coarse, coarse_set, config,
                                               steps=config.coarse_steps,
                                               lr=config.lr_coarse, seed_stream=1,
                                               integrator=integrator,
                                               mc_samples=mc_samples_coarse)
    vis = record_max_blended_alpha(coarse, [p for p, _ in coarse_set.views])
    coarse.grid = cull(coarse.grid, vis, config.tau_vis)

    occ_fine = np.repeat(np.repeat(np.repeat(coarse.grid.occupancy, k, 0), k, 1), k, 2)
    fine = _fresh_scene(dims, occ_fine, feature_dim, hidden, origin, voxel_size,
                        config, config.seed + 10_000)
    if config.implicit_steps > 0:
        icfg = implicit_config or ImplicitInitConfig(steps=config.implicit_steps)
        fine, history["implicit"] = init_implicit(fine, train_set, icfg, config)
    fine, history["fine"] = train_explicit(fine, train_set, config,
                                           steps=config.fine_steps,
                                           lr=config.lr_fine, seed_stream=2,
                                           integrator=integrator,
                                           mc_samples=mc_samples_fine)
    vis_fine = record_max_blended_alpha(fine, [p for p, _ in train_set.views])
    fine.grid = cull(fine.grid, vis_fine, config.tau_vis)
    fine.vis_alpha = np.where(fine.grid.occupancy, vis_fine, 0.0)
    return fine, history


def evaluate_psnr(scene: Scene, views, config: RenderConfig | None = None) -> float:
    """Mean PSNR of deterministic renders against the given (pose, image) list."""
    from .metrics import psnr

    config = config or RenderConfig(tau_t=0.0, white_background=True)
    vals = [psnr(render_image(scene, pose, config).rgb, img) for pose, img in views]
    return float(np.mean(vals))
