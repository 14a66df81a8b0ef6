"""Stochastic baseline integrators and the variance-law test harness.

PRNG policy: Philox4x64 counter-based generator keyed by a 64-bit seed.
Replication r draws from the counter block r * 2**128, so replications are
independent, order-free, and bit-reproducible on any platform.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .integrator import chi_all
from .renderer import RenderConfig, generate_rays
from .scene import Scene


def philox(seed: int, stream: int = 0) -> np.random.Generator:
    """Generator for (seed, replication stream)."""
    return np.random.Generator(np.random.Philox(key=seed, counter=stream << 128))


@dataclass
class Integrand1D:
    """Scalar integrand on [0, 1] with its analytic moments when known."""

    f: Callable[[np.ndarray], np.ndarray]
    analytic_i: float | None = None    # int f dt
    analytic_i2: float | None = None   # int f^2 dt
    name: str = ""


@dataclass
class McEstimate:
    estimate: float
    n_samples: int
    estimator: str                    # "uniform" | "importance"
    replications: int = 1
    sample_mean: float = 0.0
    sample_variance: float = 0.0
    values: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)


def _replicate(draw_one: Callable[[int], float], n: int, m: int, estimator: str) -> McEstimate:
    values = np.array([draw_one(r) for r in range(m)])
    mean = float(values.mean())
    var = float(values.var(ddof=1)) if m > 1 else 0.0
    return McEstimate(estimate=float(values[0]) if m == 1 else mean,
                      n_samples=n, estimator=estimator, replications=m,
                      sample_mean=mean, sample_variance=var, values=values)


def mc_uniform(f: Integrand1D, n: int, seed: int, replications: int = 1) -> McEstimate:
    """(1/N) sum f(t_i) with t_i ~ U[0,1]; unbiased for int_0^1 f."""
    if n < 1:
        raise ValueError("n must be >= 1")

    def one(r: int) -> float:
        t = philox(seed, r).random(n)
        return float(np.mean(f.f(t)))

    return _replicate(one, n, replications, "uniform")


class ImportanceDensity:
    """Density on [0, 1] with an inverse-CDF sampler."""

    def pdf(self, t: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        raise NotImplementedError


@dataclass
class UniformDensity(ImportanceDensity):
    def pdf(self, t):
        return np.ones_like(t)

    def sample(self, rng, n):
        return rng.random(n)


@dataclass
class PowerDensity(ImportanceDensity):
    """P(t) = (k+1) t^k; k=1 gives the linear density 2t."""

    k: int = 1

    def pdf(self, t):
        return (self.k + 1) * np.power(t, self.k)

    def sample(self, rng, n):
        return np.power(rng.random(n), 1.0 / (self.k + 1))


def mc_importance(f: Integrand1D, p: ImportanceDensity, n: int, seed: int,
                  replications: int = 1) -> McEstimate:
    """(1/N) sum f(t_i)/P(t_i) with t_i ~ P."""
    if n < 1:
        raise ValueError("n must be >= 1")

    def one(r: int) -> float:
        t = p.sample(philox(seed, r), n)
        fv = f.f(t)
        pv = p.pdf(t)
        bad = (pv == 0) & (fv != 0)
        if np.any(bad):
            raise FloatingPointError("importance density vanished where f != 0")
        ratio = np.where(pv == 0, 0.0, fv / np.where(pv == 0, 1.0, pv))
        return float(np.mean(ratio))

    return _replicate(one, n, replications, "importance")


@dataclass
class VarianceReport:
    estimator: str
    n: int
    m: int
    mean: float
    variance: float
    predicted_variance: float
    mean_error: float
    mean_tolerance: float
    variance_rel_error: float
    passed: bool

    def to_dict(self) -> dict:
        return {
            "estimator": self.estimator,
            "N": self.n,
            "M": self.m,
            "mean": self.mean,
            "variance": self.variance,
            "predicted_variance": self.predicted_variance,
            "pass": self.passed,
        }


def variance_law_check(f: Integrand1D, n: int, m: int, seed: int,
                       rel_tol: float = 0.05) -> VarianceReport:
    """Empirically verify Var(mean estimate) = (I2 - I^2)/N.

    Runs m replications of the uniform estimator with n samples each and
    compares the replication variance against the law, and the replication
    mean against the analytic integral at 4 standard errors.
    """
    if m < 1000:
        raise ValueError("need at least 1000 replications for a stable variance")
    if f.analytic_i is None or f.analytic_i2 is None:
        raise ValueError("variance law check needs analytic I and I2")
    est = mc_uniform(f, n, seed, replications=m)
    c = f.analytic_i2 - f.analytic_i**2
    predicted = c / n
    mean_err = abs(est.sample_mean - f.analytic_i)
    mean_tol = 4.0 * np.sqrt(c / (n * m)) if c > 0 else 1e-12
    if predicted > 0:
        var_rel = abs(est.sample_variance - predicted) / predicted
    else:
        var_rel = abs(est.sample_variance)
    passed = bool(var_rel <= rel_tol and mean_err <= mean_tol)
    return VarianceReport("uniform", n, m, est.sample_mean, est.sample_variance,
                          predicted, mean_err, mean_tol, var_rel, passed)


# -- stochastic rendering ---------------------------------------------------

def stratified_samples(scene, origins, dirs, n_samples: int, seed: int):
    """Jittered per-stratum samples of every ray inside the scene AABB.

    Returns (t (R,S), delta (R,S), hit_aabb (R,)); rays that miss the box get
    delta = 0 everywhere.
    """
    origins = np.asarray(origins, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    lo, hi = scene.world_aabb()
    d = np.where(np.abs(dirs) < 1e-12, 1e-12, dirs)
    ta = (lo - origins) / d
    tb = (hi - origins) / d
    t0 = np.maximum(np.maximum.reduce(np.minimum(ta, tb), axis=-1), 0.0)
    t1 = np.minimum.reduce(np.maximum(ta, tb), axis=-1)
    ok = t1 > t0 + 1e-12
    span = np.where(ok, t1 - t0, 0.0)

    r, s = len(origins), n_samples
    u = philox(seed).random((r, s))
    edges = (np.arange(s) + u) / s                 # jittered stratum positions
    t = t0[:, None] + span[:, None] * edges
    t_next = np.concatenate([t[:, 1:], t1[:, None]], axis=1)
    delta = np.where(ok[:, None], t_next - t, 0.0)
    return t, delta, ok


def sample_field(scene: Scene, points: np.ndarray, dirs: np.ndarray,
                 color_too: bool = True):
    """Pointwise (sigma, color) of the trilinear feature field at world points.

    points: (N, 3).  Points in unoccupied voxels contribute sigma = 0 and are
    not decoded (no MLP call); returns (sigma, color, decoded_mask).
    """
    from .renderer import _decode_color, _decode_sigma

    g = (points - scene.origin) / scene.voxel_size
    n = np.array([scene.dims.nx, scene.dims.ny, scene.dims.nz])
    vox = np.clip(np.floor(g).astype(np.int64), 0, n - 1)
    inside = np.all((g >= 0) & (g <= n), axis=-1)
    occ = scene.grid.occupancy[vox[:, 2], vox[:, 1], vox[:, 0]] & inside

    sigma = np.zeros(len(points))
    color = np.zeros((len(points), 3))
    if occ.any():
        from .grid import corner_pool_indices

        local = np.clip(g[occ] - vox[occ], 0.0, 1.0)
        pool = scene.effective_pool()
        weights = chi_all(local).astype(pool.dtype)
        corners = pool[corner_pool_indices(scene.grid, vox[occ])]
        feats = np.einsum("nk,nkf->nf", weights, corners)
        s, h2 = _decode_sigma(scene.decoder, feats)
        sigma[occ] = s.astype(np.float64)
        if color_too:
            color[occ] = _decode_color(scene.decoder, h2, dirs[occ]).astype(np.float64)
    return sigma, color, occ


def mc_render_rays(scene: Scene, origins, dirs, n_samples: int, seed: int,
                   config: RenderConfig | None = None):
    """Stochastic render of a ray batch (the NeRF-style quadrature baseline).

    Point densities are decoded from pointwise-interpolated features and
    composited with alpha_i = 1 - exp(-sigma_i * delta_i).  Returns
    (rgb (R,3), transmittance (R,), mlp_calls).
    """
    if n_samples < 2:
        raise ValueError("n_samples must be >= 2")
    config = config or RenderConfig()
    origins = np.asarray(origins, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    r, s = len(origins), n_samples

    t, delta, ok = stratified_samples(scene, origins, dirs, n_samples, seed)
    pts = origins[:, None, :] + t[..., None] * dirs[:, None, :]
    dirs_flat = np.repeat(dirs, s, axis=0)
    sigma, color, decoded = sample_field(scene, pts.reshape(-1, 3), dirs_flat)
    sigma = sigma.reshape(r, s)
    color = color.reshape(r, s, 3)

    alpha = -np.expm1(-sigma * delta)
    t_run = np.cumprod(1.0 - alpha, axis=1)
    t_prev = np.concatenate([np.ones((r, 1)), t_run[:, :-1]], axis=1)
    weights = t_prev * alpha
    rgb = (weights[..., None] * color).sum(axis=1)
    transmittance = t_run[:, -1]
    rgb += transmittance[:, None] * config.effective_background()
    return rgb, transmittance, int(decoded.sum())


def mc_render_ray(scene: Scene, ray, n_samples: int, seed: int,
                  config: RenderConfig | None = None) -> np.ndarray:
    """Stochastic estimate of one ray's color; ray = (origin, direction)."""
    origin, direction = ray
    rgb, _, _ = mc_render_rays(scene, np.asarray(origin)[None],
                               np.asarray(direction)[None], n_samples, seed, config)
    return rgb[0]


def mc_render_image(scene: Scene, pose, n_samples: int, seed: int,
                    config: RenderConfig | None = None):
    """Full-image stochastic render; returns (rgb (H,W,3), mlp_calls)."""
    origins, dirs = generate_rays(pose)
    rgb, _, calls = mc_render_rays(scene, origins, dirs, n_samples, seed, config)
    return rgb.reshape(pose.height, pose.width, 3), calls
