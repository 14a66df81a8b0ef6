"""Tiny MLP decoding (integrated feature, view direction) -> (sigma, color).

Layer stack (affine layers L1..L5):
    e1 = W1 f + b1            ReLU
    e2 = W2 h1 + b2           ReLU
    z3 = W3 h2 + b3           row 0 -> softplus -> sigma; rows 1.. = h3 (linear)
    e4 = W4 [gamma(d); h3] + b4   ReLU
    z5 = W5 h4 + b5           sigmoid -> color

No activation sits between the integrated feature and L1, nor on h3, which
is what makes the two inference-time refactorings exact: W1 can be folded
into the feature pool, and the h3 path of L3/L4 collapses to a single
affine map W4' = W4_h W3_h, b4' = W4_h b3_h + b4.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np
from scipy.special import expit

from .grid import FeatureGrid


def pos_encode(v, n_bands: int) -> np.ndarray:
    """Sinusoidal encoding: raw components, then per-band sin/cos triples.

    (..., d) -> (..., d*(1+2*n_bands)); band l uses frequency 2**l * pi.
    Keeps the input's float dtype (integer inputs promote to float64).
    """
    v = np.asarray(v)
    if not np.issubdtype(v.dtype, np.floating):
        v = v.astype(np.float64)
    parts = [v]
    for l in range(n_bands):
        arg = (2.0**l) * np.pi * v
        parts.append(np.sin(arg))
        parts.append(np.cos(arg))
    return np.concatenate(parts, axis=-1)


def encoded_dim(in_dim: int, n_bands: int) -> int:
    return in_dim * (1 + 2 * n_bands)


def softplus(x):
    return np.logaddexp(0.0, x)


@dataclass
class DecoderWeights:
    """Five affine layers; see module docstring for the wiring."""

    w1: np.ndarray  # (H, F)
    b1: np.ndarray  # (H,)
    w2: np.ndarray  # (H, H)
    b2: np.ndarray  # (H,)
    w3: np.ndarray  # (1+H, H), row 0 is the density row
    b3: np.ndarray  # (1+H,)
    w4: np.ndarray  # (H, E+H), first E columns act on the encoded direction
    b4: np.ndarray  # (H,)
    w5: np.ndarray  # (3, H)
    b5: np.ndarray  # (3,)
    n_bands: int = 4

    @property
    def feature_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def hidden(self) -> int:
        return self.w1.shape[0]

    @property
    def enc_dim(self) -> int:
        return encoded_dim(3, self.n_bands)

    @property
    def dtype(self):
        return self.w1.dtype

    def params(self):
        """(name, array) pairs in a fixed order, for optimizers and I/O."""
        return [(f.name, getattr(self, f.name)) for f in fields(self) if f.name != "n_bands"]

    def copy(self) -> "DecoderWeights":
        arrays = {name: arr.copy() for name, arr in self.params()}
        return DecoderWeights(n_bands=self.n_bands, **arrays)

    def astype(self, dtype) -> "DecoderWeights":
        arrays = {name: arr.astype(dtype) for name, arr in self.params()}
        return DecoderWeights(n_bands=self.n_bands, **arrays)

    def n_params(self) -> int:
        return sum(arr.size for _, arr in self.params())


def init_decoder(feature_dim: int, hidden: int = 32, n_bands: int = 4,
                 seed: int = 0, dtype=np.float32) -> DecoderWeights:
    """Seeded uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) initialization."""
    rng = np.random.Generator(np.random.Philox(key=seed))
    e = encoded_dim(3, n_bands)

    def layer(out_dim, in_dim):
        bound = 1.0 / np.sqrt(in_dim)
        w = rng.uniform(-bound, bound, size=(out_dim, in_dim))
        b = rng.uniform(-bound, bound, size=out_dim)
        return w.astype(dtype), b.astype(dtype)

    w1, b1 = layer(hidden, feature_dim)
    w2, b2 = layer(hidden, hidden)
    w3, b3 = layer(1 + hidden, hidden)
    w4, b4 = layer(hidden, e + hidden)
    w5, b5 = layer(3, hidden)
    return DecoderWeights(w1, b1, w2, b2, w3, b3, w4, b4, w5, b5, n_bands=n_bands)


def _as_batch(x, dim):
    x = np.asarray(x)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None]
    if x.shape[-1] != dim:
        raise ValueError(f"expected trailing dim {dim}, got shape {x.shape}")
    return x, squeeze


def forward(w: DecoderWeights, feat, dirs, with_cache: bool = False):
    """Decode integrated features and unit view directions.

    feat: (N, F) or (F,); dirs: (N, 3) or (3,).  Returns (sigma, color) with
    sigma >= 0 and color in (0, 1)^3; with_cache additionally returns the
    intermediate activations needed by backward().
    """
    feat, squeeze = _as_batch(feat, w.feature_dim)
    dirs, _ = _as_batch(dirs, 3)
    if feat.shape[0] != dirs.shape[0]:
        raise ValueError(f"batch mismatch: {feat.shape[0]} features vs {dirs.shape[0]} dirs")
    feat = feat.astype(w.dtype, copy=False)
    gd = pos_encode(dirs.astype(w.dtype), w.n_bands)

    e1 = feat @ w.w1.T + w.b1
    h1 = np.maximum(e1, 0)
    e2 = h1 @ w.w2.T + w.b2
    h2 = np.maximum(e2, 0)
    z3 = h2 @ w.w3.T + w.b3
    sigma_pre, h3 = z3[:, 0], z3[:, 1:]
    g4 = np.concatenate([gd, h3], axis=-1)
    e4 = g4 @ w.w4.T + w.b4
    h4 = np.maximum(e4, 0)
    z5 = h4 @ w.w5.T + w.b5
    sigma = softplus(sigma_pre)
    color = expit(z5)

    if squeeze:
        out = (sigma[0], color[0])
    else:
        out = (sigma, color)
    if with_cache:
        cache = dict(feat=feat, gd=gd, e1=e1, h1=h1, e2=e2, h2=h2,
                     sigma_pre=sigma_pre, g4=g4, e4=e4, h4=h4, color=color)
        return out + (cache,)
    return out


@dataclass
class DecoderGrads:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray
    w4: np.ndarray
    b4: np.ndarray
    w5: np.ndarray
    b5: np.ndarray

    def params(self):
        return [(f.name, getattr(self, f.name)) for f in fields(self)]


def backward(w: DecoderWeights, cache: dict, d_sigma, d_color):
    """Reverse-mode gradients of forward().

    d_sigma: (N,), d_color: (N, 3) upstream gradients.  Returns
    (DecoderGrads summed over the batch, per-sample feature gradient (N, F)).
    """
    d_sigma = np.atleast_1d(np.asarray(d_sigma, dtype=w.dtype))
    d_color = np.atleast_2d(np.asarray(d_color, dtype=w.dtype))
    color, e4, g4, h4 = cache["color"], cache["e4"], cache["g4"], cache["h4"]
    e = w.enc_dim

    dz5 = d_color * color * (1.0 - color)
    gw5 = dz5.T @ h4
    gb5 = dz5.sum(axis=0)
    de4 = (dz5 @ w.w5) * (e4 > 0)
    gw4 = de4.T @ g4
    gb4 = de4.sum(axis=0)
    dh3 = de4 @ w.w4[:, e:]

    dsig_pre = d_sigma * expit(cache["sigma_pre"])  # softplus'
    dz3 = np.concatenate([dsig_pre[:, None], dh3], axis=-1)
    gw3 = dz3.T @ cache["h2"]
    gb3 = dz3.sum(axis=0)
    de2 = (dz3 @ w.w3) * (cache["e2"] > 0)
    gw2 = de2.T @ cache["h1"]
    gb2 = de2.sum(axis=0)
    de1 = (de2 @ w.w2) * (cache["e1"] > 0)
    gw1 = de1.T @ cache["feat"]
    gb1 = de1.sum(axis=0)
    d_feat = de1 @ w.w1

    grads = DecoderGrads(gw1, gb1, gw2, gb2, gw3, gb3, gw4, gb4, gw5, gb5)
    return grads, d_feat


@dataclass
class FusedDecoderWeights:
    """Inference-fused parameters.

    w1 is retained for pre-multiplying feature pools; the forward path takes
    features that are already W1-multiplied and starts at the bias add.
    """

    w1: np.ndarray      # (H, F), applied to pools, not in the hot path
    b1: np.ndarray      # (H,)
    w2: np.ndarray
    b2: np.ndarray
    w3_sigma: np.ndarray  # (H,)
    b3_sigma: float
    w4d: np.ndarray     # (H, E) view-encoding columns of L4
    w4p: np.ndarray     # (H, H) = W4_h @ W3_h
    b4p: np.ndarray     # (H,)  = W4_h @ b3_h + b4
    w5: np.ndarray
    b5: np.ndarray
    n_bands: int = 4

    @property
    def hidden(self) -> int:
        return self.w1.shape[0]

    @property
    def dtype(self):
        return self.w1.dtype


def fuse(w: DecoderWeights) -> FusedDecoderWeights:
    """Collapse the h3 path of L3/L4 and expose W1 for pool pre-multiplication."""
    e = w.enc_dim
    w3h, b3h = w.w3[1:], w.b3[1:]
    w4h = w.w4[:, e:]
    return FusedDecoderWeights(
        w1=w.w1.copy(),
        b1=w.b1.copy(),
        w2=w.w2.copy(),
        b2=w.b2.copy(),
        w3_sigma=w.w3[0].copy(),
        b3_sigma=float(w.b3[0]),
        w4d=w.w4[:, :e].copy(),
        w4p=w4h @ w3h,
        b4p=w4h @ b3h + w.b4,
        w5=w.w5.copy(),
        b5=w.b5.copy(),
        n_bands=w.n_bands,
    )


def forward_fused(fw: FusedDecoderWeights, pre_feat, dirs, sigma_only: bool = False):
    """Fused decode of W1-pre-multiplied integrated features (N, H)."""
    pre_feat, squeeze = _as_batch(pre_feat, fw.hidden)
    dirs, _ = _as_batch(dirs, 3)
    pre_feat = pre_feat.astype(fw.dtype, copy=False)

    h1 = np.maximum(pre_feat + fw.b1, 0)
    h2 = np.maximum(h1 @ fw.w2.T + fw.b2, 0)
    sigma = softplus(h2 @ fw.w3_sigma + fw.b3_sigma)
    if sigma_only:
        return sigma[0] if squeeze else sigma
    gd = pos_encode(dirs.astype(fw.dtype), fw.n_bands)
    e4 = gd @ fw.w4d.T + h2 @ fw.w4p.T + fw.b4p
    h4 = np.maximum(e4, 0)
    color = expit(h4 @ fw.w5.T + fw.b5)
    if squeeze:
        return sigma[0], color[0]
    return sigma, color


def forward_fused_raw(fw: FusedDecoderWeights, feat, dirs):
    """Fused decode of raw integrated features, multiplying by W1 on the fly."""
    feat, squeeze = _as_batch(feat, fw.w1.shape[1])
    pre = feat.astype(fw.dtype, copy=False) @ fw.w1.T
    out = forward_fused(fw, pre, dirs)
    if squeeze:
        return out[0][0], out[1][0]
    return out


def premultiply_features(grid: FeatureGrid, w1: np.ndarray, b1: np.ndarray) -> FeatureGrid:
    """Fold W1 into the feature pool: every pool row f becomes W1 f.

    The bias b1 is shape-checked but stays with the fused weights; the
    renderer adds it after accumulating sum_k (W1 f_k) X_k.
    """
    w1 = np.asarray(w1)
    b1 = np.asarray(b1)
    if w1.shape[1] != grid.feature_dim:
        raise ValueError(f"W1 input dim {w1.shape[1]} != grid feature_dim {grid.feature_dim}")
    if b1.shape != (w1.shape[0],):
        raise ValueError(f"b1 shape {b1.shape} inconsistent with W1 {w1.shape}")
    pool = grid.feature_pool @ w1.T.astype(grid.feature_pool.dtype)
    return FeatureGrid(grid.dims, w1.shape[0], grid.vertex_index.copy(), pool, grid.occupancy.copy())
