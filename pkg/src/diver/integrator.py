"""Closed-form integration of the trilinear basis along a ray segment.

A voxel is treated as the unit cube with feature vectors at its eight
corners.  For a segment with entry x0 and exit x1 (voxel-local coordinates)
the integral of each trilinear corner weight over the unit parameter
t in [0, 1] is a cubic polynomial of (x0, x1) with a cheap closed form.
The normalized feature integral over the segment is then the convex
combination sum_k f_k * X_k.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Corner k (0-based) sits at local coordinates CORNER_OFFSETS[k]; the weight
# of corner k at local point (x,y,z) is the product over axes of
# (coord if offset==1 else 1-coord).  Order: (0,0,0),(1,0,0),(0,1,0),(1,1,0),
# (0,0,1),(1,0,1),(0,1,1),(1,1,1).
CORNER_OFFSETS = np.array(
    [
        [0, 0, 0],
        [1, 0, 0],
        [0, 1, 0],
        [1, 1, 0],
        [0, 0, 1],
        [1, 0, 1],
        [0, 1, 1],
        [1, 1, 1],
    ],
    dtype=np.int64,
)

#: Clamp slack for entry/exit points that drift outside the voxel.
CLAMP_EPS = 1e-6


@dataclass(frozen=True)
class LocalSegment:
    """One ray/voxel interval in voxel-local coordinates.

    x0, x1 are the entry and exit points, each component in [0, 1] after
    clamping; t_in < t_out are the corresponding world ray parameters.
    """

    x0: np.ndarray
    x1: np.ndarray
    t_in: float
    t_out: float

    def __post_init__(self):
        x0 = clamp_local(np.asarray(self.x0, dtype=np.float64))
        x1 = clamp_local(np.asarray(self.x1, dtype=np.float64))
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "x1", x1)
        if not self.t_in < self.t_out:
            raise ValueError(f"segment requires t_in < t_out, got [{self.t_in}, {self.t_out}]")


@dataclass(frozen=True)
class BasisWeights:
    """Eight per-corner basis integrals; nonnegative and summing to one."""

    X: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "X", np.asarray(self.X, dtype=np.float64))
        if self.X.shape != (8,):
            raise ValueError(f"expected 8 weights, got shape {self.X.shape}")


def clamp_local(p: np.ndarray) -> np.ndarray:
    """Clamp local coordinates into [0, 1], tolerating CLAMP_EPS drift."""
    p = np.asarray(p, dtype=np.float64)
    if np.any(p < -CLAMP_EPS) or np.any(p > 1.0 + CLAMP_EPS):
        raise ValueError(f"local point {p} outside the unit voxel beyond eps={CLAMP_EPS}")
    return np.clip(p, 0.0, 1.0)


def chi(k: int, p) -> float:
    """Trilinear weight of corner k (1..8) at local point p."""
    if not 1 <= k <= 8:
        raise ValueError(f"corner index must be in 1..8, got {k}")
    return float(chi_all(p)[..., k - 1])


def chi_all(p) -> np.ndarray:
    """All eight corner weights at local points p, shape (..., 3) -> (..., 8)."""
    p = np.asarray(p, dtype=np.float64)
    one_minus = 1.0 - p
    # (..., 8, 3): pick coord where the corner offset is 1, else 1-coord
    terms = np.where(CORNER_OFFSETS.astype(bool), p[..., None, :], one_minus[..., None, :])
    return terms.prod(axis=-1)


def basis_weights(x0: np.ndarray, x1: np.ndarray) -> np.ndarray:
    """Closed-form basis integrals for segments, (..., 3) x2 -> (..., 8).

    Implements the factored cubic forms with helpers a=x0+x1, b=y0+y1,
    c=z0+z1, d=(bc+y0z0+y1z1)/6, e=(ab+x0y0+x1y1)/6.  Always computed in
    float64; results are clipped to [0, 1] to absorb roundoff at corners.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    ax0, ay0, az0 = x0[..., 0], x0[..., 1], x0[..., 2]
    ax1, ay1, az1 = x1[..., 0], x1[..., 1], x1[..., 2]

    a = ax0 + ax1
    b = ay0 + ay1
    c = az0 + az1
    d = (b * c + ay0 * az0 + ay1 * az1) / 6.0
    e = (a * b + ax0 * ay0 + ax1 * ay1) / 6.0
    xz = (a * c + ax0 * az0 + ax1 * az1) / 6.0

    x8 = (2.0 * ax0 * ay0 * az0 + 2.0 * ax1 * ay1 * az1 + a * b * c) / 12.0
    x7 = d - x8
    x6 = xz - x8
    x5 = c / 2.0 - x6 - d
    x4 = e - x8
    x3 = b / 2.0 - x7 - e
    x2 = a / 2.0 - x6 - e
    x1 = 1.0 - (a + b) / 2.0 - x5 + e

    out = np.stack([x1, x2, x3, x4, x5, x6, x7, x8], axis=-1)
    return np.clip(out, 0.0, 1.0)


def basis_integral(seg: LocalSegment) -> BasisWeights:
    """Exact basis integrals over one segment."""
    return BasisWeights(basis_weights(seg.x0, seg.x1))


def basis_integral_quadrature(seg: LocalSegment, n_points: int = 64) -> BasisWeights:
    """Gauss-Legendre quadrature of the basis along the segment.

    Independent of the closed form; exact for cubic integrands once
    n_points >= 2, so larger n_points only exercises numerical agreement.
    """
    if n_points < 1:
        raise ValueError("n_points must be >= 1")
    nodes, weights = np.polynomial.legendre.leggauss(n_points)
    t = 0.5 * (nodes + 1.0)  # map [-1,1] -> [0,1]
    w = 0.5 * weights
    pts = seg.x0[None, :] * (1.0 - t)[:, None] + seg.x1[None, :] * t[:, None]
    vals = chi_all(pts)  # (n, 8)
    return BasisWeights(w @ vals)


def integrate_features(corners: np.ndarray, w: BasisWeights) -> np.ndarray:
    """Normalized feature integral sum_k f_k X_k.

    corners: (8, feature_dim).  Since the weights sum to one the result is a
    convex combination of the corner features.
    """
    corners = np.asarray(corners)
    if corners.shape[0] != 8:
        raise ValueError(f"expected 8 corner features, got shape {corners.shape}")
    return w.X.astype(corners.dtype) @ corners


def segment_weights_pointwise(p) -> np.ndarray:
    """Degenerate-segment weights: X_k collapses to chi_k(p)."""
    return chi_all(clamp_local(p))
