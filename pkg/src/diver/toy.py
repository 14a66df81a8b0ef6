"""Synthetic benchmark scene: an opaque colored blob plus a thin translucent
disk (a miniature of the classic failure case for sampled integrators).

The density/color fields are piecewise constant over two analytic shapes, so
the volume rendering integral has an exact closed form per ray: split the
ray at shape boundaries and composite alpha = 1 - exp(-sigma * length)
segment by segment.  That closed form provides independent ground-truth
images for training and evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .renderer import CameraPose, generate_rays
from .trainer import TrainSet


@dataclass
class ToySpec:
    blob_center: np.ndarray = field(default_factory=lambda: np.array([0.5, 0.5, 0.40]))
    blob_radius: float = 0.20
    blob_density: float = 70.0           # per world unit; opaque across its width
    blob_color: np.ndarray = field(default_factory=lambda: np.array([0.85, 0.30, 0.20]))
    disk_center: np.ndarray = field(default_factory=lambda: np.array([0.5, 0.5, 0.74]))
    disk_radius: float = 0.30
    disk_half_thickness: float = 0.010   # ~1/3 voxel at 16^3 over the unit box
    disk_density: float = 45.0           # translucent through its thickness
    disk_color: np.ndarray = field(default_factory=lambda: np.array([0.20, 0.45, 0.90]))

    def __post_init__(self):
        self.blob_center = np.asarray(self.blob_center, dtype=np.float64)
        self.blob_color = np.asarray(self.blob_color, dtype=np.float64)
        self.disk_center = np.asarray(self.disk_center, dtype=np.float64)
        self.disk_color = np.asarray(self.disk_color, dtype=np.float64)


def _sphere_interval(spec: ToySpec, o, d):
    """Entry/exit params of rays against the blob; (t0, t1) with t1<=t0 on miss."""
    oc = o - spec.blob_center
    b = np.einsum("rd,rd->r", oc, d)
    c = np.einsum("rd,rd->r", oc, oc) - spec.blob_radius**2
    disc = b * b - c
    ok = disc > 0
    sq = np.sqrt(np.where(ok, disc, 0.0))
    t0 = np.where(ok, -b - sq, 1.0)
    t1 = np.where(ok, -b + sq, 0.0)
    return t0, t1


def _disk_interval(spec: ToySpec, o, d):
    """Ray interval inside the disk region (slab about z intersect cylinder)."""
    dz = np.where(np.abs(d[:, 2]) < 1e-15, 1e-15, d[:, 2])
    za = (spec.disk_center[2] - spec.disk_half_thickness - o[:, 2]) / dz
    zb = (spec.disk_center[2] + spec.disk_half_thickness - o[:, 2]) / dz
    slab0, slab1 = np.minimum(za, zb), np.maximum(za, zb)

    oc = o[:, :2] - spec.disk_center[:2]
    dd = d[:, :2]
    a = np.einsum("rd,rd->r", dd, dd)
    b = np.einsum("rd,rd->r", oc, dd)
    c = np.einsum("rd,rd->r", oc, oc) - spec.disk_radius**2
    # rays parallel to z: a ~ 0, inside the cylinder iff c < 0
    axial = a < 1e-18
    disc = b * b - a * c
    ok = (disc > 0) & ~axial
    sq = np.sqrt(np.where(ok, disc, 0.0))
    sa = np.where(ok, (-b - sq) / np.where(axial, 1.0, a), np.where(axial & (c < 0), -np.inf, 1.0))
    sb = np.where(ok, (-b + sq) / np.where(axial, 1.0, a), np.where(axial & (c < 0), np.inf, 0.0))
    t0 = np.maximum(slab0, sa)
    t1 = np.minimum(slab1, sb)
    return t0, t1


def analytic_render(spec: ToySpec, pose: CameraPose, background=(1.0, 1.0, 1.0)) -> np.ndarray:
    """Exact volume rendering of the piecewise-constant fields."""
    o, d = generate_rays(pose)
    r = len(o)
    s0, s1 = _sphere_interval(spec, o, d)
    k0, k1 = _disk_interval(spec, o, d)

    # segment boundaries per ray: clip to t >= 0, pad misses to zero-length
    pts = np.stack([s0, s1, k0, k1], axis=1)
    pts = np.clip(pts, 0.0, None)
    pts.sort(axis=1)
    zero = np.zeros((r, 1))
    bounds = np.concatenate([zero, pts], axis=1)  # (r, 5): 4 segments

    rgb = np.zeros((r, 3))
    transmittance = np.ones(r)
    for seg in range(4):
        ta, tb = bounds[:, seg], bounds[:, seg + 1]
        length = np.maximum(tb - ta, 0.0)
        mid = 0.5 * (ta + tb)
        in_blob = (mid > s0) & (mid < s1) & (length > 0)
        in_disk = (mid > k0) & (mid < k1) & (length > 0)
        sigma = spec.blob_density * in_blob + spec.disk_density * in_disk
        num = (spec.blob_density * in_blob)[:, None] * spec.blob_color \
            + (spec.disk_density * in_disk)[:, None] * spec.disk_color
        color = np.where(sigma[:, None] > 0, num / np.maximum(sigma, 1e-300)[:, None], 0.0)
        alpha = -np.expm1(-sigma * length)
        rgb += (transmittance * alpha)[:, None] * color
        transmittance *= 1.0 - alpha
    rgb += transmittance[:, None] * np.asarray(background, dtype=np.float64)
    return rgb.reshape(pose.height, pose.width, 3)


def ring_pose(angle: float, elevation: float, width: int, height: int,
              target=(0.5, 0.5, 0.55), radius: float = 1.6) -> CameraPose:
    """Camera on a ring around the unit box, looking at its center of mass."""
    target = np.asarray(target, dtype=np.float64)
    eye = target + radius * np.array([np.cos(angle) * np.cos(elevation),
                                      np.sin(angle) * np.cos(elevation),
                                      np.sin(elevation)])
    fwd = target - eye
    fwd /= np.linalg.norm(fwd)
    up = np.array([0.0, 0.0, 1.0])
    right = np.cross(fwd, up)
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    rot = np.stack([right, down, fwd], axis=1)
    focal = 1.45 * width
    return CameraPose(position=eye, rotation=rot, fx=focal, fy=focal,
                      cx=width / 2.0, cy=height / 2.0, width=width, height=height)


def toy_train_set(spec: ToySpec | None = None, n_views: int = 8, width: int = 64,
                  height: int = 64) -> TrainSet:
    """Posed ground-truth views on a ring with alternating elevation."""
    spec = spec or ToySpec()
    views = []
    for i in range(n_views):
        angle = 2.0 * np.pi * i / n_views
        elevation = 0.28 if i % 2 == 0 else -0.12
        pose = ring_pose(angle, elevation, width, height)
        views.append((pose, analytic_render(spec, pose)))
    return TrainSet(views, white_background=True)


def toy_test_views(spec: ToySpec | None = None, n_views: int = 3, width: int = 64,
                   height: int = 64):
    """Held-out poses at angles between the training ring positions."""
    spec = spec or ToySpec()
    out = []
    for i in range(n_views):
        angle = 2.0 * np.pi * (i + 0.37) / n_views
        pose = ring_pose(angle, 0.10 + 0.05 * i, width, height)
        out.append((pose, analytic_render(spec, pose)))
    return out


def disk_only_pixel_mask(spec: ToySpec, pose: CameraPose) -> np.ndarray:
    """Pixels whose ray crosses the translucent disk but not the blob."""
    o, d = generate_rays(pose)
    s0, s1 = _sphere_interval(spec, o, d)
    k0, k1 = _disk_interval(spec, o, d)
    hits_disk = (k1 > np.maximum(k0, 0.0) + 1e-12)
    hits_blob = (s1 > np.maximum(s0, 0.0) + 1e-12)
    return (hits_disk & ~hits_blob).reshape(pose.height, pose.width)
