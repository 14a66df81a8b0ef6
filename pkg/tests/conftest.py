import numpy as np
import pytest

from diver.decoder import init_decoder
from diver.grid import GridDims, build_grid
from diver.renderer import CameraPose
from diver.scene import Scene


def make_scene(occ, feature_dim=8, hidden=16, seed=0, dtype=np.float32,
               origin=(0.0, 0.0, 0.0), voxel_size=1.0, feat_std=0.5):
    """Random scene over a boolean occupancy array (nz, ny, nx)."""
    occ = np.asarray(occ, dtype=bool)
    nz, ny, nx = occ.shape
    rng = np.random.Generator(np.random.Philox(key=seed))
    grid = build_grid(GridDims(nx, ny, nz), feature_dim, occ,
                      init=lambda n, f: (feat_std * rng.normal(size=(n, f))).astype(dtype),
                      dtype=dtype)
    decoder = init_decoder(feature_dim, hidden=hidden, seed=seed + 1, dtype=dtype)
    return Scene(grid, decoder, origin=np.asarray(origin, float), voxel_size=voxel_size)


def look_at_pose(eye, target, width=32, height=32, focal=None, up=(0.0, 0.0, 1.0)):
    """Camera at eye looking at target; x right, y down, z forward."""
    eye = np.asarray(eye, float)
    fwd = np.asarray(target, float) - eye
    fwd /= np.linalg.norm(fwd)
    up = np.asarray(up, float)
    right = np.cross(fwd, up)
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(fwd, np.array([0.0, 1.0, 0.0]))
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    rot = np.stack([right, down, fwd], axis=1)  # columns: camera axes in world
    focal = focal if focal is not None else 1.2 * width
    return CameraPose(position=eye, rotation=rot, fx=focal, fy=focal,
                      cx=width / 2.0, cy=height / 2.0, width=width, height=height)


def brute_force_hits(occ, origin, direction, grid_origin=(0, 0, 0), voxel_size=1.0,
                     t_start=0.0, min_len=1e-9):
    """Oracle: intersect the ray against every occupied voxel AABB, sort by t."""
    og = (np.asarray(origin, float) - np.asarray(grid_origin, float)) / voxel_size
    dg = np.asarray(direction, float) / voxel_size
    dg = np.where(np.abs(dg) < 1e-300, 1e-300, dg)
    out = []
    for z, y, x in np.argwhere(occ):
        lo = np.array([x, y, z], float)
        ta = (lo - og) / dg
        tb = (lo + 1.0 - og) / dg
        t0 = float(np.minimum(ta, tb).max())
        t1 = float(np.maximum(ta, tb).min())
        t0 = max(t0, t_start)
        if t1 > t0 + min_len:
            out.append((t0, t1, (int(x), int(y), int(z))))
    out.sort()
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
