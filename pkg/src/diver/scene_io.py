"""Binary scene format: header, occupancy bitmask, feature pool, decoder
weights, world transform.  Everything is little-endian regardless of host.

Layout (offsets in bytes):

    0   magic "DIVR"
    4   u16  format version (currently 1)
    6   u32  nx, ny, nz               voxel counts per axis
    18  u16  feature_dim
    20  u8   feature encoding          0 = F32, 1 = U8TANH
    21  u8   decoder variant           0 = hidden 32, 1 = hidden 64
    22  u64  active vertex count
    30  u64  occupied voxel count
    38  u64[ceil(nvox/64)]             occupancy bitmask; voxel (i,j,k) is bit
                                       (i + nx*(j + ny*k)); bit b of word w is
                                       index 64*w + b (LSB first)
    ..  feature pool                   active vertices in scan order;
                                       f32[F] per vertex, or u8[F] quantized
    ..  decoder weights, f32 row-major: w1,b1,w2,b2,w3,b3,w4,b4,w5,b5
    ..  f64[3] world origin, f64 voxel size

The dense vertex index array is not stored; it is reconstructed from the
occupancy mask by the canonical scan, which also fixes the pool order, so a
save -> load -> save round trip is byte-identical.
"""

from __future__ import annotations

import struct

import numpy as np

from .decoder import DecoderWeights, encoded_dim
from .grid import FeatureGrid, GridDims, index_from_occupancy
from .scene import Scene

MAGIC = b"DIVR"
VERSION = 1
ENC_F32 = 0
ENC_U8TANH = 1
_VARIANT_HIDDEN = {0: 32, 1: 64}
_HIDDEN_VARIANT = {32: 0, 64: 1}
_HEADER = struct.Struct("<4sHIIIHBBQQ")
_N_BANDS = 4  # decoder positional-encoding bands fixed by the format


class SceneFormatError(ValueError):
    """Malformed scene file; message names the offending byte offset."""


def quantize_features(pool: np.ndarray) -> np.ndarray:
    """Map features s in (-1, 1) to u8: q = round_half_away((s+1)/2 * 255)."""
    pool = np.asarray(pool, dtype=np.float64)
    if np.any(np.abs(pool) >= 1.0):
        raise ValueError("quantization requires features strictly inside (-1, 1); "
                         "is this a tanh-mode scene?")
    scaled = (pool + 1.0) * 0.5 * 255.0
    return np.floor(scaled + 0.5).astype(np.uint8)  # values are >= 0


def dequantize_features(q: np.ndarray) -> np.ndarray:
    """Inverse map s' = 2q/255 - 1; |s' - s| <= 1/255 componentwise."""
    return (2.0 * np.asarray(q, dtype=np.float32) / 255.0 - 1.0).astype(np.float32)


def _pack_occupancy(occ: np.ndarray) -> bytes:
    bits = np.packbits(occ.ravel().astype(np.uint8), bitorder="little")
    n_words = (occ.size + 63) // 64
    padded = np.zeros(n_words * 8, dtype=np.uint8)
    padded[: len(bits)] = bits
    return padded.tobytes()


def _unpack_occupancy(buf: bytes, dims: GridDims) -> np.ndarray:
    raw = np.frombuffer(buf, dtype=np.uint8)
    bits = np.unpackbits(raw, count=dims.n_voxels, bitorder="little")
    return bits.astype(bool).reshape(dims.voxel_shape)


def _decoder_layout(feature_dim: int, hidden: int):
    e = encoded_dim(3, _N_BANDS)
    return [
        ("w1", (hidden, feature_dim)), ("b1", (hidden,)),
        ("w2", (hidden, hidden)), ("b2", (hidden,)),
        ("w3", (1 + hidden, hidden)), ("b3", (1 + hidden,)),
        ("w4", (hidden, e + hidden)), ("b4", (hidden,)),
        ("w5", (3, hidden)), ("b5", (3,)),
    ]


def save(scene: Scene, path, encoding: str = "f32") -> None:
    """Write a scene; encoding "f32" or "u8tanh".

    tanh-mode features are materialized (squashed) on save, so the file
    always holds directly usable feature values.
    """
    enc = {"f32": ENC_F32, "u8tanh": ENC_U8TANH}.get(encoding.lower())
    if enc is None:
        raise ValueError(f"unknown encoding {encoding!r}")
    dec = scene.decoder
    if not isinstance(dec, DecoderWeights):
        raise ValueError("only plain (unfused) decoders are serializable")
    if dec.hidden not in _HIDDEN_VARIANT:
        raise ValueError(f"decoder hidden width {dec.hidden} has no format variant (32 or 64)")
    if dec.n_bands != _N_BANDS:
        raise ValueError(f"format fixes decoder n_bands={_N_BANDS}, got {dec.n_bands}")

    grid = scene.grid
    dims = grid.dims
    pool = scene.effective_pool()
    header = _HEADER.pack(MAGIC, VERSION, dims.nx, dims.ny, dims.nz,
                          grid.feature_dim, enc, _HIDDEN_VARIANT[dec.hidden],
                          grid.n_active_vertices, grid.n_occupied)
    parts = [header, _pack_occupancy(grid.occupancy)]
    if enc == ENC_F32:
        parts.append(np.ascontiguousarray(pool, dtype="<f4").tobytes())
    else:
        parts.append(quantize_features(pool).tobytes())
    for name, shape in _decoder_layout(grid.feature_dim, dec.hidden):
        arr = getattr(dec, name)
        if arr.shape != shape:
            raise ValueError(f"decoder field {name} has shape {arr.shape}, format needs {shape}")
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    parts.append(np.asarray(scene.origin, dtype="<f8").tobytes())
    parts.append(struct.pack("<d", scene.voxel_size))
    try:
        with open(path, "wb") as fh:
            fh.write(b"".join(parts))
    except OSError as e:
        raise OSError(f"saving scene to {path}: {e}") from e


def _take(buf: bytes, offset: int, n: int, what: str) -> tuple[bytes, int]:
    if offset + n > len(buf):
        raise SceneFormatError(
            f"truncated file: need {n} bytes for {what} at offset {offset}, "
            f"have {len(buf) - offset}")
    return buf[offset : offset + n], offset + n


def load(path) -> Scene:
    """Read a scene file, validating structure and counts."""
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as e:
        raise OSError(f"loading scene from {path}: {e}") from e

    raw, off = _take(buf, 0, _HEADER.size, "header")
    magic, version, nx, ny, nz, fdim, enc, variant, n_active, n_occ = _HEADER.unpack(raw)
    if magic != MAGIC:
        raise SceneFormatError(f"bad magic {magic!r} at offset 0")
    if version != VERSION:
        raise SceneFormatError(f"unsupported format version {version} at offset 4")
    if enc not in (ENC_F32, ENC_U8TANH):
        raise SceneFormatError(f"unknown feature encoding {enc} at offset 20")
    if variant not in _VARIANT_HIDDEN:
        raise SceneFormatError(f"unknown decoder variant {variant} at offset 21")
    try:
        dims = GridDims(nx, ny, nz)
    except ValueError as e:
        raise SceneFormatError(f"bad grid dims at offset 6: {e}") from e

    mask_bytes = ((dims.n_voxels + 63) // 64) * 8
    raw, off = _take(buf, off, mask_bytes, "occupancy bitmask")
    occ = _unpack_occupancy(raw, dims)
    if int(occ.sum()) != n_occ:
        raise SceneFormatError(
            f"occupancy mask holds {int(occ.sum())} voxels but header says {n_occ}")
    vertex_index, derived_active = index_from_occupancy(occ)
    if derived_active != n_active:
        raise SceneFormatError(
            f"occupancy implies {derived_active} active vertices but header says {n_active}")

    item = 4 if enc == ENC_F32 else 1
    raw, off = _take(buf, off, n_active * fdim * item, "feature pool")
    if enc == ENC_F32:
        pool = np.frombuffer(raw, dtype="<f4").reshape(n_active, fdim).astype(np.float32)
    else:
        q = np.frombuffer(raw, dtype=np.uint8).reshape(n_active, fdim)
        pool = dequantize_features(q)

    hidden = _VARIANT_HIDDEN[variant]
    fields = {}
    for name, shape in _decoder_layout(fdim, hidden):
        n = int(np.prod(shape)) * 4
        raw, off = _take(buf, off, n, f"decoder field {name}")
        fields[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)
    decoder = DecoderWeights(n_bands=_N_BANDS, **fields)

    raw, off = _take(buf, off, 32, "world transform")
    origin = np.frombuffer(raw[:24], dtype="<f8").copy()
    (voxel_size,) = struct.unpack("<d", raw[24:])
    if voxel_size <= 0:
        raise SceneFormatError(f"non-positive voxel size at offset {off - 8}")
    if off != len(buf):
        raise SceneFormatError(f"{len(buf) - off} unexpected trailing bytes at offset {off}")

    grid = FeatureGrid(dims, fdim, vertex_index, pool, occ)
    # stored features are already effective values (tanh applied on save)
    return Scene(grid, decoder, origin=origin, voxel_size=float(voxel_size), tanh_mode=False)
