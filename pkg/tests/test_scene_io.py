import numpy as np
import pytest

from conftest import look_at_pose, make_scene

from diver.metrics import psnr
from diver.renderer import RenderConfig, render_image
from diver.scene_io import (
    SceneFormatError,
    dequantize_features,
    load,
    quantize_features,
    save,
)


def io_scene(seed=0, tanh=False, occ_shape=(4, 4, 4), density=0.5):
    rng = np.random.default_rng(seed)
    occ = rng.random(occ_shape) < density
    occ[0, 0, 0] = True  # never fully empty
    scene = make_scene(occ, feature_dim=8, hidden=32, seed=seed,
                       origin=(0.25, -1.0, 3.5), voxel_size=0.125)
    scene.tanh_mode = tanh
    return scene


class TestRoundTrip:
    def test_f32_save_load_save_byte_identical(self, tmp_path):
        scene = io_scene(seed=1)
        p1, p2 = tmp_path / "a.divr", tmp_path / "b.divr"
        save(scene, p1, "f32")
        loaded = load(p1)
        save(loaded, p2, "f32")
        assert p1.read_bytes() == p2.read_bytes()

    def test_f32_preserves_everything(self, tmp_path):
        scene = io_scene(seed=2)
        path = tmp_path / "s.divr"
        save(scene, path, "f32")
        out = load(path)
        np.testing.assert_array_equal(out.grid.occupancy, scene.grid.occupancy)
        np.testing.assert_array_equal(out.grid.vertex_index, scene.grid.vertex_index)
        np.testing.assert_array_equal(out.grid.feature_pool, scene.grid.feature_pool)
        for (n1, a1), (n2, a2) in zip(out.decoder.params(), scene.decoder.params()):
            assert n1 == n2
            np.testing.assert_array_equal(a1, a2)
        np.testing.assert_array_equal(out.origin, scene.origin)
        assert out.voxel_size == scene.voxel_size

    def test_renders_identically_after_reload(self, tmp_path):
        scene = io_scene(seed=3)
        path = tmp_path / "s.divr"
        save(scene, path, "f32")
        out = load(path)
        pose = look_at_pose(scene.origin + 2.0, scene.origin + 0.25, width=8, height=8)
        a = render_image(scene, pose).rgb
        b = render_image(out, pose).rgb
        np.testing.assert_array_equal(a, b)

    def test_empty_scene_size(self, tmp_path):
        scene = make_scene(np.zeros((2, 2, 2), dtype=bool), feature_dim=8, hidden=32)
        path = tmp_path / "empty.divr"
        save(scene, path, "f32")
        n_params = scene.decoder.n_params()
        expect = 38 + 8 + 0 + 4 * n_params + 32  # header + 1 mask word + weights + transform
        assert path.stat().st_size == expect
        out = load(path)
        assert out.grid.n_occupied == 0 and out.grid.n_active_vertices == 0

    def test_tanh_scene_materializes_on_save(self, tmp_path):
        scene = io_scene(seed=4, tanh=True)
        path = tmp_path / "t.divr"
        save(scene, path, "f32")
        out = load(path)
        assert not out.tanh_mode
        np.testing.assert_allclose(out.grid.feature_pool,
                                   np.tanh(scene.grid.feature_pool), atol=1e-7)


class TestQuantization:
    def test_zero_maps_to_128(self):
        q = quantize_features(np.zeros((1, 1)))
        assert q[0, 0] == 128
        s = dequantize_features(q)
        assert s[0, 0] == pytest.approx(2 * 128 / 255 - 1, abs=1e-6)  # ~0.00392

    def test_boundary(self):
        q = quantize_features(np.array([[-1 + 1e-9]]))
        assert q[0, 0] == 0
        assert dequantize_features(q)[0, 0] == -1.0
        q = quantize_features(np.array([[1 - 1e-9]]))
        assert q[0, 0] == 255
        assert dequantize_features(q)[0, 0] == 1.0

    def test_error_bound_exhaustive(self, rng):
        s = rng.uniform(-1 + 1e-6, 1 - 1e-6, size=(500, 16))
        err = np.abs(dequantize_features(quantize_features(s)) - s)
        assert err.max() <= 1.0 / 255.0 + 1e-12

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            quantize_features(np.array([[1.5]]))
        with pytest.raises(ValueError):
            quantize_features(np.array([[-1.0]]))

    def test_u8tanh_round_trip_render_quality(self, tmp_path):
        scene = io_scene(seed=5, tanh=True)
        scene.decoder.b3[0] = 2.0
        f32_path, u8_path = tmp_path / "f.divr", tmp_path / "q.divr"
        save(scene, f32_path, "f32")
        save(scene, u8_path, "u8tanh")
        assert u8_path.stat().st_size < f32_path.stat().st_size
        pose = look_at_pose(scene.origin + np.array([1.5, 1.0, 0.8]),
                            scene.origin + 0.25, width=24, height=24)
        cfg = RenderConfig(tau_t=0.0, white_background=True)
        a = render_image(load(f32_path), pose, cfg).rgb
        b = render_image(load(u8_path), pose, cfg).rgb
        assert psnr(a, b) > 45.0

    def test_u8tanh_rejects_plain_scene(self, tmp_path):
        scene = io_scene(seed=6, tanh=False)
        scene.grid.feature_pool[0, 0] = 2.0  # outside (-1, 1)
        with pytest.raises(ValueError):
            save(scene, tmp_path / "x.divr", "u8tanh")


class TestCorruption:
    def _saved(self, tmp_path):
        scene = io_scene(seed=7)
        path = tmp_path / "good.divr"
        save(scene, path, "f32")
        return path, path.read_bytes()

    def test_truncation(self, tmp_path):
        path, blob = self._saved(tmp_path)
        for cut in (0, 3, 10, 37, len(blob) // 2, len(blob) - 1):
            bad = tmp_path / f"cut{cut}.divr"
            bad.write_bytes(blob[:cut])
            with pytest.raises(SceneFormatError) as ei:
                load(bad)
            assert "offset" in str(ei.value) or "truncated" in str(ei.value)

    def test_bad_magic(self, tmp_path):
        path, blob = self._saved(tmp_path)
        bad = tmp_path / "magic.divr"
        bad.write_bytes(b"NOPE" + blob[4:])
        with pytest.raises(SceneFormatError, match="magic"):
            load(bad)

    def test_bad_version(self, tmp_path):
        path, blob = self._saved(tmp_path)
        bad = tmp_path / "ver.divr"
        bad.write_bytes(blob[:4] + b"\x63\x00" + blob[6:])
        with pytest.raises(SceneFormatError, match="version"):
            load(bad)

    def test_inconsistent_counts(self, tmp_path):
        path, blob = self._saved(tmp_path)
        # overwrite the occupied-voxel count (offset 30, u64)
        import struct

        bad_blob = blob[:30] + struct.pack("<Q", 999999) + blob[38:]
        bad = tmp_path / "counts.divr"
        bad.write_bytes(bad_blob)
        with pytest.raises(SceneFormatError, match="header says"):
            load(bad)

    def test_trailing_garbage(self, tmp_path):
        path, blob = self._saved(tmp_path)
        bad = tmp_path / "trail.divr"
        bad.write_bytes(blob + b"\x00\x01\x02")
        with pytest.raises(SceneFormatError, match="trailing"):
            load(bad)

    def test_no_partial_scene_on_error(self, tmp_path):
        path, blob = self._saved(tmp_path)
        bad = tmp_path / "short.divr"
        bad.write_bytes(blob[: len(blob) // 3])
        with pytest.raises(SceneFormatError):
            load(bad)


class TestGoldenFixture:
    def test_golden_file_loads_to_known_counts(self):
        from pathlib import Path

        golden = Path(__file__).parent / "data" / "golden_scene.divr"
        scene = load(golden)
        assert scene.dims.nx == 3 and scene.dims.ny == 2 and scene.dims.nz == 2
        assert scene.grid.n_occupied == 4
        assert scene.grid.n_active_vertices == 23
        assert scene.grid.feature_dim == 8
        assert scene.decoder.hidden == 32
        assert scene.voxel_size == 0.5
        np.testing.assert_allclose(scene.origin, [1.0, 2.0, 3.0])
        # spot value frozen when the fixture was authored
        assert scene.grid.feature_pool[0, 0] == pytest.approx(-0.26368588, abs=1e-6)
