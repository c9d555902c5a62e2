"""Container formats, image codecs, and reproducibility stamps."""

import numpy as np
import pytest

import splatmakeup as sm
from splatmakeup import fileio
from splatmakeup.training import TrainRecord


class TestAvatarFormat:
    def test_round_trip(self, small_head, tmp_path):
        model, _ = small_head
        path = tmp_path / "head.avatar"
        fileio.save_avatar(path, model)
        loaded = fileio.load_avatar(path)
        assert loaded.mesh.num_vertices == model.mesh.num_vertices
        assert loaded.mesh.num_triangles == model.mesh.num_triangles
        np.testing.assert_array_equal(loaded.mesh.triangles, model.mesh.triangles)
        np.testing.assert_array_equal(loaded.binding, model.binding)
        np.testing.assert_allclose(loaded.mesh.vertices, model.mesh.vertices, atol=1e-6)
        np.testing.assert_allclose(loaded.kernels.mu_local, model.kernels.mu_local, atol=1e-6)
        np.testing.assert_allclose(loaded.kernels.color, model.kernels.color, atol=1e-7)

    def test_save_is_deterministic(self, small_head, tmp_path):
        model, _ = small_head
        fileio.save_avatar(tmp_path / "a.avatar", model)
        fileio.save_avatar(tmp_path / "b.avatar", model)
        assert (tmp_path / "a.avatar").read_bytes() == (tmp_path / "b.avatar").read_bytes()

    def test_unbound_rejected(self, small_head, tmp_path):
        model, _ = small_head
        loose = sm.AvatarModel(mesh=model.mesh, kernels=model.kernels.copy())
        with pytest.raises(ValueError):
            fileio.save_avatar(tmp_path / "x.avatar", loose)

    def test_header_is_text(self, small_head, tmp_path):
        model, _ = small_head
        path = tmp_path / "head.avatar"
        fileio.save_avatar(path, model)
        head = path.read_bytes()[:200].split(b"end_header")[0].decode()
        assert head.startswith("SPLATAVATAR 1")
        assert "kernels" in head and "fields" in head


class TestPoseFormat:
    def test_round_trip(self, small_head, tmp_path):
        model, poses = small_head
        fileio.save_pose(tmp_path / "p.pose", poses[1])
        loaded = fileio.load_pose(tmp_path / "p.pose")
        assert loaded.pose_id == poses[1].pose_id
        np.testing.assert_allclose(
            loaded.vertex_positions, poses[1].vertex_positions, atol=1e-6
        )

    def test_pose_dir_sorted(self, small_head, tmp_path):
        model, poses = small_head
        for i, pose in enumerate(poses):
            fileio.save_pose(tmp_path / f"{i:02d}_{pose.pose_id}.pose", pose)
        loaded = fileio.load_pose_dir(tmp_path)
        assert [p.pose_id for p in loaded] == [p.pose_id for p in poses]

    def test_missing_dir_raises(self, tmp_path):
        from splatmakeup.errors import MissingAsset

        with pytest.raises(MissingAsset):
            fileio.load_pose_dir(tmp_path)


class TestRigFormat:
    def test_round_trip(self, small_cameras, tmp_path):
        ring, evals = small_cameras
        cams = ring + evals
        fileio.save_camera_rig(tmp_path / "r.rig", cams)
        loaded = fileio.load_camera_rig(tmp_path / "r.rig")
        assert [c.camera_id for c in loaded] == [c.camera_id for c in cams]
        for a, b in zip(loaded, cams):
            assert (a.width, a.height) == (b.width, b.height)
            np.testing.assert_array_equal(a.world_to_camera, b.world_to_camera)
            assert (a.fx, a.fy, a.cx, a.cy) == (b.fx, b.fy, b.cx, b.cy)


class TestPng:
    def test_round_trip_exact_quantized(self, tmp_path):
        rng = np.random.default_rng(61)
        img = rng.uniform(0, 1, (13, 17, 3))
        fileio.write_png(tmp_path / "a.png", img)
        loaded = fileio.load_png(tmp_path / "a.png")
        quantized = np.round(img * 255) / 255.0
        np.testing.assert_allclose(loaded, quantized, atol=1e-12)

    def test_deterministic_bytes(self, tmp_path):
        rng = np.random.default_rng(62)
        img = rng.uniform(0, 1, (8, 8, 3))
        fileio.write_png(tmp_path / "a.png", img)
        fileio.write_png(tmp_path / "b.png", img)
        assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()

    def test_reads_filtered_rows(self, tmp_path):
        # synthesize a PNG with Sub/Up/Average/Paeth filters per row
        import struct
        import zlib

        rng = np.random.default_rng(63)
        img = (rng.uniform(0, 1, (5, 6, 3)) * 255).astype(np.uint8)
        rows = []
        prev = np.zeros(18, dtype=np.int32)
        for y, ftype in enumerate([0, 1, 2, 3, 4]):
            raw = img[y].reshape(-1).astype(np.int32)
            if ftype == 0:
                enc = raw
            elif ftype == 1:
                left = np.concatenate([[0, 0, 0], raw[:-3]])
                enc = (raw - left) & 0xFF
            elif ftype == 2:
                enc = (raw - prev) & 0xFF
            elif ftype == 3:
                left = np.concatenate([[0, 0, 0], raw[:-3]])
                enc = (raw - (left + prev) // 2) & 0xFF
            else:
                left = np.concatenate([[0, 0, 0], raw[:-3]])
                upleft = np.concatenate([[0, 0, 0], prev[:-3]])
                p = left + prev - upleft
                pa, pb, pc = np.abs(p - left), np.abs(p - prev), np.abs(p - upleft)
                pred = np.where(
                    (pa <= pb) & (pa <= pc), left, np.where(pb <= pc, prev, upleft)
                )
                enc = (raw - pred) & 0xFF
            rows.append(bytes([ftype]) + bytes(enc.astype(np.uint8)))
            prev = raw

        def chunk(tag, payload):
            return (
                struct.pack(">I", len(payload))
                + tag
                + payload
                + struct.pack(">I", zlib.crc32(tag + payload) & 0xFFFFFFFF)
            )

        data = (
            b"\x89PNG\r\n\x1a\n"
            + chunk(b"IHDR", struct.pack(">IIBBBBB", 6, 5, 8, 2, 0, 0, 0))
            + chunk(b"IDAT", zlib.compress(b"".join(rows)))
            + chunk(b"IEND", b"")
        )
        (tmp_path / "f.png").write_bytes(data)
        loaded = fileio.load_png(tmp_path / "f.png")
        np.testing.assert_allclose(loaded, img / 255.0, atol=1e-12)


class TestPfm:
    def test_rgb_round_trip_with_nan(self, tmp_path):
        rng = np.random.default_rng(64)
        img = rng.uniform(-2, 2, (7, 9, 3)).astype(np.float32).astype(np.float64)
        img[0, 0] = np.nan
        fileio.write_pfm(tmp_path / "a.pfm", img)
        loaded = fileio.load_pfm(tmp_path / "a.pfm")
        assert np.isnan(loaded[0, 0]).all()
        np.testing.assert_array_equal(loaded[1:], img[1:])

    def test_single_channel(self, tmp_path):
        counts = np.arange(12, dtype=np.float64).reshape(3, 4)
        fileio.write_pfm(tmp_path / "c.pfm", counts)
        loaded = fileio.load_pfm(tmp_path / "c.pfm")
        np.testing.assert_array_equal(loaded, counts)


class TestTexture:
    def test_round_trip(self, tmp_path):
        from splatmakeup.uvbake import UvTexture, finalize

        rng = np.random.default_rng(65)
        tex = UvTexture(resolution=16)
        tex.count[:] = rng.integers(0, 3, (16, 16))
        tex.rgb_sum[:] = rng.uniform(0, 2, (16, 16, 3)) * (tex.count > 0)[..., None]
        finalize(tex, dilation_iters=2)
        fileio.save_texture(tmp_path / "tex", tex)
        loaded = fileio.load_texture(tmp_path / "tex")
        assert loaded.resolution == 16
        np.testing.assert_array_equal(loaded.count, tex.count)
        np.testing.assert_array_equal(loaded.filled, tex.filled)
        np.testing.assert_allclose(
            loaded.finalized[tex.filled], tex.finalized[tex.filled], atol=1e-6
        )


class TestLogsAndStamps:
    def test_train_log_format(self, tmp_path):
        records = [
            TrainRecord(0, "coarse", "canonical", "ring00", 0.5, 0.1, 6.0),
            TrainRecord(1, "coarse", "jaw_01", "ring01", 0.4, 0.1, 5.0),
        ]
        fileio.save_train_log(tmp_path / "log.txt", records)
        lines = (tmp_path / "log.txt").read_text().splitlines()
        assert lines[0].split() == [
            "iteration", "stage", "pose_id", "camera_id", "makeup", "res", "total",
        ]
        assert lines[1].startswith("0 coarse canonical ring00")
        assert len(lines) == 3

    def test_stamp_has_config_hash_not_time(self, tmp_path):
        fileio.write_stamp(tmp_path / "s.txt", "seed = 1\n", 1, "bake")
        text = (tmp_path / "s.txt").read_text()
        assert "config_sha256" in text and "seed 1" in text
        fileio.write_stamp(tmp_path / "s2.txt", "seed = 1\n", 1, "bake")
        assert text == (tmp_path / "s2.txt").read_text()
