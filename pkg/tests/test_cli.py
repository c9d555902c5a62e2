"""Command-line pipeline: artifacts, determinism, exit codes."""

import numpy as np
import pytest

import splatmakeup as sm
from splatmakeup import fileio
from splatmakeup.cli import main
from splatmakeup.config import DEFAULT_CONFIG, RunConfig, parse_config_text

TOY_CONFIG = """\
seed = 7
render_resolution = 64

[paths]
avatar = assets/head.avatar
poses = assets/poses
cameras = assets/cameras.rig
out = out

[bake]
num_views = 4
resolution = 64
dilation_iters = 4

[train]
lambda1 = 10.0
lambda2 = 10.0
lr = 0.05
lr_final = 0.002
coarse_iters = 8
refine_iters = 4

[mask]
makeup_labels = 1 2 3

[synth]
lat = 10
lon = 10
density = 2
n_poses = 2
ring_cameras = 4

[render]
pose = canonical
cameras = eval_0

[animate]
camera = eval_0
poses = canonical jaw_01

[eval]
poses = canonical
cameras = eval_p45 eval_0 eval_m45
uv_resolution = 32
"""


@pytest.fixture()
def toy(tmp_path):
    cfg_path = tmp_path / "run.cfg"
    cfg_path.write_text(TOY_CONFIG)
    return tmp_path, cfg_path


def run(cfg_path, command, *extra):
    return main([command, "--config", str(cfg_path), *extra])


class TestConfig:
    def test_parse_sections(self):
        cfg = parse_config_text("a = 1\n[s]\nb = two  # comment\n")
        assert cfg[""]["a"] == "1"
        assert cfg["s"]["b"] == "two"

    def test_bad_line_raises(self):
        from splatmakeup.errors import ConfigError

        with pytest.raises(ConfigError):
            parse_config_text("not a pair\n")

    def test_default_config_parses_with_paper_constants(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text(DEFAULT_CONFIG)
        cfg = RunConfig.load(path)
        assert cfg.render_resolution == 512
        assert cfg.get("bake", "resolution", None, int) == 256
        assert cfg.get("bake", "num_views", None, int) == 16
        tc = cfg.train_config()
        assert tc.lambda1 == 10.0 and tc.lambda2 == 10.0
        assert tc.lr == 1e-3
        assert tc.coarse_iters == 10_000 and tc.refine_iters == 3_000

    def test_overrides(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("seed = 1\n[train]\nlr = 0.1\n")
        cfg = RunConfig.load(path)
        cfg.apply_overrides(["train.lr=0.5", "seed=3"])
        assert cfg.train_config().lr == 0.5
        assert cfg.seed == 3


class TestSynthHead:
    def test_artifacts_and_kernel_count(self, toy):
        tmp, cfg_path = toy
        assert run(cfg_path, "synth-head") == 0
        model = fileio.load_avatar(tmp / "out/assets/head.avatar")
        # density flag: kernels = triangles * density
        assert len(model.kernels) == model.mesh.num_triangles * 2
        poses = fileio.load_pose_dir(tmp / "out/assets/poses")
        assert poses[0].pose_id == "canonical"
        cams = fileio.load_camera_rig(tmp / "out/assets/cameras.rig")
        assert len(cams) == 4 + 3  # ring + eval trio
        assert (tmp / "out/stamp_synth-head.txt").exists()

    def test_byte_identical_reruns(self, toy):
        tmp, cfg_path = toy
        run(cfg_path, "synth-head")
        first = (tmp / "out/assets/head.avatar").read_bytes()
        run(cfg_path, "synth-head")
        assert (tmp / "out/assets/head.avatar").read_bytes() == first

    def test_kernels_bind_to_source_triangle(self, toy):
        tmp, cfg_path = toy
        run(cfg_path, "synth-head")
        model = fileio.load_avatar(tmp / "out/assets/head.avatar")
        want = np.repeat(np.arange(model.mesh.num_triangles, dtype=np.uint32), 2)
        np.testing.assert_array_equal(model.binding, want)


def _fix_paths(tmp):
    """Point [paths] at the synth output for later stages."""
    cfg_path = tmp / "run.cfg"
    text = cfg_path.read_text().replace("assets/head.avatar", "out/assets/head.avatar")
    text = text.replace("assets/poses", "out/assets/poses")
    text = text.replace("assets/cameras.rig", "out/assets/cameras.rig")
    cfg_path.write_text(text)


class TestPipeline:
    def test_full_toy_pipeline(self, toy):
        tmp, cfg_path = toy
        assert run(cfg_path, "synth-head") == 0
        _fix_paths(tmp)
        assert run(cfg_path, "bake") == 0
        assert (tmp / "out/texture.pfm").exists()
        assert (tmp / "out/texture.count.pfm").exists()
        assert (tmp / "out/texture_preview.png").exists()

        assert run(cfg_path, "coarse") == 0
        assert (tmp / "out/avatar_coarse.avatar").exists()
        assert (tmp / "out/log_coarse.txt").exists()

        assert run(cfg_path, "refine") == 0
        assert (tmp / "out/avatar_refined.avatar").exists()

        assert run(cfg_path, "render") == 0
        assert (tmp / "out/render_canonical_eval_0.png").exists()

        assert run(cfg_path, "animate") == 0
        assert (tmp / "out/frames/frame_0000.png").exists()
        assert (tmp / "out/frames/frame_0001.png").exists()

        assert run(cfg_path, "eval") == 0
        assert (tmp / "out/eval_report.txt").exists()
        assert (tmp / "out/eval_report.kv").exists()

    def test_zero_coarse_iters_checkpoint_identical(self, toy):
        tmp, cfg_path = toy
        run(cfg_path, "synth-head")
        _fix_paths(tmp)
        run(cfg_path, "bake")
        assert run(cfg_path, "coarse", "--stage-overrides", "train.coarse_iters=0") == 0
        src = (tmp / "out/assets/head.avatar").read_bytes()
        out = (tmp / "out/avatar_coarse.avatar").read_bytes()
        assert src == out

    def test_pipeline_determinism(self, tmp_path):
        digests = []
        for sub in ("a", "b"):
            base = tmp_path / sub
            base.mkdir()
            cfg_path = base / "run.cfg"
            cfg_path.write_text(TOY_CONFIG)
            for command in ("synth-head",):
                assert run(cfg_path, command) == 0
            _fix_paths(base)
            for command in ("bake", "coarse", "refine", "render", "animate"):
                assert run(cfg_path, command) == 0
            artifacts = sorted(
                p.relative_to(base / "out")
                for p in (base / "out").rglob("*")
                if p.is_file()
            )
            digests.append(
                {str(p): (base / "out" / p).read_bytes() for p in artifacts}
            )
        assert digests[0].keys() == digests[1].keys()
        for key in digests[0]:
            assert digests[0][key] == digests[1][key], f"{key} differs between runs"


class TestExitCodes:
    def test_config_error(self, tmp_path):
        bad = tmp_path / "run.cfg"
        bad.write_text("render_resolution = -4\n")
        assert main(["render", "--config", str(bad)]) == 2

    def test_missing_config(self, tmp_path):
        assert main(["bake", "--config", str(tmp_path / "nope.cfg")]) == 3

    def test_missing_assets(self, toy):
        tmp, cfg_path = toy
        assert run(cfg_path, "bake") == 3  # synth never ran

    def test_missing_texture(self, toy):
        tmp, cfg_path = toy
        run(cfg_path, "synth-head")
        _fix_paths(tmp)
        assert run(cfg_path, "coarse") == 3

    def test_init_config(self, tmp_path):
        target = tmp_path / "fresh.cfg"
        assert main(["init-config", "--config", str(target)]) == 0
        assert target.read_text() == DEFAULT_CONFIG
        assert main(["init-config", "--config", str(target)]) == 2  # refuses overwrite
