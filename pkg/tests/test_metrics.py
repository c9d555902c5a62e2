"""Masked fidelity metrics and the cross-view consistency score."""

import numpy as np
import pytest

import splatmakeup as sm
from splatmakeup.errors import EmptyMask, InsufficientViews
from splatmakeup.metrics import EvalReport, ViewScore, uv_consistency_from_views


class TestMaskedPsnrSsim:
    def test_identical_capped(self):
        rng = np.random.default_rng(51)
        img = rng.uniform(0, 1, (16, 16, 3))
        mask = np.ones((16, 16), dtype=bool)
        psnr, ssim = sm.masked_psnr_ssim(img, img, mask)
        assert psnr == 99.0
        assert ssim == pytest.approx(1.0, abs=1e-9)

    def test_uniform_offset_closed_form(self):
        a = np.full((12, 12, 3), 0.4)
        b = np.full((12, 12, 3), 0.5)
        mask = np.ones((12, 12), dtype=bool)
        psnr, _ = sm.masked_psnr_ssim(a, b, mask)
        assert psnr == pytest.approx(20.0, abs=1e-9)  # 20 log10(1 / 0.1)

    def test_empty_mask_raises(self):
        img = np.zeros((4, 4, 3))
        with pytest.raises(EmptyMask):
            sm.masked_psnr_ssim(img, img, np.zeros((4, 4), dtype=bool))

    def test_mask_restricts_comparison(self):
        rng = np.random.default_rng(52)
        a = rng.uniform(0, 1, (8, 8, 3))
        b = a.copy()
        b[:4] = rng.uniform(0, 1, (4, 8, 3))  # corrupt the top half
        mask = np.zeros((8, 8), dtype=bool)
        mask[4:] = True
        psnr, _ = sm.masked_psnr_ssim(a, b, mask)
        assert psnr == 99.0  # bottom half untouched


class TestIdentityDrift:
    def test_identical_zero(self):
        rng = np.random.default_rng(53)
        img = rng.uniform(0, 1, (6, 6, 3))
        assert sm.identity_drift(img, img, np.zeros((6, 6), dtype=bool)) == 0.0

    def test_full_mask_empty_complement(self):
        rng = np.random.default_rng(54)
        a, b = rng.uniform(0, 1, (6, 6, 3)), rng.uniform(0, 1, (6, 6, 3))
        assert sm.identity_drift(a, b, np.ones((6, 6), dtype=bool)) == 0.0

    def test_matches_brute_force(self):
        rng = np.random.default_rng(55)
        a, b = rng.uniform(0, 1, (4, 4, 3)), rng.uniform(0, 1, (4, 4, 3))
        mask = rng.uniform(size=(4, 4)) < 0.3
        cov = rng.uniform(size=(4, 4)) < 0.9
        got = sm.identity_drift(a, b, mask, coverage=cov)
        vals = [
            abs(a[y, x, c] - b[y, x, c])
            for y in range(4)
            for x in range(4)
            for c in range(3)
            if not mask[y, x] and cov[y, x]
        ]
        assert got == pytest.approx(np.mean(vals))


class FakeGB:
    def __init__(self, uv, covered):
        self.uv = uv
        self.triangle_id = np.where(covered, 0, -1).astype(np.int32)

    @property
    def coverage(self):
        return self.triangle_id >= 0


def _grid_views(values, res=4):
    """Each view paints constant `value` over pixels mapping 1:1 to texels."""
    images, gbuffers = [], []
    n = res * res
    side = res
    uv = np.zeros((side, side, 2))
    g = (np.arange(side) + 0.5) / side
    uv[..., 0] = g[:, None]
    uv[..., 1] = g[None, :]
    covered = np.ones((side, side), dtype=bool)
    for v in values:
        img = np.broadcast_to(np.asarray(v, dtype=np.float64), (side, side, 3)).copy()
        images.append(img)
        gbuffers.append(FakeGB(uv, covered))
    return images, gbuffers


class TestUvConsistency:
    def test_constant_color_zero(self, small_head, small_cameras):
        model, poses = small_head
        _, evals = small_cameras
        flat = model.copy()
        flat.kernels.color[:] = 0.5
        flat.kernels.opacity_logit[:] = 6.0
        uc = sm.uv_consistency(flat, poses[:2], evals, 32)
        assert uc < 1e-4

    def test_injected_noise_recovered(self):
        # per-view constant offsets with known std; statistic ~ sigma
        rng = np.random.default_rng(56)
        sigma = 0.05
        n_views = 12
        offsets = rng.normal(0.0, sigma, (n_views, 3))
        images, gbuffers = _grid_views(0.5 + offsets, res=6)
        got = uv_consistency_from_views(images, gbuffers, 6)
        # sample std of normal draws, averaged over texels/channels
        expected = np.sqrt(((offsets - offsets.mean(axis=0)) ** 2).sum(axis=0) / (n_views - 1)).mean()
        assert abs(got - expected) / expected < 1e-9
        assert abs(got - sigma) / sigma < 0.15

    def test_single_view_insufficient(self):
        images, gbuffers = _grid_views([(0.5, 0.5, 0.5)], res=4)
        with pytest.raises(InsufficientViews):
            uv_consistency_from_views(images, gbuffers, 4)

    def test_view_order_invariance(self):
        rng = np.random.default_rng(57)
        vals = rng.uniform(0, 1, (5, 3))
        images, gbuffers = _grid_views(vals, res=4)
        a = uv_consistency_from_views(images, gbuffers, 4)
        perm = [3, 0, 4, 1, 2]
        b = uv_consistency_from_views(
            [images[i] for i in perm], [gbuffers[i] for i in perm], 4
        )
        assert a == b

    def test_determinism(self, small_head, small_cameras):
        model, poses = small_head
        _, evals = small_cameras
        a = sm.uv_consistency(model, poses[:2], evals, 32)
        b = sm.uv_consistency(model, poses[:2], evals, 32)
        assert a == b


class TestEvalReport:
    def test_text_and_kv_formats(self):
        report = EvalReport(
            views=[ViewScore("canonical", "eval_0", 31.5, 0.97, 0.002)],
            uv_consistency=0.004,
        )
        text = report.to_text()
        assert "canonical eval_0" in text
        assert "uv_consistency" in text
        kv = report.to_kv()
        assert "canonical.eval_0.psnr = 31.5" in kv
        assert report.mean_psnr == 31.5

    def test_evaluate_end_to_end(self, small_head, small_cameras):
        from splatmakeup.synth import feathered_overlays
        from splatmakeup.uvbake import BakeConfig

        model, poses = small_head
        ring, evals = small_cameras
        mask_spec = sm.MaskSpec(makeup_labels=frozenset({1, 2, 3}))
        provider = sm.ProceduralProvider(
            feathered_overlays(),
            model,
            {p.pose_id: p for p in poses},
            {c.camera_id: c for c in ring + evals},
        )
        images, gbuffers = [], []
        for cam in ring:
            gbuffers.append(sm.rasterize_mesh(model.mesh, poses[0], cam))
            images.append(
                provider.provide(sm.GuidanceRequest("canonical", cam.camera_id, "coarse"))
            )
        texture = sm.bake(
            images,
            gbuffers,
            BakeConfig(num_views=len(ring), camera_ids=[c.camera_id for c in ring], resolution=128),
        )
        report = sm.evaluate(
            model, model, texture, poses[:1], evals, mask_spec, uv_resolution=32
        )
        assert len(report.views) == 3
        assert report.uv_consistency >= 0.0
        assert all(v.psnr > 0 for v in report.views)
