"""
Class activation maps, upsampling, normalization and overlay rendering
"""

import numpy as np
import pytest

from gdcnn.cam import (CAM_SUFFIX, OVERLAY_SUFFIX, Heatmap, cam_score_identity, class_activation_map,
                       compute_cam, normalize_heatmap, render_overlay, upsample_bilinear)
from gdcnn.errors import CamError, ShapeError
from gdcnn.model import init_params
from gdcnn.pgm import read_pgm

A = np.array([[1.0, 2.0], [3.0, 4.0]])
B = np.array([[0.0, 1.0], [0.0, 1.0]])


class TestComputeCam:
    def test_zero_weights(self, rng):
        assert not compute_cam(rng.random((3, 4, 4)), np.zeros(3)).any()

    def test_single_map(self, rng):
        f = rng.random((1, 5, 5))
        np.testing.assert_allclose(compute_cam(f, np.array([1.0])), f[0])

    def test_weighted_sum(self):
        out = compute_cam(np.stack([A, B]), np.array([2.0, -1.0]))
        expected = [[2 * A[y, x] - B[y, x] for x in range(2)] for y in range(2)]
        np.testing.assert_array_equal(out, expected)
        np.testing.assert_array_equal(out, [[2.0, 3.0], [6.0, 7.0]])

    def test_linear_in_weights(self, rng):
        for _ in range(20):
            f = rng.standard_normal((4, 5, 5))
            w1, w2 = rng.standard_normal(4), rng.standard_normal(4)
            a, b = rng.standard_normal(2)
            np.testing.assert_allclose(compute_cam(f, a * w1 + b * w2),
                                       a * compute_cam(f, w1) + b * compute_cam(f, w2), atol=1e-10)

    def test_weight_count_mismatch(self, rng):
        with pytest.raises(ShapeError):
            compute_cam(rng.random((3, 2, 2)), np.ones(2))


class TestScoreIdentity:
    def test_zero_weights(self, rng):
        identity = cam_score_identity(rng.random((2, 3, 3)), np.zeros(2))
        assert identity.score == 0.0 and identity.map_total == 0.0

    def test_hand_example(self):
        identity = cam_score_identity(np.stack([A, B]), np.array([2.0, -1.0]))
        assert identity.score == pytest.approx(18.0)
        assert identity.map_total == pytest.approx(18.0)
        assert identity.holds()

    def test_random_cases(self, rng):
        for _ in range(100):
            k, h, w = rng.integers(1, 6, size=3)
            identity = cam_score_identity(rng.standard_normal((k, h, w)).astype(np.float32),
                                          rng.standard_normal(k).astype(np.float32))
            assert identity.holds()


class TestUpsample:
    def test_constant(self):
        out = upsample_bilinear(np.full((4, 4), 0.7))
        assert out.shape == (137, 137)
        np.testing.assert_allclose(out, 0.7, rtol=1e-6)

    def test_single_pixel(self):
        np.testing.assert_allclose(upsample_bilinear(np.array([[0.3]]), (5, 5)), 0.3, rtol=1e-6)

    def test_ramp(self):
        out = upsample_bilinear(B, (5, 5))
        np.testing.assert_allclose(out[:, 0], 0.0)
        np.testing.assert_allclose(out[:, -1], 1.0)
        np.testing.assert_allclose(out[0], [0.0, 0.25, 0.5, 0.75, 1.0], atol=1e-6)
        assert np.all(np.diff(out, axis=1) > 0)

    def test_bounded_by_source(self, rng):
        raw = rng.standard_normal((13, 13))
        out = upsample_bilinear(raw)
        assert out.min() >= raw.min() - 1e-6 and out.max() <= raw.max() + 1e-6

    def test_same_size_passthrough(self, rng):
        raw = rng.random((6, 6)).astype(np.float32)
        np.testing.assert_array_equal(upsample_bilinear(raw, (6, 6)), raw)

    def test_nearest(self):
        out = upsample_bilinear(A, (4, 4), method="nearest")
        assert set(np.unique(out)) <= {1.0, 2.0, 3.0, 4.0}
        assert out[0, 0] == 1.0 and out[-1, -1] == 4.0


class TestNormalize:
    def test_affine(self):
        np.testing.assert_allclose(normalize_heatmap(np.array([[-2.0, 0.0], [2.0, 6.0]])).values,
                                   [[0.0, 0.25], [0.5, 1.0]])

    def test_constant_is_zero(self):
        assert not normalize_heatmap(np.full((3, 3), 4.2)).values.any()

    def test_random_maps_in_unit_range(self, rng):
        for _ in range(100):
            h, w = rng.integers(1, 20, size=2)
            values = normalize_heatmap(rng.standard_normal((h, w)) * rng.uniform(0.01, 100)).values
            assert values.min() >= 0.0 and values.max() <= 1.0
            if values.size > 1:
                assert values.min() == 0.0 and values.max() == pytest.approx(1.0, abs=1e-6)

    @pytest.mark.parametrize("alpha", [1e-3, 0.5, 7.0, 1e3])
    def test_featuremap_scale_invariant(self, rng, alpha):
        f = rng.random((3, 6, 6))
        w = rng.standard_normal(3)
        base = normalize_heatmap(compute_cam(f, w)).values
        scaled = normalize_heatmap(compute_cam(alpha * f, w)).values
        np.testing.assert_allclose(scaled, base, atol=1e-5)


class TestOverlay:
    def test_zero_heatmap(self, rng, tmp_path):
        image = rng.random((1, 9, 7)).astype(np.float32)
        cam_path, overlay_path = render_overlay(image, Heatmap(np.zeros((9, 7), np.float32)), tmp_path / "x")
        assert cam_path.name == "x" + CAM_SUFFIX
        assert overlay_path.name == "x" + OVERLAY_SUFFIX
        np.testing.assert_allclose(read_pgm(overlay_path), 0.5 * image[0], atol=1 / 255)

    def test_side_by_side_round_trip(self, rng, tmp_path):
        image = rng.random((1, 8, 8)).astype(np.float32)
        heat = Heatmap(rng.random((8, 8)).astype(np.float32))
        cam_path, _ = render_overlay(image, heat, tmp_path / "y")
        both = read_pgm(cam_path)
        assert both.shape == (8, 16)
        np.testing.assert_allclose(both[:, :8], image[0], atol=1 / 255)
        np.testing.assert_allclose(both[:, 8:], heat.values, atol=1 / 255)

    def test_shape_mismatch(self, tmp_path):
        with pytest.raises(ShapeError):
            render_overlay(np.zeros((1, 4, 4)), Heatmap(np.zeros((5, 5))), tmp_path / "z")


class TestClassActivationMap:
    def test_gap_model(self, tiny_gap, rng):
        params = init_params(tiny_gap, seed=0)
        result = class_activation_map(params, tiny_gap, rng.random((1, 46, 46)).astype(np.float32))
        assert result.class_index == result.prediction.label
        assert result.raw.shape == (2, 2)
        assert result.heatmap.values.shape == (46, 46)
        assert 0.0 <= result.heatmap.values.min() and result.heatmap.values.max() <= 1.0
        assert result.identity.holds()
        assert result.identity.score == pytest.approx(float(result.prediction.logits[result.class_index]), rel=1e-4, abs=1e-5)

    def test_target_class(self, tiny_gap, rng):
        params = init_params(tiny_gap, seed=0)
        image = rng.random((1, 46, 46)).astype(np.float32)
        assert class_activation_map(params, tiny_gap, image, target_class=1).class_index == 1
        with pytest.raises(CamError):
            class_activation_map(params, tiny_gap, image, target_class=2)

    def test_dense_head_rejected(self, tiny_dense):
        with pytest.raises(CamError, match="gap head"):
            class_activation_map(init_params(tiny_dense), tiny_dense, np.zeros((1, 46, 46), np.float32))
