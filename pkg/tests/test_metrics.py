import math

import numpy as np
import pytest

import quadkiri as qk
from quadkiri.geometry import FeasibilityReport
from quadkiri.metrics import MetricError
from quadkiri.raster import RasterConfig, frame_for_points, rasterize_polygon
from quadkiri.targets import circle_outline, ellipse_outline, heart_outline, hexagon_outline


def feas(decode_failed=False, n_inv=0, r_ov=0.0):
    return FeasibilityReport(
        invalid_count=n_inv,
        overlap_ratio=r_ov,
        decode_failed=decode_failed,
        per_void_area=np.ones((1, 1)),
        union_area=1.0,
    )


def rot(a):
    return np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])


class TestSiou:
    def test_identity_is_one(self, feasible_masks):
        for m in feasible_masks[:5]:
            assert qk.siou(m, m) == 1.0

    def test_translation_removed(self):
        base = rasterize_polygon(heart_outline(), RasterConfig(fill_fraction=0.7))
        shifted = np.zeros_like(base.pixels)
        shifted[4:, :-7] = base.pixels[:-4, 7:]  # move content by (7, -4)
        assert qk.siou(qk.SilhouetteMask(shifted), base) >= 0.99

    def test_scale_removed(self):
        # both masks rendered from one polygon in one shared frame
        poly = heart_outline()
        cfg = RasterConfig(fill_fraction=0.8)
        frame = frame_for_points(poly, cfg)
        base = rasterize_polygon(poly, cfg, frame=frame)
        c = poly.mean(axis=0)
        small = rasterize_polygon(0.8 * (poly - c) + c, cfg, frame=frame)
        assert qk.siou(small, base) >= 0.98

    def test_rotation_removed(self):
        poly = ellipse_outline()
        base = rasterize_polygon(poly, RasterConfig(fill_fraction=0.7))
        turned = rasterize_polygon(poly @ rot(1.1).T, RasterConfig(fill_fraction=0.7))
        assert qk.siou(turned, base) >= 0.97

    def test_empty_raises(self, feasible_masks):
        empty = qk.SilhouetteMask(np.zeros((128, 128), bool))
        with pytest.raises(MetricError):
            qk.siou(empty, feasible_masks[0])
        with pytest.raises(MetricError):
            qk.siou(feasible_masks[0], empty)

    def test_resolution_mismatch(self, feasible_masks):
        other = qk.SilhouetteMask(np.ones((64, 64), bool))
        with pytest.raises(MetricError):
            qk.siou(other, feasible_masks[0])

    def test_similarity_invariance_panel(self):
        rng = np.random.default_rng(2)
        shapes = [heart_outline(), circle_outline(), hexagon_outline(),
                  ellipse_outline()]
        worst = 1.0
        for poly in shapes:
            base = rasterize_polygon(poly, RasterConfig(fill_fraction=0.7))
            for _ in range(5):
                ang = rng.uniform(0, 2 * math.pi)
                sc = rng.uniform(0.7, 1.2)
                moved = rasterize_polygon(
                    sc * (poly @ rot(ang).T),
                    RasterConfig(fill_fraction=0.7 * rng.uniform(0.95, 1.05)),
                )
                worst = min(worst, qk.siou(moved, base))
        assert worst >= 0.97


class TestTotalVariation:
    def test_constant_field(self):
        assert qk.total_variation(np.full((7, 7), 3.3)) == 0.0

    def test_hand_example(self):
        # row diffs |3-1| + |4-2| = 4; column diffs |2-1| + |4-3| = 2
        assert qk.total_variation(np.array([[1.0, 2.0], [3.0, 4.0]])) == 6.0

    def test_single_cell(self):
        assert qk.total_variation(np.array([[5.0]])) == 0.0

    def test_enumeration_oracle(self):
        rng = np.random.default_rng(0)
        x = rng.uniform(0.1, 10, (6, 5))
        expect = 0.0
        for i in range(5):
            for j in range(5):
                expect += abs(x[i + 1, j] - x[i, j])
        for i in range(6):
            for j in range(4):
                expect += abs(x[i, j + 1] - x[i, j])
        assert abs(qk.total_variation(x) - expect) < 1e-12

    def test_seminorm(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            x = rng.uniform(0.1, 10, (4, 4))
            y = rng.uniform(0.1, 10, (4, 4))
            a = rng.uniform(0.1, 4.0)
            assert qk.total_variation(x) >= 0
            assert abs(qk.total_variation(a * x) - a * qk.total_variation(x)) < 1e-9
            assert (qk.total_variation(x + y)
                    <= qk.total_variation(x) + qk.total_variation(y) + 1e-12)


class TestReward:
    def test_decode_failure_penalty(self):
        assert qk.reward(np.ones((2, 2)), feas(decode_failed=True), None,
                         qk.RewardConfig()) == -5.0

    def test_clean_feasible(self):
        r = qk.reward(np.ones((2, 2)), feas(r_ov=0.01), 0.9, qk.RewardConfig())
        assert abs(r - 0.9) < 1e-12

    def test_overlap_hinge(self):
        r = qk.reward(np.ones((2, 2)), feas(r_ov=0.05), 0.9, qk.RewardConfig())
        assert abs(r - 0.84) < 1e-12

    def test_invalid_penalty(self):
        r = qk.reward(np.ones((2, 2)), feas(n_inv=3), 0.9, qk.RewardConfig())
        assert abs(r - (0.9 - 2.0)) < 1e-12

    def test_siou_with_failed_decode_is_contract_violation(self):
        with pytest.raises(ValueError):
            qk.reward(np.ones((2, 2)), feas(decode_failed=True), 0.5,
                      qk.RewardConfig())

    def test_tv_weight(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0]])
        cfg = qk.RewardConfig(lambda_tv=0.1)
        assert abs(qk.reward(x, feas(), 0.9, cfg) - (0.9 - 0.6)) < 1e-12

    def test_regularity_mode_omits_siou(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0]])
        cfg = qk.RewardConfig(mode="regularity_only", lambda_tv=1.0)
        assert abs(qk.reward(x, feas(), None, cfg) - (-6.0)) < 1e-12

    def test_hybrid_mode(self):
        x = np.full((2, 2), 2.0)
        cfg = qk.RewardConfig(mode="hybrid")
        r = qk.reward(x, feas(), 0.8, cfg)
        assert abs(r - (0.5 * 0.8 + 0.5 * 1.0)) < 1e-12

    def test_reward_never_exceeds_siou_accuracy(self):
        rng = np.random.default_rng(4)
        cfg = qk.RewardConfig(lambda_tv=0.05)
        for _ in range(50):
            s = rng.uniform(0, 1)
            f = feas(n_inv=int(rng.integers(0, 2)), r_ov=rng.uniform(0, 0.2))
            x = rng.uniform(0.1, 10, (3, 3))
            assert qk.reward(x, f, s, cfg) <= s + 1e-12


class TestSuccess:
    def make(self, siou_val, r_ov=0.0, n_inv=0, failed=False):
        return qk.EvalResult(
            siou=siou_val, tv=0.0, reward=0.0, success=False,
            feasibility=feas(failed, n_inv, r_ov),
        )

    def test_above_threshold(self):
        assert qk.is_success(self.make(0.86), qk.RewardConfig())

    def test_below_threshold(self):
        assert not qk.is_success(self.make(0.84), qk.RewardConfig())

    def test_overlap_violation(self):
        assert not qk.is_success(self.make(0.99, r_ov=0.03), qk.RewardConfig())

    def test_monotone_in_siou(self):
        cfg = qk.RewardConfig()
        values = [0.1, 0.5, 0.849, 0.85, 0.92, 1.0]
        flags = [qk.is_success(self.make(v), cfg) for v in values]
        assert flags == sorted(flags)
