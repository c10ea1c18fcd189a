import json

import numpy as np
import pytest
from scipy.spatial.distance import cdist

from gpshape.metrics import (
    MetricsReport,
    chamfer,
    error_heatmap,
    evaluate,
    fscore,
    precision,
    recall,
)


def brute_force_nearest(queries, targets):
    """O(n*m) nearest-neighbor distances, the oracle the kd-tree must match."""
    return cdist(queries, targets).min(axis=1)


def brute_force_chamfer(gt, est):
    forward = brute_force_nearest(gt, est)
    backward = brute_force_nearest(est, gt)
    return float(np.mean(forward**2) + np.mean(backward**2))


def random_cloud(rng, n):
    return rng.normal(size=(n, 3))


class TestChamfer:
    def test_identical_clouds_zero(self):
        rng = np.random.default_rng(0)
        pts = random_cloud(rng, 100)
        assert chamfer(pts, pts) == 0.0

    def test_hand_value_single_points(self):
        gt = np.array([[0.0, 0.0, 0.0]])
        est = np.array([[1.0, 0.0, 0.0]])
        assert chamfer(gt, est) == pytest.approx(2.0)

    def test_hand_value_asymmetric_sizes(self):
        # gt -> est squared dists: 0, 2 (mean 1); est -> gt: 0 (mean 0).
        gt = np.array([[0.0, 0.0, 0.0], [0.0, 1.0, 1.0]])
        est = np.array([[0.0, 0.0, 0.0]])
        assert chamfer(gt, est) == pytest.approx(1.0)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(1)
        gt = random_cloud(rng, 500)
        est = random_cloud(rng, 500)
        assert chamfer(gt, est) == brute_force_chamfer(gt, est)

    def test_symmetric(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            a = random_cloud(rng, 80)
            b = random_cloud(rng, 120)
            assert chamfer(a, b) == chamfer(b, a)

    def test_nonnegative(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            a = random_cloud(rng, 50)
            b = random_cloud(rng, 50)
            assert chamfer(a, b) >= 0.0

    def test_empty_input_rejected(self):
        pts = np.zeros((3, 3))
        with pytest.raises(ValueError, match="non-empty"):
            chamfer(np.zeros((0, 3)), pts)
        with pytest.raises(ValueError, match="non-empty"):
            chamfer(pts, np.zeros((0, 3)))

    def test_bad_shape_rejected(self):
        with pytest.raises(ValueError, match="shape"):
            chamfer(np.zeros((3, 2)), np.zeros((3, 3)))

    def test_nonfinite_rejected(self):
        bad = np.array([[0.0, 0.0, np.nan]])
        with pytest.raises(ValueError, match="finite"):
            chamfer(bad, np.zeros((1, 3)))


class TestPrecisionRecall:
    def test_subset_gives_one(self):
        rng = np.random.default_rng(4)
        gt = random_cloud(rng, 100)
        est = gt[:30]
        assert precision(gt, est, 0.01) == 1.0
        assert recall(est, gt, 0.01) == 1.0

    def test_hand_value_half(self):
        gt = np.array([[0.0, 0.0, 0.0]])
        est = np.array([[0.005, 0.0, 0.0], [1.0, 0.0, 0.0]])
        assert precision(gt, est, 0.01) == pytest.approx(0.5)

    def test_disjoint_far_sets_zero(self):
        gt = np.zeros((5, 3))
        est = np.full((5, 3), 10.0)
        assert precision(gt, est, 0.01) == 0.0
        assert recall(gt, est, 0.01) == 0.0

    def test_threshold_is_strict(self):
        gt = np.array([[0.0, 0.0, 0.0]])
        est = np.array([[0.01, 0.0, 0.0]])
        assert precision(gt, est, 0.01) == 0.0
        assert precision(gt, est, 0.010000001) == 1.0

    def test_recall_is_precision_with_roles_swapped(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            a = random_cloud(rng, 60)
            b = random_cloud(rng, 90)
            tau = float(rng.uniform(0.5, 2.0))
            assert recall(a, b, tau) == precision(b, a, tau)

    def test_monotone_in_tau(self):
        rng = np.random.default_rng(6)
        gt = random_cloud(rng, 200)
        est = random_cloud(rng, 200)
        taus = [0.05, 0.1, 0.2, 0.5, 1.0, 2.0]
        ps = [precision(gt, est, t) for t in taus]
        rs = [recall(gt, est, t) for t in taus]
        assert all(ps[i] <= ps[i + 1] for i in range(len(taus) - 1))
        assert all(rs[i] <= rs[i + 1] for i in range(len(taus) - 1))

    def test_invalid_tau(self):
        pts = np.zeros((2, 3))
        with pytest.raises(ValueError, match="tau"):
            precision(pts, pts, 0.0)
        with pytest.raises(ValueError, match="tau"):
            recall(pts, pts, -1.0)


class TestFscore:
    def test_perfect(self):
        assert fscore(1.0, 1.0) == 1.0

    def test_zero_guard(self):
        assert fscore(0.0, 0.0) == 0.0
        assert fscore(1.0, 0.0) == 0.0

    def test_hand_value(self):
        assert fscore(0.9, 0.6) == pytest.approx(0.72)

    def test_bounded_by_max_input(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            p, r = rng.uniform(0, 1, size=2)
            f = fscore(p, r)
            assert 0.0 <= f <= max(p, r) + 1e-15

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            fscore(1.5, 0.5)
        with pytest.raises(ValueError):
            fscore(0.5, -0.1)


class TestErrorHeatmap:
    def test_identical_clouds_all_zero(self):
        rng = np.random.default_rng(8)
        pts = random_cloud(rng, 50)
        np.testing.assert_array_equal(error_heatmap(pts, pts), np.zeros(50))

    def test_single_displaced_point(self):
        gt = np.array([[0.0, 0.0, 0.0], [5.0, 0.0, 0.0]])
        est = np.array([[0.0, 0.0, 0.0], [5.1, 0.0, 0.0]])
        values = error_heatmap(gt, est)
        assert values[0] == 0.0
        assert values[1] == pytest.approx(0.1)

    def test_is_forward_chamfer_direction_before_squaring(self):
        rng = np.random.default_rng(9)
        gt = random_cloud(rng, 100)
        est = random_cloud(rng, 150)
        values = error_heatmap(gt, est)
        np.testing.assert_array_equal(values, brute_force_nearest(gt, est))
        back = np.mean(brute_force_nearest(est, gt) ** 2)
        assert np.mean(values**2) + back == pytest.approx(chamfer(gt, est), abs=1e-15)


class TestKdTreeEquivalence:
    def test_matches_brute_force_many_instances(self):
        rng = np.random.default_rng(10)
        for _ in range(50):
            n = int(rng.integers(5, 1000))
            m = int(rng.integers(5, 1000))
            a = random_cloud(rng, n)
            b = random_cloud(rng, m)
            kd = error_heatmap(a, b)
            np.testing.assert_array_equal(kd, brute_force_nearest(a, b))


class TestEvaluate:
    def test_report_consistent_with_components(self):
        rng = np.random.default_rng(11)
        gt = random_cloud(rng, 300)
        est = gt + rng.normal(scale=0.005, size=gt.shape)
        report = evaluate(gt, est, tau=0.01, max_points=None)
        assert report.chamfer == chamfer(gt, est)
        assert report.precision == precision(gt, est, 0.01)
        assert report.recall == recall(gt, est, 0.01)
        assert report.fscore == fscore(report.precision, report.recall)
        assert report.n_gt == 300 and report.n_est == 300

    def test_subsamples_large_clouds(self):
        rng = np.random.default_rng(12)
        gt = random_cloud(rng, 2000)
        est = random_cloud(rng, 500)
        report = evaluate(gt, est, max_points=1000, seed=0)
        assert report.n_gt == 1000
        assert report.n_est == 500

    def test_subsampling_is_seeded(self):
        rng = np.random.default_rng(13)
        gt = random_cloud(rng, 2000)
        est = random_cloud(rng, 2000)
        a = evaluate(gt, est, max_points=500, seed=7)
        b = evaluate(gt, est, max_points=500, seed=7)
        assert a == b

    def test_json_round_trip(self):
        report = MetricsReport(
            chamfer=0.002, precision=0.9, recall=0.6, fscore=0.72, tau=0.01, n_gt=10, n_est=20
        )
        data = json.loads(report.to_json())
        assert data["chamfer_x1e3"] == pytest.approx(2.0)
        assert data["fscore"] == pytest.approx(0.72)
        assert data["n_gt"] == 10
        assert "\n" not in report.to_json()

    def test_invalid_max_points(self):
        pts = np.zeros((2, 3))
        with pytest.raises(ValueError, match="max_points"):
            evaluate(pts, pts, max_points=0)

    def test_report_validation(self):
        with pytest.raises(ValueError):
            MetricsReport(
                chamfer=-1.0, precision=0.5, recall=0.5, fscore=0.5, tau=0.01, n_gt=1, n_est=1
            )
        with pytest.raises(ValueError):
            MetricsReport(
                chamfer=0.0, precision=1.5, recall=0.5, fscore=0.5, tau=0.01, n_gt=1, n_est=1
            )
