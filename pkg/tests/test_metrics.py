import numpy as np
import pytest

from roomsdf.mesh import Mesh, extract_mesh
from roomsdf.metrics import (MetricsReport, evaluate, nearest_distances,
                             sample_surface)


def single_triangle():
    return Mesh(np.array([[0.0, 0, 0], [1.0, 0, 0], [0.0, 1, 0]]),
                np.array([[0, 1, 2]]))


def square_pair(z=0.0, area_ratio=3.0):
    # two coplanar triangles with areas 0.5 and 0.5*area_ratio
    w = area_ratio
    verts = np.array([[0.0, 0, z], [1.0, 0, z], [0.0, 1, z],
                      [2.0, 0, z], [2.0 + w, 0, z], [2.0, 1, z]])
    return Mesh(verts, np.array([[0, 1, 2], [3, 4, 5]]))


class TestSampling:
    def test_points_inside_single_triangle(self):
        pts = sample_surface(single_triangle(), 500, seed=0)
        assert np.all(pts[:, 2] == 0)
        assert np.all(pts[:, 0] >= 0) and np.all(pts[:, 1] >= 0)
        assert np.all(pts[:, 0] + pts[:, 1] <= 1.0 + 1e-12)

    def test_area_weighted_selection(self):
        mesh = square_pair(area_ratio=3.0)
        n = 100000
        pts = sample_surface(mesh, n, seed=1)
        frac_small = np.mean(pts[:, 0] <= 1.0)
        # binomial: p = 0.25, sigma = sqrt(p(1-p)/n)
        sigma = np.sqrt(0.25 * 0.75 / n)
        assert abs(frac_small - 0.25) < 3 * sigma

    def test_deterministic_under_seed(self):
        mesh = square_pair()
        a = sample_surface(mesh, 100, seed=7)
        b = sample_surface(mesh, 100, seed=7)
        assert np.array_equal(a, b)

    def test_empty_mesh_rejected(self):
        empty = Mesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=int))
        with pytest.raises(ValueError, match="empty"):
            sample_surface(empty, 10)


class TestEvaluate:
    def test_identical_meshes_perfect_scores(self):
        sphere = extract_mesh(lambda p: np.linalg.norm(p, axis=-1) - 1.0, 24,
                              (np.full(3, -1.3), np.full(3, 1.3)))
        # same sampling seed on both sides -> identical point sets
        pred = sample_surface(sphere, 2000, seed=5)
        gt = sample_surface(sphere, 2000, seed=5)
        d = nearest_distances(pred, gt)
        assert np.all(d == 0.0)
        rep = evaluate(sphere, sphere, threshold=0.05, n_points=2000, seed=3,
                       gt_seed=3)
        assert rep.precision == 1.0 and rep.recall == 1.0
        assert rep.f_score == 1.0
        assert rep.accuracy == 0.0 and rep.completeness == 0.0

    def test_shifted_plane_scores_zero(self):
        gt = square_pair(z=0.0)
        pred = square_pair(z=0.2)  # 2x the 0.1 threshold away
        rep = evaluate(pred, gt, threshold=0.1, n_points=2000, seed=0)
        assert rep.precision == 0.0 and rep.recall == 0.0
        assert rep.f_score == 0.0

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(0)
        for seed in range(50):
            a = rng.normal(0, 1, (40, 3))
            b = rng.normal(0, 1, (50, 3))
            fast = nearest_distances(a, b)
            brute = np.empty(len(a))
            for i, p in enumerate(a):
                best = np.inf
                for q in b:
                    dd = np.sqrt(((p - q) ** 2).sum())
                    if dd < best:
                        best = dd
                brute[i] = best
            assert np.array_equal(fast, brute)

    def test_symmetry(self):
        pred = square_pair(z=0.0)
        gt = square_pair(z=0.03)
        a = evaluate(pred, gt, n_points=5000, seed=11)
        # swapped roles with swapped seeds reproduces the same point sets
        b = evaluate(gt, pred, n_points=5000, seed=12)
        # seed bookkeeping differs; check the symmetric relation numerically
        pred_pts = sample_surface(pred, 5000, seed=11)
        gt_pts = sample_surface(gt, 5000, seed=12)
        assert a.accuracy == pytest.approx(
            nearest_distances(pred_pts, gt_pts).mean())

    def test_threshold_monotonicity(self):
        rng = np.random.default_rng(2)
        pred = square_pair(z=0.0)
        gt = square_pair(z=0.04)
        reports = [evaluate(pred, gt, threshold=t, n_points=3000, seed=4)
                   for t in (0.01, 0.05, 0.1, 0.5)]
        for lo, hi in zip(reports, reports[1:]):
            assert hi.precision >= lo.precision
            assert hi.recall >= lo.recall

    def test_gt_region_restricts_recall(self):
        gt = square_pair(z=0.0)
        pred = single_triangle()  # covers only the x<=1 triangle
        full = evaluate(pred, gt, threshold=0.02, n_points=4000, seed=6)
        region = evaluate(pred, gt, threshold=0.02, n_points=4000, seed=6,
                          gt_region=lambda p: p[:, 0] <= 1.0)
        assert region.recall > full.recall

    def test_empty_sides_named(self):
        empty = Mesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=int))
        good = single_triangle()
        with pytest.raises(ValueError, match="predicted"):
            evaluate(empty, good)
        with pytest.raises(ValueError, match="ground-truth"):
            evaluate(good, empty)

    def test_f_score_zero_when_both_zero(self):
        rep = MetricsReport(1, 1, 0.0, 0.0, 0.0, 0.05, 10, 10, 0)
        assert rep.f_score == 0.0

    def test_csv_row_shape(self):
        rep = MetricsReport(0.1, 0.2, 0.5, 0.6, 0.54, 0.05, 10, 10, 0)
        assert len(rep.csv_row().split(",")) == \
            len(MetricsReport.csv_header().split(","))
