import numpy as np
import pytest

from roomsdf import tensor as T
from roomsdf.losses import (LossWeights, loss_eikonal, loss_prior, loss_rgb,
                            loss_total)
from helpers import check_param_grads


class TestRgb:
    def test_zero_when_equal(self):
        c = np.random.default_rng(0).uniform(0, 1, (5, 3))
        assert loss_rgb(T.Tensor(c), c).item() == 0.0

    def test_single_ray_l1_of_ones(self):
        assert loss_rgb(T.Tensor([[1.0, 1.0, 1.0]]),
                        np.zeros((1, 3))).item() == 3.0

    def test_mean_over_rays(self):
        rendered = T.Tensor([[1.0, 0.0, 0.0], [1.0, 1.0, 0.0]])
        target = np.zeros((2, 3))
        assert loss_rgb(rendered, target).item() == pytest.approx(1.5)

    def test_empty_batch_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            loss_rgb(T.Tensor(np.zeros((0, 3))), np.zeros((0, 3)))


class TestEikonal:
    def test_unit_gradients_give_zero(self):
        g = np.random.default_rng(1).normal(0, 1, (10, 3))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        assert loss_eikonal(T.Tensor(g)).item() < 1e-28

    def test_single_gradient(self):
        assert loss_eikonal(T.Tensor([[2.0, 0.0, 0.0]])).item() == \
            pytest.approx(1.0)

    def test_linear_sdf_through_fd_path(self):
        from roomsdf.field import AnalyticSdfField
        k = np.array([0.6, -0.64, 0.48])
        k /= np.linalg.norm(k)
        field = AnalyticSdfField(lambda x: x @ k + 0.2)
        pts = np.random.default_rng(2).uniform(-1, 1, (50, 3))
        out = field.evaluate(pts, want_grad=True)
        assert loss_eikonal(out.grad_s).item() < 1e-10


class TestPrior:
    def test_zero_when_aligned(self):
        n = np.random.default_rng(3).normal(0, 1, (8, 3))
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        val = loss_prior(T.Tensor(n), n, np.zeros(8)).item()
        assert val == pytest.approx(0.0, abs=1e-12)

    def test_full_uncertainty_removes_loss(self):
        rng = np.random.default_rng(4)
        n = rng.normal(0, 1, (8, 3))
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        m = rng.normal(0, 1, (8, 3))
        m /= np.linalg.norm(m, axis=1, keepdims=True)
        assert loss_prior(T.Tensor(n), m, np.ones(8)).item() == 0.0

    def test_orthogonal_normals_unit_loss(self):
        n = T.Tensor([[1.0, 0.0, 0.0]])
        n_hat = np.array([[0.0, 1.0, 0.0]])
        assert loss_prior(n, n_hat, np.zeros(1)).item() == pytest.approx(1.0)

    def test_invalid_uncertainty_rejected(self):
        n = T.Tensor([[1.0, 0.0, 0.0]])
        with pytest.raises(ValueError, match=r"\[0, 1\]"):
            loss_prior(n, n.values, np.array([1.5]))

    def test_monotone_in_uncertainty(self):
        rng = np.random.default_rng(5)
        n = rng.normal(0, 1, (6, 3))
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        m = rng.normal(0, 1, (6, 3))
        m /= np.linalg.norm(m, axis=1, keepdims=True)
        u = rng.uniform(0, 1, 6)
        base = loss_prior(T.Tensor(n), m, u).item()
        for i in range(6):
            u2 = u.copy()
            u2[i] = min(1.0, u[i] + 0.3)
            assert loss_prior(T.Tensor(n), m, u2).item() <= base + 1e-12

    def test_u_zero_equals_unweighted(self):
        rng = np.random.default_rng(6)
        n = rng.normal(0, 1, (6, 3))
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        m = rng.normal(0, 1, (6, 3))
        m /= np.linalg.norm(m, axis=1, keepdims=True)
        weighted = loss_prior(T.Tensor(n), m, np.zeros(6)).item()
        unweighted = np.mean(np.abs(1.0 - np.sum(n * m, axis=1)))
        assert weighted == pytest.approx(unweighted, abs=1e-12)


class TestTotal:
    def test_zero_components(self):
        z = T.Tensor([0.0])
        assert loss_total(LossWeights(), z, z, z).item() == 0.0

    def test_default_weighting(self):
        one = T.Tensor([1.0])
        total = loss_total(LossWeights(), one, one, one)
        assert total.item() == pytest.approx(2.1)

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError):
            LossWeights(prior=-0.1)

    def test_gradient_is_weighted_sum(self):
        rng = np.random.default_rng(7)
        store = T.ParamStore()
        n = store.register("n", rng.normal(0, 1, (4, 3)))
        c = store.register("c", rng.uniform(0.2, 0.8, (4, 3)))
        g = store.register("g", rng.normal(0, 1, (4, 3)))
        n_hat = rng.normal(0, 1, (4, 3))
        n_hat /= np.linalg.norm(n_hat, axis=1, keepdims=True)
        target = rng.uniform(0, 1, (4, 3))
        u = rng.uniform(0, 0.9, 4)

        def total_loss():
            return loss_total(LossWeights(),
                              loss_prior(n, n_hat, u),
                              loss_eikonal(g),
                              loss_rgb(c, target))

        check_param_grads(total_loss, store, rng, n_entries=4)

    def test_all_losses_nonnegative(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            n = rng.normal(0, 1, (5, 3))
            n /= np.linalg.norm(n, axis=1, keepdims=True)
            m = rng.normal(0, 1, (5, 3))
            m /= np.linalg.norm(m, axis=1, keepdims=True)
            assert loss_prior(T.Tensor(n), m, rng.uniform(0, 1, 5)).item() >= 0
            assert loss_eikonal(T.Tensor(rng.normal(0, 2, (5, 3)))).item() >= 0
            assert loss_rgb(T.Tensor(rng.uniform(0, 1, (5, 3))),
                            rng.uniform(0, 1, (5, 3))).item() >= 0
