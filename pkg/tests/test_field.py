import numpy as np
import pytest

from roomsdf import tensor as T
from roomsdf.field import (AnalyticSdfField, FieldConfig, HybridField,
                           encoding_dim, positional_encoding)
from helpers import check_param_grads


def make_field(seed=0, **overrides):
    cfg = FieldConfig(mlp_layers=3, mlp_hidden=32, feature_width=8,
                      plane_res=16, plane_channels=4, decoder_hidden=16,
                      **overrides)
    store = T.ParamStore()
    return HybridField(store, cfg, np.random.default_rng(seed)), store, cfg


def unit_sphere_sdf(x):
    return np.linalg.norm(x, axis=-1) - 1.0


def test_encoding_dim():
    x = np.zeros((5, 3))
    assert positional_encoding(x, 6).shape == (5, encoding_dim(3, 6))


def test_mlp_initialization_is_sphere_like():
    # inside-out sphere: free space around interior cameras starts positive
    field, _, _ = make_field(seed=3)
    s0, _ = field.eval_mlp_branch(np.zeros((1, 3)))
    assert s0.values[0, 0] > 0
    rng = np.random.default_rng(0)
    dirs = rng.normal(size=(1000, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    s, _ = field.eval_mlp_branch(1.5 * dirs)
    assert np.all(s.values < 0)


def test_mlp_object_style_initialization_option():
    field, _, _ = make_field(seed=3, inside_out=False)
    s0, _ = field.eval_mlp_branch(np.zeros((1, 3)))
    assert s0.values[0, 0] < 0
    rng = np.random.default_rng(0)
    dirs = rng.normal(size=(1000, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    s, _ = field.eval_mlp_branch(1.5 * dirs)
    assert np.all(s.values > 0)


def test_triplane_zero_at_init_and_field_decoupling():
    field, _, _ = make_field(seed=1)
    rng = np.random.default_rng(2)
    pts = rng.uniform(-1, 1, (1000, 3))
    ds, dh = field.eval_triplane_branch(pts)
    assert np.all(ds.values == 0.0)
    assert np.all(dh.values == 0.0)
    out = field.evaluate(pts)
    s_mlp, _ = field.eval_mlp_branch(pts)
    assert np.array_equal(out.s.values, s_mlp.values)


def test_field_sum_is_exact():
    field, store, _ = make_field(seed=5)
    # make the residual branch nonzero
    store["tri.dec_w_s"].values[:] = 0.3
    store["tri.dec_w_h"].values[:] = -0.2
    pts = np.random.default_rng(3).uniform(-1, 1, (20, 3))
    s_m, h_m = field.eval_mlp_branch(pts)
    s_t, h_t = field.eval_triplane_branch(pts)
    out = field.evaluate(pts)
    assert np.array_equal(out.s.values, s_m.values + s_t.values)
    assert np.array_equal(out.h.values, h_m.values + h_t.values)


def test_field_deterministic():
    field, _, _ = make_field(seed=7)
    pts = np.random.default_rng(4).uniform(-1, 1, (10, 3))
    a = field.evaluate(pts, want_grad=True)
    b = field.evaluate(pts, want_grad=True)
    assert np.array_equal(a.s.values, b.s.values)
    assert np.array_equal(a.h.values, b.h.values)
    assert np.array_equal(a.grad_s.values, b.grad_s.values)


def test_feature_width_contract():
    field, _, cfg = make_field()
    out = field.evaluate(np.zeros((4, 3)))
    assert out.h.shape == (4, cfg.feature_width)


def test_triplane_exact_node_lookup():
    field, store, cfg = make_field(seed=9)
    n = cfg.plane_res
    coord = lambda k: -1.0 + 2.0 * k / (n - 1)
    i, j, k = 3, 7, 11
    x = np.array([[coord(i), coord(j), coord(k)]])
    feats = field.tri.features(x).values[0]
    expected = np.concatenate([
        store["tri.plane_xy"].values[i, j],
        store["tri.plane_xz"].values[i, k],
        store["tri.plane_yz"].values[j, k],
    ])
    assert np.allclose(feats, expected, atol=1e-12)


def test_triplane_cell_center_is_corner_mean():
    field, store, cfg = make_field(seed=11)
    n = cfg.plane_res
    coord = lambda k: -1.0 + 2.0 * k / (n - 1)
    x = np.array([[(coord(2) + coord(3)) / 2,
                   (coord(5) + coord(6)) / 2,
                   (coord(8) + coord(9)) / 2]])
    feats = field.tri.features(x).values[0]
    pxy = store["tri.plane_xy"].values
    expected_xy = (pxy[2, 5] + pxy[2, 6] + pxy[3, 5] + pxy[3, 6]) / 4
    assert np.allclose(feats[: cfg.plane_channels], expected_xy, atol=1e-9)


def test_triplane_locality():
    field, store, cfg = make_field(seed=13)
    store["tri.dec_w_s"].values[:] = np.random.default_rng(0).normal(
        0, 1, store["tri.dec_w_s"].shape)
    probes = np.stack(np.meshgrid(
        np.linspace(-0.95, 0.95, 12), np.linspace(-0.95, 0.95, 12),
        np.linspace(-0.95, 0.95, 5), indexing="ij"), axis=-1).reshape(-1, 3)
    before = field.tri.sdf(probes).values.copy()
    i, j = 8, 4
    store["tri.plane_xy"].values[i, j] += 1.0
    after = field.tri.sdf(probes).values
    n = cfg.plane_res
    u = (probes[:, 0] + 1.0) * (n - 1) / 2.0
    v = (probes[:, 1] + 1.0) * (n - 1) / 2.0
    touches = (np.abs(u - i) < 1.0) & (np.abs(v - j) < 1.0)
    changed = (np.abs(after - before) > 1e-12)[:, 0]
    assert not np.any(changed & ~touches)
    assert np.any(changed & touches)


def test_analytic_override_gradient_on_axis():
    field = AnalyticSdfField(unit_sphere_sdf)
    out = field.evaluate(np.array([[0.5, 0.0, 0.0]]), want_grad=True)
    assert np.allclose(out.grad_s.values[0], [1.0, 0.0, 0.0], atol=1e-6)


def test_sdf_param_gradients_match_fd():
    field, store, _ = make_field(seed=17)
    # give the zero-initialized output heads signal so their inputs get grads
    rng = np.random.default_rng(5)
    store["tri.dec_w_s"].values[:] = rng.normal(0, 0.3, store["tri.dec_w_s"].shape)
    pts = rng.uniform(-0.9, 0.9, (6, 3))

    def loss():
        out = field.evaluate(pts, want_grad=True)
        return T.mean_(T.square(out.s)) + T.mean_(T.square(out.grad_s)) \
            + T.mean_(T.square(out.h))

    check_param_grads(loss, store, rng, n_entries=3, tol=2e-4)


def test_out_of_extent_queries_clamp_not_error():
    field, _, _ = make_field()
    out = field.evaluate(np.array([[2.0, -2.0, 0.0]]), want_grad=True)
    assert np.all(np.isfinite(out.s.values))
