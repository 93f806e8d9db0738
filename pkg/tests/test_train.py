import os

import numpy as np
import pytest

from roomsdf import tensor as T
from roomsdf.checkpoint import load_checkpoint, save_checkpoint
from roomsdf.render import render_image
from roomsdf.scene import load_scene_dir
from roomsdf.synth import CorruptionSpec, canonical_scenes, generate_views, \
    write_generated
from roomsdf.train import (AdamState, TrainConfig, adam_step, lr_at,
                           sample_batch, train)


def tiny_cfg(**overrides):
    base = dict(iterations=8, batch_rays=48, n_samples=12, mlp_layers=3,
                mlp_hidden=24, feature_width=8, plane_res=16,
                plane_channels=4, decoder_hidden=16, color_hidden=16,
                embed_dim=4, seed=0)
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def smoke_scene(tmp_path_factory):
    scene, corr = canonical_scenes()["room-basic"]
    gen = generate_views(scene, n_views=2, resolution=24, corruption=corr,
                         seed=1, gt_mesh_resolution=64)
    path = tmp_path_factory.mktemp("scene") / "smoke"
    write_generated(path, gen)
    return str(path)


class TestAdam:
    def test_zero_grad_keeps_params(self):
        store = T.ParamStore()
        w = store.register("w", [1.0, -2.0])
        state = AdamState()
        adam_step(store, state, lr=0.1)
        assert np.array_equal(w.values, [1.0, -2.0])
        assert state.step == 1

    def test_first_step_magnitude(self):
        store = T.ParamStore()
        w = store.register("w", [0.0])
        w.grad[:] = 3.7
        state = AdamState()
        adam_step(store, state, lr=0.01)
        # bias-corrected first step moves by ~ -lr * sign(g)
        assert w.values[0] == pytest.approx(-0.01, rel=1e-6)

    def test_quadratic_bowl_converges(self):
        store = T.ParamStore()
        w = store.register("w", [1.0])
        state = AdamState()
        for _ in range(200):
            w.grad[:] = 2.0 * w.values
            adam_step(store, state, lr=0.1)
        assert abs(w.values[0]) < 1e-3

    def test_lr_scales_apply(self):
        store = T.ParamStore()
        a = store.register("a", [0.0])
        b = store.register("b", [0.0])
        a.grad[:] = 1.0
        b.grad[:] = 1.0
        adam_step(store, AdamState(), lr=0.01, lr_scales={"b": 10.0})
        assert abs(b.values[0]) == pytest.approx(10 * abs(a.values[0]))


def test_lr_schedule_endpoints():
    cfg = TrainConfig(iterations=100, lr=1e-3, lr_final=1e-4)
    assert lr_at(cfg, 0) == pytest.approx(1e-3)
    assert lr_at(cfg, 99) == pytest.approx(1e-4)
    constant = TrainConfig(iterations=100, lr=1e-3, lr_schedule="constant")
    assert lr_at(constant, 50) == 1e-3


class TestSampleBatch:
    def test_exact_count_and_bounds(self, smoke_scene):
        data = load_scene_dir(smoke_scene)
        rng = np.random.default_rng(0)
        batch = sample_batch(data.views, 512, rng)
        assert len(batch.origins) == 512
        assert np.all(batch.pixels >= 0)
        for v, px in zip(batch.view_ids, batch.pixels):
            cam = data.views[v].camera
            assert px[0] <= cam.width and px[1] <= cam.height
        assert np.all(batch.uncertainty >= 0) & np.all(batch.uncertainty <= 1)
        norms = np.linalg.norm(batch.normal_world, axis=1)
        assert np.all(np.abs(norms - 1.0) < 1e-4)

    def test_view_frequencies_uniform(self, smoke_scene):
        data = load_scene_dir(smoke_scene)
        rng = np.random.default_rng(1)
        counts = np.zeros(len(data.views))
        draws = 40
        batch_size = 512
        for _ in range(draws):
            batch = sample_batch(data.views, batch_size, rng)
            for v in batch.view_ids:
                counts[v] += 1
        total = draws * batch_size
        p = 1.0 / len(data.views)
        sigma = np.sqrt(total * p * (1 - p))
        assert np.all(np.abs(counts - total * p) < 3 * sigma)

    def test_world_frame_transform(self, smoke_scene):
        data = load_scene_dir(smoke_scene)
        rng = np.random.default_rng(2)
        batch = sample_batch(data.views, 64, rng)
        i = 0
        view = data.views[batch.view_ids[i]]
        x, y = int(batch.pixels[i, 0]), int(batch.pixels[i, 1])
        expected = view.normal[y, x] @ view.camera.rotation.T
        assert np.allclose(batch.normal_world[i], expected, atol=1e-12)

    def test_empty_views_rejected(self):
        with pytest.raises(ValueError):
            sample_batch([], 8, np.random.default_rng(0))


class TestTrainLoop:
    def test_smoke_two_views(self, smoke_scene, tmp_path):
        data = load_scene_dir(smoke_scene)
        res = train(data, tiny_cfg(iterations=10), tmp_path / "run")
        assert os.path.isfile(res.checkpoint_path)
        lines = open(res.csv_path).read().strip().splitlines()
        assert lines[0] == "iteration,L_rgb,L_eik,L_prior,total,tau"
        assert len(lines) == 11
        assert np.isfinite(res.final["total"])

    def test_deterministic_checkpoints_and_csv(self, smoke_scene, tmp_path):
        data = load_scene_dir(smoke_scene)
        res_a = train(data, tiny_cfg(), tmp_path / "a")
        res_b = train(data, tiny_cfg(), tmp_path / "b")
        a = open(res_a.checkpoint_path, "rb").read()
        b = open(res_b.checkpoint_path, "rb").read()
        assert a == b
        assert open(res_a.csv_path).read() == open(res_b.csv_path).read()

    def test_nan_aborts_with_iteration(self, smoke_scene, tmp_path):
        data = load_scene_dir(smoke_scene)
        with pytest.raises(RuntimeError, match="iteration"):
            train(data, tiny_cfg(iterations=60, lr=1e18, lr_final=1e18),
                  tmp_path / "nan")

    def test_checkpoint_cadence(self, smoke_scene, tmp_path):
        data = load_scene_dir(smoke_scene)
        train(data, tiny_cfg(iterations=8, checkpoint_every=4),
              tmp_path / "run")
        assert os.path.isfile(tmp_path / "run" / "ckpt_000004.rsdf")
        assert os.path.isfile(tmp_path / "run" / "ckpt_000008.rsdf")


class TestAblationSwitches:
    def test_mlp_only_freezes_triplane(self, smoke_scene, tmp_path):
        data = load_scene_dir(smoke_scene)
        res = train(data, tiny_cfg(mlp_only=True), tmp_path / "run")
        model = res.model
        for name in model.param_groups()["triplane"]:
            if name.endswith(("dec_w_s", "dec_b_s", "dec_w_h", "dec_b_h")):
                assert np.all(model.store[name].values == 0.0)
        # residual branch output stays exactly zero
        pts = np.random.default_rng(0).uniform(-1, 1, (50, 3))
        ds, dh = model.field.eval_triplane_branch(pts)
        assert np.all(ds.values == 0.0) and np.all(dh.values == 0.0)

    def test_triplane_only_freezes_mlp(self, smoke_scene, tmp_path):
        data = load_scene_dir(smoke_scene)
        cfg = tiny_cfg(triplane_only=True)
        res = train(data, cfg, tmp_path / "run")
        fresh = res.model.cfg
        from roomsdf.model import SceneModel
        ref = SceneModel(fresh, seed=cfg.seed,
                         norm_center=data.norm_center,
                         norm_scale=data.norm_scale)
        for name in res.model.param_groups()["mlp"]:
            assert np.array_equal(res.model.store[name].values,
                                  ref.store[name].values.astype(
                                      res.model.store[name].dtype))

    def test_no_embedding_keeps_zeros(self, smoke_scene, tmp_path):
        data = load_scene_dir(smoke_scene)
        res = train(data, tiny_cfg(no_embedding=True), tmp_path / "run")
        assert np.all(res.model.store["embed.table"].values == 0.0)

    def test_no_uncertainty_forces_full_weight(self, smoke_scene, tmp_path):
        data = load_scene_dir(smoke_scene)
        for view in data.views:
            view.uncertainty[:] = 1.0  # priors fully distrusted
        res_u = train(data, tiny_cfg(iterations=2), tmp_path / "u")
        res_n = train(data, tiny_cfg(iterations=2, no_uncertainty=True),
                      tmp_path / "n")
        first_u = float(open(res_u.csv_path).read().splitlines()[1].split(",")[3])
        first_n = float(open(res_n.csv_path).read().splitlines()[1].split(",")[3])
        assert first_u == 0.0
        assert first_n > 0.0

    def test_exclusive_switches_rejected(self, smoke_scene, tmp_path):
        data = load_scene_dir(smoke_scene)
        with pytest.raises(ValueError):
            train(data, tiny_cfg(mlp_only=True, triplane_only=True),
                  tmp_path / "run")


class TestCheckpointRoundTrip:
    def test_save_load_render_bitwise(self, smoke_scene, tmp_path):
        data = load_scene_dir(smoke_scene)
        res = train(data, tiny_cfg(), tmp_path / "run")
        model = res.model
        loaded = load_checkpoint(res.checkpoint_path)
        assert loaded.store.names() == model.store.names()
        for name in model.store.names():
            assert np.array_equal(loaded.store[name].values,
                                  model.store[name].values)
        cam = data.views[0].camera
        prev = T.default_dtype()
        T.set_default_dtype(model.store.dtype)
        try:
            a = render_image(model, cam, view_id=0, n_samples=8,
                             bg_color=data.bg_color)
            b = render_image(loaded, cam, view_id=0, n_samples=8,
                             bg_color=data.bg_color)
        finally:
            T.set_default_dtype(prev)
        for x, y in zip(a, b):
            assert np.array_equal(x, y)

    def test_rejects_garbage(self, tmp_path):
        path = tmp_path / "bad.rsdf"
        path.write_bytes(b"NOPE")
        with pytest.raises(ValueError, match="checkpoint"):
            load_checkpoint(path)

    def test_norm_transform_round_trip(self, smoke_scene, tmp_path):
        data = load_scene_dir(smoke_scene)
        cfg = tiny_cfg(iterations=2)
        from roomsdf.model import SceneModel
        model = SceneModel(cfg.model_config(2), seed=0,
                           norm_center=(0.1, 0.2, 0.3), norm_scale=0.5)
        path = tmp_path / "m.rsdf"
        save_checkpoint(path, model)
        loaded = load_checkpoint(path)
        assert np.array_equal(loaded.norm_center, [0.1, 0.2, 0.3])
        assert loaded.norm_scale == 0.5
        pts = np.array([[1.0, 2.0, 3.0]])
        assert np.allclose(loaded.denormalize_points(
            loaded.normalize_points(pts)), pts)
