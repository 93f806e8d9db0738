"""Joint optimization of geometry, color, appearance embeddings, and tau.

One optimizer step per iteration: sample a pixel batch uniformly over all
views, volume-render it, assemble the weighted objective, backpropagate
through the tape, and apply Adam (optionally freezing parameter groups for
the ablation switches). Eikonal gradients come from the ray samples plus an
equal count of uniform points in the scene cube. Any non-finite loss aborts
with the iteration number and component values. Runs are bit-reproducible
under a fixed seed; per-iteration loss components are appended to a CSV
(iteration, L_rgb, L_eik, L_prior, total, tau).
"""

import os
from dataclasses import dataclass, field as dfield

import numpy as np

from . import tensor as T
from .checkpoint import save_checkpoint
from .color import ColorConfig
from .field import FieldConfig
from .losses import LossWeights, loss_eikonal, loss_prior, loss_rgb, loss_total
from .model import ModelConfig, SceneModel
from .render import render_rays


@dataclass
class TrainConfig:
    iterations: int = 2000
    batch_rays: int = 256
    n_samples: int = 48
    lr: float = 5e-4
    lr_final: float = 5e-5
    lr_schedule: str = "cosine"      # "cosine" | "constant"
    plane_lr_scale: float = 10.0     # tri-plane features learn locally; see README
    tau_lr_scale: float = 10.0       # sharpness must anneal faster than weights
    seed: int = 0
    dtype: str = "float32"           # engine default is float64; this is the speed option
    lambda_prior: float = 1.0
    lambda_eik: float = 0.1
    lambda_rgb: float = 1.0
    mlp_layers: int = 4
    mlp_hidden: int = 64
    feature_width: int = 32
    pos_freqs: int = 6
    plane_res: int = 64
    plane_channels: int = 8
    decoder_hidden: int = 64
    color_layers: int = 4
    color_hidden: int = 64
    dir_freqs: int = 4
    embed_dim: int = 8
    tau_init: float = 0.3
    mlp_only: bool = False
    triplane_only: bool = False
    no_embedding: bool = False
    no_uncertainty: bool = False
    no_enhance: bool = False
    checkpoint_every: int = 0        # 0 = final checkpoint only

    def __post_init__(self):
        for name in ("iterations", "batch_rays", "n_samples"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.lr_schedule not in ("cosine", "constant"):
            raise ValueError(f"unknown lr schedule '{self.lr_schedule}'")

    def model_config(self, n_views):
        return ModelConfig(
            field=FieldConfig(mlp_layers=self.mlp_layers,
                              mlp_hidden=self.mlp_hidden,
                              pos_freqs=self.pos_freqs,
                              feature_width=self.feature_width,
                              plane_res=self.plane_res,
                              plane_channels=self.plane_channels,
                              decoder_hidden=self.decoder_hidden),
            color=ColorConfig(layers=self.color_layers,
                              hidden=self.color_hidden,
                              dir_freqs=self.dir_freqs,
                              embed_dim=self.embed_dim,
                              include_normal=True),
            n_views=n_views, tau_init=self.tau_init, dtype=self.dtype)


@dataclass
class AdamState:
    """Per-parameter moment accumulators for Adam."""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = dfield(default_factory=dict)
    v: dict = dfield(default_factory=dict)


def adam_step(store, state, lr, names=None, lr_scales=None):
    """Standard bias-corrected Adam update over ``names`` (default: all)."""
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1 ** t
    bias2 = 1.0 - b2 ** t
    for name in (names if names is not None else store.names()):
        p = store[name]
        g = p.grad
        if name not in state.m:
            state.m[name] = np.zeros_like(p.values)
            state.v[name] = np.zeros_like(p.values)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        scale = lr * (lr_scales.get(name, 1.0) if lr_scales else 1.0)
        p.values -= scale * (m / bias1) / (np.sqrt(v / bias2) + state.eps)


def lr_at(cfg, iteration):
    if cfg.lr_schedule == "constant":
        return cfg.lr
    frac = iteration / max(cfg.iterations - 1, 1)
    return cfg.lr_final + 0.5 * (cfg.lr - cfg.lr_final) * \
        (1.0 + np.cos(np.pi * frac))


@dataclass
class RayBatch:
    origins: np.ndarray
    dirs: np.ndarray
    near: np.ndarray
    far: np.ndarray
    view_ids: np.ndarray
    rgb: np.ndarray
    normal_world: np.ndarray
    uncertainty: np.ndarray
    pixels: np.ndarray


def sample_batch(views, batch_size, rng):
    """Uniform pixel draws over all views; targets ride along per ray.

    Normal targets are rotated from each view's camera frame to world space
    here, so the loss compares world-frame vectors.
    """
    from .camera import rays_for_pixels

    if not views:
        raise ValueError("no views to sample from")
    sizes = np.array([v.rgb.shape[0] * v.rgb.shape[1] for v in views])
    cum = np.concatenate(([0], np.cumsum(sizes)))
    flat = rng.integers(0, cum[-1], size=batch_size)
    view_of = np.searchsorted(cum, flat, side="right") - 1
    local = flat - cum[view_of]

    origins = np.empty((batch_size, 3))
    dirs = np.empty((batch_size, 3))
    near = np.empty(batch_size)
    far = np.empty(batch_size)
    rgb = np.empty((batch_size, 3))
    n_world = np.empty((batch_size, 3))
    unc = np.empty(batch_size)
    pixels = np.empty((batch_size, 2))
    for vid in np.unique(view_of):
        sel = view_of == vid
        view = views[vid]
        h, w = view.rgb.shape[:2]
        ys = local[sel] // w
        xs = local[sel] % w
        px = np.stack([xs + 0.5, ys + 0.5], axis=-1)
        o, d, nr, fr = rays_for_pixels(view.camera, px)
        origins[sel] = o
        dirs[sel] = d
        near[sel] = nr
        far[sel] = fr
        rgb[sel] = view.rgb[ys, xs]
        n_world[sel] = view.normal[ys, xs] @ view.camera.rotation.T
        unc[sel] = view.uncertainty[ys, xs]
        pixels[sel] = px
    return RayBatch(origins, dirs, near, far, view_of.astype(np.int64), rgb,
                    n_world, unc, pixels)


@dataclass
class TrainResult:
    model: SceneModel
    checkpoint_path: str
    csv_path: str
    initial: dict
    final: dict


def _csv_row(iteration, comps, tau):
    vals = [comps["rgb"], comps["eik"], comps["prior"], comps["total"], tau]
    return str(iteration) + "," + ",".join(f"{float(v):.10g}" for v in vals)


def train(scene_data, cfg, out_dir):
    """Run the optimization; writes metrics.csv and checkpoint(s) to out_dir.

    Returns a TrainResult with initial/final loss components. Raises
    RuntimeError when any loss component goes non-finite.
    """
    os.makedirs(out_dir, exist_ok=True)
    views = scene_data.views
    weights = LossWeights(prior=cfg.lambda_prior, eikonal=cfg.lambda_eik,
                          rgb=cfg.lambda_rgb)
    prev_dtype = T.default_dtype()
    T.set_default_dtype(np.dtype(cfg.dtype))
    try:
        model = SceneModel(cfg.model_config(len(views)), seed=cfg.seed,
                           norm_center=scene_data.norm_center,
                           norm_scale=scene_data.norm_scale)
        trainable = model.trainable_names(mlp_only=cfg.mlp_only,
                                          triplane_only=cfg.triplane_only,
                                          no_embedding=cfg.no_embedding)
        lr_scales = {name: cfg.plane_lr_scale
                     for name in model.param_groups()["triplane"]
                     if name.startswith("tri.plane_")}
        lr_scales["tau.log"] = cfg.tau_lr_scale
        state = AdamState()
        rng = np.random.default_rng(cfg.seed)
        bg = scene_data.bg_color
        csv_path = os.path.join(out_dir, "metrics.csv")
        ckpt_path = os.path.join(out_dir, "checkpoint.rsdf")
        initial = None
        final = None
        with open(csv_path, "w") as csv:
            csv.write("iteration,L_rgb,L_eik,L_prior,total,tau\n")
            for it in range(cfg.iterations):
                batch = sample_batch(views, cfg.batch_rays, rng)
                uncertainty = np.zeros_like(batch.uncertainty) \
                    if cfg.no_uncertainty else batch.uncertainty
                tape = T.Tape()
                try:
                    with tape:
                        tau = model.tau()
                        out = render_rays(batch.origins, batch.dirs,
                                          batch.near, batch.far, model.field,
                                          tau, colornet=model.colornet,
                                          view_ids=batch.view_ids,
                                          n_samples=cfg.n_samples, rng=rng,
                                          bg_color=bg)
                        uniform = rng.uniform(
                            -1.0, 1.0, (cfg.batch_rays * cfg.n_samples, 3))
                        eik_grads = T.concat(
                            [out.grad_samples,
                             model.field.fd_gradient(uniform)], axis=0)
                        l_rgb = loss_rgb(out.color, batch.rgb)
                        l_eik = loss_eikonal(eik_grads)
                        l_prior = loss_prior(out.normal, batch.normal_world,
                                             uncertainty)
                        total = loss_total(weights, l_prior, l_eik, l_rgb)
                except (ValueError, FloatingPointError) as exc:
                    raise RuntimeError(
                        f"numeric collapse at iteration {it}: {exc}") from exc
                comps = {"rgb": l_rgb.item(), "eik": l_eik.item(),
                         "prior": l_prior.item(), "total": total.item()}
                if not all(np.isfinite(v) for v in comps.values()):
                    raise RuntimeError(
                        f"non-finite loss at iteration {it}: "
                        f"rgb={comps['rgb']} eik={comps['eik']} "
                        f"prior={comps['prior']} total={comps['total']}")
                if initial is None:
                    initial = comps
                final = comps
                model.store.zero_grads()
                tape.backward(total)
                adam_step(model.store, state, lr_at(cfg, it), names=trainable,
                          lr_scales=lr_scales)
                csv.write(_csv_row(it, comps, model.tau_value()) + "\n")
                if cfg.checkpoint_every and (it + 1) % cfg.checkpoint_every == 0:
                    save_checkpoint(
                        os.path.join(out_dir, f"ckpt_{it + 1:06d}.rsdf"), model)
        save_checkpoint(ckpt_path, model)
        return TrainResult(model=model, checkpoint_path=ckpt_path,
                           csv_path=csv_path, initial=initial, final=final)
    finally:
        T.set_default_dtype(prev_dtype)
