"""SDF-based volume rendering: sampling, opacity, and accumulation.

Per ray segment the opacity follows the sigmoid-ratio rule
``alpha = max(0, (Phi(s_i) - Phi(s_next)) / Phi(s_i))`` with
``Phi(s) = sigmoid(s / tau)``; transmittance is the exclusive running
product of ``1 - alpha``. Color, surface normal (from per-sample unit SDF
gradients), and depth are alpha-composited with weights ``T_i alpha_i``.
Normals are normalized per sample before accumulation and again after it
when the accumulated vector is longer than 1e-8.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T


def sample_rays(near, far, n_samples, rng=None):
    """Stratified t values: one sample per equal sub-interval of [near, far].

    With ``rng`` None the samples sit at sub-interval midpoints.
    Returns (B, n_samples), strictly increasing along axis 1.
    """
    if n_samples < 2:
        raise ValueError("need at least 2 samples per ray")
    near = np.atleast_1d(np.asarray(near, dtype=np.float64))
    far = np.atleast_1d(np.asarray(far, dtype=np.float64))
    b = near.shape[0]
    if rng is None:
        u = np.full((b, n_samples), 0.5)
    else:
        u = rng.random((b, n_samples))
    steps = (np.arange(n_samples) + u) / n_samples
    return near[:, None] + steps * (far - near)[:, None]


def sample_ray(ray, n_samples, rng=None):
    return sample_rays([ray.near], [ray.far], n_samples, rng)[0]


def alpha_from_sdf(s_i, s_next, tau):
    """Segment opacity from consecutive SDF values (tensors or arrays).

    Underflowed ``Phi(s_i)`` (deep inside geometry) yields alpha = 0.
    """
    s_i = T.as_tensor(s_i)
    s_next = T.as_tensor(s_next)
    tau = T.as_tensor(tau)
    if np.any(tau.values <= 0):
        raise ValueError("tau must be positive")
    phi_i = T.sigmoid(s_i / tau)
    phi_next = T.sigmoid(s_next / tau)
    tiny = np.finfo(phi_i.dtype).tiny
    ratio = phi_next / T.clamp_min(phi_i, tiny)
    alive = (phi_i.values > 0.0).astype(phi_i.dtype)
    return T.relu(1.0 - ratio) * T.Tensor(alive)


@dataclass
class RenderOutput:
    color: T.Tensor | None
    normal: T.Tensor
    depth: T.Tensor
    weights: T.Tensor       # (B, S-1) per-segment T_i * alpha_i
    transmittance: T.Tensor  # (B, S-1)
    acc: T.Tensor           # (B, 1) accumulated opacity
    sdf: T.Tensor           # (B, S) raw SDF samples
    grad_samples: T.Tensor  # (B*S, 3) raw SDF spatial gradients
    t_values: np.ndarray    # (B, S)


def _unit_rows(vec, floor=1e-24):
    norm = T.sqrt_(T.clamp_min(T.sum_(T.square(vec), axis=1, keepdims=True), floor))
    return vec / norm


def render_rays(origins, dirs, near, far, field, tau, colornet=None,
                view_ids=None, embedding=None, n_samples=48, rng=None,
                bg_color=None):
    """Volume-render a batch of rays against ``field``.

    ``field`` is anything with ``evaluate(points, want_grad, want_feature)``
    (the learned hybrid field or an analytic override). ``colornet`` may be
    None to skip color. When recording on a tape, every output participates
    in backpropagation.
    """
    origins = np.atleast_2d(origins)
    dirs = np.atleast_2d(dirs)
    b = origins.shape[0]
    ts = sample_rays(near, far, n_samples, rng)
    pts = (origins[:, None, :] + ts[:, :, None] * dirs[:, None, :]).reshape(-1, 3)

    want_feature = colornet is not None
    fout = field.evaluate(pts, want_grad=True, want_feature=want_feature)
    s = T.reshape(fout.s, (b, n_samples))
    n_unit = _unit_rows(fout.grad_s)

    s_i = T.narrow(s, 1, 0, n_samples - 1)
    s_next = T.narrow(s, 1, 1, n_samples - 1)
    alpha = alpha_from_sdf(s_i, s_next, tau)
    trans = T.exclusive_cumprod(1.0 - alpha, axis=1)
    weights = trans * alpha
    acc = T.sum_(weights, axis=1, keepdims=True)
    w3 = T.reshape(weights, (b, n_samples - 1, 1))

    n_seg = T.narrow(T.reshape(n_unit, (b, n_samples, 3)), 1, 0, n_samples - 1)
    n_acc = T.sum_(w3 * n_seg, axis=1)
    nlen = T.sqrt_(T.clamp_min(T.sum_(T.square(n_acc), axis=1, keepdims=True),
                               1e-30))
    renorm = (nlen.values > 1e-8).astype(nlen.dtype)
    factor = T.Tensor(renorm) / T.clamp_min(nlen, 1e-8) + T.Tensor(1.0 - renorm)
    normal = n_acc * factor

    t_seg = T.Tensor(ts[:, : n_samples - 1].copy())
    depth = T.sum_(weights * t_seg, axis=1, keepdims=True) / T.clamp_min(acc, 1e-8)

    color = None
    if colornet is not None:
        h_seg = T.reshape(
            T.narrow(T.reshape(fout.h, (b, n_samples, -1)), 1, 0, n_samples - 1),
            (b * (n_samples - 1), -1))
        n_flat = T.reshape(n_seg, (b * (n_samples - 1), 3))
        d_rep = np.repeat(dirs, n_samples - 1, axis=0)
        if embedding is None:
            ids_rep = np.repeat(np.asarray(view_ids, dtype=np.int64),
                                n_samples - 1)
            c = colornet.eval_color(h_seg, d_rep, n_flat, view_ids=ids_rep)
        else:
            c = colornet.eval_color(h_seg, d_rep, n_flat, embedding=embedding)
        c = T.reshape(c, (b, n_samples - 1, 3))
        color = T.sum_(w3 * c, axis=1)
        if bg_color is not None:
            bg = np.tile(np.asarray(bg_color, dtype=np.float64), (b, 1))
            color = color + (1.0 - acc) * T.Tensor(bg)

    return RenderOutput(color=color, normal=normal, depth=depth,
                        weights=weights, transmittance=trans, acc=acc,
                        sdf=s, grad_samples=fout.grad_s, t_values=ts)


def render_ray(ray, field, tau, colornet=None, view_id=0, n_samples=48,
               rng=None, bg_color=None):
    """Single-ray convenience wrapper around :func:`render_rays`."""
    view_ids = np.array([view_id]) if colornet is not None else None
    return render_rays(ray.origin[None], ray.direction[None], [ray.near],
                       [ray.far], field, tau, colornet=colornet,
                       view_ids=view_ids, n_samples=n_samples, rng=rng,
                       bg_color=bg_color)


def render_image(model, cam, view_id=None, n_samples=48, bg_color=None,
                 batch=1024, field=None):
    """Render full color/normal/depth buffers for one camera (no tape).

    ``view_id`` selects a trained appearance embedding; None uses the mean
    embedding (novel views). Returns float arrays: rgb (H, W, 3),
    normal (H, W, 3), depth (H, W), acc (H, W).
    """
    from .camera import rays_for_pixels

    h, w = cam.height, cam.width
    uu, vv = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5)
    px = np.stack([uu.reshape(-1), vv.reshape(-1)], axis=-1)
    rgb = np.zeros((h * w, 3))
    normal = np.zeros((h * w, 3))
    depth = np.zeros(h * w)
    acc = np.zeros(h * w)
    fld = field if field is not None else model.field
    tau = model.tau()
    for lo in range(0, h * w, batch):
        hi = min(lo + batch, h * w)
        o, d, near, far = rays_for_pixels(cam, px[lo:hi])
        if view_id is None:
            emb = model.colornet.embeddings.mean_embedding(
                (hi - lo) * (n_samples - 1))
            out = render_rays(o, d, near, far, fld, tau,
                              colornet=model.colornet, embedding=emb,
                              n_samples=n_samples, bg_color=bg_color)
        else:
            ids = np.full(hi - lo, view_id, dtype=np.int64)
            out = render_rays(o, d, near, far, fld, tau,
                              colornet=model.colornet, view_ids=ids,
                              n_samples=n_samples, bg_color=bg_color)
        rgb[lo:hi] = out.color.values
        normal[lo:hi] = out.normal.values
        depth[lo:hi] = out.depth.values[:, 0]
        acc[lo:hi] = out.acc.values[:, 0]
    return (rgb.reshape(h, w, 3), normal.reshape(h, w, 3),
            depth.reshape(h, w), acc.reshape(h, w))
