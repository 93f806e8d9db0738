"""Hybrid geometry field: smooth MLP branch plus tri-plane residual branch.

The MLP branch is geometrically initialized so the signed distance starts as
approximately ``|x| - 1`` (the unit bounding sphere); the tri-plane branch's
decoder output layer starts at zero, so the residual distance and residual
feature are exactly zero at initialization. The full field is the sum of the
two branches. Spatial gradients are central finite differences over position
with a configurable step; every offset evaluation participates in the tape,
so parameter gradients of gradient-based losses stay first-order.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T


def positional_encoding(x, n_freqs, dtype=None):
    """[x, sin(2^k x), cos(2^k x)] for k < n_freqs, along the last axis.

    Channel layout groups per octave: x, sin(x_oct0), cos(x_oct0), ...
    """
    x = np.asarray(x, dtype=dtype or x.dtype)
    p, d = x.shape
    out = np.empty((p, d * (1 + 2 * n_freqs)), dtype=x.dtype)
    out[:, :d] = x
    scales = (2.0 ** np.arange(n_freqs)).astype(x.dtype)
    args = x[:, None, :] * scales[None, :, None]  # (P, K, d)
    interleaved = out[:, d:].reshape(p, n_freqs, 2 * d)
    np.sin(args, out=interleaved[:, :, :d])
    np.cos(args, out=interleaved[:, :, d:])
    return out


def encoding_dim(n_inputs, n_freqs):
    return n_inputs * (1 + 2 * n_freqs)


@dataclass
class FieldConfig:
    mlp_layers: int = 4
    mlp_hidden: int = 64
    pos_freqs: int = 6
    feature_width: int = 32
    plane_res: int = 64
    plane_channels: int = 8
    plane_extent: float = 1.0
    decoder_hidden: int = 64
    grad_eps: float = 1e-3
    query_clip: float = 1.5
    activation: str = "relu"     # "relu" | "softplus" (beta below)
    softplus_beta: float = 100.0
    init_radius: float = 1.0
    # inside-out: positive inside the init sphere (cameras sit inside the
    # scene, so free space around them must start positive); False gives
    # the object-style |x| - r pattern
    inside_out: bool = True


@dataclass
class FieldOutput:
    s: T.Tensor
    h: T.Tensor | None = None
    grad_s: T.Tensor | None = None


def fibonacci_directions(m):
    """m well-spread unit directions (spherical Fibonacci lattice)."""
    i = np.arange(m)
    z = 1.0 - (2.0 * i + 1.0) / m
    r = np.sqrt(np.maximum(1.0 - z * z, 0.0))
    phi = i * np.pi * (3.0 - np.sqrt(5.0))
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


class MlpBranch:
    """Coarse SDF + feature from a positionally-encoded MLP.

    Geometric initialization targets the signed distance of the unit
    bounding sphere, by default inside-out (``s(x) ~ radius - |x|``, free
    space positive around interior cameras): the raw-x block of the first
    layer holds antithetic pairs of well-spread unit directions (so the
    first activation computes a low-ripple quadrature of ``|x|``),
    encoded-frequency rows start at zero, deeper layers start near
    identity, and the distance head is rescaled so the mean predicted norm
    over probe directions on the unit sphere is exactly ``radius``. This
    keeps the sphere sign pattern reliable at any hidden width.
    """

    def __init__(self, store, cfg, rng, prefix="mlp"):
        self.cfg = cfg
        self.prefix = prefix
        self.store = store
        in_dim = encoding_dim(3, cfg.pos_freqs)
        dims = [in_dim] + [cfg.mlp_hidden] * (cfg.mlp_layers - 1)
        self.hidden_names = []
        for i in range(len(dims) - 1):
            out = dims[i + 1]
            if i == 0:
                w = np.zeros((dims[i], out))
                half = out // 2
                dirs = fibonacci_directions(half)
                gain = np.sqrt(2.0) / np.sqrt(out)
                w[:3, :half] = gain * dirs.T
                w[:3, half: 2 * half] = -gain * dirs.T
                if out % 2:
                    extra = rng.normal(size=3)
                    w[:3, -1] = gain * extra / np.linalg.norm(extra)
            else:
                w = np.eye(dims[i], out) + rng.normal(0.0, 0.02, (dims[i], out))
            store.register(f"{prefix}.w{i}", w)
            store.register(f"{prefix}.b{i}", np.zeros(out))
            self.hidden_names.append(i)
        last = dims[-1]
        sign = -1.0 if cfg.inside_out else 1.0
        ws = rng.normal(sign * np.sqrt(np.pi) / np.sqrt(last), 1e-4, (last, 1))
        store.register(f"{prefix}.w_s", ws)
        store.register(f"{prefix}.b_s", np.full(1, -sign * cfg.init_radius))
        store.register(
            f"{prefix}.w_h",
            rng.normal(0.0, np.sqrt(2.0) / np.sqrt(cfg.feature_width),
                       (last, cfg.feature_width)))
        store.register(f"{prefix}.b_h", np.zeros(cfg.feature_width))
        self._calibrate_head(rng, sign)

    def _calibrate_head(self, rng, sign, n_probes=512):
        probes = rng.normal(size=(n_probes, 3))
        probes /= np.linalg.norm(probes, axis=1, keepdims=True)
        trunk = self._trunk(probes * self.cfg.init_radius)
        ws = self.store[f"{self.prefix}.w_s"]
        mean_norm = float((trunk.values @ ws.values).mean())
        ws.values *= sign * self.cfg.init_radius / mean_norm

    def param_names(self):
        p = self.prefix
        names = []
        for i in self.hidden_names:
            names += [f"{p}.w{i}", f"{p}.b{i}"]
        return names + [f"{p}.w_s", f"{p}.b_s", f"{p}.w_h", f"{p}.b_h"]

    def _trunk(self, x):
        cfg = self.cfg
        x = np.clip(np.asarray(x, dtype=self.store.dtype), -cfg.query_clip,
                    cfg.query_clip)
        enc = positional_encoding(x, cfg.pos_freqs)
        h = T.Tensor(enc, dtype=self.store.dtype)
        for i in self.hidden_names:
            h = T.linear(h, self.store[f"{self.prefix}.w{i}"],
                         self.store[f"{self.prefix}.b{i}"])
            if cfg.activation == "relu":
                h = T.relu(h)
            else:
                h = T.softplus(h, beta=cfg.softplus_beta)
        return h

    def sdf(self, x):
        h = self._trunk(x)
        return T.linear(h, self.store[f"{self.prefix}.w_s"],
                        self.store[f"{self.prefix}.b_s"])

    def forward(self, x):
        h = self._trunk(x)
        s = T.linear(h, self.store[f"{self.prefix}.w_s"],
                     self.store[f"{self.prefix}.b_s"])
        feat = T.linear(h, self.store[f"{self.prefix}.w_h"],
                        self.store[f"{self.prefix}.b_h"])
        return s, feat


class TriPlane:
    """Three axis-aligned feature planes plus a two-layer residual decoder.

    A query point is projected onto the xy, xz, and yz planes; the three
    bilinear lookups are concatenated and decoded to a residual distance and
    residual feature. Queries outside the plane extent clamp to the border
    cell. The decoder's output layer is zero-initialized.
    """

    PLANES = (("xy", 0, 1), ("xz", 0, 2), ("yz", 1, 2))

    def __init__(self, store, cfg, rng, prefix="tri"):
        self.cfg = cfg
        self.prefix = prefix
        self.store = store
        n, c = cfg.plane_res, cfg.plane_channels
        for name, _, _ in self.PLANES:
            store.register(f"{prefix}.plane_{name}", rng.normal(0, 0.01, (n, n, c)))
        in_dim = 3 * c
        store.register(
            f"{prefix}.dec_w0",
            rng.normal(0.0, np.sqrt(2.0 / in_dim), (in_dim, cfg.decoder_hidden)))
        store.register(f"{prefix}.dec_b0", np.zeros(cfg.decoder_hidden))
        store.register(f"{prefix}.dec_w_s", np.zeros((cfg.decoder_hidden, 1)))
        store.register(f"{prefix}.dec_b_s", np.zeros(1))
        store.register(f"{prefix}.dec_w_h",
                       np.zeros((cfg.decoder_hidden, cfg.feature_width)))
        store.register(f"{prefix}.dec_b_h", np.zeros(cfg.feature_width))

    def param_names(self):
        p = self.prefix
        return [f"{p}.plane_{n}" for n, _, _ in self.PLANES] + [
            f"{p}.dec_w0", f"{p}.dec_b0", f"{p}.dec_w_s", f"{p}.dec_b_s",
            f"{p}.dec_w_h", f"{p}.dec_b_h"]

    def _grid_coords(self, x, a, b):
        cfg = self.cfg
        half = cfg.plane_extent
        scale = (cfg.plane_res - 1) / (2.0 * half)
        uv = np.empty((x.shape[0], 2), dtype=self.store.dtype)
        uv[:, 0] = (x[:, a] + half) * scale
        uv[:, 1] = (x[:, b] + half) * scale
        return uv

    def features(self, x):
        looks = []
        for name, a, b in self.PLANES:
            plane = self.store[f"{self.prefix}.plane_{name}"]
            looks.append(T.plane_gather(plane, self._grid_coords(x, a, b)))
        return T.concat(looks, axis=1)

    def _hidden(self, x):
        feat = self.features(x)
        return T.relu(T.linear(feat, self.store[f"{self.prefix}.dec_w0"],
                               self.store[f"{self.prefix}.dec_b0"]))

    def sdf(self, x):
        h = self._hidden(x)
        return T.linear(h, self.store[f"{self.prefix}.dec_w_s"],
                        self.store[f"{self.prefix}.dec_b_s"])

    def forward(self, x):
        h = self._hidden(x)
        ds = T.linear(h, self.store[f"{self.prefix}.dec_w_s"],
                      self.store[f"{self.prefix}.dec_b_s"])
        dh = T.linear(h, self.store[f"{self.prefix}.dec_w_h"],
                      self.store[f"{self.prefix}.dec_b_h"])
        return ds, dh


class HybridField:
    """Sum of the MLP branch and the tri-plane residual branch."""

    def __init__(self, store, cfg, rng):
        self.cfg = cfg
        self.store = store
        self.mlp = MlpBranch(store, cfg, rng)
        self.tri = TriPlane(store, cfg, rng)

    def param_names(self):
        return self.mlp.param_names() + self.tri.param_names()

    def eval_mlp_branch(self, x):
        return self.mlp.forward(np.atleast_2d(x))

    def eval_triplane_branch(self, x):
        return self.tri.forward(np.atleast_2d(x))

    def sdf(self, x):
        return self.mlp.sdf(x) + self.tri.sdf(x)

    def fd_gradient(self, x):
        """Central-difference spatial gradient of the summed distance.

        All six offset evaluations run as one fused batch, so the hidden
        matmuls stay large; each offset still lands on the tape.
        """
        eps = self.cfg.grad_eps
        p = x.shape[0]
        offsets = np.zeros((6, 1, 3))
        for axis in range(3):
            offsets[2 * axis, 0, axis] = eps
            offsets[2 * axis + 1, 0, axis] = -eps
        stacked = (x[None, :, :] + offsets).reshape(6 * p, 3)
        s = self.sdf(stacked)
        cols = []
        for axis in range(3):
            hi = T.narrow(s, 0, (2 * axis) * p, p)
            lo = T.narrow(s, 0, (2 * axis + 1) * p, p)
            cols.append((hi - lo) * (1.0 / (2.0 * eps)))
        return T.concat(cols, axis=1)

    def evaluate(self, x, want_grad=False, want_feature=True):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if want_feature:
            s_m, h_m = self.mlp.forward(x)
            s_t, h_t = self.tri.forward(x)
            out = FieldOutput(s=s_m + s_t, h=h_m + h_t)
        else:
            out = FieldOutput(s=self.sdf(x))
        if want_grad:
            out.grad_s = self.fd_gradient(x)
        return out


class AnalyticSdfField:
    """Field interface over a closed-form SDF (testing/oracle hook).

    The distance comes from ``sdf_fn`` (vectorized over (P, 3) points); the
    hidden feature is a zero constant; the spatial gradient goes through the
    same central-difference path as the learned field.
    """

    def __init__(self, sdf_fn, feature_width=8, grad_eps=1e-3):
        self.sdf_fn = sdf_fn
        self.feature_width = feature_width
        self.grad_eps = grad_eps

    def sdf(self, x):
        return T.Tensor(np.asarray(self.sdf_fn(x)).reshape(-1, 1))

    def fd_gradient(self, x):
        eps = self.grad_eps
        cols = []
        for axis in range(3):
            offset = np.zeros(3)
            offset[axis] = eps
            hi = np.asarray(self.sdf_fn(x + offset)).reshape(-1, 1)
            lo = np.asarray(self.sdf_fn(x - offset)).reshape(-1, 1)
            cols.append((hi - lo) / (2.0 * eps))
        return T.Tensor(np.concatenate(cols, axis=1))

    def evaluate(self, x, want_grad=False, want_feature=True):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        out = FieldOutput(s=self.sdf(x))
        if want_feature:
            out.h = T.Tensor(np.zeros((x.shape[0], self.feature_width)))
        if want_grad:
            out.grad_s = self.fd_gradient(x)
        return out
