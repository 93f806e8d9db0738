"""View-dependent radiance network with per-view appearance embeddings."""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .field import encoding_dim, positional_encoding


@dataclass
class ColorConfig:
    layers: int = 4
    hidden: int = 64
    dir_freqs: int = 4
    embed_dim: int = 8
    include_normal: bool = True


class AppearanceTable:
    """One learnable embedding row per training view (zero-initialized)."""

    def __init__(self, store, n_views, embed_dim, prefix="embed"):
        self.store = store
        self.n_views = n_views
        self.name = f"{prefix}.table"
        store.register(self.name, np.zeros((n_views, embed_dim)))

    def param_names(self):
        return [self.name]

    def lookup(self, view_ids):
        view_ids = np.asarray(view_ids, dtype=np.int64)
        if view_ids.size and (view_ids.min() < 0 or view_ids.max() >= self.n_views):
            raise IndexError(
                f"view id out of range [0, {self.n_views}): "
                f"{view_ids.min()}..{view_ids.max()}")
        return T.gather_rows(self.store[self.name], view_ids)

    def mean_embedding(self, count):
        """Mean of all learned embeddings, tiled ``count`` times (novel views)."""
        mean = self.store[self.name].values.mean(axis=0)
        return T.Tensor(np.tile(mean, (count, 1)).astype(self.store.dtype))


class ColorNet:
    """RGB from hidden feature, encoded view direction, surface normal
    estimate, and appearance embedding; terminal sigmoid keeps channels in
    [0, 1]."""

    def __init__(self, store, cfg, field_cfg, n_views, rng, prefix="color"):
        self.cfg = cfg
        self.store = store
        self.prefix = prefix
        self.embeddings = AppearanceTable(store, n_views, cfg.embed_dim)
        in_dim = (field_cfg.feature_width + encoding_dim(3, cfg.dir_freqs)
                  + (3 if cfg.include_normal else 0) + cfg.embed_dim)
        dims = [in_dim] + [cfg.hidden] * (cfg.layers - 1) + [3]
        self.n_mats = len(dims) - 1
        for i in range(self.n_mats):
            store.register(
                f"{prefix}.w{i}",
                rng.normal(0.0, np.sqrt(2.0 / dims[i]), (dims[i], dims[i + 1])))
            store.register(f"{prefix}.b{i}", np.zeros(dims[i + 1]))

    def param_names(self):
        names = []
        for i in range(self.n_mats):
            names += [f"{self.prefix}.w{i}", f"{self.prefix}.b{i}"]
        return names + self.embeddings.param_names()

    def _check_directions(self, d):
        norms = np.linalg.norm(d, axis=-1)
        if not np.all(np.abs(norms - 1.0) < 1e-6):
            raise ValueError("view directions must be unit vectors (|d| = 1)")

    def eval_color(self, h, d, n_pt, view_ids=None, embedding=None):
        """RGB for per-sample inputs.

        Either ``view_ids`` (training views, table lookup) or a precomputed
        ``embedding`` tensor (e.g. mean embedding for novel views) selects
        the appearance input.
        """
        d = np.atleast_2d(np.asarray(d, dtype=self.store.dtype))
        self._check_directions(d)
        enc_d = T.Tensor(positional_encoding(d, self.cfg.dir_freqs),
                         dtype=self.store.dtype)
        if embedding is None:
            embedding = self.embeddings.lookup(view_ids)
        parts = [h, enc_d]
        if self.cfg.include_normal:
            parts.append(n_pt)
        parts.append(embedding)
        x = T.concat(parts, axis=1)
        for i in range(self.n_mats):
            x = T.linear(x, self.store[f"{self.prefix}.w{i}"],
                         self.store[f"{self.prefix}.b{i}"])
            if i < self.n_mats - 1:
                x = T.relu(x)
        return T.sigmoid(x)
