"""Bundles the learnable pieces: geometry field, color net, sharpness tau."""

from dataclasses import dataclass, field as dfield

import numpy as np

from . import tensor as T
from .color import ColorConfig, ColorNet
from .field import FieldConfig, HybridField


@dataclass
class ModelConfig:
    field: FieldConfig = dfield(default_factory=FieldConfig)
    color: ColorConfig = dfield(default_factory=ColorConfig)
    n_views: int = 1
    tau_init: float = 0.3
    dtype: str = "float64"


class SceneModel:
    """Field + color net + learnable sigmoid sharpness, in one ParamStore.

    ``tau`` is parameterized as ``exp(theta)`` so it stays positive. The
    scene normalization transform (``x_n = (x_w - center) * scale``) rides
    along for checkpointing and is inverted at mesh export.
    """

    def __init__(self, cfg, seed=0, norm_center=(0.0, 0.0, 0.0), norm_scale=1.0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.store = T.ParamStore(dtype=np.dtype(cfg.dtype))
        self.field = HybridField(self.store, cfg.field, rng)
        self.colornet = ColorNet(self.store, cfg.color, cfg.field, cfg.n_views, rng)
        self.store.register("tau.log", np.full(1, np.log(cfg.tau_init)))
        self.norm_center = np.asarray(norm_center, dtype=np.float64)
        self.norm_scale = float(norm_scale)

    def tau(self):
        return T.exp_(self.store["tau.log"])

    def tau_value(self):
        return float(np.exp(self.store["tau.log"].values[0]))

    def param_groups(self):
        """Parameter names by role, for ablation freezing and LR scaling."""
        color_names = [n for n in self.colornet.param_names()
                       if not n.startswith("embed.")]
        return {
            "mlp": self.field.mlp.param_names(),
            "triplane": self.field.tri.param_names(),
            "color": color_names,
            "embed": self.colornet.embeddings.param_names(),
            "tau": ["tau.log"],
        }

    def trainable_names(self, mlp_only=False, triplane_only=False,
                        no_embedding=False):
        if mlp_only and triplane_only:
            raise ValueError("mlp_only and triplane_only are mutually exclusive")
        groups = self.param_groups()
        names = []
        if not triplane_only:
            names += groups["mlp"]
        if not mlp_only:
            names += groups["triplane"]
        names += groups["color"]
        if not no_embedding:
            names += groups["embed"]
        names += groups["tau"]
        return names

    def normalize_points(self, x_world):
        return (np.asarray(x_world, dtype=np.float64) - self.norm_center) * \
            self.norm_scale

    def denormalize_points(self, x_norm):
        return np.asarray(x_norm, dtype=np.float64) / self.norm_scale + \
            self.norm_center
