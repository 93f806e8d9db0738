"""Training objective: color, Eikonal, and uncertainty-weighted normal terms.

Total loss = lambda_p * L_prior + lambda_e * L_eik + lambda_r * L_rgb, with
defaults lambda_p = lambda_r = 1.0 and lambda_e = 0.1. The prior term
downweights each ray by (1 - u) where u in [0, 1] is the per-ray normal
uncertainty; u = 1 removes a ray's normal supervision entirely.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T


@dataclass
class LossWeights:
    prior: float = 1.0
    eikonal: float = 0.1
    rgb: float = 1.0

    def __post_init__(self):
        if min(self.prior, self.eikonal, self.rgb) < 0:
            raise ValueError("loss weights must be nonnegative")


def loss_rgb(rendered, target):
    """Mean over rays of the per-ray L1 color difference."""
    rendered = T.as_tensor(rendered)
    if rendered.shape[0] == 0:
        raise ValueError("loss_rgb: empty batch")
    target = np.asarray(target, dtype=np.float64)
    per_ray = T.sum_(T.abs_(rendered - T.Tensor(target)), axis=1)
    return T.mean_(per_ray)


def loss_eikonal(grad_samples):
    """Mean squared deviation of gradient norms from 1."""
    g = T.as_tensor(grad_samples)
    norms = T.sqrt_(T.clamp_min(T.sum_(T.square(g), axis=1), 1e-24))
    return T.mean_(T.square(norms - 1.0))


def loss_prior(rendered_normals, target_normals, uncertainty):
    """Uncertainty-weighted normal alignment: mean (1-u) * |1 - n . n_hat|."""
    n = T.as_tensor(rendered_normals)
    n_hat = np.asarray(target_normals, dtype=np.float64)
    u = np.asarray(uncertainty, dtype=np.float64).reshape(-1)
    if np.any(u < 0) or np.any(u > 1):
        raise ValueError("uncertainty values must lie in [0, 1]")
    dots = T.sum_(n * T.Tensor(n_hat), axis=1)
    per_ray = T.abs_(1.0 - dots) * T.Tensor(1.0 - u)
    return T.mean_(per_ray)


def loss_total(weights, l_prior, l_eik, l_rgb):
    """Weighted sum of the three components (computed on one tape)."""
    return (weights.prior * l_prior + weights.eikonal * l_eik
            + weights.rgb * l_rgb)
