"""Normal-prior preparation: image enhancement and uncertainty maps.

Images are numpy arrays in [0, 1], shaped (H, W) or (H, W, C); every filter
clamps its output back to [0, 1]. The sharpening kernel amplifies the
difference between a pixel and its eight neighbors
(``9 p - sum(neighbors)``); denoising is a per-channel median. Borders use
replicate padding throughout.

Uncertainty maps weight the normal-prior loss: 0 = full trust, 1 = ignore.
They either come from files (e.g. the synthetic harness's ground-truth
corruption masks) or from the built-in cross-view photometric consistency
estimator, which warps small patches into neighbor views through a depth
proxy and scores the mean absolute color error.
"""

import numpy as np

from . import kernels
from .camera import project, rays_for_pixels
from .imgio import load_pfm


def _neighbor_offsets():
    return [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


def sharpen(img):
    """9*center - eight neighbors, replicate-padded, clamped to [0, 1]."""
    img = np.asarray(img, dtype=np.float64)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[:, :, None]
    padded = np.pad(img, ((1, 1), (1, 1), (0, 0)), mode="edge")
    out = 9.0 * img
    for dy, dx in _neighbor_offsets():
        out = out - padded[1 + dy: 1 + dy + img.shape[0],
                           1 + dx: 1 + dx + img.shape[1]]
    out = np.clip(out, 0.0, 1.0)
    return out[:, :, 0] if squeeze else out


def median_denoise(img, window=3):
    """Per-channel median over an odd window, replicate-padded."""
    if window % 2 == 0 or window < 3:
        raise ValueError(f"median window must be odd and >= 3, got {window}")
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return np.clip(kernels.median_filter2d(img, window), 0.0, 1.0)
    out = np.stack([kernels.median_filter2d(img[:, :, c], window)
                    for c in range(img.shape[2])], axis=-1)
    return np.clip(out, 0.0, 1.0)


def enhance(img, window=3, denoise_first=False):
    """Sharpen then median-denoise (or the reverse with ``denoise_first``)."""
    if denoise_first:
        return sharpen(median_denoise(img, window))
    return median_denoise(sharpen(img), window)


def load_uncertainty(path, width, height):
    """Load a 1-channel PFM uncertainty map, clamp to [0, 1], check size."""
    u = load_pfm(path)
    if u.ndim != 2:
        raise ValueError(f"uncertainty map must be single-channel: {path}")
    if u.shape != (height, width):
        raise ValueError(
            f"uncertainty map {path} is {u.shape[1]}x{u.shape[0]}, "
            f"view is {width}x{height}")
    return np.clip(u, 0.0, 1.0)


def _bilinear_sample(img, uv):
    """Sample (H, W, C) at continuous pixel coords (K, 2); clamped borders."""
    h, w = img.shape[:2]
    x = np.clip(uv[:, 0] - 0.5, 0.0, w - 1.0)
    y = np.clip(uv[:, 1] - 0.5, 0.0, h - 1.0)
    x0 = np.clip(np.floor(x).astype(int), 0, w - 2)
    y0 = np.clip(np.floor(y).astype(int), 0, h - 2)
    fx = (x - x0)[:, None]
    fy = (y - y0)[:, None]
    return ((1 - fy) * (1 - fx) * img[y0, x0] + (1 - fy) * fx * img[y0, x0 + 1]
            + fy * (1 - fx) * img[y0 + 1, x0] + fy * fx * img[y0 + 1, x0 + 1])


def photometric_uncertainty(view, neighbors, depth, patch=5):
    """Cross-view photometric consistency as a per-pixel uncertainty map.

    For every pixel, a ``patch`` x ``patch`` neighborhood is lifted to 3D
    through the per-pixel depth proxy, projected into each neighbor view,
    and compared photometrically. The raw mean absolute error is min-max
    normalized into [0, 1] per map; pixels that project outside every
    neighbor get uncertainty 1.

    ``view`` and ``neighbors`` are (camera, image) pairs; ``depth`` holds
    ray-length depth for the reference view (0 = no surface).
    """
    if not neighbors:
        raise ValueError("photometric uncertainty needs at least one neighbor")
    cam, img = view
    h, w = img.shape[:2]
    half = patch // 2
    uu, vv = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5)
    px = np.stack([uu.reshape(-1), vv.reshape(-1)], axis=-1)
    origins, dirs, _, _ = rays_for_pixels(cam, px)
    points = origins + depth.reshape(-1, 1) * dirs

    err_sum = np.zeros(h * w)
    err_cnt = np.zeros(h * w)
    offsets = [(dy, dx) for dy in range(-half, half + 1)
               for dx in range(-half, half + 1)]
    pts_grid = points.reshape(h, w, 3)
    valid_center = depth.reshape(h, w) > 0
    for ncam, nimg in neighbors:
        for dy, dx in offsets:
            ys = np.clip(np.arange(h) + dy, 0, h - 1)
            xs = np.clip(np.arange(w) + dx, 0, w - 1)
            shifted_pts = pts_grid[ys][:, xs].reshape(-1, 3)
            shifted_rgb = img[ys][:, xs].reshape(-1, img.shape[2])
            shifted_valid = valid_center[ys][:, xs].reshape(-1)
            proj = project(ncam, shifted_pts)
            inside = (np.isfinite(proj[:, 0]) & (proj[:, 0] >= 0)
                      & (proj[:, 0] <= ncam.width) & (proj[:, 1] >= 0)
                      & (proj[:, 1] <= ncam.height) & shifted_valid)
            if not np.any(inside):
                continue
            sampled = _bilinear_sample(nimg, proj[inside])
            diff = np.abs(sampled - shifted_rgb[inside]).mean(axis=1)
            err_sum[inside] += diff
            err_cnt[inside] += 1.0
    seen = err_cnt > 0
    raw = np.zeros(h * w)
    raw[seen] = err_sum[seen] / err_cnt[seen]
    if np.any(seen):
        lo, hi = raw[seen].min(), raw[seen].max()
        if hi < 1e-8:
            # perfect consistency: min-max would only stretch float noise
            raw[seen] = 0.0
        elif hi > lo:
            raw[seen] = (raw[seen] - lo) / (hi - lo)
        else:
            raw[seen] = 0.0
    raw[~seen] = 1.0
    return raw.reshape(h, w)
