"""Pinhole cameras, ray generation, and the plain-text camera file.

Conventions: OpenCV-style camera frame (+x right, +y down, +z forward);
``rotation`` and ``translation`` map camera to world (``x_w = R x_c + t``,
so ``t`` is the camera center). Pixel coordinates are continuous image-plane
coordinates: ``u = fx * x/z + cx``. Callers sampling discrete pixels pass
``px + 0.5`` to shoot through pixel centers.

Camera file format (one scene-level header, then one line per view)::

    # roomsdf cameras v1
    # norm_center X Y Z
    # norm_scale S
    view_id width height fx fy cx cy r00 r01 r02 r10 r11 r12 r20 r21 r22 tx ty tz

``norm_center``/``norm_scale`` define the world-to-normalized transform
``x_n = (x_w - center) * scale`` under which the scene fits the unit sphere.
"""

from dataclasses import dataclass

import numpy as np

SCENE_SPHERE_RADIUS = 1.5  # rays are clipped to this normalized-scene sphere
MIN_NEAR = 1e-3


@dataclass
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray     # (3, 3) world-from-camera
    translation: np.ndarray  # (3,) camera center in world
    width: int
    height: int

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        self.translation = np.asarray(self.translation, dtype=np.float64)
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        err = np.abs(self.rotation @ self.rotation.T - np.eye(3)).max()
        if err > 1e-6:
            raise ValueError(f"rotation is not orthonormal (max error {err:.2e})")


@dataclass
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    near: float
    far: float


def sphere_clip(origins, dirs, radius=SCENE_SPHERE_RADIUS):
    """Near/far of each ray against the centered scene sphere.

    Origins inside the sphere get ``near = MIN_NEAR``. Rays that miss the
    sphere entirely get an empty but valid interval just past MIN_NEAR.
    """
    b = np.sum(origins * dirs, axis=-1)
    c = np.sum(origins * origins, axis=-1) - radius * radius
    disc = b * b - c
    hit = disc > 0
    sq = np.sqrt(np.maximum(disc, 0.0))
    near = np.where(hit, -b - sq, MIN_NEAR)
    far = np.where(hit, -b + sq, MIN_NEAR * 2)
    near = np.maximum(near, MIN_NEAR)
    far = np.maximum(far, near + MIN_NEAR)
    return near, far


def rays_for_pixels(cam, px):
    """Rays through continuous pixel coordinates ``px`` (K, 2) = (u, v)."""
    px = np.atleast_2d(np.asarray(px, dtype=np.float64))
    u, v = px[:, 0], px[:, 1]
    if np.any(u < 0) or np.any(u > cam.width) or np.any(v < 0) or np.any(v > cam.height):
        raise ValueError("pixel coordinates outside image bounds")
    d_cam = np.stack([(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy,
                      np.ones_like(u)], axis=-1)
    d_world = d_cam @ cam.rotation.T
    d_world /= np.linalg.norm(d_world, axis=-1, keepdims=True)
    origins = np.broadcast_to(cam.translation, d_world.shape).copy()
    near, far = sphere_clip(origins, d_world)
    return origins, d_world, near, far


def make_ray(cam, px):
    """Single ray through continuous pixel coordinates ``px`` = (u, v)."""
    o, d, near, far = rays_for_pixels(cam, np.asarray(px, dtype=np.float64)[None])
    return Ray(o[0], d[0], float(near[0]), float(far[0]))


def project(cam, points):
    """World points (K, 3) -> continuous pixel coordinates (K, 2).

    Points behind the camera yield NaN coordinates.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    local = (points - cam.translation) @ cam.rotation
    z = local[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(z > 0, cam.fx * local[:, 0] / z + cam.cx, np.nan)
        v = np.where(z > 0, cam.fy * local[:, 1] / z + cam.cy, np.nan)
    return np.stack([u, v], axis=-1)


def look_at(eye, target, up=(0.0, 0.0, 1.0)):
    """World-from-camera rotation for a camera at ``eye`` facing ``target``."""
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    forward /= np.linalg.norm(forward)
    up = np.asarray(up, dtype=np.float64)
    if abs(np.dot(up, forward)) > 0.999:
        up = np.array([1.0, 0.0, 0.0])
    down = -up + forward * np.dot(up, forward)
    down /= np.linalg.norm(down)
    right = np.cross(down, forward)
    return np.stack([right, down, forward], axis=-1)


def save_cameras(path, cameras, norm_center=(0.0, 0.0, 0.0), norm_scale=1.0):
    lines = ["# roomsdf cameras v1",
             "# norm_center " + " ".join(f"{v:.17g}" for v in norm_center),
             f"# norm_scale {norm_scale:.17g}"]
    for i, cam in enumerate(cameras):
        fields = [str(i), str(cam.width), str(cam.height)]
        fields += [f"{v:.17g}" for v in (cam.fx, cam.fy, cam.cx, cam.cy)]
        fields += [f"{v:.17g}" for v in cam.rotation.reshape(-1)]
        fields += [f"{v:.17g}" for v in cam.translation]
        lines.append(" ".join(fields))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def load_cameras(path):
    """Returns (cameras, norm_center, norm_scale); views sorted by id."""
    norm_center = np.zeros(3)
    norm_scale = 1.0
    rows = {}
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                parts = line[1:].split()
                if parts[:1] == ["norm_center"]:
                    norm_center = np.array([float(v) for v in parts[1:4]])
                elif parts[:1] == ["norm_scale"]:
                    norm_scale = float(parts[1])
                continue
            parts = line.split()
            if len(parts) != 19:
                raise ValueError(
                    f"bad camera line (expected 19 fields, got {len(parts)}): "
                    f"{line[:60]}")
            vid = int(parts[0])
            w, h = int(parts[1]), int(parts[2])
            fx, fy, cx, cy = (float(v) for v in parts[3:7])
            rot = np.array([float(v) for v in parts[7:16]]).reshape(3, 3)
            t = np.array([float(v) for v in parts[16:19]])
            rows[vid] = Camera(fx, fy, cx, cy, rot, t, w, h)
    cams = [rows[k] for k in sorted(rows)]
    return cams, norm_center, norm_scale
