"""Analytic ground-truth scenes: exact SDFs, rendered supervision, corruption.

Scenes are compositions of primitives with closed-form signed distances and
gradients (positive in free space), unioned by min; the room shell is the
complement of an inner box, so its interior is the reconstruction volume.
Supervision images come from sphere-traced first hits with Lambertian
shading under one directional light plus an ambient term. All scenes are
authored directly in normalized units (bounding sphere radius <= 1), so the
stored normalization transform is the identity.

Controlled corruption channels give every training mechanism a measurable
test: Gaussian blur and salt noise on images, per-view exposure gain/bias,
camera pose perturbation, and normal-prior corruption on thin structures.
Because no monocular normal estimator exists at desk scale, prior maps are
produced by a degradation model standing in for one: ground-truth normals
are rotated per pixel by an angle proportional to the image's impulsive
residual (what salt noise and blur leave behind after a median pass), so
image enhancement measurably improves the priors exactly as it would for a
real estimator. With pristine images the priors equal the analytic normals.
"""

import os
from dataclasses import dataclass, field as dfield

import numpy as np
from scipy.ndimage import gaussian_filter

from . import priors as priors_mod
from .camera import Camera, rays_for_pixels, save_cameras
from .field import fibonacci_directions
from .mesh import extract_mesh, write_ply
from .scene import SceneData, ViewRecord, write_scene_dir

EST_NOISE_GAIN = 2.5        # radians of prior error per unit impulsive residual
EST_NOISE_MAX = 1.3         # cap on estimator-noise rotation (rad)
UNCERTAINTY_ANGLE_DEG = 2.0  # prior errors beyond this mark the GT mask


# ---------------------------------------------------------------------------
# Primitives (exact SDF + gradient, positive outside the solid)
# ---------------------------------------------------------------------------


def _safe_unit(v, fallback):
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    out = np.where(n > 1e-12, v / np.maximum(n, 1e-12), fallback)
    return out


class Sphere:
    def __init__(self, center, radius):
        self.center = np.asarray(center, dtype=np.float64)
        self.radius = float(radius)

    def sdf(self, pts):
        return np.linalg.norm(pts - self.center, axis=-1) - self.radius

    def gradient(self, pts):
        return _safe_unit(pts - self.center, np.array([1.0, 0.0, 0.0]))

    def bound(self):
        return np.linalg.norm(self.center) + self.radius


class Box:
    def __init__(self, center, half):
        self.center = np.asarray(center, dtype=np.float64)
        self.half = np.asarray(half, dtype=np.float64)

    def sdf(self, pts):
        q = np.abs(pts - self.center) - self.half
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(q.max(axis=-1), 0.0)
        return outside + inside

    def gradient(self, pts):
        p = pts - self.center
        q = np.abs(p) - self.half
        sign = np.where(p >= 0, 1.0, -1.0)
        d = np.maximum(q, 0.0)
        nrm = np.linalg.norm(d, axis=-1, keepdims=True)
        g_out = sign * d / np.maximum(nrm, 1e-300)
        k = q.argmax(axis=-1)
        g_in = np.zeros_like(p)
        rows = np.arange(len(p))
        g_in[rows, k] = sign[rows, k]
        out_mask = (q > 0).any(axis=-1, keepdims=True)
        return np.where(out_mask, g_out, g_in)

    def bound(self):
        return np.linalg.norm(np.abs(self.center) + self.half)


class CappedCylinder:
    """Finite cylinder along a coordinate axis."""

    def __init__(self, center, axis, radius, half_height):
        self.center = np.asarray(center, dtype=np.float64)
        self.axis = int(axis)
        self.radius = float(radius)
        self.half_height = float(half_height)
        self.others = [a for a in range(3) if a != self.axis]

    def _parts(self, pts):
        p = pts - self.center
        rad_vec = p[:, self.others]
        rad = np.linalg.norm(rad_vec, axis=-1)
        dr = rad - self.radius
        dz = np.abs(p[:, self.axis]) - self.half_height
        return p, rad_vec, rad, dr, dz

    def sdf(self, pts):
        _, _, _, dr, dz = self._parts(np.atleast_2d(pts))
        inside = np.minimum(np.maximum(dr, dz), 0.0)
        a = np.maximum(dr, 0.0)
        b = np.maximum(dz, 0.0)
        return inside + np.hypot(a, b)

    def gradient(self, pts):
        pts = np.atleast_2d(pts)
        p, rad_vec, rad, dr, dz = self._parts(pts)
        rad_dir = np.zeros_like(p)
        safe = rad > 1e-12
        rad_dir[np.ix_(safe, self.others)] = \
            rad_vec[safe] / rad[safe, None]
        rad_dir[~safe, self.others[0]] = 1.0
        ax_dir = np.zeros_like(p)
        ax_dir[:, self.axis] = np.where(p[:, self.axis] >= 0, 1.0, -1.0)
        a = np.maximum(dr, 0.0)
        b = np.maximum(dz, 0.0)
        hyp = np.maximum(np.hypot(a, b), 1e-300)
        outside = (dr > 0) | (dz > 0)
        g_out = rad_dir * (a / hyp)[:, None] + ax_dir * (b / hyp)[:, None]
        g_in = np.where((dr > dz)[:, None], rad_dir, ax_dir)
        return np.where(outside[:, None], g_out, g_in)

    def bound(self):
        r = np.zeros(3)
        r[self.others] = self.radius
        r[self.axis] = self.half_height
        return np.linalg.norm(np.abs(self.center) + r)


class RoomShell:
    """Solid complement of an inner box: the walls of the room."""

    def __init__(self, half):
        self.box = Box((0.0, 0.0, 0.0), half)

    def sdf(self, pts):
        return -self.box.sdf(pts)

    def gradient(self, pts):
        return -self.box.gradient(pts)

    def bound(self):
        return float(np.linalg.norm(self.box.half))


@dataclass
class ScenePrim:
    name: str
    shape: object
    albedo: tuple
    thin: bool = False


@dataclass
class CorruptionSpec:
    """Controlled degradation of the generated supervision data.

    All magnitudes are nonnegative; zero disables the channel. Pose noise
    perturbs the poses *written for training* while images stay rendered
    from the true poses. ``normal_region="thin"`` corrupts the prior maps on
    pixels belonging to thin primitives: "erase" replaces them with the
    normals of the scene without the thin parts (how real estimators smooth
    thin structures away), "rotate" tilts them by ``normal_angle_deg``.
    """

    blur_sigma: float = 0.0
    salt_density: float = 0.0
    normal_region: str = "none"   # "none" | "thin"
    normal_mode: str = "erase"    # "erase" | "rotate"
    normal_angle_deg: float = 60.0
    exposure_gain: float = 0.0    # max |gain - 1|
    exposure_bias: float = 0.0    # max |bias|
    pose_rot_deg: float = 0.0
    pose_trans: float = 0.0

    def __post_init__(self):
        for f in ("blur_sigma", "salt_density", "normal_angle_deg",
                  "exposure_gain", "exposure_bias", "pose_rot_deg",
                  "pose_trans"):
            if getattr(self, f) < 0:
                raise ValueError(f"corruption magnitude '{f}' must be >= 0")
        if self.normal_region not in ("none", "thin"):
            raise ValueError(f"unknown normal_region '{self.normal_region}'")
        if self.normal_mode not in ("erase", "rotate"):
            raise ValueError(f"unknown normal_mode '{self.normal_mode}'")

    def any_image_corruption(self):
        return self.blur_sigma > 0 or self.salt_density > 0


class AnalyticScene:
    """Union-of-primitives scene with exact distance and gradient queries.

    The union is a min over primitive distances, exact outside overlap
    regions (gradients at union creases follow the nearest primitive).
    """

    def __init__(self, name, prims, bg_color=(0.0, 0.0, 0.0),
                 light_dir=(0.35, 0.25, 0.88), ambient=0.35,
                 camera_radius=0.45, fov_deg=100.0):
        self.name = name
        self.prims = prims
        self.bg_color = np.asarray(bg_color, dtype=np.float64)
        self.light_dir = np.asarray(light_dir, dtype=np.float64)
        self.light_dir /= np.linalg.norm(self.light_dir)
        self.ambient = float(ambient)
        self.camera_radius = float(camera_radius)
        self.fov_deg = float(fov_deg)

    def _values(self, pts, exclude=()):
        pts = np.atleast_2d(pts)
        return np.stack([p.shape.sdf(pts) for p in self.prims
                         if p.name not in exclude], axis=1)

    def _kept(self, exclude=()):
        return [p for p in self.prims if p.name not in exclude]

    def sdf(self, pts, exclude=()):
        return self._values(pts, exclude).min(axis=1)

    def prim_index(self, pts, exclude=()):
        return self._values(pts, exclude).argmin(axis=1)

    def gradient(self, pts, exclude=()):
        pts = np.atleast_2d(pts)
        idx = self.prim_index(pts, exclude)
        out = np.zeros_like(pts)
        for i, prim in enumerate(self._kept(exclude)):
            mask = idx == i
            if np.any(mask):
                out[mask] = prim.shape.gradient(pts[mask])
        return out

    def prim_sdf(self, name, pts):
        for p in self.prims:
            if p.name == name:
                return p.shape.sdf(np.atleast_2d(pts))
        raise KeyError(f"no primitive named '{name}'")

    def thin_names(self):
        return [p.name for p in self.prims if p.thin]

    def bounding_radius(self):
        return max(p.shape.bound() for p in self.prims)

    def albedos(self):
        return np.array([p.albedo for p in self.prims])


# ---------------------------------------------------------------------------
# Canonical scene set
# ---------------------------------------------------------------------------

# Thin-structure coordinates sit on 64-node plane grid lines (k/63-style
# fractions) so the desk-resolution tri-plane can represent them.
_SLAB_Z = 1.0 / 63.0
_ROD_X = 13.0 / 63.0
_ROD_Y = -13.0 / 63.0


def _room_prims():
    return [
        ScenePrim("room", RoomShell((0.55, 0.55, 0.55)), (0.72, 0.70, 0.66)),
        ScenePrim("sphere", Sphere((0.18, -0.15, -0.05), 0.18),
                  (0.85, 0.25, 0.20)),
        ScenePrim("box", Box((-0.22, 0.18, 0.0), (0.12, 0.16, 0.10)),
                  (0.20, 0.45, 0.80)),
    ]


def _thin_prims():
    return [
        ScenePrim("slab", Box((0.05, -0.02, _SLAB_Z), (0.22, 0.18, 0.005)),
                  (0.90, 0.80, 0.15), thin=True),
        ScenePrim("rod", CappedCylinder((_ROD_X, _ROD_Y, -0.06), 2, 0.01, 0.18),
                  (0.85, 0.30, 0.75), thin=True),
    ]


def canonical_scenes():
    """Named scene set: geometry plus its default corruption spec."""
    basic = AnalyticScene("room-basic", _room_prims())
    thin = AnalyticScene("room-thin", _room_prims() + _thin_prims())
    corrupt = AnalyticScene("room-corrupt", _room_prims() + _thin_prims())
    return {
        "room-basic": (basic, CorruptionSpec()),
        "room-thin": (thin, CorruptionSpec()),
        "room-corrupt": (corrupt, CorruptionSpec(normal_region="thin",
                                                 normal_mode="rotate",
                                                 normal_angle_deg=75.0)),
    }


# ---------------------------------------------------------------------------
# Rendering ground truth
# ---------------------------------------------------------------------------


def sphere_trace(scene, origins, dirs, t_max=4.0, exclude=(), tol=1e-5,
                 max_steps=512):
    """First-hit distances along rays; (t, hit_mask). Misses keep t = t_max."""
    n = len(origins)
    t = np.full(n, 1e-4)
    hit = np.zeros(n, dtype=bool)
    active = np.arange(n)
    for _ in range(max_steps):
        if len(active) == 0:
            break
        pts = origins[active] + t[active, None] * dirs[active]
        s = scene.sdf(pts, exclude)
        newly = s < tol
        hit[active[newly]] = True
        t[active] += np.maximum(s, 0.0)
        over = t[active] > t_max
        active = active[~(newly | over)]
    return t, hit


def shade(scene, pts, normals, exclude=()):
    """Lambertian shading: albedo * (ambient + (1-ambient) * max(0, n.l))."""
    idx = scene.prim_index(pts, exclude)
    albedo = np.array([p.albedo for p in scene._kept(exclude)])[idx]
    diff = np.maximum(normals @ scene.light_dir, 0.0)
    return albedo * (scene.ambient + (1.0 - scene.ambient) * diff)[:, None]


def make_cameras(scene, n_views, resolution):
    """Cameras on a sphere inside the room, all looking at the center."""
    from .camera import look_at

    dirs = fibonacci_directions(n_views)
    fx = 0.5 * resolution / np.tan(np.radians(scene.fov_deg) / 2.0)
    cams = []
    for d in dirs:
        eye = d * scene.camera_radius
        cams.append(Camera(fx=fx, fy=fx, cx=resolution / 2.0,
                           cy=resolution / 2.0, rotation=look_at(eye, (0, 0, 0)),
                           translation=eye, width=resolution,
                           height=resolution))
    return cams


def _rodrigues(axis, angle):
    axis = axis / np.linalg.norm(axis)
    k = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]],
                  [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * (k @ k)


def _rotate_field(vectors, axes, angles):
    """Rodrigues rotation applied per pixel; vectors/axes (..., 3)."""
    c = np.cos(angles)[..., None]
    s = np.sin(angles)[..., None]
    cross = np.cross(axes, vectors)
    dot = np.sum(axes * vectors, axis=-1, keepdims=True)
    return vectors * c + cross * s + axes * dot * (1.0 - c)


def _impulse_map(img):
    """Isolated-outlier strength per pixel: max over channels of the minimum
    absolute difference to the eight neighbors. Salt pixels score high;
    consistent structure (edges, sharpening halos) scores near zero."""
    padded = np.pad(img, ((1, 1), (1, 1), (0, 0)), mode="edge")
    h, w = img.shape[:2]
    min_diff = None
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy == 0 and dx == 0:
                continue
            diff = np.abs(img - padded[1 + dy: 1 + dy + h, 1 + dx: 1 + dx + w])
            min_diff = diff if min_diff is None else np.minimum(min_diff, diff)
    return min_diff.max(axis=2)


def _estimator_priors(img, gt_normal_cam, axes):
    """Degradation model for monocular normal estimation: rotate GT normals
    by an angle proportional to the image's impulsive-noise level."""
    theta = np.minimum(EST_NOISE_GAIN * _impulse_map(img), EST_NOISE_MAX)
    rotated = _rotate_field(gt_normal_cam, axes, theta)
    return rotated / np.maximum(
        np.linalg.norm(rotated, axis=-1, keepdims=True), 1e-12)


def perturb_camera(cam, rng, rot_deg, trans):
    angle = np.radians(rng.uniform(0.0, rot_deg))
    axis = rng.normal(size=3)
    r_noise = _rodrigues(axis, angle)
    t_dir = rng.normal(size=3)
    t_dir /= np.linalg.norm(t_dir)
    t_noise = rng.uniform(0.0, trans) * t_dir
    return Camera(cam.fx, cam.fy, cam.cx, cam.cy, r_noise @ cam.rotation,
                  cam.translation + t_noise, cam.width, cam.height)


@dataclass
class GeneratedViews:
    views: list                       # ViewRecord (training cameras)
    cameras_true: list
    cameras_train: list
    rgbs: list
    normals: list                     # enhanced-path priors (camera space)
    normals_raw: list                 # no-enhancement priors
    uncertainties: list
    depths: list
    gt_mesh: object
    scene: AnalyticScene
    corruption: CorruptionSpec


def generate_views(scene, n_views, resolution, corruption=None, seed=0,
                   gt_mesh_resolution=256):
    """Render posed supervision data plus ground truth for one scene."""
    if n_views < 2:
        raise ValueError("need at least two views")
    corruption = corruption or CorruptionSpec()
    cams_true = make_cameras(scene, n_views, resolution)
    h = w = resolution
    uu, vv = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5)
    px = np.stack([uu.reshape(-1), vv.reshape(-1)], axis=-1)

    thin = tuple(scene.thin_names())
    rgbs, normals_enh, normals_raw, uncerts, depths = [], [], [], [], []
    cams_train = []
    for vid, cam in enumerate(cams_true):
        rng = np.random.default_rng([seed, vid])
        o, d, _, _ = rays_for_pixels(cam, px)
        t, hit = sphere_trace(scene, o, d)
        pts = o + t[:, None] * d
        n_world = np.where(hit[:, None], scene.gradient(pts), -d)
        n_world /= np.linalg.norm(n_world, axis=-1, keepdims=True)
        rgb = np.where(hit[:, None], shade(scene, pts, n_world),
                       scene.bg_color)
        depth = np.where(hit, t, 0.0).reshape(h, w)
        n_cam = (n_world @ cam.rotation).reshape(h, w, 3)
        img = np.clip(rgb.reshape(h, w, 3), 0.0, 1.0)

        # image corruption, then the per-view sensor exposure
        if corruption.blur_sigma > 0:
            img = np.stack([gaussian_filter(img[:, :, c],
                                            corruption.blur_sigma,
                                            mode="nearest")
                            for c in range(3)], axis=-1)
        salt = rng.random((h, w)) < corruption.salt_density
        img = np.where(salt[:, :, None], 1.0, img)
        gain = 1.0 + rng.uniform(-corruption.exposure_gain,
                                 corruption.exposure_gain)
        bias = rng.uniform(-corruption.exposure_bias, corruption.exposure_bias)
        img = np.clip(img * gain + bias, 0.0, 1.0)

        # normal priors: exact for pristine images, degradation model with
        # per-pixel noise axes (shared between enhanced/raw variants) else
        axes = rng.normal(size=(h, w, 3))
        axes /= np.linalg.norm(axes, axis=-1, keepdims=True)
        if corruption.any_image_corruption():
            prior_raw = _estimator_priors(img, n_cam, axes)
            prior_enh = _estimator_priors(priors_mod.enhance(img), n_cam, axes)
        else:
            prior_raw = n_cam.copy()
            prior_enh = n_cam.copy()

        if corruption.normal_region == "thin" and thin:
            pid = scene.prim_index(pts)
            names = [p.name for p in scene.prims]
            thin_mask = np.isin(pid, [names.index(nm) for nm in thin])
            thin_mask &= hit
            thin_mask = thin_mask.reshape(h, w)
            if corruption.normal_mode == "erase":
                t_bg, hit_bg = sphere_trace(scene, o, d, exclude=thin)
                pts_bg = o + t_bg[:, None] * d
                n_bg = np.where(hit_bg[:, None],
                                scene.gradient(pts_bg, exclude=thin), -d)
                n_bg /= np.linalg.norm(n_bg, axis=-1, keepdims=True)
                n_bg_cam = (n_bg @ cam.rotation).reshape(h, w, 3)
                prior_raw[thin_mask] = n_bg_cam[thin_mask]
                prior_enh[thin_mask] = n_bg_cam[thin_mask]
            else:
                # rotate about axes perpendicular to the prior so every
                # masked pixel is tilted by exactly the configured angle
                ang = np.radians(corruption.normal_angle_deg)
                for prior in (prior_raw, prior_enh):
                    n = prior[thin_mask]
                    ax = axes[thin_mask]
                    ax = ax - n * np.sum(ax * n, axis=-1, keepdims=True)
                    ax /= np.maximum(np.linalg.norm(ax, axis=-1,
                                                    keepdims=True), 1e-12)
                    prior[thin_mask] = _rotate_field(
                        n, ax, np.full(thin_mask.sum(), ang))

        # GT uncertainty: 1 where the shipped prior disagrees with the
        # analytic normal beyond a small angle (or where no surface was hit)
        cosang = np.clip(np.sum(prior_enh * n_cam, axis=-1), -1.0, 1.0)
        bad = np.degrees(np.arccos(cosang)) > UNCERTAINTY_ANGLE_DEG
        bad |= ~hit.reshape(h, w)
        uncert = bad.astype(np.float64)

        if corruption.pose_rot_deg > 0 or corruption.pose_trans > 0:
            cams_train.append(perturb_camera(cam, rng, corruption.pose_rot_deg,
                                             corruption.pose_trans))
        else:
            cams_train.append(cam)

        rgbs.append(img)
        normals_enh.append(prior_enh)
        normals_raw.append(prior_raw)
        uncerts.append(uncert)
        depths.append(depth)

    r = scene.bounding_radius() * 1.05
    gt_mesh = extract_mesh(scene.sdf, gt_mesh_resolution,
                           (np.full(3, -r), np.full(3, r)))
    views = [ViewRecord(i, cams_train[i], rgbs[i], normals_enh[i], uncerts[i],
                        depths[i]) for i in range(n_views)]
    return GeneratedViews(views=views, cameras_true=cams_true,
                          cameras_train=cams_train, rgbs=rgbs,
                          normals=normals_enh, normals_raw=normals_raw,
                          uncertainties=uncerts, depths=depths,
                          gt_mesh=gt_mesh, scene=scene, corruption=corruption)


def prim_to_meta(prim):
    shape = prim.shape
    if isinstance(shape, Sphere):
        return {"name": prim.name, "kind": "sphere",
                "center": shape.center.tolist(), "radius": shape.radius}
    if isinstance(shape, Box):
        return {"name": prim.name, "kind": "box",
                "center": shape.center.tolist(), "half": shape.half.tolist()}
    if isinstance(shape, CappedCylinder):
        return {"name": prim.name, "kind": "cylinder",
                "center": shape.center.tolist(), "axis": shape.axis,
                "radius": shape.radius, "half_height": shape.half_height}
    raise TypeError(f"cannot serialize primitive of type {type(shape)}")


def prim_from_meta(meta):
    kind = meta["kind"]
    if kind == "sphere":
        return Sphere(meta["center"], meta["radius"])
    if kind == "box":
        return Box(meta["center"], meta["half"])
    if kind == "cylinder":
        return CappedCylinder(meta["center"], meta["axis"], meta["radius"],
                              meta["half_height"])
    raise ValueError(f"unknown primitive kind '{kind}'")


def write_generated(path, gen):
    """Write a generated scene to the on-disk layout."""
    extra = {"thin_prims": [prim_to_meta(p) for p in gen.scene.prims if p.thin],
             "corruption": {k: v for k, v in
                            vars(gen.corruption).items()}}
    write_scene_dir(path, gen.cameras_train, gen.rgbs, gen.normals,
                    gen.normals_raw, gen.uncertainties, gen.depths,
                    gen.scene.bg_color, gen.scene.name, extra_meta=extra)
    write_ply(gen.gt_mesh, os.path.join(path, "gt_mesh.ply"))
