"""Scene directory layout and the in-memory view records used for training.

A scene directory holds::

    cameras.txt          per-view intrinsics/extrinsics + normalization
    rgb/0000.png ...     supervision images (8-bit)
    normal/0000.pfm      camera-space normal priors (3-channel float)
    normal_raw/          priors estimated without image enhancement
    uncertainty/0000.pfm prior uncertainty in [0, 1] (1-channel float)
    gt_depth/0000.pfm    ray-length depth (0 where no surface was hit)
    gt_mesh.ply          ground-truth surface
    meta.yaml            background color and generation notes

``normal_raw``/``uncertainty``/``gt_depth``/``gt_mesh``/``meta`` are
optional on ingestion (real captures supply ``cameras.txt``, ``rgb`` and
``normal`` at minimum). Normal priors are stored in each view's camera
frame (+x right, +y down, +z forward) and rotated to world space when
batches are assembled.
"""

import os
from dataclasses import dataclass, field as dfield

import numpy as np
import yaml

from .camera import Camera, load_cameras, save_cameras
from .imgio import load_pfm, load_png, save_pfm, save_png


@dataclass
class ViewRecord:
    view_id: int
    camera: Camera
    rgb: np.ndarray          # (H, W, 3) in [0, 1]
    normal: np.ndarray       # (H, W, 3) camera-space unit normals
    uncertainty: np.ndarray  # (H, W) in [0, 1]
    gt_depth: np.ndarray | None = dfield(default=None)


@dataclass
class SceneData:
    views: list
    bg_color: np.ndarray
    norm_center: np.ndarray
    norm_scale: float
    gt_mesh_path: str | None = dfield(default=None)
    name: str = ""


def _view_name(i):
    return f"{i:04d}"


def write_scene_dir(path, cameras, rgbs, normals, normals_raw, uncerts,
                    depths, bg_color, name, norm_center=(0, 0, 0),
                    norm_scale=1.0, extra_meta=None):
    os.makedirs(path, exist_ok=True)
    for sub in ("rgb", "normal", "normal_raw", "uncertainty", "gt_depth"):
        os.makedirs(os.path.join(path, sub), exist_ok=True)
    save_cameras(os.path.join(path, "cameras.txt"), cameras,
                 norm_center=norm_center, norm_scale=norm_scale)
    for i in range(len(cameras)):
        tag = _view_name(i)
        save_png(os.path.join(path, "rgb", tag + ".png"), rgbs[i])
        save_pfm(os.path.join(path, "normal", tag + ".pfm"), normals[i])
        save_pfm(os.path.join(path, "normal_raw", tag + ".pfm"),
                 normals_raw[i])
        save_pfm(os.path.join(path, "uncertainty", tag + ".pfm"), uncerts[i])
        save_pfm(os.path.join(path, "gt_depth", tag + ".pfm"), depths[i])
    meta = {"name": name, "bg_color": [float(c) for c in bg_color]}
    if extra_meta:
        meta.update(extra_meta)
    with open(os.path.join(path, "meta.yaml"), "w") as f:
        yaml.safe_dump(meta, f)


def load_scene_dir(path, use_raw_normals=False, uncertainty_mode="file"):
    """Load a scene directory into view records.

    ``uncertainty_mode``: "file" reads ``uncertainty/``, "zero" forces full
    trust in the priors (the no-uncertainty ablation uses this).
    """
    cam_path = os.path.join(path, "cameras.txt")
    if not os.path.isfile(cam_path):
        raise FileNotFoundError(f"no cameras.txt in scene directory {path}")
    cameras, norm_center, norm_scale = load_cameras(cam_path)
    meta_path = os.path.join(path, "meta.yaml")
    meta = {}
    if os.path.isfile(meta_path):
        with open(meta_path) as f:
            meta = yaml.safe_load(f) or {}
    bg = np.asarray(meta.get("bg_color", [0.0, 0.0, 0.0]), dtype=np.float64)

    normal_dir = "normal_raw" if use_raw_normals else "normal"
    if use_raw_normals and not os.path.isdir(os.path.join(path, "normal_raw")):
        normal_dir = "normal"
    views = []
    for i, cam in enumerate(cameras):
        tag = _view_name(i)
        rgb = load_png(os.path.join(path, "rgb", tag + ".png"))
        normal = load_pfm(os.path.join(path, normal_dir, tag + ".pfm"))
        if normal.shape[:2] != rgb.shape[:2]:
            raise ValueError(f"normal map size mismatch for view {i}")
        if uncertainty_mode == "zero":
            unc = np.zeros(rgb.shape[:2])
        elif uncertainty_mode == "file":
            upath = os.path.join(path, "uncertainty", tag + ".pfm")
            if os.path.isfile(upath):
                unc = np.clip(load_pfm(upath), 0.0, 1.0)
                if unc.shape != rgb.shape[:2]:
                    raise ValueError(
                        f"uncertainty map size mismatch for view {i}")
            else:
                unc = np.zeros(rgb.shape[:2])
        else:
            raise ValueError(f"unknown uncertainty mode '{uncertainty_mode}'")
        dpath = os.path.join(path, "gt_depth", tag + ".pfm")
        depth = load_pfm(dpath) if os.path.isfile(dpath) else None
        views.append(ViewRecord(i, cam, rgb, normal, unc, depth))
    mesh_path = os.path.join(path, "gt_mesh.ply")
    return SceneData(views=views, bg_color=bg, norm_center=norm_center,
                     norm_scale=norm_scale,
                     gt_mesh_path=mesh_path if os.path.isfile(mesh_path) else None,
                     name=meta.get("name", os.path.basename(str(path))))
