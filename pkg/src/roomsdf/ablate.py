"""Ablation matrix: retrain with one component disabled per arm.

Arms mirror the component switches: full, mlp_only, triplane_only,
no_embedding, no_uncertainty, no_enhance. Every arm trains from the same
seed and budget, extracts a mesh, scores it against the scene's ground
truth, and lands as one row in a comparison CSV. When the scene metadata
describes thin primitives, a thin-region recall column (recall restricted
to ground-truth points near those primitives) is included.
"""

import dataclasses
import os

import numpy as np

from . import tensor as T
from .mesh import extract_mesh, read_ply, write_ply
from .metrics import evaluate
from .scene import load_scene_dir
from .train import train

ARMS = ("full", "mlp_only", "triplane_only", "no_embedding", "no_uncertainty",
        "no_enhance")


def arm_config(base_cfg, arm):
    cfg = dataclasses.replace(base_cfg)
    if arm != "full":
        setattr(cfg, arm, True)
    return cfg


def model_sdf_fn(model):
    def fn(pts):
        out = model.field.evaluate(pts, want_grad=False, want_feature=False)
        return out.s.values[:, 0]
    return fn


def extract_model_mesh(model, resolution=128, bound=1.0):
    prev = T.default_dtype()
    T.set_default_dtype(model.store.dtype)
    try:
        mesh = extract_mesh(model_sdf_fn(model), resolution,
                            (np.full(3, -bound), np.full(3, bound)))
    finally:
        T.set_default_dtype(prev)
    mesh.vertices = model.denormalize_points(mesh.vertices)
    return mesh


def thin_region_fn(scene_dir):
    """Predicate selecting GT points within 0.05 of any thin primitive, or
    None when the scene metadata lists no thin primitives."""
    import yaml

    from .synth import prim_from_meta

    meta_path = os.path.join(scene_dir, "meta.yaml")
    if not os.path.isfile(meta_path):
        return None
    with open(meta_path) as f:
        meta = yaml.safe_load(f) or {}
    thin = meta.get("thin_prims") or []
    if not thin:
        return None
    shapes = [prim_from_meta(d) for d in thin]

    def region(pts):
        d = np.min(np.stack([np.abs(s.sdf(pts)) for s in shapes], axis=1),
                   axis=1)
        return d < 0.05

    return region


def run_ablation(scene_dir, base_cfg, out_dir, arms=ARMS, uncertainty_mode="file",
                 mesh_resolution=128, eval_points=100000, log=print):
    os.makedirs(out_dir, exist_ok=True)
    gt = read_ply(os.path.join(scene_dir, "gt_mesh.ply"))
    region = thin_region_fn(scene_dir)
    rows = []
    for arm in arms:
        cfg = arm_config(base_cfg, arm)
        data = load_scene_dir(
            scene_dir, use_raw_normals=cfg.no_enhance,
            uncertainty_mode="zero" if cfg.no_uncertainty else uncertainty_mode)
        arm_dir = os.path.join(out_dir, arm)
        log(f"[ablate] training arm '{arm}'")
        result = train(data, cfg, arm_dir)
        mesh = extract_model_mesh(result.model, resolution=mesh_resolution)
        write_ply(mesh, os.path.join(arm_dir, "mesh.ply"))
        rep = evaluate(mesh, gt, threshold=0.05, n_points=eval_points,
                       seed=base_cfg.seed)
        row = {"arm": arm, "f_score": rep.f_score, "precision": rep.precision,
               "recall": rep.recall, "accuracy": rep.accuracy,
               "completeness": rep.completeness,
               "final_rgb": result.final["rgb"],
               "final_total": result.final["total"]}
        if region is not None:
            thin_rep = evaluate(mesh, gt, threshold=0.05, n_points=eval_points,
                                seed=base_cfg.seed, gt_region=region)
            row["thin_recall"] = thin_rep.recall
        rows.append(row)
        log(f"[ablate] {arm}: F={rep.f_score:.3f} P={rep.precision:.3f} "
            f"R={rep.recall:.3f}")
    keys = list(rows[0].keys())
    csv_path = os.path.join(out_dir, "ablation.csv")
    with open(csv_path, "w") as f:
        f.write(",".join(keys) + "\n")
        for row in rows:
            f.write(",".join(
                f"{row[k]:.10g}" if isinstance(row[k], float) else str(row[k])
                for k in keys) + "\n")
    return csv_path, rows
