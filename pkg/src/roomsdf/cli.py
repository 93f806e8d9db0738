"""Command-line entry point: one binary, one subcommand per pipeline stage.

Subcommands: synth, preprocess, train, render, extract-mesh, eval, ablate.
Every subcommand accepts ``--seed``. Exit codes: 0 success, 1 runtime
failure (message on stderr), 2 usage errors. The environment variable
``ROOMSDF_THREADS`` caps BLAS/numba thread counts; ``ROOMSDF_NO_NUMBA=1``
selects the pure-numpy kernel path.
"""

import os
import sys

if "ROOMSDF_THREADS" in os.environ:  # must precede numpy import
    _n = os.environ["ROOMSDF_THREADS"]
    for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS",
                 "MKL_NUM_THREADS", "NUMBA_NUM_THREADS"):
        os.environ.setdefault(_var, _n)

import argparse
import dataclasses
import glob

import numpy as np

from .train import TrainConfig


def _add_train_flags(parser):
    """One flag per TrainConfig key (flag > config file > default)."""
    for f in dataclasses.fields(TrainConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.type == "bool" or isinstance(f.default, bool):
            parser.add_argument(flag, dest=f.name, default=None,
                                action=argparse.BooleanOptionalAction,
                                help=f"train config key (default {f.default})")
        else:
            typ = type(f.default)
            parser.add_argument(flag, dest=f.name, default=None, type=typ,
                                help=f"train config key (default {f.default})")


def _collect_overrides(args, extra_keys=()):
    names = [f.name for f in dataclasses.fields(TrainConfig)]
    names += list(extra_keys)
    return {name: getattr(args, name) for name in names if hasattr(args, name)}


def build_parser():
    p = argparse.ArgumentParser(prog="roomsdf",
                                description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a canonical synthetic scene")
    sp.add_argument("scene", choices=["room-basic", "room-thin",
                                      "room-corrupt", "all"])
    sp.add_argument("--out", required=True, help="output directory root")
    sp.add_argument("--views", type=int, default=20)
    sp.add_argument("--res", type=int, default=64)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--gt-mesh-res", type=int, default=256)
    sp.add_argument("--blur", type=float, default=None,
                    help="gaussian blur sigma on images")
    sp.add_argument("--salt", type=float, default=None,
                    help="salt-noise density on images")
    sp.add_argument("--exposure-gain", type=float, default=None)
    sp.add_argument("--exposure-bias", type=float, default=None)
    sp.add_argument("--pose-rot-deg", type=float, default=None)
    sp.add_argument("--pose-trans", type=float, default=None)
    sp.add_argument("--normal-region", choices=["none", "thin"], default=None)
    sp.add_argument("--normal-mode", choices=["erase", "rotate"], default=None)
    sp.add_argument("--normal-angle", type=float, default=None)

    pp = sub.add_parser("preprocess",
                        help="enhance images / build uncertainty maps")
    pp.add_argument("--images", help="directory of PNGs to enhance")
    pp.add_argument("--out", help="output directory for enhanced PNGs")
    pp.add_argument("--window", type=int, default=3)
    pp.add_argument("--denoise-first", action="store_true",
                    help="median filter before sharpening")
    pp.add_argument("--photometric-uncertainty", metavar="SCENE_DIR",
                    help="compute photometric-consistency uncertainty maps "
                         "for a scene directory (uses gt_depth as proxy)")
    pp.add_argument("--neighbors", type=int, default=2,
                    help="neighbor views per side for photometric check")
    pp.add_argument("--uncertainty-out", default="uncertainty_photometric")
    pp.add_argument("--seed", type=int, default=0)

    tp = sub.add_parser("train", help="optimize a model on a scene directory")
    tp.add_argument("--config", help="YAML config file")
    tp.add_argument("--scene-dir", dest="scene_dir", default=None)
    tp.add_argument("--out-dir", dest="out_dir", default=None)
    tp.add_argument("--uncertainty-mode", dest="uncertainty_mode",
                    choices=["file", "zero"], default=None)
    tp.add_argument("--print-config", action="store_true",
                    help="print every config key with its default and exit")
    _add_train_flags(tp)

    rp = sub.add_parser("render", help="render color/normal/depth for a view")
    rp.add_argument("--checkpoint", required=True)
    rp.add_argument("--scene-dir", required=True,
                    help="scene directory providing the camera")
    rp.add_argument("--view", type=int, required=True)
    rp.add_argument("--out", required=True, help="output directory")
    rp.add_argument("--samples", type=int, default=48)
    rp.add_argument("--mean-embedding", action="store_true",
                    help="use the mean appearance embedding (novel views)")
    rp.add_argument("--seed", type=int, default=0)

    mp = sub.add_parser("extract-mesh", help="marching cubes on a checkpoint")
    mp.add_argument("--checkpoint", required=True)
    mp.add_argument("--resolution", type=int, default=128)
    mp.add_argument("--out", required=True)
    mp.add_argument("--bound", type=float, default=1.0,
                    help="half-extent of the extraction cube (normalized)")
    mp.add_argument("--vertex-color", action="store_true",
                    help="sample the color net per vertex")
    mp.add_argument("--seed", type=int, default=0)

    ep = sub.add_parser("eval", help="compare two meshes")
    ep.add_argument("--pred", required=True)
    ep.add_argument("--gt", required=True)
    ep.add_argument("--threshold", type=float, default=0.05)
    ep.add_argument("--points", type=int, default=100000)
    ep.add_argument("--seed", type=int, default=0)
    ep.add_argument("--csv", help="append the CSV row to this file")

    ap = sub.add_parser("ablate", help="run the component-switch matrix")
    ap.add_argument("--config", help="YAML config file")
    ap.add_argument("--scene-dir", dest="scene_dir", default=None)
    ap.add_argument("--out-dir", dest="out_dir", default=None)
    ap.add_argument("--uncertainty-mode", dest="uncertainty_mode",
                    choices=["file", "zero"], default=None)
    ap.add_argument("--arms", default=",".join(
        ("full", "mlp_only", "triplane_only", "no_embedding",
         "no_uncertainty", "no_enhance")))
    ap.add_argument("--mesh-resolution", type=int, default=128)
    ap.add_argument("--eval-points", type=int, default=100000)
    _add_train_flags(ap)
    return p


def cmd_synth(args):
    from .synth import CorruptionSpec, canonical_scenes, generate_views, \
        write_generated

    scenes = canonical_scenes()
    names = list(scenes) if args.scene == "all" else [args.scene]
    flag_to_field = (("blur", "blur_sigma"), ("salt", "salt_density"),
                     ("exposure_gain", "exposure_gain"),
                     ("exposure_bias", "exposure_bias"),
                     ("pose_rot_deg", "pose_rot_deg"),
                     ("pose_trans", "pose_trans"),
                     ("normal_region", "normal_region"),
                     ("normal_mode", "normal_mode"),
                     ("normal_angle", "normal_angle_deg"))
    for name in names:
        scene, corr = scenes[name]
        kwargs = {dst: getattr(args, src) for src, dst in flag_to_field
                  if getattr(args, src) is not None}
        if kwargs:
            corr = dataclasses.replace(corr, **kwargs)
        out = os.path.join(args.out, name) if args.scene == "all" else args.out
        print(f"[synth] generating {name} -> {out}")
        gen = generate_views(scene, args.views, args.res, corruption=corr,
                             seed=args.seed,
                             gt_mesh_resolution=args.gt_mesh_res)
        write_generated(out, gen)
    return 0


def cmd_preprocess(args):
    from .imgio import load_png, save_pfm, save_png
    from .priors import enhance, photometric_uncertainty

    did_anything = False
    if args.images:
        if not args.out:
            raise ValueError("--out is required with --images")
        os.makedirs(args.out, exist_ok=True)
        files = sorted(glob.glob(os.path.join(args.images, "*.png")))
        if not files:
            raise FileNotFoundError(f"no PNG files in {args.images}")
        for path in files:
            img = enhance(load_png(path), window=args.window,
                          denoise_first=args.denoise_first)
            save_png(os.path.join(args.out, os.path.basename(path)), img)
        print(f"[preprocess] enhanced {len(files)} images -> {args.out}")
        did_anything = True
    if args.photometric_uncertainty:
        from .scene import load_scene_dir

        scene_dir = args.photometric_uncertainty
        data = load_scene_dir(scene_dir)
        out_dir = os.path.join(scene_dir, args.uncertainty_out)
        os.makedirs(out_dir, exist_ok=True)
        n = len(data.views)
        for i, view in enumerate(data.views):
            if view.gt_depth is None:
                raise FileNotFoundError(
                    "photometric uncertainty needs gt_depth maps as the "
                    "depth proxy")
            ids = [(i + off) % n for off in range(-args.neighbors,
                                                  args.neighbors + 1)
                   if off != 0]
            neighbor_data = [(data.views[j].camera, data.views[j].rgb)
                             for j in ids]
            u = photometric_uncertainty((view.camera, view.rgb),
                                        neighbor_data, view.gt_depth)
            save_pfm(os.path.join(out_dir, f"{i:04d}.pfm"), u)
        print(f"[preprocess] wrote {n} uncertainty maps -> {out_dir}")
        did_anything = True
    if not did_anything:
        raise ValueError(
            "nothing to do: pass --images/--out and/or "
            "--photometric-uncertainty SCENE_DIR")
    return 0


def cmd_train(args):
    from .config import build_run_config, dump_default_config
    from .scene import load_scene_dir
    from .train import train

    if args.print_config:
        print(dump_default_config(), end="")
        return 0
    overrides = _collect_overrides(
        args, extra_keys=("scene_dir", "out_dir", "uncertainty_mode"))
    run = build_run_config(args.config, overrides)
    if not run.scene_dir:
        raise ValueError("no scene directory (set scene_dir in the config "
                         "file or pass --scene-dir)")
    data = load_scene_dir(run.scene_dir,
                          use_raw_normals=run.train.no_enhance,
                          uncertainty_mode=run.resolved_uncertainty_mode())
    print(f"[train] {len(data.views)} views from {run.scene_dir}; "
          f"{run.train.iterations} iterations")
    result = train(data, run.train, run.out_dir)
    print(f"[train] initial total {result.initial['total']:.4f} -> "
          f"final {result.final['total']:.4f}")
    print(f"[train] checkpoint: {result.checkpoint_path}")
    print(f"[train] metrics: {result.csv_path}")
    return 0


def cmd_render(args):
    from . import tensor as T
    from .checkpoint import load_checkpoint
    from .imgio import save_depth_png, save_png
    from .render import render_image
    from .scene import load_scene_dir

    model = load_checkpoint(args.checkpoint)
    data = load_scene_dir(args.scene_dir)
    if not 0 <= args.view < len(data.views):
        raise ValueError(f"view {args.view} out of range "
                         f"(scene has {len(data.views)} views)")
    cam = data.views[args.view].camera
    os.makedirs(args.out, exist_ok=True)
    prev = T.default_dtype()
    T.set_default_dtype(model.store.dtype)
    try:
        rgb, normal, depth, _ = render_image(
            model, cam, view_id=None if args.mean_embedding else args.view,
            n_samples=args.samples, bg_color=data.bg_color)
    finally:
        T.set_default_dtype(prev)
    tag = f"{args.view:04d}"
    save_png(os.path.join(args.out, f"color_{tag}.png"), rgb)
    save_png(os.path.join(args.out, f"normal_{tag}.png"), (normal + 1.0) / 2.0)
    save_depth_png(os.path.join(args.out, f"depth_{tag}.png"), depth)
    print(f"[render] wrote color/normal/depth for view {args.view} "
          f"-> {args.out}")
    return 0


def cmd_extract_mesh(args):
    from . import tensor as T
    from .ablate import extract_model_mesh
    from .checkpoint import load_checkpoint
    from .mesh import write_ply

    model = load_checkpoint(args.checkpoint)
    mesh = extract_model_mesh(model, resolution=args.resolution,
                              bound=args.bound)
    if args.vertex_color and not mesh.is_empty():
        mesh.colors = _vertex_colors(model, mesh)
    write_ply(mesh, args.out)
    print(f"[extract-mesh] {mesh.n_vertices} vertices, {mesh.n_faces} "
          f"faces -> {args.out}")
    return 0


def _vertex_colors(model, mesh, chunk=8192):
    from . import tensor as T

    prev = T.default_dtype()
    T.set_default_dtype(model.store.dtype)
    try:
        pts = model.normalize_points(mesh.vertices)
        colors = np.zeros((len(pts), 3))
        for lo in range(0, len(pts), chunk):
            hi = min(lo + chunk, len(pts))
            out = model.field.evaluate(pts[lo:hi], want_grad=True)
            n = out.grad_s.values
            n = n / np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-9)
            emb = model.colornet.embeddings.mean_embedding(hi - lo)
            rgb = model.colornet.eval_color(out.h, -n, T.Tensor(n),
                                            embedding=emb)
            colors[lo:hi] = rgb.values
        return (np.clip(colors, 0, 1) * 255 + 0.5).astype(np.uint8)
    finally:
        T.set_default_dtype(prev)


def cmd_eval(args):
    from .mesh import read_ply
    from .metrics import MetricsReport, evaluate

    pred = read_ply(args.pred)
    gt = read_ply(args.gt)
    rep = evaluate(pred, gt, threshold=args.threshold, n_points=args.points,
                   seed=args.seed)
    print(rep.format_text())
    row = rep.csv_row()
    if args.csv:
        new = not os.path.isfile(args.csv)
        with open(args.csv, "a") as f:
            if new:
                f.write(MetricsReport.csv_header() + "\n")
            f.write(row + "\n")
    else:
        print(MetricsReport.csv_header())
        print(row)
    return 0


def cmd_ablate(args):
    from .ablate import ARMS, run_ablation
    from .config import build_run_config

    overrides = _collect_overrides(
        args, extra_keys=("scene_dir", "out_dir", "uncertainty_mode"))
    run = build_run_config(args.config, overrides)
    if not run.scene_dir:
        raise ValueError("no scene directory (set scene_dir in the config "
                         "file or pass --scene-dir)")
    arms = [a.strip() for a in args.arms.split(",") if a.strip()]
    unknown = set(arms) - set(ARMS)
    if unknown:
        raise ValueError(f"unknown ablation arms: {', '.join(sorted(unknown))}")
    csv_path, rows = run_ablation(run.scene_dir, run.train, run.out_dir,
                                  arms=arms,
                                  uncertainty_mode=run.uncertainty_mode,
                                  mesh_resolution=args.mesh_resolution,
                                  eval_points=args.eval_points)
    print(f"[ablate] comparison written to {csv_path}")
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "render": cmd_render,
    "extract-mesh": cmd_extract_mesh,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ValueError, FileNotFoundError, RuntimeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
