"""Command-line entry point: ``liverreg <subcommand> ...``.

Every subcommand takes ``--seed`` (default 0) and ``--config``; all
randomness derives from the seed. Exit codes: 0 success, 2 parse or
validation failure, 3 numerical failure, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from liverreg import io
from liverreg.config import EngineConfig, load_config
from liverreg.errors import IoFailure, RegistrationError, ValidationError
from liverreg.evaluate import format_report_table, run_experiment, silhouette, stage_one
from liverreg.deform import rto_optimize
from liverreg.geom import apply_pose, project_camera_frame
from liverreg.phantom import gen_phantom
from liverreg.pseudolabels import CurvePair, build_pseudo_correspondences, sparse_anchor_correspondences
from liverreg.scene import load_scene, save_scene

logger = logging.getLogger("liverreg")

PHANTOM_OVERRIDES = ("n_points", "deformation_amplitude", "embedding_noise", "outlier_rate", "overlap_fraction")


def _engine(args) -> EngineConfig:
    cfg = load_config(args.config) if args.config else EngineConfig()
    over = {k: getattr(args, k) for k in PHANTOM_OVERRIDES if getattr(args, k, None) is not None}
    if over:
        cfg = dataclasses.replace(cfg, phantom=dataclasses.replace(cfg.phantom, **over))
    return cfg.with_seed(args.seed)


def _outdir(path) -> Path:
    d = Path(path)
    try:
        d.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {d}: {exc}") from exc
    return d


def _scene(args, cfg: EngineConfig):
    return load_scene(args.scene, cam=cfg.camera)


# -- subcommands ------------------------------------------------------------------


def cmd_gen_phantom(args) -> int:
    cfg = _engine(args)
    scene = gen_phantom(cfg.phantom, args.seed)
    save_scene(scene, args.out)
    print(f"phantom seed={args.seed} points={scene.cloud.shape[0]} "
          f"landmarks3d={len(scene.landmark_index)} landmarks2d={scene.pixels2d.shape[0]} -> {args.out}")
    return 0


def cmd_make_pseudo_labels(args) -> int:
    cfg = _engine(args)
    data = _scene(args, cfg)
    pose = io.load_pose(args.pose) if args.pose else None
    pairs = []
    for kind in ("ridge", "ligament", "silhouette"):
        c3 = [c for c in data.curves3d if c.kind == kind]
        c2 = [c for c in data.curves2d if c.kind == kind]
        if len(c3) != len(c2):
            logger.warning("%s: %d 3D vs %d 2D curves, pairing the first %d",
                           kind, len(c3), len(c2), min(len(c3), len(c2)))
        pairs += [CurvePair(a, b) for a, b in zip(c3, c2)]
    if not pairs:
        raise ValidationError("no 3D/2D curve pairs of a common kind")
    build = sparse_anchor_correspondences if args.sparse else build_pseudo_correspondences
    cs = build(pairs, pose, data.cam if pose is not None else None)
    io.save_correspondences(cs, args.out)
    print(f"pseudo-labels pairs={len(cs)} curves={len(pairs)} -> {args.out}")
    return 0


def cmd_register_rigid(args) -> int:
    cfg = _engine(args)
    data = _scene(args, cfg)
    if data.scores3d is None or data.scores2d is None:
        raise ValidationError("register-rigid needs scores3d.txt and scores2d.txt in the scene")
    matches, est = stage_one(data, cfg.experiment())
    out = _outdir(args.out)
    io.save_pose(est.pose, out / "pose.txt")
    io.save_correspondences(matches, out / "matches.txt")
    io.save_correspondences(matches.subset(est.inlier_indices), out / "inliers.txt")
    print(f"rigid matches={len(matches)} inliers={est.inlier_indices.size} "
          f"reproj_px={io.fmt(est.mean_reprojection_error_px)} iterations={est.iterations}")
    return 0


def cmd_register_deform(args) -> int:
    cfg = _engine(args)
    data = _scene(args, cfg)
    pose = io.load_pose(args.pose)
    matches = io.load_correspondences(args.matches)
    rep = apply_pose(data.cloud, pose)
    rto = rto_optimize(rep, matches, data.mask, data.cam, cfg.rto, point_index=data.landmark_index)
    out = _outdir(args.out)
    io.save_deformation(rto.displacements, out / "deformation.txt")
    io.save_trace(rto.trace, out / "trace.txt")
    if args.figures:
        from liverreg.plotting import plot_trace

        plot_trace(rto.trace, _outdir(args.figures) / "trace.png")
    first, last = rto.trace[0], rto.trace[-1]
    print(f"deform steps={len(rto.trace) - 1} stop={rto.stop_reason} "
          f"L_def={io.fmt(first[4])}->{io.fmt(last[4])}")
    return 0


def cmd_eval(args) -> int:
    cfg = _engine(args)
    seeds = args.seeds if args.seeds else list(range(args.seed, args.seed + args.runs))
    exp = cfg.experiment(run_deformation=not args.rigid_only)
    runs = []
    for s in seeds:
        scene = gen_phantom(cfg.phantom, s)
        run = run_experiment(scene, dataclasses.replace(
            exp, ransac=dataclasses.replace(exp.ransac, rng_seed=s),
            rto=dataclasses.replace(exp.rto, seed=s)))
        runs.append((scene, run))
        logger.info("seed %d: rigid %.3fs, deform %.3fs", s, run.report.time_rigid_s, run.report.time_deform_s)
    reports = [r.report for _, r in runs]
    print(format_report_table(reports))
    print("---")
    for r in reports:
        print(r.to_json(include_timing=args.timings))
    if args.figures:
        from liverreg.plotting import plot_metrics, plot_overlay, plot_trace

        fig_dir = _outdir(args.figures)
        plot_metrics(reports, fig_dir / "metrics.png")
        for scene, run in runs:
            gt = scene.gt_correspondences()
            lm = scene.landmark_index[gt.index3d]
            rigid_px = project_camera_frame(run.repositioned[lm], scene.cam)
            warped_px = None
            if run.rto is not None:
                warped_px = project_camera_frame((run.repositioned + run.rto.displacements)[lm], scene.cam)
                plot_trace(run.rto.trace, fig_dir / f"trace_seed{scene.seed}.png",
                           title=f"RTO objective, seed {scene.seed}")
            plot_overlay(scene.gt_mask, gt.pixels, rigid_px, warped_px,
                         fig_dir / f"overlay_seed{scene.seed}.png", title=f"seed {scene.seed}")
    return 0


def contour(mask) -> np.ndarray:
    """Pixels of ``mask`` with at least one 4-neighbour outside it."""
    m = np.asarray(mask, dtype=bool)
    p = np.pad(m, 1, constant_values=False)
    interior = p[:-2, 1:-1] & p[2:, 1:-1] & p[1:-1, :-2] & p[1:-1, 2:]
    return m & ~interior


def cmd_overlay(args) -> int:
    cfg = _engine(args)
    data = _scene(args, cfg)
    pose = io.load_pose(args.pose)
    pts = data.cloud
    if args.deformation:
        disp = io.load_deformation(args.deformation)
        if disp.shape != pts.shape:
            raise ValidationError(f"deformation has {disp.shape[0]} rows for {pts.shape[0]} points")
        # Displacements are camera-frame, applied after the pose.
        cam_pts = apply_pose(pts, pose) + disp
    else:
        cam_pts = apply_pose(pts, pose)
    model = silhouette(cam_pts, data.cam, cfg.rto.splat_sigma_px)
    img = np.where(data.mask, 96, 0).astype(np.uint8)
    img[contour(model)] = 255
    io.save_pgm(img, args.out)
    print(f"overlay contour_px={int(contour(model).sum())} -> {args.out}")
    return 0


# -- parser -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="seed for every random choice (default 0)")
    common.add_argument("--config", help="engine config file (INI sections)")
    common.add_argument("-v", "--verbose", action="count", default=0)

    phantom = argparse.ArgumentParser(add_help=False)
    phantom.add_argument("--n-points", dest="n_points", type=int)
    phantom.add_argument("--deformation-amplitude", type=float)
    phantom.add_argument("--embedding-noise", type=float)
    phantom.add_argument("--outlier-rate", type=float)
    phantom.add_argument("--overlap-fraction", type=float)

    ap = argparse.ArgumentParser(prog="liverreg", description="3D-2D liver registration engine")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-phantom", parents=[common, phantom], help="write a synthetic scene directory")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_phantom)

    p = sub.add_parser("make-pseudo-labels", parents=[common], help="arc-length curve correspondences")
    p.add_argument("--scene", required=True)
    p.add_argument("--pose", help="pose file used to orient curves (else curve orientation tokens)")
    p.add_argument("--sparse", action="store_true", help="one pair per original 3D vertex")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_make_pseudo_labels)

    p = sub.add_parser("register-rigid", parents=[common], help="matching plus RANSAC-EPnP")
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_register_rigid)

    p = sub.add_parser("register-deform", parents=[common], help="non-rigid refinement of a rigid result")
    p.add_argument("--scene", required=True)
    p.add_argument("--pose", required=True)
    p.add_argument("--matches", required=True, help="correspondences (landmark indices), e.g. inliers.txt")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--figures", help="directory for the objective-trace figure")
    p.set_defaults(func=cmd_register_deform)

    p = sub.add_parser("eval", parents=[common, phantom], help="end-to-end runs on seeded phantoms")
    p.add_argument("--runs", type=int, default=1, help="consecutive seeds starting at --seed")
    p.add_argument("--seeds", type=int, nargs="+", help="explicit seed list (overrides --runs)")
    p.add_argument("--rigid-only", action="store_true")
    p.add_argument("--timings", action="store_true", help="include wall-clock fields in the JSON lines")
    p.add_argument("--figures", help="directory for metric, trace and overlay figures")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("overlay", parents=[common], help="burn the projected model contour into a PGM")
    p.add_argument("--scene", required=True)
    p.add_argument("--pose", required=True)
    p.add_argument("--deformation")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_overlay)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except RegistrationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
