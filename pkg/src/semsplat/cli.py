"""Command-line interface.

Every subcommand prints a single machine-readable key:value line first,
then human-readable detail. Exit codes: 0 success, 2 usage error, 3 data
error (bad files, malformed inputs), 4 numerical failure (estimators that
cannot reach a solution).

The `loss` command compares two directories with a fixed layout:
render-dir holds color.lsmt (image), feature.lsmt (feature),
points1.lsmt/points2.lsmt (pointmap), conf1.lsmt/conf2.lsmt (confidence);
target-dir holds color.lsmt, feature.lsmt, points1.lsmt, points2.lsmt and
optional mask1.lsmt/mask2.lsmt (labels, nonzero = valid).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import losses, metrics, tensorio
from .camera import Camera, Intrinsics
from .camera_recovery import (
    RansacParams,
    align_depth_median,
    estimate_focal_weiszfeld,
    estimate_relative_pose,
)
from .diagnostics import run_selftest
from .errors import DataError, InvariantError, NumericalError
from .field import SemanticGaussianField
from .pointmap import PointMap
from .rasterizer import render_forward

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _machine_line(pairs) -> None:
    print(" ".join(f"{k}:{v}" for k, v in pairs))


def _parse_background(text: str) -> np.ndarray:
    parts = text.split(",")
    if len(parts) != 3:
        raise DataError(f"--background expects r,g,b; got {text!r}")
    try:
        bg = np.array([float(p) for p in parts])
    except ValueError:
        raise DataError(f"--background expects numbers; got {text!r}") from None
    if np.any(bg < 0.0) or np.any(bg > 1.0):
        raise DataError("--background components must lie in [0, 1]")
    return bg


def _load_camera(path) -> Camera:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(payload, dict):
        raise DataError(f"{path}: camera file must hold a JSON object")
    return Camera.from_dict(payload)


def _truncate_sh(field: SemanticGaussianField, degree: int) -> SemanticGaussianField:
    if degree < 0:
        raise DataError("--sh-degree must be non-negative")
    if degree > field.sh_degree:
        raise DataError(
            f"--sh-degree {degree} exceeds the stored degree {field.sh_degree}"
        )
    if degree == field.sh_degree:
        return field
    arrs = field.to_arrays()
    k = (degree + 1) ** 2
    arrs["sh_coeffs"] = arrs["sh_coeffs"][:, :, :k]
    return SemanticGaussianField.from_arrays(**arrs)


def _cmd_render(args) -> int:
    field = tensorio.load_field(args.field)
    camera = _load_camera(args.camera)
    background = _parse_background(args.background)
    if args.sh_degree is not None:
        field = _truncate_sh(field, args.sh_degree)
    out = render_forward(field, camera, background, threads=args.threads)
    tensorio.save_png(args.out_rgb, out.color)
    tensorio.save_tensor(args.out_depth, out.depth, "depth")
    tensorio.save_tensor(args.out_feature, out.feature, "feature")
    _machine_line([
        ("gaussians", len(field)),
        ("width", camera.width),
        ("height", camera.height),
        ("alpha_mean", f"{out.alpha.mean():.4f}"),
    ])
    print(f"wrote {args.out_rgb}, {args.out_depth}, {args.out_feature}")
    return EXIT_OK


def _cmd_recover_cameras(args) -> int:
    points1, _ = tensorio.load_tensor(args.pointmap1, "pointmap")
    conf1, _ = tensorio.load_tensor(args.conf1, "confidence")
    points2, _ = tensorio.load_tensor(args.pointmap2, "pointmap")
    conf2, _ = tensorio.load_tensor(args.conf2, "confidence")
    pm1 = PointMap(points=points1, confidence=conf1, mask=np.ones(conf1.shape, dtype=bool))
    if points2.shape != points1.shape:
        raise DataError(
            f"point map shapes differ: {points1.shape} vs {points2.shape}"
        )
    if conf2.shape != points2.shape[:2]:
        raise DataError(
            f"{args.conf2}: confidence shape {conf2.shape} does not match point map"
        )
    h, w = conf2.shape

    est = estimate_focal_weiszfeld(pm1)
    focal = est.focal

    # PnP matches view-2 3D points (already in view-1 coordinates) against
    # their own pixel grid; low-confidence pixels (bottom 20%) are dropped.
    threshold = np.quantile(conf2, 0.2)
    keep = conf2 >= threshold
    rows, cols = np.nonzero(keep)
    pts3d = points2[rows, cols]
    pixels = np.stack([cols, rows], axis=1).astype(np.float64)
    intr = Intrinsics(fx=focal, fy=focal, cx=w / 2.0, cy=h / 2.0)
    pose = estimate_relative_pose(
        pts3d,
        pixels,
        intr,
        RansacParams(seed=args.ransac_seed, iterations=args.ransac_iters, inlier_px=args.inlier_px),
    )

    cam1 = Camera(fx=focal, fy=focal, cx=w / 2.0, cy=h / 2.0, width=w, height=h,
                  R=np.eye(3), t=np.zeros(3))
    cam2 = Camera(fx=focal, fy=focal, cx=w / 2.0, cy=h / 2.0, width=w, height=h,
                  R=pose.rotation, t=pose.translation)
    payload = {
        "camera1": cam1.to_dict(),
        "camera2": cam2.to_dict(),
        "focal": focal,
        "inlier_ratio": pose.inlier_ratio,
    }
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")
    _machine_line([
        ("focal", f"{focal:.4f}"),
        ("inlier_ratio", f"{pose.inlier_ratio:.4f}"),
        ("focal_iters", est.iterations),
    ])
    print(f"wrote {args.out}")
    return EXIT_OK


def _load_mask(path, shape) -> np.ndarray:
    raw, _ = tensorio.load_tensor(path, "labels")
    if raw.shape != shape:
        raise DataError(f"{path}: mask shape {raw.shape} does not match {shape}")
    return raw != 0.0


def _cmd_eval_depth(args) -> int:
    pred, _ = tensorio.load_tensor(args.pred, "depth")
    gt, _ = tensorio.load_tensor(args.gt, "depth")
    if pred.shape != gt.shape:
        raise DataError(f"depth shapes differ: {pred.shape} vs {gt.shape}")
    mask = _load_mask(args.mask, gt.shape) if args.mask else gt > 0.0
    aligned, scale = align_depth_median(pred, gt, mask)
    rel, tau = metrics.depth_rel_tau(aligned, gt, mask)
    _machine_line([("rel", f"{rel:.2f}"), ("tau", f"{tau:.2f}")])
    print(f"median-aligned scale {scale:.6f} over {int(mask.sum())} pixels")
    return EXIT_OK


def _cmd_eval_seg(args) -> int:
    features, _ = tensorio.load_tensor(args.features, "feature")
    if features.ndim != 3:
        raise DataError(f"{args.features}: pixel features must be H x W x N")
    text, _ = tensorio.load_tensor(args.text, "feature")
    if text.ndim != 2:
        raise DataError(f"{args.text}: text embeddings must be C x N")
    labels_raw, _ = tensorio.load_tensor(args.gt, "labels")
    n_classes = text.shape[0]
    if n_classes == len(metrics.DEFAULT_CLASS_NAMES):
        names = metrics.DEFAULT_CLASS_NAMES
    else:
        names = tuple(f"class_{i}" for i in range(n_classes))
    emb = metrics.TextEmbeddingSet(embeddings=text, class_names=names)
    pred = metrics.open_vocab_segment(features, emb)
    gt = metrics.LabelMap(labels=labels_raw.astype(np.int64), class_names=names)
    miou, acc = metrics.miou_pixel_acc(pred, gt)
    _machine_line([("miou", f"{miou:.4f}"), ("acc", f"{acc:.4f}")])
    print(f"{n_classes} classes over {labels_raw.size} pixels "
          f"({int((labels_raw == metrics.IGNORE_LABEL).sum())} ignored)")
    return EXIT_OK


def _require(path) -> str:
    if not os.path.isfile(path):
        raise DataError(f"{path}: file not found")
    return path


def _cmd_loss(args) -> int:
    weights = losses.LossWeights(l1=args.l1, l2=args.l2, l3=args.l3,
                                 alpha_conf=args.alpha_conf)

    def render_path(name):
        return _require(os.path.join(args.render_dir, name))

    def target_path(name):
        return _require(os.path.join(args.target_dir, name))

    color, _ = tensorio.load_tensor(render_path("color.lsmt"), "image")
    feature, _ = tensorio.load_tensor(render_path("feature.lsmt"), "feature")
    t_color, _ = tensorio.load_tensor(target_path("color.lsmt"), "image")
    t_feature, _ = tensorio.load_tensor(target_path("feature.lsmt"), "feature")

    photo = losses.photometric_l1(color, t_color)
    ds = losses.dssim(color, t_color)
    sem = losses.semantic_cosine_loss(feature, t_feature)

    conf_total = 0.0
    for view in (1, 2):
        pts, _ = tensorio.load_tensor(render_path(f"points{view}.lsmt"), "pointmap")
        conf, _ = tensorio.load_tensor(render_path(f"conf{view}.lsmt"), "confidence")
        t_pts, _ = tensorio.load_tensor(target_path(f"points{view}.lsmt"), "pointmap")
        mask_file = os.path.join(args.target_dir, f"mask{view}.lsmt")
        mask = _load_mask(mask_file, t_pts.shape[:2]) if os.path.isfile(mask_file) \
            else np.ones(t_pts.shape[:2], dtype=bool)
        pred = PointMap.full(pts, confidence=conf)
        gt = PointMap(points=t_pts, confidence=np.ones(mask.shape), mask=mask)
        if view == 1:
            pred_pair, gt_pair = [pred], [gt]
            conf_pair = [conf]
        else:
            pred_pair.append(pred)
            gt_pair.append(gt)
            conf_pair.append(conf)
    reg = losses.depth_regression_loss(tuple(pred_pair), tuple(gt_pair))
    for view in range(2):
        conf_total += losses.confidence_loss(
            reg.per_pixel[view], conf_pair[view], weights.alpha_conf,
            mask=reg.masks[view],
        )

    total = losses.combine_loss_components(photo, ds, sem, conf_total, weights)
    _machine_line([
        ("total", f"{total:.2f}"),
        ("photo", f"{photo:.4f}"),
        ("dssim", f"{ds:.4f}"),
        ("semantic", f"{sem:.4f}"),
        ("confidence", f"{conf_total:.4f}"),
    ])
    print(f"weights l1={weights.l1} l2={weights.l2} l3={weights.l3} "
          f"alpha_conf={weights.alpha_conf}")
    print("lpips: n/a (neural perceptual metric; needs pretrained weights)")
    return EXIT_OK


def _cmd_viz_features(args) -> int:
    features, _ = tensorio.load_tensor(args.features, "feature")
    if features.ndim != 3:
        raise DataError(f"{args.features}: pixel features must be H x W x N")
    image = metrics.pca_visualize(features)
    tensorio.save_png(args.out, image)
    _machine_line([
        ("width", features.shape[1]),
        ("height", features.shape[0]),
        ("channels", features.shape[2]),
    ])
    print(f"wrote {args.out}")
    return EXIT_OK


def _cmd_selftest(args) -> int:
    del args
    results = run_selftest(stream=sys.stdout)
    failed = [r for r in results if not r.passed]
    _machine_line([("checks", len(results)), ("failed", len(failed))])
    return EXIT_OK if not failed else EXIT_NUMERIC


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="semsplat",
        description="Semantic Gaussian splatting: render, recover cameras, evaluate.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("render", help="splat a field into RGB, depth, and feature images")
    p.add_argument("--field", required=True)
    p.add_argument("--camera", required=True)
    p.add_argument("--out-rgb", required=True)
    p.add_argument("--out-depth", required=True)
    p.add_argument("--out-feature", required=True)
    p.add_argument("--background", default="0,0,0")
    p.add_argument("--sh-degree", type=int, default=None)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=_cmd_render)

    p = sub.add_parser("recover-cameras", help="estimate focal and relative pose from point maps")
    p.add_argument("--pointmap1", required=True)
    p.add_argument("--conf1", required=True)
    p.add_argument("--pointmap2", required=True)
    p.add_argument("--conf2", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ransac-seed", type=int, default=0)
    p.add_argument("--ransac-iters", type=int, default=256)
    p.add_argument("--inlier-px", type=float, default=2.0)
    p.set_defaults(func=_cmd_recover_cameras)

    p = sub.add_parser("eval-depth", help="median-aligned rel / tau depth metrics")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--mask", default=None)
    p.set_defaults(func=_cmd_eval_depth)

    p = sub.add_parser("eval-seg", help="open-vocabulary segmentation mIoU / accuracy")
    p.add_argument("--features", required=True)
    p.add_argument("--text", required=True)
    p.add_argument("--gt", required=True)
    p.set_defaults(func=_cmd_eval_seg)

    p = sub.add_parser("loss", help="training loss between a render dir and a target dir")
    p.add_argument("--render-dir", required=True)
    p.add_argument("--target-dir", required=True)
    p.add_argument("--l1", type=float, default=0.25)
    p.add_argument("--l2", type=float, default=0.3)
    p.add_argument("--l3", type=float, default=1.5)
    p.add_argument("--alpha-conf", type=float, default=0.2)
    p.set_defaults(func=_cmd_loss)

    p = sub.add_parser("viz-features", help="PCA projection of a feature image to RGB")
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_viz_features)

    p = sub.add_parser("selftest", help="run gradient and invariant self-checks")
    p.set_defaults(func=_cmd_selftest)

    return parser


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if not exc.code else int(exc.code)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc.filename}: file not found", file=sys.stderr)
        return EXIT_DATA
    except IsADirectoryError as exc:
        print(f"error: {exc.filename}: is a directory", file=sys.stderr)
        return EXIT_DATA
    except (DataError, InvariantError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main(argv=None) -> int:
    return cli_main(argv)


if __name__ == "__main__":
    sys.exit(main())
