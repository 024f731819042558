"""Command-line front end.

Exit codes: 0 success, 1 when one or more items failed, 2 for usage or
configuration errors. Logs go to stderr; summaries go to files.
"""

import argparse
import csv
import glob
import logging
import os
import sys
import warnings

import numpy as np

from . import __version__
from .camlab import assign_labels, compute_cam
from .config import FIELDS, PipelineConfig, dump_config, load_config, tomllib
from .corrector import run_pipeline
from .detector import (DEFAULT_TARGET_PRECISION, check_probability_map, clean_label_map,
                       detect_clean, pixel_loss, select_theta)
from .errors import ConfigError, LabelmendError
from .evalkit import aggregate, iou
from .graphbuild import build_graph, handcrafted_features, pool_features, write_graph
from .manifest import HANDCRAFTED, ManifestRow, ThetaRow, parse_relevant, read_manifest, \
    read_theta_manifest, write_manifest
from .superpixel import partition_from_assignment, slic
from .synth import generate, random_scene, specs_from_toml, suite_from_dict, write_scene
from .tensorio import LabelMap, read_image, read_label_map, read_tensor, write_label_map, write_tensor

log = logging.getLogger("labelmend")

CALIBRATION_SCENES = 5

SUMMARY_COLUMNS = [
    "image_id", "status", "height", "width", "superpixels", "seeded", "edges", "gamma",
    "clean_pixels", "labeled_pixels", "trained", "fell_back", "gat_epochs", "gat_loss",
    "init_acc", "corrected_acc", "init_miou", "corrected_miou", "seed_precision",
    "seed_coverage", "message",
]


class UsageError(Exception):
    pass


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.6g}"
    return str(v)


def write_tsv(path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in columns])


def _png_path(report):
    return os.path.splitext(report)[0] + ".png"


# ---------------------------------------------------------------- commands


def cmd_label(args):
    features = read_tensor(args.features)
    weights = read_tensor(args.weights)
    relevant = parse_relevant(args.relevant)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        scores = compute_cam(features, weights, relevant)
    for w in caught:
        log.warning("%s", w.message)
    labels = assign_labels(scores, args.bg_thresh, args.fg_thresh)
    write_label_map(labels, args.out)
    if args.scores_out:
        write_tensor(scores.planes.astype(np.float32), args.scores_out)
    log.info("wrote %s (%d classes, %d labelled pixels)", args.out, labels.num_classes,
             int(labels.labeled.sum()))
    return 0


def cmd_detect(args):
    probs = check_probability_map(read_tensor(args.probs))
    init = read_label_map(args.init, probs.shape[0])
    clean = detect_clean(pixel_loss(probs, init), args.theta)
    write_label_map(clean_label_map(clean, init), args.out)
    log.info("theta %.3g kept %d of %d labelled pixels", args.theta, clean.count,
             int(init.labeled.sum()))
    return 0


def cmd_select_theta(args):
    from .plotting import theta_curve

    rows = read_theta_manifest(args.manifest)
    if not rows:
        raise UsageError(f"{args.manifest} lists no images")
    rows.sort(key=lambda r: r.image_id)
    losses, inits, gts = [], [], []
    for r in rows:
        probs = check_probability_map(read_tensor(r.probs))
        init = read_label_map(r.init, probs.shape[0])
        losses.append(pixel_loss(probs, init))
        inits.append(init)
        gts.append(read_label_map(r.gt, probs.shape[0]))
    grid = None
    if args.theta_min is not None or args.theta_max is not None or args.theta_steps is not None:
        grid = np.geomspace(args.theta_min or 1e-5, args.theta_max or 1e-1, args.theta_steps or 40)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        rep = select_theta(losses, inits, gts, args.target_precision, grid)
    for w in caught:
        log.warning("%s", w.message)
    table = [
        {"theta": t, "precision": p, "selected_fraction": f, "chosen": int(t == rep.theta)}
        for t, p, f in zip(rep.candidates, rep.precision, rep.selected_fraction)
    ]
    write_tsv(args.report, ["theta", "precision", "selected_fraction", "chosen"], table)
    theta_curve(rep, _png_path(args.report))
    log.info("selected theta %.6g (precision target %.3g%s)", rep.theta, rep.target_precision,
             ", unmet" if rep.unmet_precision else "")
    return 0


def cmd_superpixels(args):
    image = read_image(args.image)
    part = slic(image, args.count, args.compactness, args.iters)
    write_tensor(part.assignment.astype(np.float32), args.out)
    log.info("%d superpixels (target %d)", part.count, args.count)
    return 0


def cmd_graph(args):
    image = read_image(args.image)
    part = partition_from_assignment(read_tensor(args.superpixels), image)
    if args.handcrafted:
        V = handcrafted_features(image, part)
    else:
        V = pool_features(read_tensor(args.features), part, image.shape[:2])
    g = build_graph(V, part, args.edge_symmetrize)
    write_graph(g, args.out)
    log.info("graph: %d nodes, %d edges, gamma %.4g", g.n, (g.adjacency.nnz - g.n) // 2, g.gamma)
    return 0


def _config_from_args(args):
    overrides = {name: getattr(args, name, None) for name in FIELDS}
    return load_config(args.config, overrides)


def cmd_correct(args):
    cfg = _config_from_args(args)
    rows = read_manifest(args.manifest)
    os.makedirs(args.outdir, exist_ok=True)
    with open(os.path.join(args.outdir, "config.toml"), "w") as fh:
        fh.write(dump_config(cfg))
    results = run_pipeline(rows, cfg, args.outdir)
    summary = os.path.join(args.outdir, "summary.tsv")
    write_tsv(summary, SUMMARY_COLUMNS, results)
    scored = [r for r in results if r["status"] == "ok" and "init_acc" in r]
    if scored:
        from .plotting import accuracy_pairs

        accuracy_pairs([r["image_id"] for r in scored], [r["init_acc"] for r in scored],
                       [r["corrected_acc"] for r in scored], _png_path(summary))
    failed = [r["image_id"] for r in results if r["status"] != "ok"]
    log.info("%d images corrected, %d failed", len(results) - len(failed), len(failed))
    if failed:
        log.error("failed: %s", ", ".join(failed))
        return 1
    return 0


def _find(directory, suffix):
    out = {}
    for path in sorted(glob.glob(os.path.join(directory, "*" + suffix))):
        out[os.path.basename(path)[: -len(suffix)]] = path
    return out


def cmd_eval(args):
    preds = _find(args.pred, args.pred_suffix)
    gts = _find(args.gt, args.gt_suffix)
    inits = _find(args.gt, args.init_suffix) if args.init_suffix else {}
    ids = sorted(set(preds) & set(gts))
    for i in sorted(set(preds) - set(gts)):
        log.warning("%s: no ground truth, skipped", i)
    if not ids:
        raise UsageError(f"no *{args.pred_suffix} in {args.pred} matches *{args.gt_suffix} in {args.gt}")
    reports, init_reports, rows, failures = [], [], [], 0
    for i in ids:
        try:
            gt = read_label_map(gts[i])
            pred = read_label_map(preds[i])
            C = max(gt.num_classes, pred.num_classes, args.num_classes or 0)
            rep = iou(pred, gt, C, args.mean_over)
        except (LabelmendError, ValueError, OSError) as exc:
            log.error("%s: %s", i, exc)
            failures += 1
            continue
        row = {"image_id": i, "pixel_acc": rep.pixel_accuracy, "miou": rep.mean_iou}
        if i in inits:
            init = read_label_map(inits[i], C)
            irep = iou(LabelMap(np.where(init.labeled, init.labels, 0), C), gt, C, args.mean_over)
            init_reports.append(irep)
            row.update(init_pixel_acc=irep.pixel_accuracy, init_miou=irep.mean_iou)
        for c, v in enumerate(rep.iou):
            row[f"iou_{c}"] = v if rep.included[c] else None
        reports.append(rep)
        rows.append(row)
    if not reports:
        return 1
    total = aggregate(reports, args.mean_over)
    agg = {"image_id": "ALL", "pixel_acc": total.pixel_accuracy, "miou": total.mean_iou}
    for c, v in enumerate(total.iou):
        agg[f"iou_{c}"] = v if total.included[c] else None
    series = {"corrected": total.iou}
    if init_reports and len(init_reports) == len(reports):
        itot = aggregate(init_reports, args.mean_over)
        agg.update(init_pixel_acc=itot.pixel_accuracy, init_miou=itot.mean_iou)
        series = {"initial": itot.iou, "corrected": total.iou}
    rows.append(agg)
    n = len(total.iou)
    cols = ["image_id", "pixel_acc", "miou"]
    if init_reports:
        cols += ["init_pixel_acc", "init_miou"]
    write_tsv(args.report, cols + [f"iou_{c}" for c in range(n)], rows)
    from .plotting import class_iou_bars

    class_iou_bars(series, _png_path(args.report))
    log.info("%d images: mIoU %.4f, pixel accuracy %.4f", len(reports), total.mean_iou,
             total.pixel_accuracy)
    return 1 if failures else 0


def cmd_synth(args):
    data = {}
    if args.spec:
        try:
            with open(args.spec, "rb") as fh:
                data = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read {args.spec}: {exc}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{args.spec}: {exc}") from None
    try:
        specs = specs_from_toml(data)
        suite = suite_from_dict(data.get("suite", {}))
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"bad scene spec: {exc}") from None
    os.makedirs(args.outdir, exist_ok=True)
    rows, theta_rows = [], []
    for image_id, spec in specs:
        scene = generate(spec)
        p = write_scene(scene, image_id, args.outdir)
        relevant = tuple(sorted(scene.scores.relevant))
        rows.append(ManifestRow(image_id, p["image"], p["probs"], HANDCRAFTED, relevant,
                                gt=p["gt"], scores=p["scores"]))
        theta_rows.append(ThetaRow(image_id, p["probs"], p["init"], p["gt"]))
    write_manifest(os.path.join(args.outdir, "manifest.tsv"), rows)
    write_manifest(os.path.join(args.outdir, "theta_manifest.tsv"), theta_rows,
                   ("image_id", "probs", "init", "gt"))

    # theta calibrated on held-out scenes of the same suite (indices past count)
    calib = [generate(random_scene(suite, suite.count + k)) for k in range(CALIBRATION_SCENES)]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rep = select_theta([pixel_loss(s.probs, s.init) for s in calib], [s.init for s in calib],
                           [s.gt for s in calib], DEFAULT_TARGET_PRECISION)
    cfg = PipelineConfig(theta=rep.theta)
    with open(os.path.join(args.outdir, "pipeline.toml"), "w") as fh:
        fh.write(dump_config(cfg))
    log.info("wrote %d scenes to %s (calibrated theta %.4g)", len(rows), args.outdir, rep.theta)
    return 0


# ---------------------------------------------------------------- parser


def _add_config_flags(p):
    g = p.add_argument_group("pipeline settings (override --config)")
    for name, f in FIELDS.items():
        flag = "--" + name.replace("_", "-")
        if f.type in (bool, "bool"):
            g.add_argument(flag, dest=name, action=argparse.BooleanOptionalAction, default=None)
        elif name == "edge_symmetrize":
            g.add_argument(flag, dest=name, choices=("or", "and"), default=None)
        elif name == "mean_over":
            g.add_argument(flag, dest=name, choices=("present", "all"), default=None)
        else:
            kind = int if f.type in (int, "int") else float
            g.add_argument(flag, dest=name, type=kind, default=None,
                           help=f"default {f.default}")


def build_parser():
    p = argparse.ArgumentParser(prog="labelmend",
                                description="Detect and correct noisy CAM pseudo-labels.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    p.add_argument("-q", "--quiet", action="store_true")
    sub = p.add_subparsers(dest="command", metavar="command")
    sub.required = True

    s = sub.add_parser("label", help="CAM scores and initial labels")
    s.add_argument("--features", required=True, help="[K,H,W] feature maps (.lmt)")
    s.add_argument("--weights", required=True, help="[C-1,K] class weights (.lmt)")
    s.add_argument("--relevant", required=True, help="comma-separated foreground classes")
    s.add_argument("--bg-thresh", type=float, default=0.05)
    s.add_argument("--fg-thresh", type=float, default=None)
    s.add_argument("--out", required=True)
    s.add_argument("--scores-out", default=None, help="also write normalized score planes")
    s.set_defaults(func=cmd_label)

    s = sub.add_parser("detect", help="small-loss clean label mask")
    s.add_argument("--probs", required=True)
    s.add_argument("--init", required=True)
    s.add_argument("--theta", type=float, default=1e-3)
    s.add_argument("--out", required=True, help="clean labels; noisy pixels are 255")
    s.set_defaults(func=cmd_detect)

    s = sub.add_parser("select-theta", help="choose theta on images with ground truth")
    s.add_argument("--manifest", required=True)
    s.add_argument("--target-precision", type=float, default=DEFAULT_TARGET_PRECISION)
    s.add_argument("--theta-min", type=float, default=None)
    s.add_argument("--theta-max", type=float, default=None)
    s.add_argument("--theta-steps", type=int, default=None)
    s.add_argument("--report", required=True)
    s.set_defaults(func=cmd_select_theta)

    s = sub.add_parser("superpixels", help="SLIC over-segmentation")
    s.add_argument("--image", required=True)
    s.add_argument("--count", type=int, default=1000)
    s.add_argument("--compactness", type=float, default=10.0)
    s.add_argument("--iters", type=int, default=10)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_superpixels)

    s = sub.add_parser("graph", help="superpixel graph with pruned edges")
    s.add_argument("--image", required=True)
    s.add_argument("--superpixels", required=True)
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--features")
    src.add_argument("--handcrafted", action="store_true")
    s.add_argument("--edge-symmetrize", choices=("or", "and"), default="or")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_graph)

    s = sub.add_parser("correct", help="full detection + correction pipeline")
    s.add_argument("--manifest", required=True)
    s.add_argument("--config", default=None, help="flat TOML file")
    s.add_argument("--outdir", required=True)
    _add_config_flags(s)
    s.set_defaults(func=cmd_correct)

    s = sub.add_parser("eval", help="IoU of corrected maps against ground truth")
    s.add_argument("--pred", required=True, help="directory of <id>_corrected.pgm")
    s.add_argument("--gt", required=True, help="directory of <id>_gt.pgm")
    s.add_argument("--report", required=True)
    s.add_argument("--pred-suffix", default="_corrected.pgm")
    s.add_argument("--gt-suffix", default="_gt.pgm")
    s.add_argument("--init-suffix", default="_init.pgm",
                   help="initial labels next to the ground truth, if present ('' to skip)")
    s.add_argument("--num-classes", type=int, default=None)
    s.add_argument("--mean-over", choices=("present", "all"), default="present")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("synth", help="write a synthetic dataset")
    s.add_argument("--spec", default=None, help="TOML with [suite] and/or [[scene]] tables")
    s.add_argument("--outdir", required=True)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    level = logging.WARNING if args.quiet else (logging.DEBUG if args.verbose else logging.INFO)
    logging.getLogger("matplotlib").setLevel(logging.WARNING)
    logging.basicConfig(level=level, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s", force=True)
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        log.error("%s", exc)
        return 2
    except (LabelmendError, OSError, ValueError) as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
