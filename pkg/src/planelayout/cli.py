"""Command-line interface.

Subcommands: synth, fit, cluster, stitch, corners, pipeline, eval,
train-toy.  Exit codes: 0 ok, 2 input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import dataset as ds
from .cluster import cluster_param_map
from .config import load_config
from .errors import InputError, NumericalError, PlaneLayoutError
from .fit import fit_annotated
from .geometry import SurfaceParams
from .layout import (
    extract_corners,
    full_pipeline,
    layout_point_cloud,
    stitch_min_depth,
)
from .losses import SceneTruth, optimize_param_map
from .metrics import aggregate_reports, evaluate_layout
from .synth import generate_cuboid, generate_noncuboid, render_scene


def _parse_resolution(text):
    w, _, h = text.partition("x")
    return int(w), int(h)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="planelayout",
        description="Room-layout engine on planar depth parameterizations")
    p.add_argument("--config", help="INI configuration file")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate synthetic dataset records")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--count", type=int, default=1)
    s.add_argument("--layout", choices=("cuboid", "noncuboid"),
                   default="cuboid")
    s.add_argument("--n-walls", type=int, default=6)
    s.add_argument("--noise", type=float, default=0.0)
    s.add_argument("--clutter", type=float, default=0.0)
    s.add_argument("--resolution", type=_parse_resolution, default=None,
                   metavar="WxH")
    s.add_argument("--out", required=True)

    s = sub.add_parser("fit", help="fit surface parameters in annotated regions")
    s.add_argument("--record", required=True, help="dataset record directory")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="output JSON")

    s = sub.add_parser("cluster", help="cluster a parameter map into instances")
    s.add_argument("--params", required=True, help="(H, W, 4) .npy file")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="output directory")

    s = sub.add_parser("stitch", help="min-depth stitch instance parameters")
    s.add_argument("--instances", required=True,
                   help="JSON list of [p, q, r, s]")
    s.add_argument("--resolution", type=_parse_resolution, required=True,
                   metavar="WxH")
    s.add_argument("--out", required=True, help="output directory")

    s = sub.add_parser("corners", help="extract corners from instances + seg")
    s.add_argument("--instances", required=True)
    s.add_argument("--seg", required=True, help="segmentation PNG")
    s.add_argument("--out", required=True, help="output JSON")

    s = sub.add_parser("pipeline", help="parameter map to full layout")
    s.add_argument("--record", help="record directory (uses its params + cam)")
    s.add_argument("--params", help="(H, W, 4) .npy file")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="output directory")

    s = sub.add_parser("eval", help="score a layout against ground truth")
    s.add_argument("--pred", required=True, nargs="+",
                   help="layout directories from the pipeline command")
    s.add_argument("--gt", required=True, nargs="+",
                   help="ground-truth record directories")
    s.add_argument("--out", help="write the report here")
    s.add_argument("--format", choices=("json", "csv"), default="json",
                   help="report format for --out")

    s = sub.add_parser("train-toy", help="desk-scale direct optimization")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--mode", choices=("2D", "3D"), default="3D")
    s.add_argument("--steps", type=int, default=500)
    s.add_argument("--lr", type=float, default=0.02)
    s.add_argument("--sigma", type=float, default=0.05)
    s.add_argument("--resolution", type=_parse_resolution, default=(16, 16),
                   metavar="WxH")
    s.add_argument("--out", required=True, help="output directory")
    return p


def cmd_synth(args, cfg):
    if args.resolution:
        from dataclasses import replace
        cfg = replace(cfg, width=args.resolution[0], height=args.resolution[1])
    cam = cfg.camera()
    os.makedirs(args.out, exist_ok=True)
    for i in range(args.count):
        seed = args.seed + i
        if args.layout == "cuboid":
            spec = generate_cuboid(seed, cam, noise_sigma=args.noise,
                                   clutter=args.clutter)
        else:
            spec = generate_noncuboid(seed, cam, args.n_walls,
                                      noise_sigma=args.noise,
                                      clutter=args.clutter)
        record = ds.record_from_scene(spec, render_scene(spec))
        ds.write_record(record, os.path.join(args.out, f"scene_{seed:05d}"))
        print(f"wrote {args.out}/scene_{seed:05d}")
    return 0


def cmd_fit(args, cfg):
    record = ds.read_record(args.record)
    results = fit_annotated(record.original_depth, record.annotations,
                            iters=cfg.ransac_iters, inlier_tol=cfg.ransac_tol,
                            seed=args.seed,
                            consensus_floor=cfg.consensus_floor)
    payload = [{
        "region_id": ann.region_id,
        "params": list(res.params.as_array()),
        "inlier_count": res.inlier_count,
        "inlier_ratio": res.inlier_ratio,
        "rms_residual": res.rms_residual,
    } for ann, res in zip(sorted(record.annotations,
                                 key=lambda a: a.region_id), results)]
    _write_json(args.out, payload)
    print(f"fitted {len(payload)} regions -> {args.out}")
    return 0


def cmd_cluster(args, cfg):
    pm = ds.npy_to_params(np.load(args.params))
    cs = cluster_param_map(pm, cfg.bandwidth, cfg.min_fraction,
                           seed=args.seed, max_seeds=cfg.mean_shift_seeds)
    os.makedirs(args.out, exist_ok=True)
    payload = [{"label": i.label, "params": list(i.params.as_array()),
                "pixel_count": i.pixel_count} for i in cs.instances]
    _write_json(os.path.join(args.out, "clusters.json"), payload)
    ds.save_png(os.path.join(args.out, "clustered_seg.png"),
                ds.seg_to_png(cs.clustered_seg))
    print(f"{len(payload)} instances -> {args.out}")
    return 0


def _load_instances(path):
    with open(path) as f:
        data = json.load(f)
    out = []
    for row in data:
        vals = row["params"] if isinstance(row, dict) else row
        out.append(SurfaceParams(*vals))
    return out


def cmd_stitch(args, cfg):
    instances = _load_instances(args.instances)
    width, height = args.resolution
    seg, depth = stitch_min_depth(instances, width, height)
    os.makedirs(args.out, exist_ok=True)
    ds.save_png(os.path.join(args.out, "seg.png"), ds.seg_to_png(seg))
    ds.save_npy(os.path.join(args.out, "depth.npy"), ds.depth_to_npy(depth))
    ds.save_png(os.path.join(args.out, "depth.png"), ds.depth_to_png16(depth))
    print(f"stitched {len(instances)} instances -> {args.out}")
    return 0


def cmd_corners(args, cfg):
    instances = _load_instances(args.instances)
    seg = ds.png_to_seg(args.seg)
    corners, issues = extract_corners(instances, seg)
    payload = {
        "corners": [{"u": c.u, "v": c.v, "z": c.z,
                     "surfaces": list(c.surfaces), "edge": c.edge}
                    for c in corners],
        "skipped": [str(i) for i in issues],
    }
    _write_json(args.out, payload)
    print(f"{len(corners)} corners ({len(issues)} skipped) -> {args.out}")
    return 0


def cmd_pipeline(args, cfg):
    if bool(args.record) == bool(args.params):
        raise InputError("pass exactly one of --record / --params")
    cam = None
    if args.record:
        record = ds.read_record(args.record)
        pm = record.params
        cam = record.cam
    else:
        pm = ds.npy_to_params(np.load(args.params))
    result = full_pipeline(pm, cam=cam, bandwidth=cfg.bandwidth,
                           min_fraction=cfg.min_fraction, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    ds.save_png(os.path.join(args.out, "seg.png"), ds.seg_to_png(result.seg))
    ds.save_npy(os.path.join(args.out, "depth.npy"),
                ds.depth_to_npy(result.depth))
    ds.save_png(os.path.join(args.out, "depth.png"),
                ds.depth_to_png16(result.depth))
    payload = {
        "instances": [list(sp.as_array()) for sp in result.instances],
        "corners": [{"u": c.u, "v": c.v, "z": c.z,
                     "surfaces": list(c.surfaces), "edge": c.edge}
                    for c in result.corners_2d],
        "skipped_corners": [str(i) for i in result.corner_issues],
    }
    _write_json(os.path.join(args.out, "layout.json"), payload)
    if cam is not None:
        points, labels = layout_point_cloud(result, cam)
        ds.write_ply(os.path.join(args.out, "cloud.ply"), points, labels)
    print(f"layout with {len(result.instances)} instances, "
          f"{len(result.corners_2d)} corners -> {args.out}")
    return 0


def _read_layout_dir(path):
    seg = ds.png_to_seg(os.path.join(path, "seg.png"))
    depth = ds.npy_to_depth(np.load(os.path.join(path, "depth.npy")))
    with open(os.path.join(path, "layout.json")) as f:
        payload = json.load(f)
    from .layout import Corner

    corners = tuple(Corner(c["u"], c["v"], c["z"], tuple(c["surfaces"]),
                           c["edge"]) for c in payload["corners"])
    return seg, depth, corners


def cmd_eval(args, cfg):
    if len(args.pred) != len(args.gt):
        raise InputError("--pred and --gt need the same number of entries")
    reports = []
    rows = []
    for pred_dir, gt_dir in zip(args.pred, args.gt):
        record = ds.read_record(gt_dir)
        if os.path.exists(os.path.join(pred_dir, "layout.json")):
            seg, depth, corners = _read_layout_dir(pred_dir)
        else:
            pred_rec = ds.read_record(pred_dir)
            seg, depth, corners = pred_rec.seg, pred_rec.layout_depth, \
                pred_rec.corners
        report = evaluate_layout(seg, record.seg, corners, record.corners,
                                 depth, record.layout_depth, record.cam)
        reports.append(report)
        rows.append({"pred": pred_dir, "gt": gt_dir, **report.as_dict()})
    summary = aggregate_reports(reports).as_dict()
    print(json.dumps(summary, indent=1, sort_keys=True))
    if args.out:
        if args.format == "json":
            _write_json(args.out, {"mean": summary, "per_image": rows})
        else:
            with open(args.out, "w", newline="") as f:
                writer = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
                writer.writeheader()
                writer.writerows(rows)
    return 0


def cmd_train_toy(args, cfg):
    from dataclasses import replace

    cfg = replace(cfg, width=args.resolution[0], height=args.resolution[1])
    cam = cfg.camera()
    spec = generate_cuboid(args.seed, cam)
    rendered = render_scene(spec)
    truth = SceneTruth(seg=rendered.seg, params=rendered.params,
                       depth=rendered.depth)
    rng = np.random.default_rng(args.seed + 1)
    from .geometry import ParamMap

    init = ParamMap(rendered.params.values
                    + rng.normal(0, args.sigma, rendered.params.values.shape),
                    rendered.params.mask)
    final, trace = optimize_param_map(init, truth, args.mode, cfg.loss,
                                      steps=args.steps, lr=args.lr)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "trace.csv"), "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["step", "loss"])
        writer.writerows(enumerate(trace))
    ds.save_npy(os.path.join(args.out, "final_params.npy"),
                ds.params_to_npy(final))
    ds.save_npy(os.path.join(args.out, "init_params.npy"),
                ds.params_to_npy(init))
    print(f"{args.mode} loss {trace[0]:.5f} -> {trace[-1]:.5f} "
          f"in {len(trace) - 1} accepted steps -> {args.out}")
    return 0


def _write_json(path, payload):
    ds._atomic_write(path, lambda f: f.write(
        json.dumps(payload, indent=1, sort_keys=True).encode()))


COMMANDS = {
    "synth": cmd_synth,
    "fit": cmd_fit,
    "cluster": cmd_cluster,
    "stitch": cmd_stitch,
    "corners": cmd_corners,
    "pipeline": cmd_pipeline,
    "eval": cmd_eval,
    "train-toy": cmd_train_toy,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        return COMMANDS[args.command](args, cfg)
    except (InputError, FileNotFoundError, ValueError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except PlaneLayoutError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
