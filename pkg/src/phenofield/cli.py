"""Command-line interface for the phenotyping pipeline.

Subcommands mirror the pipeline stages; each stage reads its inputs from the
output directory of the previous one. Exit codes: 0 success, 2 partial
(unreachable targets), 1 error.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from . import geometry, local_planner, pipeline, terrain
from .pipeline import FarmScene, FarmSpec, PipelineConfig
from .radiance import load_poses, render_image, save_metrics_csv, train
from .radiance.field import VoxelRadianceField

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_PARTIAL = 2


def _load_config(args) -> PipelineConfig:
    cfg = PipelineConfig()
    if args.config:
        with open(args.config) as f:
            cfg = PipelineConfig.from_dict(json.load(f))
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.train.seed = args.seed
    if args.workers is not None:
        cfg.workers = args.workers
    return cfg


def _load_scene(out_dir: str) -> FarmScene:
    cloud = terrain.load_cloud(os.path.join(out_dir, "structure", "terrain.ply"))
    return FarmScene.load(os.path.join(out_dir, "scene.json"), cloud)


def _targets(args, scene: FarmScene) -> set[int]:
    if not args.targets or args.targets == "all":
        return {i.id for i in scene.instances}
    return {int(t) for t in args.targets.split(",")}


def cmd_genfarm(args) -> int:
    cfg = _load_config(args)
    spec = FarmSpec()
    if args.config:
        with open(args.config) as f:
            raw = json.load(f)
        if "farm" in raw:
            spec = FarmSpec.from_dict(raw["farm"])
    scene = pipeline.genfarm(spec, cfg.seed)
    os.makedirs(os.path.join(args.out, "structure"), exist_ok=True)
    scene.save(os.path.join(args.out, "scene.json"))
    terrain.save_cloud_ply(scene.cloud, os.path.join(args.out, "structure", "terrain.ply"))
    with open(os.path.join(args.out, "detections.json"), "w") as f:
        json.dump([
            {"id": i.id, "center": i.center.tolist(),
             "half_extents": i.half_extents.tolist(), "yaw": i.yaw,
             "height": i.height}
            for i in scene.instances
        ], f, indent=1)
    print(f"farm: {len(scene.instances)} instances, terrain {spec.terrain_kind}")
    return EXIT_OK


def cmd_plan(args) -> int:
    cfg = _load_config(args)
    scene = _load_scene(args.out)
    grid, obstacles, graph = pipeline.build_world(scene, cfg)
    grid.save(os.path.join(args.out, "structure", "grid.json"),
              os.path.join(args.out, "structure", "grid.csv"))
    obstacles.save(os.path.join(args.out, "obstacles.json"))
    graph.save(os.path.join(args.out, "map.json"))
    path = pipeline.plan_coverage(scene, _targets(args, scene), cfg, grid, graph)
    path.save(os.path.join(args.out, "plan.json"), graph)
    path.save_audit(os.path.join(args.out, "plan_audit.jsonl"))
    print(f"plan: {len(path.node_ids)} nodes, {path.total_length:.1f} m, "
          f"covered {sorted(path.covered_instances)}, "
          f"unreachable {sorted(path.unreachable)}")
    return EXIT_PARTIAL if path.unreachable else EXIT_OK


def _replay_segments(args, cfg):
    scene = _load_scene(args.out)
    grid, obstacles, graph = pipeline.build_world(scene, cfg)
    path = pipeline.plan_coverage(scene, _targets(args, scene), cfg, grid, graph)
    segments = pipeline.optimize_segments(path, graph, grid, obstacles, cfg)
    return scene, graph, path, segments


def cmd_optimize(args) -> int:
    cfg = _load_config(args)
    scene, graph, path, segments = _replay_segments(args, cfg)
    seg_dir = os.path.join(args.out, "trajectories")
    os.makedirs(seg_dir, exist_ok=True)
    for seg in segments:
        local_planner.export_trajectory(
            os.path.join(seg_dir, f"seg_{seg['index']:03d}.json"),
            seg["trajectory"], seg["curve"], seg["times"], seg["history"],
            cfg.spline, cfg.seed)
    print(f"optimize: {len(segments)} segments written to {seg_dir}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    scene, graph, path, segments = _replay_segments(args, cfg)
    from .radiance import save_poses, write_ppm

    for iid in sorted(path.covered_instances):
        inst = graph.instances[iid]
        images = pipeline.instance_views(scene, inst, segments, graph, cfg)
        inst_dir = os.path.join(args.out, "instances", str(iid))
        os.makedirs(os.path.join(inst_dir, "views"), exist_ok=True)
        names = []
        for k, img in enumerate(images):
            name = f"view_{k:03d}.ppm"
            write_ppm(os.path.join(inst_dir, "views", name), img.pixels)
            names.append(name)
        save_poses(os.path.join(inst_dir, "poses.json"), images, names)
        print(f"simulate: instance {iid}: {len(images)} views")
    return EXIT_OK


def cmd_train_field(args) -> int:
    cfg = _load_config(args)
    scene = _load_scene(args.out)
    inst_root = os.path.join(args.out, "instances")
    for name in sorted(os.listdir(inst_root), key=lambda s: int(s)):
        inst_dir = os.path.join(inst_root, name)
        poses = os.path.join(inst_dir, "poses.json")
        if not os.path.exists(poses):
            continue
        images = load_poses(poses, image_dir=os.path.join(inst_dir, "views"))
        iid = int(name)
        inst = next(i for i in scene.instances if i.id == iid)
        plant = scene.plants[iid]
        r = float(max(inst.half_extents)) * 2.0
        lo = plant.base + np.array([-r, -r, -0.05])
        hi = plant.base + np.array([r, r, 1.2 * inst.height])
        fld = VoxelRadianceField.create(lo, hi, resolution=(cfg.field_resolution,) * 3)
        fld, metrics = train(fld, images, cfg.train)
        fld.save(os.path.join(inst_dir, "field.bin"))
        save_metrics_csv(os.path.join(inst_dir, "metrics.csv"), metrics)
        print(f"train-field: instance {iid}: final PSNR {metrics[-1]['PSNR']:.2f} dB")
    return EXIT_OK


def cmd_extract_mesh(args) -> int:
    cfg = _load_config(args)
    scene = _load_scene(args.out)
    inst_root = os.path.join(args.out, "instances")
    for name in sorted(os.listdir(inst_root), key=lambda s: int(s)):
        inst_dir = os.path.join(inst_root, name)
        ckpt = os.path.join(inst_dir, "field.bin")
        if not os.path.exists(ckpt):
            continue
        fld = VoxelRadianceField.load(ckpt)
        iid = int(name)
        inst = next(i for i in scene.instances if i.id == iid)
        plant = scene.plants[iid]
        r = float(max(inst.half_extents)) * 2.0
        mlo = plant.base + np.array([-1.2 * r, -1.2 * r, -0.02])
        mhi = plant.base + np.array([1.2 * r, 1.2 * r, 1.2 * inst.height])
        vol = geometry.sample_volume(fld, mlo, mhi, cfg.field_resolution)
        thr = args.threshold if args.threshold else geometry.default_threshold(vol)
        mesh = geometry.colour_vertices(geometry.marching_cubes(vol, thr), fld)
        mesh.save_obj(os.path.join(inst_dir, "mesh.obj"))
        print(f"extract-mesh: instance {iid}: {len(mesh.vertices)} vertices "
              f"at threshold {thr:.3f}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _load_config(args)
    rc = cmd_genfarm(args)
    if rc != EXIT_OK:
        return rc
    scene = _load_scene(args.out)
    report = pipeline.run_pipeline(scene, _targets(args, scene), cfg, args.out)
    print(f"run: coverage {report.coverage:.0%}, plan {report.plan_length:.1f} m")
    for e in report.instances:
        if e.get("status") == "ok":
            print(f"  instance {e['instance']}: PSNR {e['PSNR_dB']:.2f} dB")
        else:
            print(f"  instance {e['instance']}: {e.get('status')}")
    return EXIT_PARTIAL if report.unreachable else EXIT_OK


def cmd_report(args) -> int:
    csv_path = pipeline.write_report(args.out)
    with open(csv_path) as f:
        sys.stdout.write(f.read())
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="phenofield",
        description="Coverage planning and radiance-field plant modelling")
    parser.add_argument("--config", help="pipeline config JSON")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--out", default="out", help="run directory")
    parser.add_argument("--workers", type=int, default=None)
    sub = parser.add_subparsers(dest="command", required=True)

    for name, fn in [
        ("genfarm", cmd_genfarm), ("plan", cmd_plan), ("optimize", cmd_optimize),
        ("simulate", cmd_simulate), ("train-field", cmd_train_field),
        ("extract-mesh", cmd_extract_mesh), ("run", cmd_run), ("report", cmd_report),
    ]:
        p = sub.add_parser(name)
        p.set_defaults(func=fn)
        if name in ("plan", "optimize", "simulate", "run"):
            p.add_argument("--targets", default="all",
                           help="comma-separated instance ids or 'all'")
        if name == "extract-mesh":
            p.add_argument("--threshold", type=float, default=None,
                           help="density iso threshold (default: half the "
                                "99th percentile)")

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as e:  # noqa: BLE001 - CLI boundary
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
