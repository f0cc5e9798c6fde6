"""End-to-end orchestration: synthetic farms, planning, capture, modelling.

Generates a reproducible synthetic farm (terrain cloud + plant detections),
plans a coverage trajectory over it, simulates posed image capture along the
trajectory, trains a voxel radiance field per sampled plant, extracts a
coloured mesh, and persists everything as a two-level hierarchy map:
structure level (terrain, semantic map, traversability grid) and instance
level (views, field checkpoint, mesh, metrics).
"""
from __future__ import annotations

import json
import math
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import farm_map, geometry, global_planner, local_planner, terrain
from .radiance import (AnalyticScene, Cylinder, Ellipsoid, Intrinsics,
                       PosedImage, TrainConfig, look_at_pose, psnr,
                       render_image, render_reference, save_metrics_csv,
                       save_poses, train, write_ppm)
from .radiance.field import VoxelRadianceField

__all__ = [
    "FarmSpec",
    "FarmScene",
    "PipelineConfig",
    "genfarm",
    "run_pipeline",
    "write_report",
]


class SceneError(RuntimeError):
    pass


@dataclass
class FarmSpec:
    """Synthetic farm layout and terrain parameters."""

    rows: int = 2
    plants_per_row: int = 3
    row_spacing: float = 4.0
    plant_spacing: float = 2.0
    jitter: float = 0.1             # center jitter, m
    terrain_kind: str = "flat"      # flat | ramp | curb | noise
    terrain_param: float = 0.2      # ramp slope / curb height / noise amplitude
    plant_half_extent: float = 0.3
    plant_height: float = 1.0
    extent_margin: float = 3.0
    terrain_point_spacing: float = 0.1

    @classmethod
    def from_dict(cls, d: dict) -> "FarmSpec":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


@dataclass
class PlantModel:
    """Analytic plant: trunk cylinder plus canopy ellipsoid."""

    instance_id: int
    base: np.ndarray        # (3,) trunk base in world
    height: float
    canopy_radius: float
    canopy_color: np.ndarray

    def scene(self) -> AnalyticScene:
        trunk_h = 0.4 * self.height
        return AnalyticScene(primitives=[
            Cylinder(center=self.base + [0, 0, trunk_h / 2], radius=0.06,
                     half_height=trunk_h / 2, density=25.0,
                     color=np.array([0.45, 0.30, 0.15])),
            Ellipsoid(center=self.base + [0, 0, 0.65 * self.height],
                      radii=np.array([self.canopy_radius, self.canopy_radius,
                                      0.35 * self.height]),
                      density=25.0, color=self.canopy_color),
        ])

    def to_json(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "base": self.base.tolist(),
            "height": self.height,
            "canopy_radius": self.canopy_radius,
            "canopy_color": self.canopy_color.tolist(),
        }

    @classmethod
    def from_json(cls, d: dict) -> "PlantModel":
        return cls(instance_id=d["instance_id"], base=np.asarray(d["base"]),
                   height=d["height"], canopy_radius=d["canopy_radius"],
                   canopy_color=np.asarray(d["canopy_color"]))


@dataclass
class FarmScene:
    spec: FarmSpec
    seed: int
    instances: list[farm_map.Instance]
    plants: dict[int, PlantModel]
    cloud: terrain.TerrainCloud

    def ground_height(self, x: float, y: float) -> float:
        return _terrain_height(self.spec, x, y, self.seed)

    def save(self, path) -> None:
        payload = {
            "spec": asdict(self.spec),
            "seed": self.seed,
            "instances": [
                {"id": i.id, "center": i.center.tolist(),
                 "half_extents": i.half_extents.tolist(),
                 "yaw": i.yaw, "height": i.height}
                for i in self.instances
            ],
            "plants": [p.to_json() for p in self.plants.values()],
        }
        with open(path, "w") as f:
            json.dump(payload, f, indent=1)

    @classmethod
    def load(cls, path, cloud: terrain.TerrainCloud) -> "FarmScene":
        with open(path) as f:
            payload = json.load(f)
        instances = [
            farm_map.Instance(id=i["id"], center=np.asarray(i["center"]),
                              half_extents=np.asarray(i["half_extents"]),
                              yaw=i["yaw"], height=i["height"])
            for i in payload["instances"]
        ]
        plants = {p["instance_id"]: PlantModel.from_json(p) for p in payload["plants"]}
        return cls(spec=FarmSpec.from_dict(payload["spec"]), seed=payload["seed"],
                   instances=instances, plants=plants, cloud=cloud)


def _terrain_height(spec: FarmSpec, x, y, seed: int):
    if spec.terrain_kind == "flat":
        return np.zeros_like(np.asarray(x, dtype=float))
    if spec.terrain_kind == "ramp":
        return spec.terrain_param * np.asarray(x, dtype=float)
    if spec.terrain_kind == "curb":
        mid = 0.5 * (spec.plants_per_row - 1) * spec.plant_spacing
        return np.where(np.asarray(x, dtype=float) > mid, spec.terrain_param, 0.0)
    if spec.terrain_kind == "noise":
        rng = np.random.default_rng(seed)
        phases = rng.uniform(0, 2 * math.pi, 4)
        freqs = rng.uniform(0.2, 0.6, 4)
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        z = np.zeros_like(x)
        for k in range(4):
            z = z + np.sin(freqs[k] * x + phases[k]) * np.cos(freqs[k] * y - phases[k])
        return spec.terrain_param * z / 4.0
    raise SceneError(f"unknown terrain kind {spec.terrain_kind!r}")


def genfarm(spec: FarmSpec, seed: int) -> FarmScene:
    """Deterministic synthetic farm: instances, plant models, terrain cloud.

    Raises when the requested spacing cannot fit plants without overlap.
    """
    rng = np.random.default_rng(seed)
    min_gap = 2 * spec.plant_half_extent + 0.4
    if spec.plant_spacing < min_gap or spec.row_spacing < min_gap:
        raise SceneError(
            f"spacing too small: need at least {min_gap} m between plant centers")
    instances = []
    plants = {}
    iid = 0
    for r in range(spec.rows):
        for c in range(spec.plants_per_row):
            jit = rng.uniform(-spec.jitter, spec.jitter, 2)
            center = np.array([c * spec.plant_spacing, r * spec.row_spacing]) + jit
            height = spec.plant_height * rng.uniform(0.85, 1.15)
            inst = farm_map.Instance(
                id=iid, center=center,
                half_extents=np.array([spec.plant_half_extent, spec.plant_half_extent]),
                yaw=0.0, height=height)
            instances.append(inst)
            u = rng.uniform(0, 1, 3)
            color = np.array([0.15 + 0.2 * u[0], 0.45 + 0.3 * u[1], 0.10 + 0.1 * u[2]])
            gz = float(_terrain_height(spec, center[0], center[1], seed))
            plants[iid] = PlantModel(
                instance_id=iid, base=np.array([center[0], center[1], gz]),
                height=height, canopy_radius=spec.plant_half_extent * 0.95,
                canopy_color=color)
            iid += 1
    for a in instances:
        for b in instances:
            if a.id < b.id and np.linalg.norm(a.center - b.center) < min_gap:
                raise SceneError(f"instances {a.id} and {b.id} overlap")

    # ground lattice
    xs = np.arange(-spec.extent_margin,
                   (spec.plants_per_row - 1) * spec.plant_spacing + spec.extent_margin,
                   spec.terrain_point_spacing)
    ys = np.arange(-spec.extent_margin,
                   (spec.rows - 1) * spec.row_spacing + spec.extent_margin,
                   spec.terrain_point_spacing)
    gx, gy = np.meshgrid(xs, ys)
    gz = _terrain_height(spec, gx, gy, seed)
    ground = np.stack([gx.ravel(), gy.ravel(), np.asarray(gz).ravel()], axis=1)

    # plant surface points so plants register as obstacles in the grid
    plant_pts = []
    for inst in instances:
        p = plants[inst.id]
        prng = np.random.default_rng((seed, inst.id))
        n = 250
        theta = prng.uniform(0, 2 * math.pi, n)
        z = prng.uniform(0.0, inst.height, n)
        rad = np.where(z < 0.3 * inst.height, 0.06, p.canopy_radius)
        plant_pts.append(np.stack([
            inst.center[0] + rad * np.cos(theta),
            inst.center[1] + rad * np.sin(theta),
            p.base[2] + z,
        ], axis=1))
    cloud = terrain.TerrainCloud(points=np.vstack([ground] + plant_pts))
    return FarmScene(spec=spec, seed=seed, instances=instances, plants=plants,
                     cloud=cloud)


# ---------------------------------------------------------------------------
# pipeline


@dataclass
class PipelineConfig:
    cell_size: float = 0.1
    obstacle_threshold: float = 0.8
    clearance: float = 0.6
    n_views_per_flank: int = 3
    image_size: int = 36
    view_mode: str = "robot"        # robot | handheld
    handheld_views: int = 30
    field_resolution: int = 40
    train: TrainConfig = field(default_factory=lambda: TrainConfig(
        epochs=12, samples_per_ray=40, batch_rays=4096))
    optimizer: local_planner.OptimizerConfig = field(
        default_factory=local_planner.OptimizerConfig)
    spline: local_planner.BSplineConfig = field(
        default_factory=local_planner.BSplineConfig)
    seed: int = 0
    workers: int = 1

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        cfg = cls()
        for k, v in d.items():
            if k == "train":
                cfg.train = TrainConfig(**v)
            elif k == "optimizer":
                cfg.optimizer = local_planner.OptimizerConfig(**v)
            elif k == "spline":
                cfg.spline = local_planner.BSplineConfig(**v)
            elif k in cls.__dataclass_fields__:
                setattr(cfg, k, v)
        return cfg


@dataclass
class RunReport:
    plan_length: float = 0.0
    covered: list[int] = field(default_factory=list)
    unreachable: list[int] = field(default_factory=list)
    segments: list[dict] = field(default_factory=list)
    instances: list[dict] = field(default_factory=list)
    seed: int = 0

    @property
    def coverage(self) -> float:
        total = len(self.covered) + len(self.unreachable)
        return 1.0 if total == 0 else len(self.covered) / total

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump({
                "plan_length_m": self.plan_length,
                "coverage": self.coverage,
                "covered": self.covered,
                "unreachable": self.unreachable,
                "segments": self.segments,
                "instances": self.instances,
                "seed": self.seed,
            }, f, indent=1)


def _ensure_dirs(out_dir: str) -> None:
    os.makedirs(os.path.join(out_dir, "structure"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "instances"), exist_ok=True)


def build_world(scene: FarmScene, cfg: PipelineConfig):
    """Grid, obstacle field and graph map for a farm scene."""
    grid = terrain.build_grid(scene.cloud, cell_size=cfg.cell_size)
    obstacles = terrain.extract_obstacles(grid, cfg.obstacle_threshold)
    groups = farm_map.detect_rows(scene.instances)
    graph = farm_map.build_graph(scene.instances, groups, terrain=grid,
                                 cfg=farm_map.GraphConfig(clearance=cfg.clearance))
    return grid, obstacles, graph


def plan_coverage(scene: FarmScene, target_ids: set[int], cfg: PipelineConfig,
                  grid, graph, start=(-2.0, -2.0)):
    targets = global_planner.TargetSet(instance_ids=set(target_ids))
    return global_planner.generate_global_path(targets, graph, start, terrain=grid)


def segment_kind(graph, nid_a: int, nid_b: int) -> str:
    a, b = graph.nodes[nid_a], graph.nodes[nid_b]
    if (a.instance_id is not None and a.instance_id == b.instance_id):
        return "sampling"
    return "transit"


def optimize_segments(path, graph, grid, obstacles, cfg: PipelineConfig):
    """Local trajectories for every consecutive node pair of the global path."""
    segments = []
    for k, (na, nb) in enumerate(zip(path.node_ids, path.node_ids[1:])):
        a, b = graph.nodes[na], graph.nodes[nb]
        kind = segment_kind(graph, na, nb)
        if kind == "sampling":
            inst = graph.instances[a.instance_id]
            traj = local_planner.initial_path_viewpoints(
                a, b, inst, obstacles=obstacles, n_views=cfg.n_views_per_flank,
                seed=cfg.seed + k)
            view_track = local_planner.ViewpointTrack(
                indices=np.round(np.linspace(
                    1, len(traj.control_points) - 2, len(traj.viewpoints))).astype(int),
                positions=traj.viewpoints)
        else:
            traj = local_planner.initial_path_transit(a, b, grid)
            view_track = None
        ctx = local_planner.ObjectiveContext(
            weights=cfg.optimizer, obstacles=obstacles, view_track=view_track)
        opt, history = local_planner.optimize(traj, cfg.optimizer, ctx)
        t, curve = local_planner.bspline_parameterize(opt, cfg.spline)
        times = local_planner.time_parameterize(curve, kind=kind)
        segments.append({
            "index": k, "from": na, "to": nb, "kind": kind,
            "trajectory": opt, "curve": curve, "times": times,
            "history": history,
        })
    return segments


def instance_views(scene: FarmScene, inst: farm_map.Instance, segments,
                   graph, cfg: PipelineConfig) -> list[PosedImage]:
    """Simulated posed captures of one plant.

    Robot acquisition uses the preset viewpoints of the plant's sampling
    segments; handheld acquisition orbits the plant at two radii.
    """
    plant = scene.plants[inst.id]
    gz = plant.base[2]
    target = plant.base + np.array([0, 0, 0.55 * inst.height])
    cam_h = gz + 0.6 * inst.height
    res = cfg.image_size
    intr = Intrinsics(fx=float(res), fy=float(res), cx=res / 2.0, cy=res / 2.0,
                      width=res, height=res)
    eyes = []
    if cfg.view_mode == "handheld":
        n = cfg.handheld_views
        radii = [1.3, 1.9]
        per = n // len(radii)
        for ri, rad in enumerate(radii):
            for k in range(per + (n % len(radii) if ri == len(radii) - 1 else 0)):
                ang = 2 * math.pi * k / (per if ri < len(radii) - 1 else n - per)
                eyes.append(np.array([inst.center[0] + rad * math.cos(ang),
                                      inst.center[1] + rad * math.sin(ang),
                                      cam_h + 0.15 * rad]))
    else:
        for seg in segments:
            if seg["kind"] != "sampling":
                continue
            a = graph.nodes[seg["from"]]
            if a.instance_id != inst.id:
                continue
            for v in seg["trajectory"].viewpoints:
                eyes.append(np.array([v[0], v[1], cam_h]))
    scene3d = plant.scene()
    near, far = 0.05, 6.0
    images = []
    for eye in eyes:
        rot, t = look_at_pose(eye, target)
        images.append(render_reference(scene3d, rot, t, intr, near, far))
    return images


def model_instance(scene: FarmScene, inst: farm_map.Instance,
                   images: list[PosedImage], cfg: PipelineConfig, out_dir: str):
    """Train a field on the captures, extract the mesh, persist artifacts."""
    inst_dir = os.path.join(out_dir, "instances", str(inst.id))
    os.makedirs(os.path.join(inst_dir, "views"), exist_ok=True)
    names = []
    for k, img in enumerate(images):
        name = f"view_{k:03d}.ppm"
        write_ppm(os.path.join(inst_dir, "views", name), img.pixels)
        names.append(name)
    save_poses(os.path.join(inst_dir, "poses.json"), images, names)

    plant = scene.plants[inst.id]
    r = float(max(inst.half_extents)) * 2.0
    lo = plant.base + np.array([-r, -r, -0.05])
    hi = plant.base + np.array([r, r, 1.2 * inst.height])
    fld = VoxelRadianceField.create(lo, hi, resolution=(cfg.field_resolution,) * 3)
    t0 = time.monotonic()
    fld, metrics = train(fld, images, cfg.train)
    train_time = time.monotonic() - t0
    fld.save(os.path.join(inst_dir, "field.bin"))
    save_metrics_csv(os.path.join(inst_dir, "metrics.csv"), metrics)

    # evaluation PSNR: re-render the training poses deterministically
    vals = []
    for img in images:
        pred = render_image(fld, img.rotation, img.translation, img.intrinsics,
                            cfg.train.near, cfg.train.far, cfg.train.samples_per_ray)
        vals.append(psnr(pred, img.pixels))
    eval_psnr = float(np.mean([v for v in vals if math.isfinite(v)]))

    # mesh from the detection box inflated by 20%
    mlo = plant.base + np.array([-1.2 * r, -1.2 * r, -0.02])
    mhi = plant.base + np.array([1.2 * r, 1.2 * r, 1.2 * inst.height])
    vol = geometry.sample_volume(fld, mlo, mhi, cfg.field_resolution)
    thr = geometry.default_threshold(vol)
    mesh = geometry.marching_cubes(vol, thr) if thr > 0 else geometry.TriMesh(
        vertices=np.zeros((0, 3)), triangles=np.zeros((0, 3), dtype=int))
    mesh = geometry.colour_vertices(mesh, fld)
    mesh.save_obj(os.path.join(inst_dir, "mesh.obj"))
    return {
        "instance": inst.id,
        "n_views": len(images),
        "view_mode": cfg.view_mode,
        "occ_weight": cfg.train.occ_weight,
        "PSNR_dB": eval_psnr,
        "train_time_s": train_time,
        "mesh_vertices": len(mesh.vertices),
    }


def run_pipeline(scene: FarmScene, target_ids: set[int], cfg: PipelineConfig,
                 out_dir: str) -> RunReport:
    """Full pipeline: map, plan, optimize, capture, train, extract, persist."""
    _ensure_dirs(out_dir)
    terrain.save_cloud_ply(scene.cloud, os.path.join(out_dir, "structure", "terrain.ply"))
    grid, obstacles, graph = build_world(scene, cfg)
    grid.save(os.path.join(out_dir, "structure", "grid.json"),
              os.path.join(out_dir, "structure", "grid.csv"))
    with open(os.path.join(out_dir, "structure", "semantic.json"), "w") as f:
        json.dump({
            "instances": [
                {"id": i.id, "footprint": i.corners().tolist(), "height": i.height}
                for i in scene.instances
            ],
        }, f, indent=1)
    graph.save(os.path.join(out_dir, "map.json"))

    path = plan_coverage(scene, target_ids, cfg, grid, graph)
    path.save(os.path.join(out_dir, "plan.json"), graph)
    path.save_audit(os.path.join(out_dir, "plan_audit.jsonl"))

    segments = optimize_segments(path, graph, grid, obstacles, cfg)
    seg_dir = os.path.join(out_dir, "trajectories")
    os.makedirs(seg_dir, exist_ok=True)
    seg_stats = []
    for seg in segments:
        local_planner.export_trajectory(
            os.path.join(seg_dir, f"seg_{seg['index']:03d}.json"),
            seg["trajectory"], seg["curve"], seg["times"], seg["history"],
            cfg.spline, cfg.seed)
        seg_stats.append({
            "index": seg["index"], "kind": seg["kind"],
            "initial_objective": seg["history"][0],
            "final_objective": seg["history"][-1],
            "duration_s": float(seg["times"][-1]),
        })

    report = RunReport(plan_length=path.total_length,
                       covered=sorted(path.covered_instances),
                       unreachable=sorted(path.unreachable),
                       segments=seg_stats, seed=cfg.seed)
    for iid in sorted(path.covered_instances):
        inst = graph.instances[iid]
        images = instance_views(scene, inst, segments, graph, cfg)
        if len(images) < 2:
            report.instances.append({"instance": iid, "status": "not sampled"})
            continue
        entry = model_instance(scene, inst, images, cfg, out_dir)
        entry["status"] = "ok"
        report.instances.append(entry)
    for iid in sorted(path.unreachable):
        report.instances.append({"instance": iid, "status": "unreachable"})
    report.save(os.path.join(out_dir, "report.json"))
    write_report(out_dir, scene_name=scene.spec.terrain_kind)
    return report


def write_report(out_dir: str, scene_name: str = "scene") -> str:
    """Emit report.csv from the persisted run artifacts.

    Training wall time is quantized to 10 s so repeated runs with the same
    seed produce byte-identical reports.
    """
    report_path = os.path.join(out_dir, "report.json")
    if not os.path.exists(report_path):
        raise FileNotFoundError(f"no run found in {out_dir}")
    with open(report_path) as f:
        rep = json.load(f)
    csv_path = os.path.join(out_dir, "report.csv")
    with open(csv_path, "w") as f:
        f.write("scene,view_mode,occ_weight,PSNR_dB,train_time_s\n")
        for e in rep["instances"]:
            tag = f"{scene_name}/instance{e['instance']}"
            if e.get("status") != "ok":
                f.write(f"{tag},{e.get('status')},,,\n")
                continue
            t10 = int(round(e["train_time_s"] / 10.0)) * 10
            f.write(f"{tag},{e['view_mode']},{e['occ_weight']},"
                    f"{e['PSNR_dB']:.3f},{t10}\n")
    return csv_path
