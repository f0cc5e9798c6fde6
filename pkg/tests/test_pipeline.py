import json
import os

import numpy as np
import pytest

from phenofield import cli, pipeline
from phenofield.pipeline import (FarmScene, FarmSpec, PipelineConfig,
                                 SceneError, genfarm)
from phenofield.radiance import TrainConfig
from phenofield.terrain import load_cloud


def tiny_spec():
    return FarmSpec(rows=1, plants_per_row=2, plant_spacing=2.5, jitter=0.05)


def tiny_config():
    return PipelineConfig(
        image_size=12, n_views_per_flank=2, field_resolution=16,
        train=TrainConfig(epochs=2, samples_per_ray=16, near=0.05, far=4.0,
                          batch_rays=2048, occ_weight=0.01))


class TestGenfarm:
    def test_deterministic(self):
        a = genfarm(tiny_spec(), seed=7)
        b = genfarm(tiny_spec(), seed=7)
        assert np.array_equal(a.cloud.points, b.cloud.points)
        for ia, ib in zip(a.instances, b.instances):
            assert np.array_equal(ia.center, ib.center)
            assert ia.height == ib.height

    def test_seed_changes_layout(self):
        a = genfarm(tiny_spec(), seed=0)
        b = genfarm(tiny_spec(), seed=1)
        assert not np.array_equal(a.instances[0].center, b.instances[0].center)

    def test_overlap_guard(self):
        with pytest.raises(SceneError, match="spacing"):
            genfarm(FarmSpec(plant_spacing=0.5), seed=0)

    def test_ramp_terrain_height(self):
        spec = FarmSpec(terrain_kind="ramp", terrain_param=0.3)
        scene = genfarm(spec, seed=0)
        assert float(scene.ground_height(2.0, 0.0)) == pytest.approx(0.6)

    def test_curb_terrain_height(self):
        spec = FarmSpec(terrain_kind="curb", terrain_param=0.25, plants_per_row=3,
                        plant_spacing=2.0)
        scene = genfarm(spec, seed=0)
        assert float(scene.ground_height(0.0, 0.0)) == 0.0
        assert float(scene.ground_height(4.0, 0.0)) == pytest.approx(0.25)

    def test_unknown_terrain(self):
        with pytest.raises(SceneError, match="terrain"):
            genfarm(FarmSpec(terrain_kind="lava"), seed=0)

    def test_scene_roundtrip(self, tmp_path):
        scene = genfarm(tiny_spec(), seed=3)
        p = tmp_path / "scene.json"
        scene.save(p)
        back = FarmScene.load(p, scene.cloud)
        assert len(back.instances) == len(scene.instances)
        assert np.allclose(back.instances[1].center, scene.instances[1].center)
        assert np.allclose(back.plants[1].canopy_color, scene.plants[1].canopy_color)


class TestBuildWorld:
    def test_plants_are_obstacles(self):
        scene = genfarm(tiny_spec(), seed=2)
        grid, obstacles, graph = pipeline.build_world(scene, tiny_config())
        assert obstacles.polygons
        # the plant center cell is risky; the space between rows is clear
        c = scene.instances[0].center
        assert grid.risk_at(c) >= 0.8 or not np.isfinite(grid.risk_at(c))
        mid = (scene.instances[0].center + scene.instances[1].center) / 2
        assert grid.risk_at(mid) < 0.8

    def test_graph_connected(self):
        scene = genfarm(tiny_spec(), seed=2)
        _, _, graph = pipeline.build_world(scene, tiny_config())
        assert graph.is_connected


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    scene = genfarm(tiny_spec(), seed=5)
    report = pipeline.run_pipeline(scene, {0, 1}, tiny_config(), str(out))
    return out, report


class TestRunPipeline:
    def test_full_coverage(self, run_dir):
        _, report = run_dir
        assert report.coverage == 1.0
        assert report.covered == [0, 1]
        assert not report.unreachable

    def test_artifact_layout(self, run_dir):
        out, _ = run_dir
        for rel in ("structure/terrain.ply", "structure/grid.json",
                    "structure/grid.csv", "structure/semantic.json",
                    "map.json", "plan.json", "plan_audit.jsonl",
                    "report.json", "report.csv"):
            assert (out / rel).exists(), rel
        for iid in (0, 1):
            inst = out / "instances" / str(iid)
            assert (inst / "poses.json").exists()
            assert (inst / "field.bin").exists()
            assert (inst / "mesh.obj").exists()
            assert (inst / "metrics.csv").exists()
            assert list((inst / "views").glob("view_*.ppm"))

    def test_trajectory_exports(self, run_dir):
        out, report = run_dir
        segs = sorted((out / "trajectories").glob("seg_*.json"))
        assert len(segs) == len(report.segments)
        data = json.loads(segs[0].read_text())
        assert data["kind"] in ("sampling", "transit")
        assert data["objective_history"][-1] <= data["objective_history"][0]

    def test_report_csv_shape(self, run_dir):
        out, _ = run_dir
        lines = (out / "report.csv").read_text().strip().split("\n")
        assert lines[0] == "scene,view_mode,occ_weight,PSNR_dB,train_time_s"
        assert len(lines) == 3
        for ln in lines[1:]:
            cells = ln.split(",")
            assert cells[1] == "robot"
            assert float(cells[3]) > 0     # PSNR is a real number
            assert int(cells[4]) % 10 == 0  # quantized wall time

    def test_cloud_readable(self, run_dir):
        out, _ = run_dir
        cloud = load_cloud(out / "structure" / "terrain.ply")
        assert cloud.points.shape[1] == 3 and len(cloud.points) > 1000


class TestCli:
    def write_config(self, tmp_path):
        cfgp = tmp_path / "cfg.json"
        cfgp.write_text(json.dumps({
            "farm": {"rows": 1, "plants_per_row": 2, "plant_spacing": 2.5,
                     "jitter": 0.05},
            "image_size": 12, "n_views_per_flank": 2, "field_resolution": 16,
            "train": {"epochs": 2, "samples_per_ray": 16, "near": 0.05,
                      "far": 4.0, "batch_rays": 2048, "occ_weight": 0.01},
        }))
        return str(cfgp)

    def test_genfarm_then_plan(self, tmp_path, capsys):
        cfg = self.write_config(tmp_path)
        out = str(tmp_path / "out")
        assert cli.main(["--config", cfg, "--out", out, "genfarm"]) == 0
        assert os.path.exists(os.path.join(out, "detections.json"))
        assert cli.main(["--config", cfg, "--out", out, "plan"]) == 0
        assert os.path.exists(os.path.join(out, "plan.json"))
        captured = capsys.readouterr()
        assert "covered [0, 1]" in captured.out

    def test_error_exit_code(self, tmp_path, capsys):
        out = str(tmp_path / "missing")
        assert cli.main(["--out", out, "plan"]) == 1
        assert "error:" in capsys.readouterr().err

    def test_run_and_report(self, tmp_path, capsys):
        cfg = self.write_config(tmp_path)
        out = str(tmp_path / "out")
        assert cli.main(["--config", cfg, "--out", out, "run"]) == 0
        assert cli.main(["--out", out, "report"]) == 0
        captured = capsys.readouterr()
        assert "scene,view_mode,occ_weight,PSNR_dB,train_time_s" in captured.out
