"""The whole pipeline in one call, plus the equivalent CLI invocations.

Generates a two-plant farm, plans and optimizes the coverage trajectory,
simulates posed captures, trains one field per plant, extracts meshes and
writes the run report. The same stages are exposed as CLI subcommands:

    phenofield --out out genfarm
    phenofield --out out plan
    phenofield --out out run
    phenofield --out out report
"""
from phenofield.pipeline import (FarmSpec, PipelineConfig, genfarm,
                                 run_pipeline)
from phenofield.radiance import TrainConfig

spec = FarmSpec(rows=1, plants_per_row=2, plant_spacing=2.5)
cfg = PipelineConfig(image_size=14, n_views_per_flank=2, field_resolution=18,
                     train=TrainConfig(epochs=3, samples_per_ray=20,
                                       near=0.05, far=4.0, batch_rays=4096,
                                       occ_weight=0.01))

scene = genfarm(spec, seed=5)
report = run_pipeline(scene, {0, 1}, cfg, "out")

print(f"coverage {report.coverage:.0%}, plan length {report.plan_length:.1f} m, "
      f"{len(report.segments)} trajectory segments")
for e in report.instances:
    if e.get("status") == "ok":
        print(f"  plant {e['instance']}: {e['n_views']} views, "
              f"PSNR {e['PSNR_dB']:.1f} dB, {e['mesh_vertices']} mesh vertices")
    else:
        print(f"  plant {e['instance']}: {e['status']}")
print("artifacts under out/: structure/, instances/, trajectories/, "
      "plan.json, report.csv")
