"""
=========================================
Memory and time: projections against 3D
=========================================

One epoch of each pipeline on the same phantoms, under the engine's
allocation tracker. The 3D network carries a depth axis through every
activation; the projection network never sees it.
"""
from ipseg.bench import compare, run_pipeline_bench
from ipseg.trainer import HyperParams, PhantomSpec, make_dataset, phantom_suite

data = make_dataset(phantom_suite(6, PhantomSpec(), seed=0), split_ratio=5 / 6, seed=0)
hp = HyperParams(epochs=1, width_factor=0.125)

records = []
for pipeline in ("ip", "slice2d", "vol3d"):
    rec = run_pipeline_bench(pipeline, None, data, hp, repeats=1)
    records.append(rec)
    print(f"{pipeline:8s} {rec.total_seconds:7.2f}s  peak {rec.peak_tracked_bytes / 2**20:8.1f} MiB")

report = compare(records)
print("ip vs vol3d:", {k: f"{v:.1%}" for k, v in report.headline.items()})
print(report.to_csv())
