"""Acceptance criteria, one test each.

Every test prints a single ``criterion N: PASS|FAIL`` line (also repeated in
the terminal summary) and asserts the same verdict. Tolerances are the
stated ones; nothing is relaxed here.
"""
import contextlib
import time
import tracemalloc

import numpy as np
from threadpoolctl import threadpool_limits

import gradsuite
import oracles
from conftest import ACCEPTANCE
from ipseg.autonn import Tensor, softmax_channels
from ipseg.bench import compare, run_pipeline_bench
from ipseg.ipcore import CvpConfig, avg_ip, cvp, min_ip, mip, project_mask
from ipseg.netbuild import NetConfig, build_ipunet, fmt_shape, shape_plan
from ipseg.segloss import ConfusionCounts, confusion_table, dice_loss, metrics, one_hot, tversky_loss
from ipseg.trainer import HyperParams, PhantomSpec, evaluate, make_dataset, phantom_suite, synth_phantom, train
from ipseg.trainer.checkpoint import from_bytes, to_bytes
from ipseg.volio import MaskVolume, nifti_bytes, read_mask_nifti, read_nifti, write_mask_nifti, write_nifti
from test_netbuild import CONSISTENT, golden_rows, plan_rows

DESK = PhantomSpec()  # 64x64x32 volumes
DESK_WIDTH = 0.125


@contextlib.contextmanager
def criterion(num, title):
    """Yield a dict for ``ok``/``detail``; print and assert one verdict line."""
    result = {"ok": False, "detail": ""}
    t0 = time.perf_counter()
    try:
        yield result
    except Exception as exc:
        result["ok"] = False
        result["detail"] = f"{type(exc).__name__}: {exc}"
    elapsed = time.perf_counter() - t0
    verdict = "PASS" if result["ok"] else "FAIL"
    line = f"criterion {num}: {verdict}  {title}  [{result['detail']}; {elapsed:.1f}s]"
    ACCEPTANCE[num] = line
    print(line)
    assert result["ok"], line


def test_criterion_1_projection_oracles():
    with criterion(1, "projection operators equal per-ray oracles") as r:
        t0 = time.perf_counter()
        worst_ulp, mismatches, volumes = 0, 0, 0
        for seed in range(120):
            rng = np.random.default_rng(1000 + seed)
            shape = tuple(int(n) for n in rng.integers(1, 17, size=3))
            data = rng.normal(120, 60, size=shape).astype(np.float32)
            labels = rng.integers(0, 3, size=shape).astype(np.uint8)
            volumes += 1
            for axis in range(3):
                mismatches += not np.array_equal(mip(data, axis), oracles.project(data, axis, oracles.ray_max))
                mismatches += not np.array_equal(min_ip(data, axis), oracles.project(data, axis, oracles.ray_min))
                lit = oracles.project(data, axis, lambda ray: oracles.ray_cvp_literal(ray, np.float32(130.0)))
                mismatches += not np.array_equal(cvp(data, axis, CvpConfig(130.0, "eq1-literal")), lit)
                want = oracles.project(labels, axis, oracles.ray_max, np.uint8)
                mismatches += not np.array_equal(project_mask(MaskVolume(labels, 3), axis).labels, want)
                mean = oracles.project(data, axis, oracles.ray_mean64, np.float64).astype(np.float32)
                worst_ulp = max(worst_ulp, int(oracles.ulp_distance32(avg_ip(data, axis), mean).max()))
        elapsed = time.perf_counter() - t0
        r["detail"] = f"{volumes} volumes, {mismatches} exact mismatches, mean <= {worst_ulp} ulp"
        r["ok"] = mismatches == 0 and worst_ulp <= 1 and volumes >= 100 and elapsed < 10


def test_criterion_2_gradient_suite():
    with criterion(2, "finite-difference gradients per op and on the full network") as r:
        t0 = time.perf_counter()
        failures = []
        for name, (_, threshold) in gradsuite.CASES.items():
            for seed in range(20):
                err = gradsuite.worst_error(name, seed)
                if not err < threshold:
                    failures.append((name, seed, err))
        results, zero_max = gradsuite.network_spot_check(seed=0, count=10, width_factor=1 / 16, size=32)
        net_worst = max(err for _, _, err in results)
        elapsed = time.perf_counter() - t0
        r["detail"] = (f"{len(gradsuite.CASES)} ops x 20 seeds, {len(failures)} over threshold; network "
                       f"{len(results)} entries max rel {net_worst:.2e}, cancelled-bias |grad| {zero_max:.1e}")
        r["ok"] = not failures and len(results) == 10 and net_worst < 1e-4 and zero_max < 1e-10 and elapsed < 120


def test_criterion_3_tversky_dice_identity():
    with criterion(3, "Tversky at alpha = beta = 0.5 equals Dice") as r:
        rng = np.random.default_rng(3)
        worst = 0.0
        for _ in range(1000):
            k = int(rng.integers(2, 5))
            shape = (int(rng.integers(1, 3)), k, int(rng.integers(2, 9)), int(rng.integers(2, 9)))
            pred = softmax_channels(Tensor(rng.normal(size=shape) * 3))
            labels = rng.integers(0, k, size=(shape[0],) + shape[2:])
            t = float(tversky_loss(pred, labels, 0.5, 0.5).data)
            worst = max(worst, abs(t - float(dice_loss(pred, labels).data)))
        r["detail"] = f"1000 predictions, max |difference| {worst:.2e}"
        r["ok"] = worst < 1e-9


def test_criterion_4_shape_plan_golden():
    with criterion(4, "31-row layer plan matches the consistent table rows verbatim") as r:
        tracemalloc.start()
        t0 = time.perf_counter()
        plan = shape_plan(build_ipunet(NetConfig(in_channels=2, num_classes=3, width_factor=1.0)), (2, 512, 512))
        elapsed = time.perf_counter() - t0
        _, peak = tracemalloc.get_traced_memory()
        tracemalloc.stop()
        ours, gold = plan_rows(plan), golden_rows()
        wrong = [no for no in CONSISTENT if ours[no] != gold[no]]
        r["detail"] = (f"{len(plan)} rows, {len(CONSISTENT)} checked, {len(wrong)} differ, row 1 "
                       f"{fmt_shape(plan[0].input)} -> {fmt_shape(plan[0].output)}, {elapsed * 1e3:.1f} ms, "
                       f"{peak / 2**20:.2f} MB")
        r["ok"] = len(plan) == 31 and not wrong and elapsed < 1 and peak < 10 * 2**20


def test_criterion_5_metric_arithmetic():
    with criterion(5, "metric arithmetic and hard-mask Dice agreement") as r:
        m = metrics(ConfusionCounts(tp=2, fp=3, tn=94, fn=1)).macro
        exact = m.dsc == 0.5 and abs(m.precision_std - 0.4) < 1e-15 and abs(m.paper_precision - 2 / 3) < 1e-15
        rng = np.random.default_rng(5)
        worst = 0.0
        for _ in range(100):
            pred, truth = rng.integers(0, 2, size=(2, 1, 16, 16))
            dsc = metrics(confusion_table(pred, truth, 2)).per_class[1].dsc
            loss = float(dice_loss(Tensor(one_hot(pred, 2, np.float64)), truth, class_set=[1]).data)
            worst = max(worst, abs(dsc - (1 - loss)))
        r["detail"] = (f"dsc {m.dsc}, precision_std {m.precision_std:.6f}, paper_precision "
                       f"{m.paper_precision:.6f}; 100 pairs max gap {worst:.2e}")
        r["ok"] = exact and worst <= 1e-6


def _learning_run(seed):
    data = make_dataset(phantom_suite(50, DESK, seed=seed), split_ratio=0.8, seed=seed)
    hp = HyperParams(epochs=50, width_factor=DESK_WIDTH, seed=seed)
    untrained, _ = train("ip", None, data, HyperParams(epochs=0, width_factor=DESK_WIDTH, seed=seed))
    trained, history = train("ip", None, data, hp)
    return evaluate(untrained, data).dsc, evaluate(trained, data).dsc, history[-1][1] < history[0][1]


def test_criterion_6_desk_scale_learning():
    with criterion(6, "projection pipeline learns on held-out phantoms (3-seed majority)") as r:
        t0 = time.perf_counter()
        runs = [_learning_run(seed) for seed in range(3)]
        wins = [trained >= 0.5 and trained - untrained >= 0.3 for untrained, trained, _ in runs]
        elapsed = time.perf_counter() - t0
        scores = ", ".join(f"{u:.3f}->{t:.3f}" for u, t, _ in runs)
        r["detail"] = (f"untrained->trained DSC {scores}; {sum(wins)}/3 seeds pass; "
                       f"loss fell on {sum(d for _, _, d in runs)}/3")
        r["ok"] = sum(wins) >= 2 and elapsed < 15 * 60


def test_criterion_7_memory_and_time():
    with criterion(7, "projection pipeline needs at most half the memory and 70% of the time") as r:
        t0 = time.perf_counter()
        data = make_dataset(phantom_suite(50, DESK, seed=0), split_ratio=0.8, seed=0)
        hp = HyperParams(epochs=1, width_factor=DESK_WIDTH, seed=0)
        records = [run_pipeline_bench(p, None, data, hp, repeats=3) for p in ("ip", "vol3d")]
        ip, vol = records
        report = compare(records)
        mem_ratio = ip.peak_tracked_bytes / vol.peak_tracked_bytes
        time_ratio = ip.total_seconds / vol.total_seconds
        elapsed = time.perf_counter() - t0
        r["detail"] = (f"peak {ip.peak_tracked_bytes / 2**20:.1f} vs {vol.peak_tracked_bytes / 2**20:.1f} MiB "
                       f"(ratio {mem_ratio:.3f}), time {ip.total_seconds:.2f} vs {vol.total_seconds:.2f}s "
                       f"(ratio {time_ratio:.3f}), reductions {report.headline['memory_reduction']:.1%} memory, "
                       f"{report.headline['time_reduction']:.1%} time")
        r["ok"] = mem_ratio <= 0.5 and time_ratio <= 0.7 and elapsed < 20 * 60


def _without_seconds(ckpt):
    ckpt.history = [h[:2] for h in ckpt.history]
    return to_bytes(ckpt)


def test_criterion_8_determinism_and_persistence(tmp_path):
    with criterion(8, "deterministic training, checkpoint resume and NIfTI round trip") as r:
        t0 = time.perf_counter()
        data = make_dataset(phantom_suite(5, DESK, seed=8), split_ratio=0.8, seed=8)
        problems = []
        with threadpool_limits(limits=1):
            for pipeline in ("ip", "slice2d", "vol3d"):
                hp = HyperParams(epochs=2, width_factor=DESK_WIDTH, seed=8)
                a, hist_a = train(pipeline, None, data, hp)
                b, hist_b = train(pipeline, None, data, hp)
                if [h[:2] for h in hist_a] != [h[:2] for h in hist_b]:
                    problems.append(f"{pipeline} history")
                if _without_seconds(a) != _without_seconds(b):
                    problems.append(f"{pipeline} checkpoint")
                half, _ = train(pipeline, None, data, HyperParams(epochs=1, width_factor=DESK_WIDTH, seed=8))
                path = tmp_path / f"{pipeline}.ckpt"
                path.write_bytes(to_bytes(half))
                resumed, _ = train(pipeline, None, data, hp, resume=from_bytes(path.read_bytes()))
                if _without_seconds(resumed) != _without_seconds(b):
                    problems.append(f"{pipeline} resume")
        pairs = 0
        for spec in phantom_suite(10, DESK, seed=9):
            vol, mask = synth_phantom(spec)
            for ext in (".nii", ".nii.gz"):
                write_nifti(vol, tmp_path / f"v{ext}")
                write_mask_nifti(mask, tmp_path / f"m{ext}")
                back, mback = read_nifti(tmp_path / f"v{ext}"), read_mask_nifti(tmp_path / f"m{ext}", 3)
                if back.data.tobytes() != vol.data.tobytes() or mback.labels.tobytes() != mask.labels.tobytes():
                    problems.append(f"nifti {spec.seed}{ext}")
                if nifti_bytes(back.data, back.spacing) != nifti_bytes(vol.data, vol.spacing):
                    problems.append(f"nifti header {spec.seed}{ext}")
                pairs += 1
        elapsed = time.perf_counter() - t0
        r["detail"] = (f"3 pipelines x (repeat, resume), {pairs} NIfTI round trips, "
                       f"{len(problems)} problems {problems[:3]}")
        r["ok"] = not problems and elapsed < 5 * 60
