import json
import subprocess
import sys

import numpy as np
import pytest

from ipseg.cli import dispatch
from ipseg.config import RunConfig
from ipseg.trainer import load_checkpoint
from ipseg.volio import read_nifti

TINY = ["--dims", "16", "16", "16", "--lesions", "2"]


def _run(capsys, *argv):
    code = dispatch([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def _hash(directory):
    return json.loads((directory / "run_config.json").read_text())["hash"]


def test_plan_table(capsys):
    code, out, _ = _run(capsys, "plan", "--width-factor", "1", "--in-channels", "2")
    assert code == 0
    lines = out.strip().splitlines()
    assert len(lines) == 33
    row1 = [c.strip() for c in lines[2].split("|")]
    assert row1[0] == "1" and row1[3] == "512X512X2" and row1[6] == "512X512X64"
    code, out, _ = _run(capsys, "plan", "--width-factor", "0.125", "--size", "64", "64", "32",
                        "--net", "unet3d", "--json")
    assert code == 0 and json.loads(out)[-1]["output"] == [1, 3, 64, 64, 32]


def test_usage_errors(capsys):
    code, _, err = _run(capsys, "plan", "--bogus")
    assert code == 1 and "--bogus" in err and len(err.strip().splitlines()) == 1
    code, _, err = _run(capsys, "train", "--lr", "-1")
    assert code == 1 and "--lr" in err
    code, _, err = _run(capsys, "plan", "--width-factor", "2")
    assert code == 1 and "--width-factor" in err
    assert _run(capsys)[0] == 1
    assert _run(capsys, "info")[0] == 1


def test_data_errors(capsys, tmp_path):
    assert _run(capsys, "info", tmp_path / "missing.nii")[0] == 2
    (tmp_path / "junk.nii").write_bytes(b"\0" * 100)
    assert _run(capsys, "project", tmp_path / "junk.nii", "--out", tmp_path)[0] == 2
    assert _run(capsys, "eval", "--ckpt", tmp_path / "missing.ckpt", "--out", tmp_path)[0] == 2
    (tmp_path / "bad.json").write_text("{not json")
    assert _run(capsys, "plan", "--config", tmp_path / "bad.json")[0] == 1


def test_synth_and_project(capsys, tmp_path):
    code, _, _ = _run(capsys, "synth", "--count", "2", *TINY, "--out", tmp_path / "ph")
    assert code == 0
    files = sorted(p.name for p in (tmp_path / "ph").iterdir())
    assert files == ["phantom000.nii", "phantom000_mask.nii", "phantom001.nii", "phantom001_mask.nii",
                     "run_config.json"]
    code, out, _ = _run(capsys, "info", tmp_path / "ph" / "phantom000.nii")
    assert code == 0 and json.loads(out)["dims"] == [16, 16, 16]

    code, out, _ = _run(capsys, "project", tmp_path / "ph" / "phantom000.nii", "--axis", "0",
                        "--out", tmp_path / "ip")
    assert code == 0
    written = out.split()
    assert [p.rsplit("_", 1)[1] for p in written] == ["cvp.nii", "avg.nii", "mip.nii"]
    dims = {read_nifti(p).dims for p in written}
    assert dims == {(16, 16, 1)}
    assert len(_hash(tmp_path / "ip")) == 16

    code, out, _ = _run(capsys, "project", "--in", tmp_path / "ph" / "phantom000.nii", "--format", "bin",
                        "--out", tmp_path / "bin")
    assert code == 0 and (tmp_path / "bin" / "phantom000_ip.bin").stat().st_size == 3 * 16 * 16 * 4


def test_train_eval_and_hashes(capsys, tmp_path):
    run = tmp_path / "run"
    common = ["--count", "4", "--split-ratio", "0.5", *TINY]
    code, out, _ = _run(capsys, "train", *common, "--width-factor", "0.0625", "--epochs", "2", "--out", run)
    assert code == 0 and "epoch     2" in out
    digest = _hash(run)
    assert (run / "history.csv").read_text().splitlines()[0] == f"# run {digest}"
    assert load_checkpoint(run / "model.ckpt").extra["run_hash"] == digest

    code, out, _ = _run(capsys, "eval", "--ckpt", run / "model.ckpt", *common, "--out", tmp_path / "ev")
    assert code == 0
    metrics = json.loads((tmp_path / "ev" / "metrics.json").read_text())
    assert metrics["run_hash"] == _hash(tmp_path / "ev") and 0 <= metrics["macro"]["dsc"] <= 1

    code, _, _ = _run(capsys, "train", *common, "--width-factor", "0.0625", "--epochs", "3", "--resume", run / "model.ckpt",
                      "--out", tmp_path / "more")
    assert code == 0 and load_checkpoint(tmp_path / "more" / "model.ckpt").epoch == 3


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numeric_abort(capsys, tmp_path):
    code, _, err = _run(capsys, "train", "--count", "2", "--split-ratio", "1", *TINY, "--width-factor",
                        "0.0625", "--epochs", "3", "--optimizer", "sgd", "--lr", "1e300", "--out", tmp_path)
    assert code == 3 and "numeric abort" in err


def test_config_file_reproduces_outputs(capsys, tmp_path):
    rc = RunConfig.from_dict({**RunConfig().to_dict(), "count": 3, "split_ratio": 2 / 3, "seed": 7})
    doc = rc.to_dict()
    doc["phantom"].update(dims=[16, 16, 16], num_lesions=2)
    doc["hyperparams"].update(epochs=2)
    doc["net"].update(width_factor=0.0625)
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(doc))
    assert RunConfig.load(cfg).to_dict() == RunConfig.from_dict(doc).to_dict()

    for name in ("a", "b"):
        assert _run(capsys, "synth", "--config", cfg, "--out", tmp_path / f"ph_{name}")[0] == 0
        assert _run(capsys, "train", "--config", cfg, "--out", tmp_path / f"tr_{name}")[0] == 0
    for f in ("phantom000.nii", "phantom002_mask.nii", "run_config.json"):
        assert (tmp_path / "ph_a" / f).read_bytes() == (tmp_path / "ph_b" / f).read_bytes()
    a, b = load_checkpoint(tmp_path / "tr_a" / "model.ckpt"), load_checkpoint(tmp_path / "tr_b" / "model.ckpt")
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    assert [h[:2] for h in a.history] == [h[:2] for h in b.history]
    assert _hash(tmp_path / "tr_a") == _hash(tmp_path / "tr_b") == RunConfig.load(cfg).digest()

    # flags override the file and change the hash
    assert _run(capsys, "synth", "--config", cfg, "--count", "1", "--out", tmp_path / "ph_c")[0] == 0
    echoed = RunConfig.load(tmp_path / "ph_c" / "run_config.json")
    assert echoed.count == 1 and echoed.phantom.dims == (16, 16, 16)
    assert _hash(tmp_path / "ph_c") != _hash(tmp_path / "ph_a")


def test_bench_command(capsys, tmp_path):
    code, out, _ = _run(capsys, "bench", "--pipelines", "ip", "slice2d", "--repeats", "1", "--count", "4",
                        "--split-ratio", "0.5", *TINY, "--width-factor", "0.0625", "--epochs", "1",
                        "--out", tmp_path)
    assert code == 0
    assert set(json.loads(out.strip().splitlines()[-1])) == {"time_reduction", "memory_reduction"}
    report = json.loads((tmp_path / "comparison.json").read_text())
    assert report["run_hash"] == _hash(tmp_path)
    csv_lines = (tmp_path / "comparison.csv").read_text().splitlines()
    assert csv_lines[1].startswith("pipeline,") and len(csv_lines) == 4


def test_threads_env_and_entry_point(tmp_path):
    env = {"IPSEG_THREADS": "1", "PATH": "/usr/bin:/bin"}
    proc = subprocess.run([sys.executable, "-m", "ipseg.cli", "plan", "--width-factor", "0.125", "--size",
                           "32", "32"], capture_output=True, text=True, env=env)
    assert proc.returncode == 0 and len(proc.stdout.strip().splitlines()) == 33
    env["IPSEG_THREADS"] = "many"
    proc = subprocess.run([sys.executable, "-m", "ipseg.cli", "plan"], capture_output=True, text=True, env=env)
    assert proc.returncode == 1 and "IPSEG_THREADS" in proc.stderr
