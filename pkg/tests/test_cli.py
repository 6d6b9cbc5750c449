import csv

import numpy as np
import pytest

from spx.cli import main
from spx.io import read_kv, read_spmx, sha256_file, write_spmx
from spx.recognisability import AccuracyCurve, CurvePoint, write_curve


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


def _manifest_matches(path):
    kv = read_kv(path.with_name(path.name + ".manifest"))
    outputs = {k[len("output."):]: v for k, v in kv.items() if k.startswith("output.")}
    assert outputs
    for name, digest in outputs.items():
        assert sha256_file(path.parent / name) == digest
    return kv


def test_gen_patterns_deterministic(workdir):
    argv = ["gen-patterns", "--kind", "hadamard", "--n", "16", "--h", "4", "--w", "4"]
    assert main(argv + ["--out", "a.spmx"]) == 0
    assert main(argv + ["--out", "b.spmx"]) == 0
    assert sha256_file(workdir / "a.spmx") == sha256_file(workdir / "b.spmx")
    kv = _manifest_matches(workdir / "a.spmx")
    assert kv["command"] == "gen-patterns"
    lib = read_spmx(workdir / "a.spmx")
    assert lib.shape == (16, 16) and set(np.unique(lib)) <= {0.0, 1.0}


def test_check_passes_then_detects_tampering(workdir):
    argv = ["gen-patterns", "--kind", "speckle", "--n", "8", "--h", "4", "--w", "4", "--seed", "3", "--out", "lib.spmx"]
    assert main(argv) == 0
    before = sha256_file(workdir / "lib.spmx.manifest")
    assert main(argv + ["--check"]) == 0
    assert sha256_file(workdir / "lib.spmx.manifest") == before
    write_spmx(workdir / "lib.spmx", np.zeros((8, 16)))
    assert main(argv + ["--check"]) == 1


def _curve(path, accs, task):
    rhos = [0.1, 0.2, 0.3]
    write_curve(path, AccuracyCurve(tuple(CurvePoint(r, i + 1, a, 0.0, 1) for i, (r, a) in enumerate(zip(rhos, accs))), task, 4))


def test_safe_interval_report(workdir):
    _curve(workdir / "beh.csv", [0.3, 0.85, 0.95], "behavior")
    _curve(workdir / "priv.csv", [0.05, 0.1, 0.5], "privacy")
    argv = ["safe-interval", "--beh", "beh.csv", "--priv", "priv.csv", "--alpha", "0.8", "--beta", "0.2", "--out", "r.txt"]
    assert main(argv) == 0
    report = read_kv(workdir / "r.txt")
    assert report["interval"] == "0.2,0.2"
    assert report["rho_beh_star"] == "0.2" and report["rho_priv_star"] == "0.2"
    _curve(workdir / "priv.csv", [0.5, 0.5, 0.5], "privacy")
    assert main(argv) == 0
    report = read_kv(workdir / "r.txt")
    assert report["interval"] == "EMPTY" and report["rho_priv_star"] == "NONE"


def test_usage_errors(workdir):
    with pytest.raises(SystemExit) as exc:
        main(["gen-patterns", "--kind", "speckle", "--bogus"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["safe-interval", "--beh", "x.csv"])
    assert exc.value.code == 2
    assert main(["gen-patterns", "--kind", "hadamard", "--n", "5", "--h", "2", "--w", "2", "--out", "x.spmx"]) == 2


def _pipeline(workdir, m=32):
    assert main(["gen-patterns", "--kind", "speckle", "--n", "64", "--h", "32", "--w", "32", "--seed", "1", "--out", "lib.spmx"]) == 0
    assert main(["synth", "--task", "privacy", "--samples-per-class", "10", "--identities", "2", "--seed", "4", "--out", "scenes.spmx"]) == 0
    common = ["--library", "lib.spmx", "--m", str(m), "--noise", "iid_gaussian", "--sigma", "0.05", "--chain-seed", "9"]
    assert main(["measure", *common, "--input", "scenes.spmx", "--seed", "1", "--out", "raw.spmx", "--operator-out", "op.spmx"]) == 0
    assert main(["measure", *common, "--target", "dark", "--frames", "64", "--seed", "2", "--out", "dark.spmx"]) == 0
    assert main(["measure", *common, "--target", "reference", "--frames", "64", "--seed", "3", "--out", "ref.spmx"]) == 0


def test_synth_labels(workdir):
    assert main(["synth", "--task", "behavior", "--samples-per-class", "10", "--identities", "2", "--frames", "3", "--out", "s.spmx"]) == 0
    with open(workdir / "s.labels.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["instance", "identity", "behavior", "split", "seed"]
    assert len(rows) == 1 + 40
    assert read_spmx(workdir / "s.spmx").shape == (1024, 40 * 3)
    _manifest_matches(workdir / "s.spmx")


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_measure_calibrate_reconstruct(workdir):
    _pipeline(workdir)
    meta = read_kv(workdir / "raw.meta")
    assert meta["seed"] == "1" and meta["noise_kind"] == "iid_gaussian" and meta["operator"].startswith("speckle")
    argv = ["calibrate", "--operator", "op.spmx", "--dark", "dark.spmx", "--reference", "ref.spmx",
            "--profile-out", "profile.txt", "--input", "raw.spmx", "--out", "cal.spmx"]
    assert main(argv) == 0
    assert read_kv(workdir / "cal.meta")["calibrated"] == "true"
    _manifest_matches(workdir / "profile.txt")
    clean = read_spmx(workdir / "op.spmx") @ read_spmx(workdir / "scenes.spmx")
    cal = read_spmx(workdir / "cal.spmx")
    assert np.median(np.abs(cal - clean)) < 0.5

    assert main(["reconstruct", "--operator", "op.spmx", "--measurements", "cal.spmx", "--method", "tv",
                 "--lam", "0.05", "--max-iters", "50", "--out", "x.spmx"]) == 0
    assert read_spmx(workdir / "x.spmx").shape == (32, 32)
    with open(workdir / "x.trace.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["iter", "objective", "residual"]
    objectives = [float(r[1]) for r in rows[1:]]
    assert all(b <= a + 1e-10 for a, b in zip(objectives, objectives[1:]))
    _manifest_matches(workdir / "x.spmx")


def test_reconstruct_strict_exit_code(workdir):
    _pipeline(workdir)
    base = ["reconstruct", "--operator", "op.spmx", "--measurements", "raw.spmx", "--lam", "0.1", "--max-iters", "2", "--out", "x.spmx"]
    assert main(base) == 0
    assert main(base + ["--strict"]) == 3
    assert main(["reconstruct", "--operator", "op.spmx", "--measurements", "raw.spmx", "--lam", "0", "--out", "y.spmx"]) == 3


def test_diagnose_csv(workdir):
    assert main(["gen-patterns", "--kind", "speckle", "--n", "32", "--h", "8", "--w", "8", "--out", "lib.spmx"]) == 0
    assert main(["diagnose", "--library", "lib.spmx", "--m", "8,16,32", "--probes", "50", "--out", "d.csv"]) == 0
    with open(workdir / "d.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["M", "rho", "sigma_max", "sigma_min", "threshold_rank", "entropy_rank", "spectral_mass", "c1", "c2"]
    masses = [float(r["spectral_mass"]) for r in rows]
    assert masses == [8 * 64.0, 16 * 64.0, 32 * 64.0]
    assert all(float(r["c1"]) <= float(r["c2"]) for r in rows)


def test_sweep_and_jobs(workdir):
    argv = ["sweep", "--task", "behavior", "--rates", "4,8", "--trials", "2", "--identities", "3",
            "--samples-per-class", "10", "--frames", "3", "--epochs", "20"]
    assert main(argv + ["--out-dir", "one"]) == 0
    assert main(argv + ["--out-dir", "two", "--jobs", "2"]) == 0
    a, b = workdir / "one" / "curve_behavior.csv", workdir / "two" / "curve_behavior.csv"
    assert a.read_bytes() == b.read_bytes()
    assert "lower bound" in read_kv(workdir / "one" / "curve_behavior.meta")["estimator"]
    assert main(argv + ["--out-dir", "one", "--check"]) == 0
