import configparser
import csv
import hashlib
import shutil

import numpy as np
import pytest

from penumbra import cli
from penumbra.metrics import EvaluationReport
from penumbra.plots import FIGURES
from penumbra.raster_io import read_float_raster, write_float_raster


def run(*argv):
    return cli.main([str(a) for a in argv])


def _digest(directory):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(directory.iterdir()) if p.is_file()}


@pytest.fixture(scope="module")
def chain(tmp_path_factory):
    root = tmp_path_factory.mktemp("chain")
    assert run("simulate", "--out", root / "sim") == 0
    assert run("corrupt", "--gt", root / "sim/ground_truth.nimg", "--n", 4, "--seed", 2, "--out", root / "data") == 0
    assert run(
        "train", "--data", root / "data", "--schedule", "tiny", "--epochs", 1, "--batch-size", 2, "--out", root / "model"
    ) == 0
    assert run("denoise", "--model", root / "model/model.pnae", "--data", root / "data", "--limit", 2, "--out", root / "ae") == 0
    assert run("baseline", "--method", "gaussian", "--data", root / "data", "--limit", 2, "--out", root / "gauss") == 0
    assert run(
        "evaluate", "--gt", root / "sim/ground_truth.nimg", "--data", root / "data",
        "--recon", f"ae={root / 'ae'}", "--recon", f"gaussian={root / 'gauss'}", "--out", root / "eval",
    ) == 0
    assert run("report", "--eval", root / "eval", "--out", root / "report") == 0
    return root


def test_every_command_writes_resolved_config(chain):
    for sub, name in [
        ("sim", "simulate"), ("data", "corrupt"), ("model", "train"), ("ae", "denoise"),
        ("gauss", "baseline"), ("eval", "evaluate"), ("report", "report"),
    ]:
        cp = configparser.ConfigParser(interpolation=None)
        cp.read(chain / sub / f"{name}.ini")
        assert cp.get("run", "seed") is not None
    cp = configparser.ConfigParser(interpolation=None)
    cp.read(chain / "data/corrupt.ini")
    assert cp.get("corrupt", "n") == "4" and cp.get("run", "seed") == "2"


def test_corrupt_outputs_and_manifest(chain):
    with open(chain / "data/manifest.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["filename"] for r in rows] == [f"noisy_{k:05d}.nimg" for k in range(4)]
    assert rows[0]["source-sigma"] == "8.0" and rows[0]["aperture-radius"] == "64.0"
    assert not (chain / "data/ground_truth.nimg").exists()


def test_training_never_reads_ground_truth(chain):
    for sub in ("model", "ae", "gauss"):
        reads = (chain / sub / "audit.txt").read_text().split()
        assert reads, sub
        assert not any(r.endswith(tuple(cli.GROUND_TRUTH_NAMES)) for r in reads)
        assert all("/sim/" not in r for r in reads)


def test_training_refuses_a_manifest_that_lists_ground_truth(chain, tmp_path, capsys):
    data = tmp_path / "data"
    shutil.copytree(chain / "data", data)
    shutil.copy(chain / "sim/ground_truth.nimg", data / "ground_truth.nimg")
    text = (data / "manifest.csv").read_text().replace("noisy_00000.nimg", "ground_truth.nimg")
    (data / "manifest.csv").write_text(text)
    assert run("train", "--data", data, "--schedule", "tiny", "--epochs", 1, "--out", tmp_path / "m") != 0
    assert "may not read ground truth" in capsys.readouterr().err
    assert not (tmp_path / "m").exists()


def test_loss_csv_and_checkpoint(chain):
    with open(chain / "model/loss.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 1 and np.isfinite(float(rows[0]["loss"]))
    assert (chain / "model/model.pnae").stat().st_size > 0


def test_denoise_outputs_in_range(chain):
    for name in ("noisy_00000.nimg", "noisy_00001.nimg"):
        y = np.asarray(read_float_raster(chain / "ae" / name))
        assert y.shape == (256, 256) and np.all(np.isfinite(y)) and y.min() >= 0
    assert not (chain / "ae/noisy_00002.nimg").exists()


def test_report_emits_one_panel_per_figure(chain):
    pngs = sorted(p.name for p in (chain / "report").glob("*.png"))
    assert pngs == sorted(name for name, _ in FIGURES) and len(pngs) == 7
    md = (chain / "report/summary.md").read_text()
    assert "| gaussian | ae |" in md and "| gaussian | noisy |" in md


def test_evaluate_rows_per_method_and_image(chain):
    rep = EvaluationReport.read_csv(chain / "eval/report.csv")
    assert sorted({r["method"] for r in rep.records}) == ["ae", "gaussian", "noisy"]
    assert len(rep.records) == 6


def test_evaluate_identity_rows(chain, tmp_path):
    ident = tmp_path / "ident"
    ident.mkdir()
    for k in range(2):
        shutil.copy(chain / "sim/ground_truth.nimg", ident / f"noisy_{k:05d}.nimg")
    assert run(
        "evaluate", "--gt", chain / "sim/ground_truth.nimg", "--data", chain / "data", "--limit", 2,
        "--recon", f"gt={ident}", "--out", tmp_path / "eval",
    ) == 0
    rows = [r for r in EvaluationReport.read_csv(tmp_path / "eval/report.csv").records if r["method"] == "gt"]
    assert len(rows) == 2
    for r in rows:
        assert r["mse"] == 0 and r["psnr"] == float("inf") and r["ssim"] == pytest.approx(1.0)
        assert r["residual_mean"] == 0 and r["residual_reduction"] == pytest.approx(100.0)
        assert r["radius_error"] == 0 and r["radius_deficit"] == 0 and r["radius_within_2px"] > 0.98
        assert r["pearson_radial"] == pytest.approx(1.0)


def test_simulate_and_corrupt_idempotent(chain, tmp_path, monkeypatch):
    assert run("simulate", "--out", tmp_path / "sim") == 0
    assert _digest(tmp_path / "sim") == _digest(chain / "sim")
    monkeypatch.setenv("PENUMBRA_THREADS", "3")
    assert run("corrupt", "--gt", chain / "sim/ground_truth.nimg", "--n", 4, "--seed", 2, "--out", tmp_path / "d") == 0
    assert _digest(tmp_path / "d") == _digest(chain / "data")


def test_evaluate_and_report_idempotent(chain, tmp_path):
    assert run(
        "evaluate", "--gt", chain / "sim/ground_truth.nimg", "--data", chain / "data",
        "--recon", f"ae={chain / 'ae'}", "--recon", f"gaussian={chain / 'gauss'}", "--out", tmp_path / "eval",
    ) == 0
    assert _digest(tmp_path / "eval") == _digest(chain / "eval")
    assert run("report", "--eval", tmp_path / "eval", "--out", tmp_path / "report") == 0
    assert _digest(tmp_path / "report") == _digest(chain / "report")


def test_missing_input_fails_cleanly(tmp_path, capsys):
    assert run("corrupt", "--gt", tmp_path / "nope.nimg", "--out", tmp_path / "out") == 1
    assert "not found" in capsys.readouterr().err
    assert not (tmp_path / "out").exists()
    assert run("denoise", "--model", tmp_path / "none.pnae", "--data", tmp_path, "--out", tmp_path / "o2") == 1
    assert not (tmp_path / "o2").exists()


def test_bad_thread_cap(chain, tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("PENUMBRA_THREADS", "many")
    assert run("corrupt", "--gt", chain / "sim/ground_truth.nimg", "--n", 1, "--out", tmp_path / "x") == 1
    assert "PENUMBRA_THREADS" in capsys.readouterr().err


def test_outputs_cleaned_on_failure(tmp_path):
    with pytest.raises(RuntimeError):
        with cli.Outputs(tmp_path / "o") as outs:
            outs.declare("a.csv").write_text("x\n")
            raise RuntimeError("boom")
    assert not (tmp_path / "o").exists()


def test_unparseable_output_fails_verification(tmp_path):
    with pytest.raises(Exception):
        with cli.Outputs(tmp_path / "o") as outs:
            outs.declare("a.nimg").write_bytes(b"NIMG")
    assert not (tmp_path / "o" / "a.nimg").exists()


def test_config_file_then_flags(chain, tmp_path):
    ini = tmp_path / "run.ini"
    ini.write_text("[corrupt]\nn = 2\nsnr = 5\n[run]\nseed = 9\n")
    assert run("corrupt", "--config", ini, "--gt", chain / "sim/ground_truth.nimg", "--snr", 20, "--out", tmp_path / "d") == 0
    cp = configparser.ConfigParser(interpolation=None)
    cp.read(tmp_path / "d/corrupt.ini")
    assert (cp.get("corrupt", "n"), cp.get("corrupt", "snr"), cp.get("run", "seed")) == ("2", "20.0", "9")
    assert len(list((tmp_path / "d").glob("noisy_*.nimg"))) == 2


def test_missing_config_file(tmp_path):
    assert run("simulate", "--config", tmp_path / "none.ini", "--out", tmp_path / "s") == 1


def test_roi_then_denoise(chain, tmp_path):
    gt = np.asarray(read_float_raster(chain / "sim/ground_truth.nimg"))
    plate = np.zeros((300, 600), np.float32)
    plate[20:276, 10:266] = gt
    plate[30:286, 320:576] = 0.9 * gt
    write_float_raster(plate, tmp_path / "plate.nimg")
    assert run("roi", "--plate", tmp_path / "plate.nimg", "--out", tmp_path / "rois") == 0
    assert sorted(p.name for p in (tmp_path / "rois").glob("*.nimg")) == ["roi_000.nimg", "roi_001.nimg"]
    assert run("denoise", "--model", chain / "model/model.pnae", "--data", tmp_path / "rois", "--out", tmp_path / "den") == 0
    for name in ("roi_000.nimg", "roi_001.nimg"):
        y = np.asarray(read_float_raster(tmp_path / "den" / name))
        assert np.all(np.isfinite(y)) and y.min() >= 0


def test_roi_on_blank_plate_fails(tmp_path):
    write_float_raster(np.zeros((300, 300), np.float32), tmp_path / "blank.nimg")
    with pytest.warns(RuntimeWarning):
        assert run("roi", "--plate", tmp_path / "blank.nimg", "--out", tmp_path / "r") == 1


def test_wavelet_command_roundtrip(tmp_path):
    x = np.random.default_rng(0).random((64, 48)).astype(np.float32)
    write_float_raster(x, tmp_path / "x.nimg")
    assert run("wavelet", "--input", tmp_path / "x.nimg", "--output", tmp_path / "c.nimg", "--levels", 3) == 0
    assert run("wavelet", "--input", tmp_path / "c.nimg", "--output", tmp_path / "y.nimg", "--levels", 3, "--inverse") == 0
    y = np.asarray(read_float_raster(tmp_path / "y.nimg"))
    assert np.max(np.abs(y - x)) < 1e-5


def test_bad_recon_spec(chain, tmp_path, capsys):
    assert run("evaluate", "--gt", chain / "sim/ground_truth.nimg", "--data", chain / "data", "--recon", "ae", "--out", tmp_path / "e") == 1
    assert "NAME=DIR" in capsys.readouterr().err
