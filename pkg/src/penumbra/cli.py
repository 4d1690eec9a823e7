"""``penumbra`` command-line front end.

Commands chain through files only::

    simulate -> corrupt -> train -> denoise / baseline -> evaluate -> report

Each command writes its resolved config (``<command>.ini``) beside its outputs.
Training-side commands also write ``audit.txt``, the list of files they read,
and refuse to run if that list would include a ground-truth raster.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
import zipfile
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import raster_io
from .autoencoder import (
    ArchitectureConfig,
    TrainingConfig,
    build,
    denoise_batch,
    load_checkpoint,
    save_checkpoint,
    train,
    _resample,
)
from .baselines import BASELINES, Bm3dParams, run_baseline
from .config import RunConfig
from .forward_model import (
    ApertureSpec,
    DatasetManifest,
    NoiseConfig,
    SourceSpec,
    aperture_psf,
    corrupt_dataset,
    render_ground_truth,
    render_source,
)
from .metrics import (
    EvaluationReport,
    edge_radius_and_sigma,
    evaluate_reconstruction,
    noise_characterize,
    pearson,
    psnr,
    mse,
    radial_profile,
    ssim,
    wiener_tikhonov_deconvolve,
)
from .raster_io import import_raster, read_float_raster, write_float_raster
from .roi import roi_extract
from .wavelet import dwt2d, idwt2d, pack_pyramid, soft_threshold, unpack_pyramid

log = logging.getLogger("penumbra")

GROUND_TRUTH_NAMES = frozenset({"ground_truth.nimg", "source.nimg", "psf.nimg"})
RASTER_SUFFIXES = (".nimg", ".png", ".pgm")


class CommandError(RuntimeError):
    """A user-facing failure: bad or missing inputs."""


# ---------------------------------------------------------------- plumbing


def worker_count() -> int:
    cap = os.environ.get("PENUMBRA_THREADS", "")
    n = os.cpu_count() or 1
    if cap.strip():
        try:
            n = min(n, max(1, int(cap)))
        except ValueError as exc:
            raise CommandError(f"PENUMBRA_THREADS must be an integer, got {cap!r}") from exc
    return n


def _pmap(fn, items, workers):
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _audit_read(path) -> None:
    raster_io.READ_AUDIT.append(str(path))


def _guard_training_reads(paths) -> None:
    for p in paths:
        if Path(p).name in GROUND_TRUTH_NAMES:
            raise CommandError(f"training workflow may not read ground truth: {p}")


def _require(path, what: str) -> Path:
    path = Path(path)
    if not path.exists():
        raise CommandError(f"{what} not found: {path}")
    return path


def _verify(path: Path) -> None:
    """Parse an output file back; raises when it is missing or malformed."""
    suffix = path.suffix
    if not path.is_file():
        raise CommandError(f"declared output missing: {path}")
    if suffix in RASTER_SUFFIXES:
        import_raster(path)
    elif suffix == ".csv":
        with open(path, newline="") as fh:
            if next(csv.reader(fh), None) is None:
                raise CommandError(f"empty csv: {path}")
    elif suffix == ".ini":
        RunConfig.load(path)
    elif suffix == ".pnae":
        load_checkpoint(path)
    elif suffix == ".npz":
        with np.load(path) as z:
            z.files
    elif path.stat().st_size == 0 and suffix == ".md":
        raise CommandError(f"empty output: {path}")


class Outputs:
    """Tracks declared outputs; verified on success, deleted on failure."""

    def __init__(self, out_dir):
        self.dir = Path(out_dir)
        self._created_dir = not self.dir.exists()
        self.paths: list = []

    def __enter__(self):
        self.dir.mkdir(parents=True, exist_ok=True)
        return self

    def declare(self, name) -> Path:
        p = self.dir / name
        self.paths.append(p)
        return p

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            n = len(raster_io.READ_AUDIT)
            try:
                for p in self.paths:
                    _verify(p)
            except Exception:
                self._cleanup()
                raise
            finally:
                del raster_io.READ_AUDIT[n:]
            return False
        self._cleanup()
        return False

    def _cleanup(self):
        for p in self.paths:
            for q in (p, p.with_name(p.name + ".tmp")):
                if q.exists():
                    q.unlink()
        if self._created_dir and self.dir.exists() and not any(self.dir.iterdir()):
            self.dir.rmdir()


def _write_audit(outs: Outputs, reads) -> None:
    path = outs.declare("audit.txt")
    path.write_text("".join(f"{p}\n" for p in reads))


class _Inputs:
    """Rasters from a dataset directory: the manifest rows when present, otherwise a sorted glob."""

    def __init__(self, directory, limit: int = 0):
        self.dir = _require(directory, "input directory")
        mpath = self.dir / "manifest.csv"
        if mpath.is_file():
            _audit_read(mpath)
            rows = DatasetManifest.read(self.dir).rows
        else:
            files = sorted(p for p in self.dir.iterdir() if p.suffix in RASTER_SUFFIXES and p.name not in GROUND_TRUTH_NAMES)
            rows = [{"filename": p.name, "seed": "-1", "noise-model": "unknown"} for p in files]
        if not rows:
            raise CommandError(f"no input rasters in {self.dir}")
        if limit > 0:
            rows = rows[:limit]
        self.rows = rows

    def path(self, row) -> Path:
        return _require(self.dir / row["filename"], "input raster")

    def load(self, row) -> np.ndarray:
        return np.asarray(import_raster(self.path(row)), dtype=np.float32)


def save_npz(path, arrays: dict) -> Path:
    """``np.savez`` layout with a fixed member timestamp, so re-runs match byte for byte."""
    path = Path(path)
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for key in arrays:
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asanyarray(arrays[key]), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(f"{key}.npy", date_time=(1980, 1, 1, 0, 0, 0)), buf.getvalue())
    return path


def _out_name(filename: str) -> str:
    return Path(filename).stem + ".nimg"


# ---------------------------------------------------------------- commands


def cmd_simulate(cfg: RunConfig, args) -> None:
    size = (cfg.getint("simulate", "height"), cfg.getint("simulate", "width"))
    source = SourceSpec(cfg.getfloat("simulate", "source_sigma"))
    aperture = ApertureSpec(cfg.aperture_radius(), kind=cfg.get("simulate", "mode"))
    with Outputs(args.out) as outs:
        write_float_raster(render_ground_truth(source, aperture, size), outs.declare("ground_truth.nimg"))
        write_float_raster(render_source(source, size), outs.declare("source.nimg"))
        write_float_raster(aperture_psf(aperture, size), outs.declare("psf.nimg"))
        cfg.write(outs.declare("simulate.ini"))


def cmd_corrupt(cfg: RunConfig, args) -> None:
    gt_path = _require(args.gt, "ground-truth raster")
    gt = read_float_raster(gt_path)
    sim_ini = gt_path.with_name("simulate.ini")
    geometry = cfg
    if sim_ini.is_file():
        _audit_read(sim_ini)
        geometry = RunConfig.load(sim_ini)
    noise = NoiseConfig(
        cfg.get("corrupt", "noise"), cfg.getfloat("corrupt", "snr"), cfg.seed, cfg.get("corrupt", "mixed_rescale")
    )
    n = cfg.getint("corrupt", "n")
    with Outputs(args.out) as outs:
        width = max(5, len(str(n - 1)))
        for k in range(n):
            outs.declare(f"noisy_{k:0{width}d}.nimg")
        outs.declare("manifest.csv")
        corrupt_dataset(
            gt, n, noise, outs.dir,
            geometry.getfloat("simulate", "source_sigma"), geometry.aperture_radius(),
            workers=worker_count(), write_ground_truth=False,
        )
        cfg.write(outs.declare("corrupt.ini"))


def _arch_from(cfg: RunConfig) -> ArchitectureConfig:
    return ArchitectureConfig.named(
        cfg.get("train", "schedule"),
        mode=cfg.get("train", "mode"),
        levels=cfg.getint("train", "levels"),
        shrink=cfg.getfloat("train", "shrink"),
        dropout=cfg.getfloat("train", "dropout"),
    )


def cmd_train(cfg: RunConfig, args) -> None:
    start = len(raster_io.READ_AUDIT)
    inputs = _Inputs(args.data, args.limit or 0)
    _guard_training_reads(inputs.path(r) for r in inputs.rows)
    arch = _arch_from(cfg)
    images = np.stack([inputs.load(r) for r in inputs.rows])
    if images.shape[1:] != (arch.input_size, arch.input_size):
        raise CommandError(f"training images are {images.shape[1:]}, model expects {arch.input_size}")
    tcfg = TrainingConfig(
        epochs=cfg.getint("train", "epochs"),
        lr=cfg.getfloat("train", "lr"),
        batch_fraction=cfg.getfloat("train", "batch_frac"),
        batch_size=cfg.optional_int("train", "batch_size"),
        beta=cfg.getfloat("train", "beta"),
        seed=cfg.seed,
    )
    with Outputs(args.out) as outs:
        model = build(arch, cfg.seed)
        loss_path = outs.declare("loss.csv")
        with open(loss_path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["epoch", "loss"])

            def progress(epoch, loss):
                wr.writerow([epoch, repr(float(loss))])
                fh.flush()
                log.info("epoch %d loss %.6f", epoch, loss)

            model, _ = train(model, images, tcfg, progress=progress)
        save_checkpoint(model, outs.declare("model.pnae"))
        cfg.write(outs.declare("train.ini"))
        reads = raster_io.READ_AUDIT[start:]
        _guard_training_reads(reads)
        _write_audit(outs, reads)


def _load_model(path):
    path = _require(path, "checkpoint")
    _guard_training_reads([path])
    _audit_read(path)
    return load_checkpoint(path)


def _write_outputs_csv(outs: Outputs, method: str, rows) -> None:
    path = outs.declare("outputs.csv")
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["filename", "source", "method"])
        for r in rows:
            wr.writerow([_out_name(r["filename"]), r["filename"], method])


def cmd_denoise(cfg: RunConfig, args) -> None:
    start = len(raster_io.READ_AUDIT)
    model = _load_model(args.model)
    inputs = _Inputs(args.data, cfg.getint("denoise", "limit"))
    _guard_training_reads(inputs.path(r) for r in inputs.rows)
    size = model.arch.input_size
    chunk = cfg.getint("denoise", "chunk")
    with Outputs(args.out) as outs:
        for i in range(0, len(inputs.rows), chunk):
            rows = inputs.rows[i : i + chunk]
            raw = [inputs.load(r) for r in rows]
            batch = np.stack([x if x.shape == (size, size) else _resample(x, (size, size)) for x in raw])
            for r, x, y in zip(rows, raw, denoise_batch(model, batch, chunk)):
                y = y if x.shape == y.shape else _resample(y, x.shape)
                write_float_raster(y, outs.declare(_out_name(r["filename"])))
        _write_outputs_csv(outs, "ae", inputs.rows)
        cfg.write(outs.declare("denoise.ini"))
        reads = raster_io.READ_AUDIT[start:]
        _guard_training_reads(reads)
        _write_audit(outs, reads)


def cmd_baseline(cfg: RunConfig, args) -> None:
    start = len(raster_io.READ_AUDIT)
    method = cfg.get("baseline", "method")
    if method not in BASELINES:
        raise CommandError(f"unknown baseline {method!r}; choose from {sorted(BASELINES)}")
    inputs = _Inputs(args.data, cfg.getint("baseline", "limit"))
    _guard_training_reads(inputs.path(r) for r in inputs.rows)
    kwargs = {"sigma": cfg.getfloat("baseline", "gaussian_sigma")} if method == "gaussian" else {}
    if method == "bm3d-s1":
        kwargs = {"params": Bm3dParams()}
    with Outputs(args.out) as outs:
        targets = [outs.declare(_out_name(r["filename"])) for r in inputs.rows]

        def one(k):
            write_float_raster(run_baseline(method, inputs.load(inputs.rows[k]), **kwargs), targets[k])

        _pmap(one, list(range(len(inputs.rows))), worker_count())
        _write_outputs_csv(outs, method, inputs.rows)
        cfg.write(outs.declare("baseline.ini"))
        reads = raster_io.READ_AUDIT[start:]
        _guard_training_reads(reads)
        _write_audit(outs, reads)


def _parse_recon(specs) -> dict:
    out = {}
    for spec in specs or []:
        name, sep, path = spec.partition("=")
        if not sep or not name or not path:
            raise CommandError(f"--recon expects NAME=DIR, got {spec!r}")
        if name in out:
            raise CommandError(f"duplicate reconstruction name {name!r}")
        out[name] = _require(path, f"reconstruction directory for {name}")
    if not out:
        raise CommandError("evaluate needs at least one --recon NAME=DIR")
    return out


def _panel_arrays(gt, noisy, recons: dict, gt_edge, profiles: dict, psf, source, lam, lam_recon) -> dict:
    sig = noise_characterize(noisy)
    p = {
        "methods": np.array(list(recons)),
        "gt": gt,
        "center": np.array(gt_edge.center),
        "angles": gt_edge.angles,
        "sig_hist": sig.histogram,
        "sig_bins": sig.bin_edges,
        "sig_localvar": sig.local_variance,
        "sig_spectrum": sig.power_spectrum,
    }
    r, prof = radial_profile(gt, gt_edge.center)
    p["radial_r"], p["radial_gt"] = r, prof
    p["radius_gt"], p["sigma_gt"], p["conv_gt"] = gt_edge.radius, gt_edge.sigma, gt_edge.converged
    for name, img in recons.items():
        p[f"recon_{name}"] = img
        p[f"radial_{name}"] = radial_profile(img, gt_edge.center)[1]
        pr = profiles[name]
        p[f"radius_{name}"], p[f"sigma_{name}"], p[f"conv_{name}"] = pr.radius, pr.sigma, pr.converged
    if psf is not None:
        p["deconv_source"] = source
        for name, img in [("gt", gt)] + list(recons.items()):
            # residual noise in reconstructions needs far stronger regularisation than the noiseless GT
            est = wiener_tikhonov_deconvolve(img, psf, lam if name == "gt" else lam_recon)
            p[f"deconv_{name}"] = est
            p[f"deconv_pearson_{name}"] = np.float64(pearson(est, source))
            p[f"deconv_ssim_{name}"] = np.float64(ssim(est / max(est.max(), 1e-12), source / source.max()))
            p[f"deconv_psnr_{name}"] = np.float64(psnr(est / max(est.max(), 1e-12), source / source.max()))
            p[f"deconv_mse_{name}"] = np.float64(mse(est / max(est.max(), 1e-12), source / source.max()))
    return p


def cmd_evaluate(cfg: RunConfig, args) -> None:
    gt_path = _require(args.gt, "ground-truth raster")
    gt = np.asarray(read_float_raster(gt_path), np.float64)
    recon_dirs = _parse_recon(args.recon)
    inputs = _Inputs(args.data, args.limit or 0)
    names = [r["filename"] for r in inputs.rows]
    for m, d in recon_dirs.items():
        missing = [n for n in names if not (d / _out_name(n)).is_file()]
        if len(missing) == len(names):
            raise CommandError(f"no reconstructions for {m} in {d}")
    rows = [r for r in inputs.rows if all((d / _out_name(r["filename"])).is_file() for d in recon_dirs.values())]
    psf = source = None
    psf_path = Path(args.psf) if args.psf else gt_path.with_name("psf.nimg")
    if psf_path.is_file() and gt_path.with_name("source.nimg").is_file():
        psf = np.asarray(read_float_raster(psf_path), np.float64)
        source = np.asarray(read_float_raster(gt_path.with_name("source.nimg")), np.float64)
    gt_edge = edge_radius_and_sigma(gt)
    methods = ["noisy"] + list(recon_dirs)

    def one(row):
        noisy = np.asarray(inputs.load(row), np.float64)
        imgs = {"noisy": noisy}
        for m, d in recon_dirs.items():
            imgs[m] = np.asarray(read_float_raster(d / _out_name(row["filename"])), np.float64)
        recs, profs = [], {}
        for m in methods:
            rec, prof = evaluate_reconstruction(
                imgs[m], gt, noisy, m, row.get("noise-model", "unknown"), int(row.get("seed", -1)),
                row["filename"], gt_edge, return_profile=True,
            )
            recs.append(rec)
            profs[m] = prof
        return recs, imgs, profs

    results = _pmap(one, rows, worker_count())
    report = EvaluationReport()
    for recs, _, _ in results:
        for rec in recs:
            report.add(rec)
    report.apply_fidelity(cfg.get("evaluate", "reference"))
    with Outputs(args.out) as outs:
        report.write_csv(outs.declare("report.csv"))
        report.write_summary(outs.declare("summary.csv"))
        _, imgs, profs = results[0]
        panel = _panel_arrays(
            gt, imgs["noisy"], imgs, gt_edge, profs, psf, source,
            cfg.getfloat("evaluate", "deconv_lambda"), cfg.getfloat("evaluate", "deconv_lambda_recon"),
        )
        panel["noise_model"] = np.array(rows[0].get("noise-model", "unknown"))
        panel["image"] = np.array(rows[0]["filename"])
        save_npz(outs.declare("panels.npz"), panel)
        cfg.write(outs.declare("evaluate.ini"))


def _markdown_summary(eval_dirs) -> str:
    lines = []
    cols = [
        ("residual_mean", "residual mean"), ("residual_reduction", "reduction %"), ("psnr", "PSNR"),
        ("ssim", "SSIM"), ("radius_deficit", "radius deficit"), ("radius_within_2px", "within 2 px"),
        ("fidelity", "fidelity"),
    ]
    lines.append("| noise | method | n | " + " | ".join(c[1] for c in cols) + " |")
    lines.append("|" + "---|" * (3 + len(cols)))
    for d in eval_dirs:
        with open(d / "summary.csv", newline="") as fh:
            for row in csv.DictReader(fh):
                cells = []
                for key, _ in cols:
                    v = float(row.get(f"{key}_mean", "nan"))
                    cells.append("nan" if not np.isfinite(v) else f"{v:.4f}")
                lines.append(f"| {row['noise_model']} | {row['method']} | {row['n']} | " + " | ".join(cells) + " |")
    return "# Evaluation summary\n\n" + "\n".join(lines) + "\n"


def cmd_report(cfg: RunConfig, args) -> None:
    from .plots import FIGURES, render_all

    eval_dirs = [_require(d, "evaluation directory") for d in args.eval]
    sets = []
    for d in eval_dirs:
        for name in ("summary.csv", "report.csv", "panels.npz"):
            _require(d / name, f"evaluation output {name}")
        with np.load(d / "panels.npz") as z:
            sets.append({k: z[k] for k in z.files})
    with Outputs(args.out) as outs:
        for name, _ in FIGURES:
            outs.declare(name)
        render_all(sets, outs.dir, cfg.getint("report", "dpi"))
        outs.declare("summary.md").write_text(_markdown_summary(eval_dirs))
        cfg.write(outs.declare("report.ini"))


def cmd_roi(cfg: RunConfig, args) -> None:
    plate = import_raster(_require(args.plate, "plate raster"))
    rois = roi_extract(plate, args.size)
    if not rois:
        raise CommandError(f"no aperture images found on {args.plate}")
    with Outputs(args.out) as outs:
        path = outs.declare("rois.csv")
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["filename", "center-x", "center-y", "partial"])
            for k, roi in enumerate(rois):
                name = f"roi_{k:03d}.nimg"
                write_float_raster(roi, outs.declare(name))
                cx, cy = roi.meta["roi_center"]
                wr.writerow([name, repr(cx), repr(cy), int(roi.meta["partial"])])


def cmd_wavelet(cfg: RunConfig, args) -> None:
    src = _require(args.input, "input raster")
    x = np.asarray(import_raster(src), np.float64)
    levels = cfg.getint("train", "levels")
    if args.inverse:
        out = idwt2d(unpack_pyramid(x, levels))
    else:
        pyr = dwt2d(x, levels)
        shrink = cfg.getfloat("train", "shrink")
        if shrink > 0:
            pyr.details = [tuple(soft_threshold(b, shrink) for b in lvl) for lvl in pyr.details]
        out = pack_pyramid(pyr)
    with Outputs(Path(args.output).parent) as outs:
        write_float_raster(out, outs.declare(Path(args.output).name))


# ---------------------------------------------------------------- argument parsing

COMMANDS = {
    "simulate": cmd_simulate,
    "corrupt": cmd_corrupt,
    "train": cmd_train,
    "denoise": cmd_denoise,
    "baseline": cmd_baseline,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
    "roi": cmd_roi,
    "wavelet": cmd_wavelet,
}

# flag dest -> config key; flags left unset keep the config value
_OVERRIDES = {
    "seed": "run.seed",
    "noise": "corrupt.noise",
    "snr": "corrupt.snr",
    "n": "corrupt.n",
    "levels": "train.levels",
    "shrink": "train.shrink",
    "epochs": "train.epochs",
    "lr": "train.lr",
    "batch_frac": "train.batch_frac",
    "batch_size": "train.batch_size",
    "beta": "train.beta",
    "schedule": "train.schedule",
    "method": "baseline.method",
    "source_sigma": "simulate.source_sigma",
    "aperture_radius": "simulate.aperture_radius",
}


def _common(p: argparse.ArgumentParser, out_required: bool = True) -> None:
    p.add_argument("--config", help="INI file with run settings")
    p.add_argument("--seed", type=int)
    if out_required:
        p.add_argument("--out", required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="penumbra", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="render ground truth, source and aperture PSF")
    _common(p)
    p.add_argument("--mode", choices=["pinhole", "penumbral"])
    p.add_argument("--source-sigma", type=float)
    p.add_argument("--aperture-radius", type=float)

    p = sub.add_parser("corrupt", help="noisy realisations of a ground truth plus manifest")
    _common(p)
    p.add_argument("--gt", required=True)
    p.add_argument("--noise", choices=["gaussian", "mixed"])
    p.add_argument("--snr", type=float)
    p.add_argument("--n", type=int)

    p = sub.add_parser("train", help="train the autoencoder on a noisy set")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--mode", choices=["pinhole", "penumbral"])
    p.add_argument("--schedule")
    p.add_argument("--levels", type=int)
    p.add_argument("--shrink", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-frac", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--beta", type=float)
    p.add_argument("--limit", type=int, help="train on the first N images only")

    p = sub.add_parser("denoise", help="run a trained checkpoint over a set of rasters")
    _common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--limit", type=int)

    p = sub.add_parser("baseline", help="classical denoiser over a set of rasters")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--method", choices=sorted(BASELINES))
    p.add_argument("--limit", type=int)

    p = sub.add_parser("evaluate", help="score reconstructions against ground truth")
    _common(p)
    p.add_argument("--gt", required=True)
    p.add_argument("--data", required=True, help="noisy set the reconstructions came from")
    p.add_argument("--recon", action="append", metavar="NAME=DIR")
    p.add_argument("--psf")
    p.add_argument("--limit", type=int)

    p = sub.add_parser("report", help="figure panels and markdown summary from evaluate outputs")
    _common(p)
    p.add_argument("--eval", action="append", required=True, metavar="DIR")

    p = sub.add_parser("roi", help="crop aperture images from a plate")
    _common(p)
    p.add_argument("--plate", required=True)
    p.add_argument("--size", type=int, default=256)

    p = sub.add_parser("wavelet", help="CDF 9/7 forward or inverse transform of one raster")
    _common(p, out_required=False)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--levels", type=int)
    p.add_argument("--shrink", type=float)
    p.add_argument("--inverse", action="store_true")
    return ap


def resolve_config(args) -> RunConfig:
    overrides = {key: getattr(args, dest, None) for dest, key in _OVERRIDES.items()}
    mode = getattr(args, "mode", None)
    if mode is not None:
        overrides["simulate.mode" if args.command == "simulate" else "train.mode"] = mode
    limit = getattr(args, "limit", None)
    if limit is not None and args.command in ("denoise", "baseline"):
        overrides[f"{args.command}.limit"] = limit
    return RunConfig.load(args.config, overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        COMMANDS[args.command](cfg, args)
    except (CommandError, FileNotFoundError, ValueError) as exc:
        print(f"penumbra {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
