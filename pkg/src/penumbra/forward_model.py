"""Synthetic aperture images and the two noise models.

Ground truth is an aperture disc convolved with a Gaussian source, peak
normalised to 1. Noise is either signal-scaled Gaussian or Poisson applied
on top of the Gaussian-noised image.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.signal import fftconvolve

from .grid import ImageGrid
from .raster_io import write_float_raster

SUBSAMPLES = 4

MANIFEST_COLUMNS = ["filename", "seed", "noise-model", "snr", "source-sigma", "aperture-radius"]


@dataclass(frozen=True)
class SourceSpec:
    """Gaussian source. ``center`` defaults to the frame centre."""

    sigma: float = 8.0
    amplitude: float = 1.0
    center: Optional[tuple] = None

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError(f"source sigma must be positive, got {self.sigma}")
        if self.amplitude <= 0:
            raise ValueError(f"source amplitude must be positive, got {self.amplitude}")


def aperture_kind(radius: float, sigma: float) -> str:
    """Penumbral when the disc is larger than the source extent (3 sigma)."""
    return "penumbral" if radius > 3 * sigma else "pinhole"


@dataclass(frozen=True)
class ApertureSpec:
    radius: float = 64.0
    center: Optional[tuple] = None
    kind: Optional[str] = None

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError(f"aperture radius must be positive, got {self.radius}")
        if self.kind not in (None, "pinhole", "penumbral"):
            raise ValueError(f"unknown aperture kind {self.kind!r}")

    def resolved_kind(self, sigma: float) -> str:
        kind = aperture_kind(self.radius, sigma)
        if self.kind is not None and self.kind != kind:
            raise ValueError(
                f"aperture of radius {self.radius} with source sigma {sigma} is {kind}, not {self.kind}"
            )
        return kind


@dataclass(frozen=True)
class NoiseConfig:
    model: str = "gaussian"
    snr: float = 10.0
    seed: int = 0
    mixed_rescale: str = "intensity-preserving"

    def __post_init__(self):
        if self.model not in ("gaussian", "mixed"):
            raise ValueError(f"unknown noise model {self.model!r}")
        if self.snr <= 0:
            raise ValueError("snr must be positive")
        if self.mixed_rescale not in ("intensity-preserving", "literal"):
            raise ValueError(f"unknown mixed rescale mode {self.mixed_rescale!r}")


def frame_center(size) -> tuple:
    w, h = size
    return ((w - 1) / 2.0, (h - 1) / 2.0)


def disc_raster(radius: float, center, size, subsamples: int = SUBSAMPLES) -> np.ndarray:
    """Disc indicator with ``subsamples``^2 area sampling per pixel."""
    w, h = size
    cx, cy = center
    offs = (np.arange(subsamples) + 0.5) / subsamples - 0.5
    ys = (np.arange(h)[:, None] + offs[None, :]).reshape(-1)
    xs = (np.arange(w)[:, None] + offs[None, :]).reshape(-1)
    inside = ((ys[:, None] - cy) ** 2 + (xs[None, :] - cx) ** 2) <= radius**2
    return inside.reshape(h, subsamples, w, subsamples).mean(axis=(1, 3))


def gaussian_kernel(sigma: float, shift=(0.0, 0.0)) -> np.ndarray:
    dx, dy = shift
    r = int(math.ceil(4 * sigma + max(abs(dx), abs(dy))))
    r = max(r, 1)
    ax = np.arange(-r, r + 1, dtype=np.float64)
    ky = np.exp(-0.5 * ((ax - dy) / sigma) ** 2)
    kx = np.exp(-0.5 * ((ax - dx) / sigma) ** 2)
    k = np.outer(ky, kx)
    return k / k.sum()


def render_source(source: SourceSpec, size) -> ImageGrid:
    """The Gaussian source itself, peak ``amplitude``."""
    w, h = size
    cx, cy = source.center if source.center is not None else frame_center(size)
    yy, xx = np.mgrid[0:h, 0:w]
    img = source.amplitude * np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * source.sigma**2))
    return ImageGrid(img, {"kind": "source", "sigma": source.sigma, "center": (cx, cy)})


def aperture_psf(aperture: ApertureSpec, size) -> ImageGrid:
    """Aperture disc normalised to unit sum, the PSF used for deconvolution."""
    center = aperture.center if aperture.center is not None else frame_center(size)
    disc = disc_raster(aperture.radius, center, size)
    return ImageGrid(disc / disc.sum(), {"kind": "psf", "radius": aperture.radius, "center": center})


def render_ground_truth(source: SourceSpec, aperture: ApertureSpec, size=(256, 256)) -> ImageGrid:
    """Disc convolved (same size, zero padded) with the unit-integral Gaussian source."""
    w, h = size
    fc = frame_center(size)
    center = aperture.center if aperture.center is not None else fc
    cx, cy = center
    margin = aperture.radius + 3 * source.sigma
    if cx - margin < -0.5 or cy - margin < -0.5 or cx + margin > w - 0.5 or cy + margin > h - 0.5:
        raise ValueError(
            f"aperture disc (radius {aperture.radius} + 3 sigma margin) at {center} does not fit a {w}x{h} frame"
        )
    kind = aperture.resolved_kind(source.sigma)
    disc = disc_raster(aperture.radius, center, size)
    src_c = source.center if source.center is not None else fc
    kernel = gaussian_kernel(source.sigma, (src_c[0] - fc[0], src_c[1] - fc[1]))
    img = fftconvolve(disc, kernel, mode="same")
    img = np.clip(img, 0.0, None)
    img /= img.max()
    meta = {
        "kind": kind,
        "aperture_radius": aperture.radius,
        "aperture_center": tuple(center),
        "source_sigma": source.sigma,
    }
    return ImageGrid(img, meta)


def _mixed_rng(seed: int) -> np.random.Generator:
    # independent of the Gaussian stream drawn from the same seed
    return np.random.default_rng([int(seed), 1])


def add_gaussian_noise(clean, cfg: NoiseConfig) -> ImageGrid:
    """``I0 + RMS(I0) * eps`` with eps ~ N(0, 1), RMS over the whole frame."""
    i0 = np.asarray(clean, dtype=np.float64)
    rms = math.sqrt(float(np.mean(i0**2)))
    meta = dict(getattr(clean, "meta", {}), noise="gaussian", seed=cfg.seed)
    if rms == 0.0:
        return ImageGrid(i0.copy(), meta)
    eps = np.random.default_rng(cfg.seed).standard_normal(i0.shape)
    return ImageGrid(i0 + rms * eps, meta)


def add_mixed_noise(gauss_noisy, clean, cfg: NoiseConfig) -> ImageGrid:
    """Poisson counts with mean ``SNR^2 * I / max(I)`` drawn over the Gaussian-noised image.

    Negative inputs are clamped first. ``intensity-preserving`` rescales
    counts by ``max(I) / SNR^2`` so each pixel keeps its expected value;
    ``literal`` rescales by ``max(I0) / SNR``.
    """
    i = np.clip(np.asarray(gauss_noisy, dtype=np.float64), 0.0, None)
    peak = float(i.max())
    if peak <= 0:
        raise ValueError("mixed noise needs an image with a positive maximum")
    snr2 = cfg.snr**2
    counts = _mixed_rng(cfg.seed).poisson(snr2 * i / peak)
    if cfg.mixed_rescale == "literal":
        scale = float(np.max(np.asarray(clean, dtype=np.float64))) / cfg.snr
    else:
        scale = peak / snr2
    meta = dict(getattr(clean, "meta", {}), noise="mixed", seed=cfg.seed, snr=cfg.snr)
    return ImageGrid(counts * scale, meta)


def corrupt(clean, cfg: NoiseConfig) -> ImageGrid:
    """Apply the configured noise model end to end."""
    noisy = add_gaussian_noise(clean, cfg)
    if cfg.model == "mixed":
        noisy = add_mixed_noise(noisy, clean, cfg)
    return noisy


def image_seeds(base_seed: int, n: int) -> list:
    return [int(s) for s in np.random.default_rng(base_seed).integers(0, 2**63 - 1, size=n)]


@dataclass
class DatasetManifest:
    directory: Path
    ground_truth: str
    rows: list = field(default_factory=list)

    @property
    def files(self) -> list:
        return [self.directory / r["filename"] for r in self.rows]

    def write(self) -> Path:
        path = self.directory / "manifest.csv"
        with open(path, "w", newline="") as fh:
            wr = csv.DictWriter(fh, fieldnames=MANIFEST_COLUMNS)
            wr.writeheader()
            wr.writerows(self.rows)
        return path

    @classmethod
    def read(cls, directory) -> "DatasetManifest":
        directory = Path(directory)
        with open(directory / "manifest.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls(directory, "ground_truth.nimg", rows)


def corrupt_dataset(
    gt,
    n: int,
    cfg: NoiseConfig,
    out_dir,
    source_sigma: float = float("nan"),
    aperture_radius: float = float("nan"),
    workers: int = 1,
    write_ground_truth: bool = True,
) -> DatasetManifest:
    """Write ``n`` noisy realisations of ``gt`` plus a manifest with per-image seeds."""
    if n < 1:
        raise ValueError("dataset needs at least one image")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if write_ground_truth:
        write_float_raster(gt, out / "ground_truth.nimg")
    seeds = image_seeds(cfg.seed, n)
    width = max(5, len(str(n - 1)))

    def _one(k):
        c = NoiseConfig(cfg.model, cfg.snr, seeds[k], cfg.mixed_rescale)
        name = f"noisy_{k:0{width}d}.nimg"
        write_float_raster(corrupt(gt, c), out / name)
        return {
            "filename": name,
            "seed": seeds[k],
            "noise-model": cfg.model,
            "snr": cfg.snr,
            "source-sigma": source_sigma,
            "aperture-radius": aperture_radius,
        }

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            rows = list(pool.map(_one, range(n)))
    else:
        rows = [_one(k) for k in range(n)]
    manifest = DatasetManifest(out, "ground_truth.nimg", rows)
    manifest.write()
    return manifest


def generate_dataset(
    n: int,
    source: SourceSpec,
    aperture: ApertureSpec,
    cfg: NoiseConfig,
    out_dir,
    size=(256, 256),
    workers: int = 1,
) -> DatasetManifest:
    """Write ``n`` noisy realisations of one ground truth, the ground truth and a manifest."""
    if n < 1:
        raise ValueError("dataset needs at least one image")
    gt = render_ground_truth(source, aperture, size)
    return corrupt_dataset(gt, n, cfg, out_dir, source.sigma, aperture.radius, workers)
