"""Figure panels rendered from evaluation artefacts.

Each ``fig*`` function takes a list of panel sets (one per evaluation run,
as loaded from ``panels.npz``) and writes a single PNG.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import PolarImage, polar_resample  # noqa: E402

# PNG text chunks carry the library version by default; drop it so re-runs match byte for byte
_META = {"Software": None}


def _methods(ps) -> list:
    return [str(m) for m in ps["methods"]]


def _save(fig, path, dpi) -> Path:
    path = Path(path)
    fig.savefig(path, dpi=dpi, metadata=_META)
    plt.close(fig)
    return path


def _label(ps) -> str:
    return str(ps["noise_model"])


def fig_noise(sets, path, dpi=80) -> Path:
    """Histogram, local variance and log power spectrum of each noisy input."""
    fig, axes = plt.subplots(len(sets), 3, figsize=(10, 3 * len(sets)), squeeze=False)
    for row, ps in zip(axes, sets):
        edges = ps["sig_bins"]
        row[0].stairs(ps["sig_hist"], edges)
        row[0].set_title(f"{_label(ps)}: histogram")
        row[0].set_xlabel("intensity")
        im = row[1].imshow(ps["sig_localvar"], cmap="magma")
        row[1].set_title("local variance")
        fig.colorbar(im, ax=row[1])
        im = row[2].imshow(ps["sig_spectrum"], cmap="viridis")
        row[2].set_title("log power spectrum")
        fig.colorbar(im, ax=row[2])
    fig.tight_layout()
    return _save(fig, path, dpi)


def fig_views(sets, path, dpi=80) -> Path:
    """Cartesian and polar views of ground truth and every reconstruction."""
    cols = ["gt"] + [m for m in _methods(sets[0])]
    fig, axes = plt.subplots(2 * len(sets), len(cols), figsize=(2.4 * len(cols), 4.8 * len(sets)), squeeze=False)
    for k, ps in enumerate(sets):
        center = tuple(ps["center"])
        for j, name in enumerate(cols):
            img = ps["gt"] if name == "gt" else ps[f"recon_{name}"]
            pol: PolarImage = polar_resample(img, center, n_angles=360)
            axes[2 * k, j].imshow(img, cmap="gray", vmin=0, vmax=1.1)
            axes[2 * k, j].set_title(f"{_label(ps)}: {name}", fontsize=8)
            axes[2 * k + 1, j].imshow(
                pol.values.T, cmap="gray", vmin=0, vmax=1.1, aspect="auto", origin="lower",
                extent=(0, 360, pol.radii[0], pol.radii[-1]),
            )
            axes[2 * k + 1, j].set_xlabel("angle (deg)", fontsize=7)
        for ax in axes[2 * k]:
            ax.set_axis_off()
    fig.tight_layout()
    return _save(fig, path, dpi)


def _angle_series(sets, path, key, ylabel, dpi):
    fig, axes = plt.subplots(len(sets), 1, figsize=(8, 3 * len(sets)), squeeze=False)
    for ax, ps in zip(axes[:, 0], sets):
        deg = np.degrees(ps["angles"])
        for name in ["gt"] + _methods(ps):
            vals = np.where(ps[f"conv_{name}"], ps[f"{key}_{name}"], np.nan)
            ax.plot(deg, vals, lw=1.5 if name == "gt" else 1.0, label=name)
        ax.set_title(_label(ps))
        ax.set_xlabel("angle (deg)")
        ax.set_ylabel(ylabel)
        ax.legend(fontsize=7)
    fig.tight_layout()
    return _save(fig, path, dpi)


def fig_radius(sets, path, dpi=80) -> Path:
    """Fitted edge radius against angle."""
    return _angle_series(sets, path, "radius", "radius (px)", dpi)


def fig_sigma(sets, path, dpi=80) -> Path:
    """Fitted edge blur sigma against angle."""
    return _angle_series(sets, path, "sigma", "edge sigma (px)", dpi)


def fig_residuals(sets, path, dpi=80) -> Path:
    """Absolute residual maps against ground truth."""
    methods = _methods(sets[0])
    fig, axes = plt.subplots(len(sets), len(methods), figsize=(2.6 * len(methods), 2.6 * len(sets)), squeeze=False)
    for row, ps in zip(axes, sets):
        for ax, name in zip(row, methods):
            res = np.abs(ps[f"recon_{name}"] - ps["gt"])
            im = ax.imshow(res, cmap="inferno", vmin=0, vmax=0.1)
            ax.set_title(f"{_label(ps)}: {name}\nmean {res.mean():.3f}", fontsize=8)
            ax.set_axis_off()
        fig.colorbar(im, ax=list(row), shrink=0.8)
    return _save(fig, path, dpi)


def fig_radial(sets, path, dpi=80) -> Path:
    """Azimuthally averaged intensity against radius."""
    fig, axes = plt.subplots(1, len(sets), figsize=(5 * len(sets), 3.5), squeeze=False)
    for ax, ps in zip(axes[0], sets):
        r = ps["radial_r"]
        for name in ["gt"] + _methods(ps):
            ax.plot(r, ps[f"radial_{name}"], lw=1.5 if name == "gt" else 1.0, label=name)
        ax.set_title(_label(ps))
        ax.set_xlabel("radius (px)")
        ax.set_ylabel("mean intensity")
        ax.legend(fontsize=7)
    fig.tight_layout()
    return _save(fig, path, dpi)


def fig_deconvolution(sets, path, dpi=80) -> Path:
    """Wiener-Tikhonov source estimates next to the true source."""
    available = [ps for ps in sets if "deconv_source" in ps]
    names = ["source", "gt"] + (_methods(available[0]) if available else [])
    fig, axes = plt.subplots(
        max(len(available), 1), len(names), figsize=(2.4 * len(names), 3.0 * max(len(available), 1)), squeeze=False
    )
    if not available:
        axes[0, 0].text(0.5, 0.5, "no PSF supplied", ha="center", va="center")
    for row, ps in zip(axes, available):
        for ax, name in zip(row, names):
            ax.imshow(ps[f"deconv_{name}"], cmap="gray")
            title = f"{_label(ps)}: {name}"
            if f"deconv_pearson_{name}" in ps:
                title += f"\nr={float(ps[f'deconv_pearson_{name}']):.3f}"
                title += f"\nSSIM {float(ps[f'deconv_ssim_{name}']):.2f} PSNR {float(ps[f'deconv_psnr_{name}']):.1f}"
            ax.set_title(title, fontsize=7)
    for ax in axes.ravel():
        ax.set_axis_off()
    fig.tight_layout()
    return _save(fig, path, dpi)


FIGURES = [
    ("fig05_noise.png", fig_noise),
    ("fig06_views.png", fig_views),
    ("fig07_radius.png", fig_radius),
    ("fig08_sigma.png", fig_sigma),
    ("fig09_residuals.png", fig_residuals),
    ("fig10_radial.png", fig_radial),
    ("fig11_deconvolution.png", fig_deconvolution),
]


def render_all(sets, out_dir, dpi=80) -> list:
    out_dir = Path(out_dir)
    return [fn(sets, out_dir / name, dpi) for name, fn in FIGURES]
