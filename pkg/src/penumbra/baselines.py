"""Classical comparators: Gaussian blur, local Wiener filter, BM3D stage 1."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import ndimage
from scipy.fft import dctn, idctn

from .grid import ImageGrid, as_array
from .wavelet import cdf97_filter_bank, dwt2d

BM3D_LABEL = "bm3d-s1"


def _grid(out, image, **meta):
    return ImageGrid(out, dict(getattr(image, "meta", {}), **meta))


def gaussian_filter(image, sigma: float) -> ImageGrid:
    """Separable Gaussian blur, half-sample symmetric boundary, radius ceil(3 sigma)."""
    if sigma <= 0:
        raise ValueError("gaussian filter sigma must be positive")
    x = as_array(image)
    radius = int(math.ceil(3 * sigma))
    out = ndimage.gaussian_filter(x, sigma, mode="reflect", truncate=radius / sigma)
    return _grid(out, image, filtered="gaussian")


def wiener_filter(image, noise_var: float, window: int = 5) -> ImageGrid:
    """Local adaptive Wiener filter from windowed mean and variance."""
    if noise_var < 0:
        raise ValueError("noise variance must be >= 0")
    if window < 1 or window % 2 == 0:
        raise ValueError("window must be a positive odd size")
    x = as_array(image)
    mean = ndimage.uniform_filter(x, window, mode="reflect")
    var = np.maximum(ndimage.uniform_filter(x * x, window, mode="reflect") - mean * mean, 0.0)
    den = np.maximum(var, noise_var)
    gain = np.divide(np.maximum(var - noise_var, 0.0), den, out=np.zeros_like(den), where=den > 0)
    out = mean + gain * (x - mean)
    return _grid(out, image, filtered="wiener")


def estimate_noise_sigma(image) -> float:
    """MAD estimate from the finest diagonal subband.

    The 9/7 high-pass filter is not unit-norm under our scaling, so the
    raw MAD/0.6745 is divided by the 2-D filter norm.
    """
    x = as_array(image)
    hh = dwt2d(x, levels=1).details[0][2]
    g = np.asarray(cdf97_filter_bank().analysis_high)
    norm2d = float(np.dot(g, g))
    return float(np.median(np.abs(hh)) / 0.6745 / norm2d)


@dataclass(frozen=True)
class Bm3dParams:
    block_size: int = 8
    search_window: int = 39
    max_matches: int = 16
    step: int = 3
    match_threshold: Optional[float] = None  # mean squared block distance; None -> from sigma
    lam: float = 2.7
    sigma: Optional[float] = None  # None -> estimate_noise_sigma

    def __post_init__(self):
        if self.block_size > self.search_window:
            raise ValueError("block size must not exceed the search window")
        if self.max_matches < 1:
            raise ValueError("max_matches must be >= 1")
        if self.step < 1 or self.step > self.block_size:
            raise ValueError("reference step must lie in [1, block_size]")

    def threshold_for(self, sigma: float) -> float:
        if self.match_threshold is not None:
            return self.match_threshold
        # two noisy copies of one block differ by 2 sigma^2 per pixel on average
        return 3.0 * sigma**2 + (2500.0 / 255.0**2)


def haar_matrix(n: int) -> np.ndarray:
    """Orthonormal multi-level Haar transform for a power-of-two length."""
    if n & (n - 1):
        raise ValueError("Haar length must be a power of two")
    h = np.ones((1, 1))
    while h.shape[0] < n:
        m = h.shape[0]
        h = np.vstack([np.kron(h, [1.0, 1.0]), np.kron(np.eye(m), [1.0, -1.0])]) / math.sqrt(2.0)
    return h


def _reference_positions(extent: int, block: int, step: int) -> np.ndarray:
    pos = list(range(0, extent - block + 1, step))
    if pos[-1] != extent - block:
        pos.append(extent - block)
    return np.asarray(pos)


def _block_matches(x: np.ndarray, ry: np.ndarray, rx: np.ndarray, p: Bm3dParams, tau: float):
    """Nearest ``max_matches`` blocks per reference within the search window.

    Returns (ys, xs, counts): candidate coordinates sorted by distance and the
    number within the threshold (always >= 1, the reference itself).
    """
    h, w = x.shape
    b = p.block_size
    half = p.search_window // 2
    n_ref = len(ry)
    best_d = np.full((n_ref, p.max_matches), np.inf)
    best_y = np.zeros((n_ref, p.max_matches), dtype=np.int64)
    best_x = np.zeros((n_ref, p.max_matches), dtype=np.int64)
    norm = 1.0 / (b * b)
    for dy in range(-half, half + 1):
        cy = ry + dy
        ok_y = (cy >= 0) & (cy <= h - b)
        if not ok_y.any():
            continue
        y_lo, y_hi = max(0, -dy), min(h, h - dy)
        for dx in range(-half, half + 1):
            cx = rx + dx
            ok = ok_y & (cx >= 0) & (cx <= w - b)
            if not ok.any():
                continue
            x_lo, x_hi = max(0, -dx), min(w, w - dx)
            diff = np.zeros_like(x)
            d = x[y_lo:y_hi, x_lo:x_hi] - x[y_lo + dy : y_hi + dy, x_lo + dx : x_hi + dx]
            diff[y_lo:y_hi, x_lo:x_hi] = d * d
            cs = np.zeros((h + 1, w + 1))
            cs[1:, 1:] = diff.cumsum(0).cumsum(1)
            ssd = cs[b:, b:] - cs[:-b, b:] - cs[b:, :-b] + cs[:-b, :-b]
            dist = np.full(n_ref, np.inf)
            dist[ok] = ssd[ry[ok], rx[ok]] * norm
            if dy == 0 and dx == 0:
                dist[:] = -1.0  # the reference heads its own group even when distances tie
            worst = best_d.argmax(axis=1)
            rows = np.nonzero(dist < best_d[np.arange(n_ref), worst])[0]
            best_d[rows, worst[rows]] = dist[rows]
            best_y[rows, worst[rows]] = cy[rows]
            best_x[rows, worst[rows]] = cx[rows]
    order = np.argsort(best_d, axis=1, kind="stable")
    best_d = np.take_along_axis(best_d, order, 1)
    best_y = np.take_along_axis(best_y, order, 1)
    best_x = np.take_along_axis(best_x, order, 1)
    counts = np.maximum((best_d <= tau).sum(axis=1), 1)
    return best_y, best_x, counts


def bm3d_stage1(image, params: Bm3dParams = Bm3dParams(), return_weights: bool = False):
    """Collaborative hard thresholding (the first BM3D stage).

    Groups are trimmed to the largest power of two not exceeding the number
    of matches within the distance threshold, transformed with an orthonormal
    2-D DCT per block and a Haar transform across the group, hard
    thresholded at ``lam * sigma`` and aggregated with weight
    ``1 / retained`` per group.
    """
    x = as_array(image)
    h, w = x.shape
    b = params.block_size
    if h < b or w < b:
        raise ValueError(f"image {w}x{h} smaller than block size {b}")
    sigma = estimate_noise_sigma(x) if params.sigma is None else float(params.sigma)
    thr = params.lam * sigma
    tau = params.threshold_for(sigma)
    gy, gx = np.meshgrid(_reference_positions(h, b, params.step), _reference_positions(w, b, params.step), indexing="ij")
    ry, rx = gy.ravel(), gx.ravel()
    ys, xs, counts = _block_matches(x, ry, rx, params, tau)
    sizes = 2 ** np.floor(np.log2(counts)).astype(int)
    num = np.zeros((h, w))
    den = np.zeros((h, w))
    iy, ix = np.mgrid[0:b, 0:b]
    for n in np.unique(sizes):
        sel = np.nonzero(sizes == n)[0]
        gys, gxs = ys[sel, :n], xs[sel, :n]
        py = gys[:, :, None, None] + iy
        px = gxs[:, :, None, None] + ix
        group = x[py, px]  # (m, n, b, b)
        coef = dctn(group, axes=(2, 3), norm="ortho")
        hm = haar_matrix(n)
        coef = np.einsum("ij,mjkl->mikl", hm, coef)
        keep = np.abs(coef) >= thr if thr > 0 else np.ones(coef.shape, dtype=bool)
        coef = np.where(keep, coef, 0.0)
        retained = keep.reshape(len(sel), -1).sum(axis=1)
        wgt = 1.0 / np.maximum(retained, 1)
        est = idctn(np.einsum("ji,mjkl->mikl", hm, coef), axes=(2, 3), norm="ortho")
        np.add.at(num, (py, px), wgt[:, None, None, None] * est)
        np.add.at(den, (py, px), np.broadcast_to(wgt[:, None, None, None], est.shape))
    out = num / den
    grid = _grid(out, image, filtered=BM3D_LABEL, sigma=sigma)
    if return_weights:
        return grid, den
    return grid


BASELINES = {
    "gaussian": lambda img, **kw: gaussian_filter(img, kw.get("sigma", 1.5)),
    "wiener": lambda img, **kw: wiener_filter(
        img, kw["noise_var"] if kw.get("noise_var") is not None else estimate_noise_sigma(img) ** 2, kw.get("window", 5)
    ),
    BM3D_LABEL: lambda img, **kw: bm3d_stage1(img, kw.get("params", Bm3dParams())),
}


def run_baseline(name: str, image, **kwargs) -> ImageGrid:
    if name not in BASELINES:
        raise ValueError(f"unknown baseline {name!r}; choose from {sorted(BASELINES)}")
    return BASELINES[name](image, **kwargs)
