"""Region-of-interest extraction from multi-aperture plate images."""

from __future__ import annotations

import logging
import warnings

import numpy as np
from scipy import ndimage

from .grid import ImageGrid, as_array

log = logging.getLogger(__name__)


def find_blobs(plate, k_sigma: float = 2.0, min_area: int = 4) -> list:
    """Intensity centroids ``(x, y)`` of connected regions above ``mean + k * std``."""
    x = as_array(plate)
    thr = x.mean() + k_sigma * x.std()
    mask = x > thr
    labels, n = ndimage.label(mask)
    if n == 0:
        return []
    idx = np.arange(1, n + 1)
    areas = ndimage.sum_labels(mask, labels, idx)
    keep = idx[areas >= min_area]
    if keep.size == 0:
        return []
    cms = ndimage.center_of_mass(np.clip(x, 0, None), labels, keep)
    # row-major scan order of the label image keeps output deterministic
    return [(float(cx), float(cy)) for cy, cx in cms]


def crop(plate, center, size: int = 256) -> ImageGrid:
    """``size`` x ``size`` window around ``center`` with zero fill outside the plate."""
    x = as_array(plate)
    h, w = x.shape
    cx, cy = center
    x0 = int(round(cx)) - size // 2
    y0 = int(round(cy)) - size // 2
    out = np.zeros((size, size))
    sx0, sy0 = max(x0, 0), max(y0, 0)
    sx1, sy1 = min(x0 + size, w), min(y0 + size, h)
    partial = not (sx0 == x0 and sy0 == y0 and sx1 == x0 + size and sy1 == y0 + size)
    if sx1 > sx0 and sy1 > sy0:
        out[sy0 - y0 : sy1 - y0, sx0 - x0 : sx1 - x0] = x[sy0:sy1, sx0:sx1]
    meta = {"roi_center": (float(cx), float(cy)), "roi_origin": (x0, y0), "partial": partial}
    return ImageGrid(out, meta)


def roi_extract(plate, size: int = 256, centers="auto") -> list:
    """Crop one ROI per aperture image; ``centers="auto"`` finds bright blobs."""
    x = as_array(plate)
    if x.shape[0] < size and x.shape[1] < size:
        raise ValueError(f"plate {x.shape[1]}x{x.shape[0]} is smaller than the {size} px ROI")
    if isinstance(centers, str):
        if centers != "auto":
            raise ValueError(f"centers must be 'auto' or a list, got {centers!r}")
        centers = find_blobs(x)
        if not centers:
            warnings.warn("no bright blobs found on plate; no ROIs extracted", RuntimeWarning, stacklevel=2)
            return []
    rois = [crop(x, c, size) for c in centers]
    n_partial = sum(r.meta["partial"] for r in rois)
    if n_partial:
        log.info("%d of %d ROIs clipped at plate borders", n_partial, len(rois))
    return rois
