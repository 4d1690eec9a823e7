"""The 2-D raster passed between every stage of the pipeline."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class ImageGrid:
    """Scalar raster (row-major, ``pixels[y, x]``) with free-form metadata.

    Pixel values are normalised intensities, typically in [0, 1]. Arrays are
    accepted wherever an ImageGrid is, via ``np.asarray``.
    """

    pixels: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float32)
        if px.ndim != 2 or px.size == 0:
            raise ValueError(f"ImageGrid needs a non-empty 2-D raster, got shape {px.shape}")
        if not np.isfinite(px).all():
            raise ValueError("ImageGrid pixels must be finite")
        self.pixels = px

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def shape(self) -> tuple:
        return self.pixels.shape

    def __array__(self, dtype=None, copy=None):
        return self.pixels if dtype is None else self.pixels.astype(dtype)

    def with_pixels(self, pixels, **meta) -> "ImageGrid":
        return ImageGrid(pixels, {**self.meta, **meta})


def as_array(image, dtype=np.float64) -> np.ndarray:
    arr = np.asarray(image, dtype=dtype)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {arr.shape}")
    return arr
