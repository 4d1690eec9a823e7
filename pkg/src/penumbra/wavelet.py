"""CDF 9/7 biorthogonal wavelet transform by lifting.

The 1-D transform uses four lifting steps plus scaling, with whole-point
symmetric boundary extension realised as index mirroring inside each step.
It is non-expansive: a length-N signal yields ceil(N/2) approximation and
floor(N/2) detail coefficients.

Scaling puts the analysis low-pass at DC gain sqrt(2), so the transform is
close to orthonormal.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import tensor as T

# Daubechies-Sweldens factorisation of the 9/7 pair.
ALPHA = -1.586134342059924
BETA = -0.052980118572961
GAMMA = 0.882911075530934
DELTA = 0.443506852043971
ZETA = 1.149604398860241


def lifting_coefficients() -> tuple:
    """Return ``(alpha, beta, gamma, delta, zeta)``."""
    return ALPHA, BETA, GAMMA, DELTA, ZETA


# ---------------------------------------------------------------- 1-D lifting


def _next(s: np.ndarray, n: int) -> np.ndarray:
    # s[k+1] for k < n, mirrored at the right edge
    if s.shape[-1] > n:
        return s[..., 1 : n + 1]
    return np.concatenate([s[..., 1:], s[..., -1:]], axis=-1)


def _prev_cur(d: np.ndarray, n: int):
    # (d[k-1], d[k]) for k < n, mirrored at both edges
    prev = np.concatenate([d[..., :1], d[..., : n - 1]], axis=-1)
    cur = d if d.shape[-1] == n else np.concatenate([d, d[..., -1:]], axis=-1)
    return prev, cur


def _forward_last(x: np.ndarray):
    n = x.shape[-1]
    if n < 2:
        raise ValueError(f"dwt needs at least 2 samples along the transform axis, got {n}")
    s = x[..., 0::2].astype(np.float64)
    d = x[..., 1::2].astype(np.float64)
    ns, nd = s.shape[-1], d.shape[-1]
    d += ALPHA * (s[..., :nd] + _next(s, nd))
    p, c = _prev_cur(d, ns)
    s += BETA * (p + c)
    d += GAMMA * (s[..., :nd] + _next(s, nd))
    p, c = _prev_cur(d, ns)
    s += DELTA * (p + c)
    return s * ZETA, d / ZETA


def _inverse_last(s: np.ndarray, d: np.ndarray) -> np.ndarray:
    s = s.astype(np.float64) / ZETA
    d = d.astype(np.float64) * ZETA
    ns, nd = s.shape[-1], d.shape[-1]
    if ns - nd not in (0, 1) or nd < 1:
        raise ValueError(f"incompatible subband lengths {ns} and {nd}")
    p, c = _prev_cur(d, ns)
    s -= DELTA * (p + c)
    d -= GAMMA * (s[..., :nd] + _next(s, nd))
    p, c = _prev_cur(d, ns)
    s -= BETA * (p + c)
    d -= ALPHA * (s[..., :nd] + _next(s, nd))
    out = np.empty(s.shape[:-1] + (ns + nd,))
    out[..., 0::2] = s
    out[..., 1::2] = d
    return out


def dwt1d(signal, axis: int = -1):
    """Single-level forward transform along ``axis``; returns ``(approx, detail)``."""
    x = np.moveaxis(np.asarray(signal), axis, -1)
    s, d = _forward_last(x)
    return np.moveaxis(s, -1, axis), np.moveaxis(d, -1, axis)


def idwt1d(approx, detail, axis: int = -1) -> np.ndarray:
    s = np.moveaxis(np.asarray(approx), axis, -1)
    d = np.moveaxis(np.asarray(detail), axis, -1)
    return np.moveaxis(_inverse_last(s, d), -1, axis)


# ---------------------------------------------------------------- filter bank


@dataclass(frozen=True)
class FilterBank:
    """Explicit 9-slot convolution taps, centred on slot 4.

    ``analysis_high`` and ``synthesis_low`` carry 7 taps with zeros in slots
    0 and 8.
    """

    analysis_low: np.ndarray
    analysis_high: np.ndarray
    synthesis_low: np.ndarray
    synthesis_high: np.ndarray


def _impulse_responses():
    n = 32
    eye = np.eye(n)
    s, d = _forward_last(eye)  # rows: impulse position, columns: coefficient index
    lo = s[:, 8]  # response of approx[8] (centred on sample 16)
    hi = d[:, 8]  # response of detail[8] (centred on sample 17)
    z = np.zeros((n // 2, n // 2))
    zl, zh = z.copy(), z.copy()
    zl[:, 8] = 1.0
    zh[:, 8] = 1.0
    glo = _inverse_last(zl[8], np.zeros(n // 2))  # synthesis low centred on 16
    ghi = _inverse_last(np.zeros(n // 2), zh[8])  # synthesis high centred on 17
    return lo[12:21], hi[13:22], glo[12:21], ghi[13:22]


@lru_cache(maxsize=1)
def _bank_arrays():
    return _impulse_responses()


def cdf97_filter_bank() -> FilterBank:
    """Convolution taps obtained by multiplying out the lifting factorisation."""
    lo, hi, glo, ghi = (a.copy() for a in _bank_arrays())
    for arr in (hi, glo):
        arr[0] = arr[8] = 0.0
    return FilterBank(lo, hi, glo, ghi)


def filter_bank_dwt1d(signal, bank: FilterBank | None = None):
    """Direct convolution implementation used to cross-check the lifting path."""
    bank = bank or cdf97_filter_bank()
    x = np.asarray(signal, dtype=np.float64)
    n = x.size
    xp = np.pad(x, 4, mode="reflect")
    # correlation with a symmetric filter == convolution
    full_lo = np.correlate(xp, bank.analysis_low, mode="valid")
    full_hi = np.correlate(xp, bank.analysis_high, mode="valid")
    return full_lo[0:n:2], full_hi[1:n:2]


def filter_bank_idwt1d(approx, detail, bank: FilterBank | None = None) -> np.ndarray:
    bank = bank or cdf97_filter_bank()
    ns, nd = len(approx), len(detail)
    n = ns + nd
    up_s = np.zeros(n)
    up_d = np.zeros(n)
    up_s[0::2] = approx
    up_d[1::2] = detail
    # upsampled streams inherit the whole-point symmetry of the original signal
    lo = np.correlate(np.pad(up_s, 4, mode="reflect"), bank.synthesis_low, mode="valid")
    hi = np.correlate(np.pad(up_d, 4, mode="reflect"), bank.synthesis_high, mode="valid")
    return lo + hi


# ---------------------------------------------------------------- 2-D pyramid


@dataclass
class SubbandPyramid:
    """Multi-level 2-D decomposition.

    ``details[k]`` holds ``(lh, hl, hh)`` for level ``k + 1`` (finest first).
    ``hl`` is high-pass along rows (horizontal detail) and low-pass along
    columns; ``lh`` is the transpose arrangement.
    """

    ll: np.ndarray
    details: list = field(default_factory=list)

    @property
    def levels(self) -> int:
        return len(self.details)

    def coefficient_count(self) -> int:
        return self.ll.size + sum(b.size for lvl in self.details for b in lvl)


def _split2d(x):
    lo, hi = dwt1d(x, axis=-1)
    ll, lh = dwt1d(lo, axis=-2)
    hl, hh = dwt1d(hi, axis=-2)
    return ll, (lh, hl, hh)


def _merge2d(ll, bands):
    lh, hl, hh = bands
    lo = idwt1d(ll, lh, axis=-2)
    hi = idwt1d(hl, hh, axis=-2)
    return idwt1d(lo, hi, axis=-1)


def dwt2d(image, levels: int = 2) -> SubbandPyramid:
    """Separable multi-level transform (rows, then columns; recurse on LL).

    Works on the last two axes, so leading batch/channel axes are allowed.
    """
    x = np.asarray(image, dtype=np.float64)
    if levels < 1:
        raise ValueError("levels must be >= 1")
    h, w = x.shape[-2:]
    if h < 2**levels or w < 2**levels:
        raise ValueError(f"image {h}x{w} too small for {levels} levels")
    details = []
    ll = x
    for _ in range(levels):
        ll, bands = _split2d(ll)
        details.append(bands)
    return SubbandPyramid(ll, details)


def idwt2d(pyr: SubbandPyramid) -> np.ndarray:
    ll = pyr.ll
    for bands in reversed(pyr.details):
        ll = _merge2d(ll, bands)
    return ll


def soft_threshold(x: np.ndarray, t: float) -> np.ndarray:
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def pack_pyramid(pyr: SubbandPyramid) -> np.ndarray:
    """Mallat layout: LL top-left, per level HL top-right, LH bottom-left, HH bottom-right."""
    ll = pyr.ll
    for lh, hl, hh in reversed(pyr.details):
        top = np.concatenate([ll, hl], axis=-1)
        bottom = np.concatenate([lh, hh], axis=-1)
        ll = np.concatenate([top, bottom], axis=-2)
    return ll


def unpack_pyramid(packed: np.ndarray, levels: int) -> SubbandPyramid:
    h, w = packed.shape[-2:]
    shapes = [(h, w)]
    for _ in range(levels):
        ph, pw = shapes[-1]
        shapes.append(((ph + 1) // 2, (pw + 1) // 2))
    details = []
    for k in range(levels):
        ph, pw = shapes[k]
        ch, cw = shapes[k + 1]
        block = packed[..., :ph, :pw]
        details.append((block[..., ch:, :cw], block[..., :ch, cw:], block[..., ch:, cw:]))
    ll = packed[..., : shapes[-1][0], : shapes[-1][1]]
    return SubbandPyramid(np.array(ll), [tuple(np.array(b) for b in lvl) for lvl in details])


# ---------------------------------------------------------------- latent layer


@lru_cache(maxsize=32)
def _analysis_matrix(n: int) -> np.ndarray:
    s, d = _forward_last(np.eye(n))
    return np.concatenate([s, d], axis=-1).T  # coeffs = A @ x


@lru_cache(maxsize=32)
def _synthesis_matrix(n: int) -> np.ndarray:
    ns = (n + 1) // 2
    eye = np.eye(n)
    return _inverse_last(eye[:, :ns], eye[:, ns:]).T  # x = S @ coeffs


def _level_shapes(h: int, w: int, levels: int):
    shapes = [(h, w)]
    for _ in range(levels):
        ph, pw = shapes[-1]
        shapes.append(((ph + 1) // 2, (pw + 1) // 2))
    return shapes


def _packed_forward(x: np.ndarray, shapes) -> np.ndarray:
    c = x.copy()
    for ph, pw in shapes[:-1]:
        blk = c[..., :ph, :pw]
        c[..., :ph, :pw] = _analysis_matrix(ph) @ blk @ _analysis_matrix(pw).T
    return c


def _packed_forward_T(g: np.ndarray, shapes) -> np.ndarray:
    g = g.copy()
    for ph, pw in reversed(shapes[:-1]):
        blk = g[..., :ph, :pw]
        g[..., :ph, :pw] = _analysis_matrix(ph).T @ blk @ _analysis_matrix(pw)
    return g


def _packed_inverse(c: np.ndarray, shapes) -> np.ndarray:
    x = c.copy()
    for ph, pw in reversed(shapes[:-1]):
        blk = x[..., :ph, :pw]
        x[..., :ph, :pw] = _synthesis_matrix(ph) @ blk @ _synthesis_matrix(pw).T
    return x


def _packed_inverse_T(g: np.ndarray, shapes) -> np.ndarray:
    g = g.copy()
    for ph, pw in shapes[:-1]:
        blk = g[..., :ph, :pw]
        g[..., :ph, :pw] = _synthesis_matrix(ph).T @ blk @ _synthesis_matrix(pw)
    return g


def latent_wavelet_layer(x: T.Tensor, levels: int = 2, shrink: float = 0.0) -> T.Tensor:
    """Per-channel DWT, soft-threshold of every detail subband, inverse DWT.

    Differentiable: the transforms are linear, the gradient of the threshold
    is the pass-through mask ``|c| > shrink``.
    """
    if shrink < 0:
        raise ValueError("shrink must be >= 0")
    h, w = x.shape[-2:]
    if h % (2**levels) or w % (2**levels):
        raise ValueError(f"latent extent {h}x{w} not divisible by 2**{levels}")
    shapes = _level_shapes(h, w, levels)
    coeffs = _packed_forward(x.data.astype(np.float64), shapes)
    mask = np.ones(coeffs.shape, dtype=bool)
    if shrink > 0:
        lh, lw = shapes[-1]
        detail = np.ones((h, w), dtype=bool)
        detail[:lh, :lw] = False
        mask = np.broadcast_to(detail, coeffs.shape) & (np.abs(coeffs) <= shrink)
        mask = ~mask
        coeffs = np.where(detail, soft_threshold(coeffs, shrink), coeffs)
    out = _packed_inverse(coeffs, shapes)

    def _backward(g):
        gc = _packed_inverse_T(g.astype(np.float64), shapes)
        if shrink > 0:
            gc = gc * mask
        return (_packed_forward_T(gc, shapes),)

    return T.apply_op("latent_wavelet", out, (x,), _backward)
