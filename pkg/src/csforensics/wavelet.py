"""Multilevel separable 2-D biorthogonal wavelet transform.

The transform is non-expansive: odd-length symmetric filters combined with
whole-point symmetric extension give ``h*w`` coefficients for an ``h x w``
image whose sides are divisible by ``2**levels``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .core import DimensionError, as_image

__all__ = [
    "FilterBank",
    "BIOR44",
    "WaveletPyramid",
    "dwt2",
    "idwt2",
    "flatten",
    "unflatten",
    "max_levels",
]


@dataclass(frozen=True)
class FilterBank:
    """Symmetric biorthogonal analysis/synthesis pair.

    Each filter is stored centered: tap ``i`` sits at offset ``i - len//2``.
    The analysis lowpass output lives on even samples and the analysis
    highpass output on odd samples.
    """

    name: str
    analysis_low: tuple
    analysis_high: tuple
    synthesis_low: tuple
    synthesis_high: tuple

    def __post_init__(self):
        for taps in (self.analysis_low, self.analysis_high, self.synthesis_low, self.synthesis_high):
            if len(taps) % 2 != 1:
                raise ValueError("filters must have odd length")
            if not np.allclose(taps, taps[::-1], rtol=0, atol=0):
                raise ValueError("filters must be symmetric")

    @property
    def support(self) -> int:
        return max(len(self.analysis_low), len(self.analysis_high))


# CDF 9/7 ("bior4.4") taps, as tabulated in PyWavelets' bior4.4 entry
# (dec_lo / dec_hi / rec_lo / rec_hi with zero padding stripped).
_H0 = (0.8526986790088938, 0.37740285561283066, -0.11062440441843718,
       -0.02384946501955684, 0.03782845550726404)
_G0 = (-0.7884856164055829, 0.41809227322161724, 0.04068941760916406,
       -0.06453888262869706)
_H1 = (0.7884856164055829, 0.41809227322161724, -0.04068941760916406,
       -0.06453888262869706)
_G1 = (-0.8526986790088938, 0.37740285561283066, 0.11062440441843718,
       -0.02384946501955684, -0.03782845550726404)


def _mirror(half):
    return tuple(half[:0:-1]) + tuple(half)


BIOR44 = FilterBank(
    name="bior4.4",
    analysis_low=_mirror(_H0),
    analysis_high=_mirror(_G0),
    synthesis_low=_mirror(_H1),
    synthesis_high=_mirror(_G1),
)


@dataclass
class WaveletPyramid:
    """Coefficients of a multilevel decomposition.

    ``details[0]`` is the coarsest level and ``details[-1]`` the finest; each
    entry is the tuple ``(LH, HL, HH)`` where the first letter names the filter
    applied along rows (axis 0) and the second along columns (axis 1).
    """

    approx: np.ndarray
    details: list = field(default_factory=list)
    shape: tuple = (0, 0)

    @property
    def levels(self) -> int:
        return len(self.details)

    def subband_shapes(self):
        return [self.approx.shape] + [d[0].shape for d in self.details]

    def copy(self) -> "WaveletPyramid":
        return WaveletPyramid(
            self.approx.copy(),
            [tuple(b.copy() for b in lvl) for lvl in self.details],
            tuple(self.shape),
        )


def max_levels(n: int) -> int:
    """Largest level count such that every split acts on an even length >= 2."""
    levels = 0
    while n >= 2 and n % 2 == 0:
        n //= 2
        levels += 1
    return levels


@lru_cache(maxsize=None)
def _reflect(n: int, lo: int, hi: int) -> np.ndarray:
    """Whole-point symmetric extension indices for positions ``lo..hi-1``."""
    idx = np.arange(lo, hi)
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * n - 2
    idx = np.mod(idx, period)
    return np.where(idx >= n, period - idx, idx)


@lru_cache(maxsize=None)
def _analysis_index(n: int, ntaps: int, parity: int) -> np.ndarray:
    half = ntaps // 2
    centers = np.arange(parity, n, 2)
    offsets = np.arange(-half, half + 1)
    return _reflect(n, -half - 1, n + half + 1)[centers[:, None] + offsets[None, :] + half + 1]


@lru_cache(maxsize=None)
def _synthesis_index(n: int, ntaps: int) -> np.ndarray:
    half = ntaps // 2
    offsets = np.arange(-half, half + 1)
    return _reflect(n, -half - 1, n + half + 1)[np.arange(n)[:, None] - offsets[None, :] + half + 1]


def _analyze_axis(x: np.ndarray, fb: FilterBank, axis: int):
    x = np.moveaxis(x, axis, -1)
    n = x.shape[-1]
    lo_taps = np.asarray(fb.analysis_low)
    hi_taps = np.asarray(fb.analysis_high)
    low = x[..., _analysis_index(n, lo_taps.size, 0)] @ lo_taps
    high = x[..., _analysis_index(n, hi_taps.size, 1)] @ hi_taps
    return np.moveaxis(low, -1, axis), np.moveaxis(high, -1, axis)


def _synthesize_axis(low: np.ndarray, high: np.ndarray, fb: FilterBank, axis: int):
    low = np.moveaxis(low, axis, -1)
    high = np.moveaxis(high, axis, -1)
    n = low.shape[-1] + high.shape[-1]
    up_low = np.zeros(low.shape[:-1] + (n,))
    up_high = np.zeros_like(up_low)
    up_low[..., 0::2] = low
    up_high[..., 1::2] = high
    lo_taps = np.asarray(fb.synthesis_low)
    hi_taps = np.asarray(fb.synthesis_high)
    out = up_low[..., _synthesis_index(n, lo_taps.size)] @ lo_taps
    out += up_high[..., _synthesis_index(n, hi_taps.size)] @ hi_taps
    return np.moveaxis(out, -1, axis)


def _check_levels(shape, levels: int) -> None:
    if levels < 1:
        raise ValueError("levels must be >= 1")
    for n in shape:
        if max_levels(n) < levels:
            raise DimensionError(
                f"image of shape {tuple(shape)} is too small for {levels} dyadic levels"
            )


def dwt2(img, levels: int = 4, fb: FilterBank = BIOR44) -> WaveletPyramid:
    """Forward transform: rows then columns, repeated on the LL band."""
    x = as_image(img)
    _check_levels(x.shape, levels)
    details = []
    approx = x
    for _ in range(levels):
        lo_c, hi_c = _analyze_axis(approx, fb, axis=1)
        ll, hl = _analyze_axis(lo_c, fb, axis=0)
        lh, hh = _analyze_axis(hi_c, fb, axis=0)
        details.append((lh, hl, hh))
        approx = ll
    return WaveletPyramid(approx, details[::-1], x.shape)


def idwt2(pyr: WaveletPyramid, fb: FilterBank = BIOR44) -> np.ndarray:
    """Inverse of :func:`dwt2`."""
    approx = np.asarray(pyr.approx, dtype=np.float64)
    for lh, hl, hh in pyr.details:
        if not (lh.shape == hl.shape == hh.shape == approx.shape):
            raise DimensionError("inconsistent subband shapes in pyramid")
        lo_c = _synthesize_axis(approx, hl, fb, axis=0)
        hi_c = _synthesize_axis(lh, hh, fb, axis=0)
        approx = _synthesize_axis(lo_c, hi_c, fb, axis=1)
    if tuple(approx.shape) != tuple(pyr.shape):
        raise DimensionError(f"pyramid reconstructs {approx.shape}, expected {pyr.shape}")
    return approx


def flatten(pyr: WaveletPyramid) -> np.ndarray:
    """Concatenate subbands: LL, then LH, HL, HH from coarse to fine (each row-major)."""
    parts = [pyr.approx.ravel()]
    for lvl in pyr.details:
        parts.extend(b.ravel() for b in lvl)
    return np.concatenate(parts)


def unflatten(v, shape, levels: int) -> WaveletPyramid:
    """Rebuild a pyramid of an image of ``shape`` from :func:`flatten` output."""
    v = np.asarray(v, dtype=np.float64)
    h, w = shape
    if v.ndim != 1 or v.size != h * w:
        raise DimensionError(f"expected {h * w} coefficients, got {v.size}")
    _check_levels(shape, levels)
    sizes = [(h >> k, w >> k) for k in range(levels, 0, -1)]
    pos = sizes[0][0] * sizes[0][1]
    approx = v[:pos].reshape(sizes[0]).copy()
    details = []
    for sh in sizes:
        n = sh[0] * sh[1]
        bands = []
        for _ in range(3):
            bands.append(v[pos : pos + n].reshape(sh).copy())
            pos += n
        details.append(tuple(bands))
    return WaveletPyramid(approx, details, (h, w))
