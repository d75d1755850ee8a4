"""Conventional imaging: the raw camera and a wavelet compression codec.

The codec is a compact JPEG2000 surrogate: level shift, multilevel bior4.4
analysis, dead-zone uniform scalar quantization with a single step ``q`` and
context-adaptive arithmetic coding of the quantization indices.

Stream layout (all integers little endian)::

    offset  size  field
    0       4     magic b"CSFJ"
    4       1     version (1)
    5       2     image height
    7       2     image width
    9       1     decomposition levels
    10      4     quantizer step (IEEE float32)
    14      ...   arithmetic-coded payload

Indices are visited in :func:`csforensics.wavelet.flatten` order.  Each index
is coded as a magnitude symbol ``min(|k|, ESC)`` under an adaptive frequency
model selected by (band group, previous index in the band was zero), then the
Elias-gamma code of ``|k| - ESC + 1`` for escaped magnitudes, then a sign bit
for non-zero indices.  Band group 0 is LL; group ``g >= 1`` is the ``g``-th
detail level counted from the coarsest.  Models start with unit counts and
add one per coded symbol.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from . import wavelet
from .core import PEAK_8BIT, as_image, psnr, quantize_8bit

__all__ = [
    "CompressedStream",
    "Jp2Config",
    "MalformedStreamError",
    "RateControlError",
    "CalibrationError",
    "raw_pipeline",
    "encode_with_step",
    "jp2_encode",
    "jp2_decode",
    "jp2_pipeline",
    "estimate_stream_size",
    "calibrate_ratio",
    "FULL_SCALE_COMPRESSION_RATIOS",
]

FULL_SCALE_COMPRESSION_RATIOS = (107.7899, 72.0, 54.0, 33.8)

MAGIC = b"CSFJ"
VERSION = 1
_HEADER = struct.Struct("<4sBHHBf")
ESC = 15
_NSYM = ESC + 1
_LEVEL_SHIFT = 128.0


class MalformedStreamError(ValueError):
    pass


class RateControlError(RuntimeError):
    """The requested ratio is outside what the step search can reach."""

    def __init__(self, message, best_ratio=None, best_step=None):
        super().__init__(message)
        self.best_ratio = best_ratio
        self.best_step = best_step


class CalibrationError(RuntimeError):
    pass


@dataclass
class CompressedStream:
    data: bytes
    height: int
    width: int
    levels: int
    step: float

    @property
    def nbytes(self) -> int:
        return len(self.data)

    @property
    def ratio(self) -> float:
        """Input size (one byte per pixel) over total stream size."""
        return self.height * self.width / len(self.data)


@dataclass
class Jp2Config:
    ratio: float = 54.0
    tolerance: float = 0.05
    levels: int = 4
    filter_bank: wavelet.FilterBank = field(default=wavelet.BIOR44)
    max_steps: int = 40
    step_range: tuple = (1e-2, 1e5)

    def __post_init__(self):
        if self.ratio < 1:
            raise ValueError("target compression ratio must be >= 1")


def raw_pipeline(img) -> np.ndarray:
    """The raw camera: the decoded image is the sensed image."""
    return as_image(img).copy()


# -- arithmetic coder -------------------------------------------------------

_PREC = 32
_TOP = (1 << _PREC) - 1
_HALF = 1 << (_PREC - 1)
_QUARTER = 1 << (_PREC - 2)


class _Model:
    __slots__ = ("freq", "total")

    def __init__(self, nsym):
        self.freq = [1] * nsym
        self.total = nsym

    def interval(self, sym):
        freq = self.freq
        lo = 0
        for k in range(sym):
            lo += freq[k]
        return lo, lo + freq[sym], self.total

    def update(self, sym):
        self.freq[sym] += 1
        self.total += 1


class _Encoder:
    def __init__(self):
        self.low = 0
        self.high = _TOP
        self.pending = 0
        self.bits = []

    def _emit(self, bit):
        self.bits.append(bit)
        if self.pending:
            self.bits.extend([1 - bit] * self.pending)
            self.pending = 0

    def encode(self, lo, hi, total):
        span = self.high - self.low + 1
        self.high = self.low + span * hi // total - 1
        self.low = self.low + span * lo // total
        while True:
            if self.high < _HALF:
                self._emit(0)
            elif self.low >= _HALF:
                self._emit(1)
                self.low -= _HALF
                self.high -= _HALF
            elif self.low >= _QUARTER and self.high < _HALF + _QUARTER:
                self.pending += 1
                self.low -= _QUARTER
                self.high -= _QUARTER
            else:
                break
            self.low <<= 1
            self.high = (self.high << 1) | 1

    def finish(self) -> bytes:
        self.pending += 1
        self._emit(0 if self.low < _QUARTER else 1)
        bits = self.bits
        bits.extend([0] * (-len(bits) % 8))
        packed = np.packbits(np.asarray(bits, dtype=np.uint8)) if bits else np.zeros(0, np.uint8)
        return packed.tobytes()


class _Decoder:
    def __init__(self, payload: bytes):
        self.bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8)).tolist()
        self.pos = 0
        self.low = 0
        self.high = _TOP
        self.value = 0
        for _ in range(_PREC):
            self.value = (self.value << 1) | self._next()

    def _next(self):
        pos = self.pos
        self.pos += 1
        if pos < len(self.bits):
            return self.bits[pos]
        if pos >= len(self.bits) + _PREC:
            raise MalformedStreamError("payload exhausted")
        return 0

    def decode(self, model: _Model):
        span = self.high - self.low + 1
        total = model.total
        target = ((self.value - self.low + 1) * total - 1) // span
        freq = model.freq
        lo = 0
        sym = 0
        while lo + freq[sym] <= target:
            lo += freq[sym]
            sym += 1
            if sym >= len(freq):
                raise MalformedStreamError("corrupt payload")
        self._narrow(span, lo, lo + freq[sym], total)
        return sym

    def decode_bit(self):
        span = self.high - self.low + 1
        target = ((self.value - self.low + 1) * 2 - 1) // span
        bit = 1 if target >= 1 else 0
        self._narrow(span, bit, bit + 1, 2)
        return bit

    def _narrow(self, span, lo, hi, total):
        self.high = self.low + span * hi // total - 1
        self.low = self.low + span * lo // total
        while True:
            if self.high < _HALF:
                pass
            elif self.low >= _HALF:
                self.low -= _HALF
                self.high -= _HALF
                self.value -= _HALF
            elif self.low >= _QUARTER and self.high < _HALF + _QUARTER:
                self.low -= _QUARTER
                self.high -= _QUARTER
                self.value -= _QUARTER
            else:
                break
            self.low <<= 1
            self.high = (self.high << 1) | 1
            self.value = (self.value << 1) | self._next()


# -- quantization and index modelling ---------------------------------------


def _band_groups(shape, levels):
    """Band-group id and start-of-band flag for every flattened coefficient."""
    h, w = shape
    groups = []
    starts = []
    n0 = (h >> levels) * (w >> levels)
    groups.append(np.zeros(n0, dtype=np.int64))
    first = np.zeros(n0, dtype=bool)
    first[0] = True
    starts.append(first)
    for g in range(1, levels + 1):
        nb = (h >> (levels - g + 1)) * (w >> (levels - g + 1))
        for _ in range(3):
            groups.append(np.full(nb, g, dtype=np.int64))
            first = np.zeros(nb, dtype=bool)
            first[0] = True
            starts.append(first)
    return np.concatenate(groups), np.concatenate(starts)


_GROUP_CACHE: dict = {}


def _contexts(indices, shape, levels):
    key = (tuple(shape), levels)
    if key not in _GROUP_CACHE:
        _GROUP_CACHE[key] = _band_groups(shape, levels)
    groups, starts = _GROUP_CACHE[key]
    prev_zero = np.ones(indices.size, dtype=np.int64)
    prev_zero[1:] = indices[:-1] == 0
    prev_zero[starts] = 1
    return groups * 2 + prev_zero


def _analyze(img, levels, fb):
    x = as_image(img) * PEAK_8BIT - _LEVEL_SHIFT
    return wavelet.flatten(wavelet.dwt2(x, levels, fb))


def _quantize(coeffs, step):
    return (np.sign(coeffs) * np.floor(np.abs(coeffs) / step)).astype(np.int64)


def _dequantize(indices, step):
    return np.sign(indices) * (np.abs(indices) + 0.5) * step


def _gamma_bits(v):
    """Length of the Elias-gamma code of positive integers ``v``."""
    return 2 * np.floor(np.log2(v)).astype(np.int64) + 1


def _estimate_bits(indices, shape, levels) -> float:
    ctx = _contexts(indices, shape, levels)
    mags = np.abs(indices)
    sym = np.minimum(mags, ESC)
    nctx = 2 * (levels + 1)
    counts = np.bincount(ctx * _NSYM + sym, minlength=nctx * _NSYM).reshape(nctx, _NSYM)
    totals = counts.sum(axis=1)
    nats = np.sum(gammaln(totals + _NSYM) - gammaln(_NSYM)) - np.sum(gammaln(counts + 1.0))
    escaped = mags[mags >= ESC]
    raw = np.count_nonzero(indices) + np.sum(_gamma_bits(escaped - ESC + 1))
    return nats / math.log(2) + float(raw)


def estimate_stream_size(img, step: float, levels: int = 4, fb=wavelet.BIOR44) -> int:
    """Predicted stream size in bytes from the adaptive-model code length."""
    step = float(np.float32(step))
    idx = _quantize(_analyze(img, levels, fb), step)
    return _HEADER.size + int(math.ceil((_estimate_bits(idx, np.shape(img), levels) + 2) / 8))


def _encode_indices(indices, shape, levels) -> bytes:
    ctx = _contexts(indices, shape, levels).tolist()
    models = [_Model(_NSYM) for _ in range(2 * (levels + 1))]
    enc = _Encoder()
    for k, c in zip(indices.tolist(), ctx):
        mag = -k if k < 0 else k
        sym = mag if mag < ESC else ESC
        model = models[c]
        enc.encode(*model.interval(sym))
        model.update(sym)
        if sym == ESC:
            v = mag - ESC + 1
            nbits = v.bit_length()
            for _ in range(nbits - 1):
                enc.encode(0, 1, 2)
            for b in range(nbits - 1, -1, -1):
                bit = (v >> b) & 1
                enc.encode(bit, bit + 1, 2)
        if mag:
            bit = 1 if k < 0 else 0
            enc.encode(bit, bit + 1, 2)
    return enc.finish()


def _decode_indices(payload, shape, levels) -> np.ndarray:
    key = (tuple(shape), levels)
    if key not in _GROUP_CACHE:
        _GROUP_CACHE[key] = _band_groups(shape, levels)
    groups, starts = _GROUP_CACHE[key]
    groups = groups.tolist()
    starts = starts.tolist()
    models = [_Model(_NSYM) for _ in range(2 * (levels + 1))]
    dec = _Decoder(payload)
    out = [0] * len(groups)
    prev = 0
    for i in range(len(groups)):
        prev_zero = 1 if (starts[i] or prev == 0) else 0
        model = models[groups[i] * 2 + prev_zero]
        sym = dec.decode(model)
        model.update(sym)
        mag = sym
        if sym == ESC:
            nbits = 1
            while dec.decode_bit() == 0:
                nbits += 1
                if nbits > 64:
                    raise MalformedStreamError("runaway escape code")
            v = 1
            for _ in range(nbits - 1):
                v = (v << 1) | dec.decode_bit()
            mag = v + ESC - 1
        if mag and dec.decode_bit():
            mag = -mag
        out[i] = mag
        prev = mag
    return np.asarray(out, dtype=np.int64)


# -- public codec API -------------------------------------------------------


def encode_with_step(img, step: float, levels: int = 4, fb=wavelet.BIOR44) -> CompressedStream:
    """Encode with a fixed quantizer step (no rate control)."""
    x = as_image(img)
    h, w = x.shape
    if step <= 0:
        raise ValueError("quantizer step must be positive")
    step = float(np.float32(step))
    idx = _quantize(_analyze(x, levels, fb), step)
    data = _HEADER.pack(MAGIC, VERSION, h, w, levels, step) + _encode_indices(idx, (h, w), levels)
    return CompressedStream(data, h, w, levels, step)


def _search_step(size_of, target_bytes, lo, hi, max_steps):
    """Bisect ``log q`` for a size near ``target_bytes``; sizes shrink as q grows."""
    best = None
    for _ in range(max_steps):
        mid = math.sqrt(lo * hi)
        size = size_of(mid)
        if best is None or abs(size - target_bytes) < abs(best[1] - target_bytes):
            best = (mid, size)
        if size > target_bytes:
            lo = mid
        else:
            hi = mid
        if hi / lo < 1 + 1e-6:
            break
    return best, lo, hi


def jp2_encode(img, cfg: Jp2Config) -> CompressedStream:
    """Encode with the quantizer step chosen so the ratio lands within tolerance."""
    x = as_image(img)
    n = x.size
    target = n / cfg.ratio
    coeffs = _analyze(x, cfg.levels, cfg.filter_bank)

    def estimated(q):
        q = float(np.float32(q))
        bits = _estimate_bits(_quantize(coeffs, q), x.shape, cfg.levels)
        return _HEADER.size + math.ceil((bits + 2) / 8)

    lo, hi = cfg.step_range
    (q, _), lo, hi = _search_step(estimated, target, lo, hi, 60)

    cache = {}

    def actual(q):
        q = float(np.float32(q))
        if q not in cache:
            cache[q] = encode_with_step(x, q, cfg.levels, cfg.filter_bank)
        return cache[q].nbytes

    def ok(size):
        return abs(n / size - cfg.ratio) <= cfg.tolerance * cfg.ratio

    if not ok(actual(q)):
        # refine with true sizes, widening around the estimate
        lo, hi = q / 1.5, q * 1.5
        while actual(lo) < target and lo > cfg.step_range[0]:
            lo /= 2
        while actual(hi) > target and hi < cfg.step_range[1]:
            hi *= 2
        (q, size), _, _ = _search_step(actual, target, lo, hi, cfg.max_steps)
        if not ok(size):
            best_q = min(cache, key=lambda k: abs(cache[k].nbytes - target))
            raise RateControlError(
                f"cannot reach ratio {cfg.ratio:.4g} (best {cache[best_q].ratio:.4g})",
                best_ratio=cache[best_q].ratio,
                best_step=best_q,
            )
    return cache[float(np.float32(q))]


def jp2_decode(stream) -> np.ndarray:
    """Decode a CSFJ stream (``bytes`` or :class:`CompressedStream`) to a canonical image."""
    data = stream.data if isinstance(stream, CompressedStream) else bytes(stream)
    if len(data) < _HEADER.size:
        raise MalformedStreamError("stream shorter than its header")
    magic, version, h, w, levels, step = _HEADER.unpack_from(data)
    if magic != MAGIC or version != VERSION:
        raise MalformedStreamError("bad magic or unsupported version")
    if step <= 0 or levels < 1 or min(h, w) < 1:
        raise MalformedStreamError("invalid header fields")
    try:
        idx = _decode_indices(data[_HEADER.size :], (h, w), levels)
    except IndexError as exc:  # pragma: no cover - defensive
        raise MalformedStreamError("corrupt payload") from exc
    pyr = wavelet.unflatten(_dequantize(idx, step), (h, w), levels)
    x = wavelet.idwt2(pyr) + _LEVEL_SHIFT
    return np.clip(x / PEAK_8BIT, 0.0, 1.0)


def jp2_pipeline(img, cfg: Jp2Config, return_stream: bool = False):
    """Conventional camera with built-in compression: encode then decode."""
    stream = jp2_encode(img, cfg)
    out = jp2_decode(stream)
    return (out, stream) if return_stream else out


def _fast_pipeline(img, ratio, levels=4, fb=wavelet.BIOR44):
    """Rate control on the model code length only; used inside calibration."""
    x = as_image(img)
    coeffs = _analyze(x, levels, fb)
    target = x.size / ratio

    def estimated(q):
        q = float(np.float32(q))
        bits = _estimate_bits(_quantize(coeffs, q), x.shape, levels)
        return _HEADER.size + math.ceil((bits + 2) / 8)

    (q, _), _, _ = _search_step(estimated, target, 1e-2, 1e5, 60)
    q = float(np.float32(q))
    pyr = wavelet.unflatten(_dequantize(_quantize(coeffs, q), q), x.shape, levels)
    return np.clip((wavelet.idwt2(pyr, fb) + _LEVEL_SHIFT) / PEAK_8BIT, 0.0, 1.0)


def mean_psnr(originals, decoded) -> float:
    return float(np.mean([psnr(o, quantize_8bit(d)) for o, d in zip(originals, decoded)]))


def calibrate_ratio(images, rate=None, cs_cfg=None, cs_outputs=None, tol_db: float = 0.5,
                    ratio_range=(1.5, 2000.0), levels: int = 4, max_steps: int = 60) -> float:
    """Compression ratio whose mean codec PSNR matches the compressive imager's.

    The compressive reference is either computed with ``cs_cfg`` (at sampling
    ``rate`` if given) or taken from precomputed ``cs_outputs``.  The search
    bisects ``log R_c`` until the mean PSNRs differ by at most a fifth of
    ``tol_db`` (or by ``tol_db`` once the bracket collapses).
    """
    from .cs_imager import CsConfig, cs_pipeline  # noqa: F401 - local to avoid cycles

    images = [as_image(im) for im in images]
    if not images:
        raise CalibrationError("calibration set is empty")
    if cs_outputs is None:
        if cs_cfg is None:
            raise ValueError("need cs_cfg or cs_outputs")
        if rate is not None:
            cs_cfg = CsConfig(**{**cs_cfg.__dict__, "rate": rate})
        cs_outputs = [cs_pipeline(im, cs_cfg) for im in images]
    target_db = mean_psnr(images, cs_outputs)

    def jp2_db(ratio):
        return mean_psnr(images, [_fast_pipeline(im, ratio, levels) for im in images])

    lo, hi = ratio_range
    db_lo, db_hi = jp2_db(lo), jp2_db(hi)
    if not db_hi - tol_db <= target_db <= db_lo + tol_db:
        raise CalibrationError(
            f"target {target_db:.2f} dB not bracketed by [{db_hi:.2f}, {db_lo:.2f}] dB"
        )
    best = (lo, db_lo) if abs(db_lo - target_db) < abs(db_hi - target_db) else (hi, db_hi)
    for _ in range(max_steps):
        mid = math.sqrt(lo * hi)
        db = jp2_db(mid)
        if abs(db - target_db) < abs(best[1] - target_db):
            best = (mid, db)
        if abs(db - target_db) <= tol_db / 5:
            break
        if db > target_db:
            lo = mid
        else:
            hi = mid
        if hi / lo < 1.0005:
            break
    if abs(best[1] - target_db) > tol_db:
        raise CalibrationError(f"closest mean PSNR {best[1]:.2f} dB vs target {target_db:.2f} dB")
    return float(best[0])
