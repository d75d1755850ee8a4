"""Shared image/signal plumbing: labels, rasterization, PSNR, seeded RNG and file I/O.

Images are plain 2-D ``float64`` arrays with intensities in ``[0, 1]``.
Signals are 1-D arrays obtained from images by a column-major scan.
"""

from __future__ import annotations

import enum
import hashlib
import os
from pathlib import Path

import numpy as np

__all__ = [
    "ClassLabel",
    "LABEL_ORDER",
    "DimensionError",
    "PEAK_8BIT",
    "as_image",
    "raster_scan",
    "inverse_raster_scan",
    "to_uint8",
    "from_uint8",
    "quantize_8bit",
    "psnr",
    "make_rng",
    "derive_seed",
    "read_pgm",
    "write_pgm",
    "read_image",
    "write_csv_matrix",
    "read_csv_matrix",
    "file_digest",
]

PEAK_8BIT = 255.0


class DimensionError(ValueError):
    """Raised when array shapes do not agree with an operation's contract."""


class ClassLabel(str, enum.Enum):
    """Imaging system that produced an image."""

    C = "C"  # compressive imaging
    J = "J"  # conventional imaging + wavelet compression
    R = "R"  # conventional raw imaging

    @property
    def index(self) -> int:
        return LABEL_ORDER.index(self)

    @classmethod
    def from_index(cls, i: int) -> "ClassLabel":
        return LABEL_ORDER[int(i)]


LABEL_ORDER = (ClassLabel.C, ClassLabel.J, ClassLabel.R)


def as_image(img) -> np.ndarray:
    """Validate and return ``img`` as a 2-D float64 array."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionError(f"expected a non-empty 2-D image, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("image contains non-finite pixels")
    return arr


def raster_scan(img) -> np.ndarray:
    """Scan an image column by column into a vector of length ``h*w``.

    >>> raster_scan([[1, 2], [3, 4]])
    array([1., 3., 2., 4.])
    """
    return as_image(img).ravel(order="F").copy()


def inverse_raster_scan(v, h: int, w: int) -> np.ndarray:
    """Undo :func:`raster_scan`."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size != h * w:
        raise DimensionError(f"vector of length {v.size} cannot fill a {h}x{w} image")
    return v.reshape((h, w), order="F").copy()


def to_uint8(img) -> np.ndarray:
    """Map ``[0, 1]`` intensities to 8-bit, rounding half away from zero."""
    scaled = np.clip(as_image(img), 0.0, 1.0) * PEAK_8BIT
    return np.floor(scaled + 0.5).astype(np.uint8)


def from_uint8(img8) -> np.ndarray:
    return np.asarray(img8, dtype=np.float64) / PEAK_8BIT


def quantize_8bit(img) -> np.ndarray:
    """Snap a canonical image onto the 8-bit grid (still in ``[0, 1]``)."""
    return from_uint8(to_uint8(img))


def psnr(ref, test, peak: float = PEAK_8BIT) -> float:
    """Peak signal-to-noise ratio in dB.

    Both images are canonical ``[0, 1]`` arrays; the squared error is measured
    on the 8-bit scale, so ``peak`` is the largest 8-bit value. Identical
    images give ``inf``.
    """
    ref = as_image(ref)
    test = as_image(test)
    if ref.shape != test.shape:
        raise DimensionError(f"shape mismatch {ref.shape} vs {test.shape}")
    if peak <= 0:
        raise ValueError("peak must be positive")
    mse = np.mean(((ref - test) * PEAK_8BIT) ** 2)
    if mse == 0:
        return float("inf")
    return float(10.0 * np.log10(peak**2 / mse))


def make_rng(seed) -> np.random.Generator:
    """PCG64 generator; ``seed`` is an int or a :class:`numpy.random.SeedSequence`."""
    return np.random.Generator(np.random.PCG64(seed))


def derive_seed(seed: int, *keys: int) -> int:
    """Deterministic 64-bit child seed of ``seed`` for the integer path ``keys``."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *[int(k) for k in keys]])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


# -- file I/O ---------------------------------------------------------------


def _pgm_tokens(data: bytes, count: int):
    """Read ``count`` whitespace separated header tokens, skipping comments."""
    tokens = []
    pos = 0
    while len(tokens) < count:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated PGM header")
        tokens.append(data[start:pos])
    return tokens, pos + 1  # exactly one whitespace byte precedes the raster


def read_pgm(path) -> np.ndarray:
    """Read a binary (P5) 8-bit PGM into a canonical image."""
    data = Path(path).read_bytes()
    tokens, offset = _pgm_tokens(data, 4)
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PGM is supported (maxval={maxval})")
    raster = np.frombuffer(data, dtype=np.uint8, count=h * w, offset=offset)
    return from_uint8(raster.reshape(h, w))


def write_pgm(path, img) -> None:
    """Write a canonical image as binary 8-bit PGM."""
    img8 = to_uint8(img)
    h, w = img8.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(img8.tobytes())


def read_image(path) -> np.ndarray:
    """Read PGM directly; anything else (BMP, PNG...) goes through Pillow as luma."""
    path = Path(path)
    if path.suffix.lower() in (".pgm", ".pnm"):
        return read_pgm(path)
    from PIL import Image

    with Image.open(path) as im:
        return from_uint8(np.asarray(im.convert("L")))


def write_csv_matrix(path, rows, header=None) -> None:
    """Write numeric rows as CSV with round-trip (``%.17g``) precision."""
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(format(v, ".17g") for v in row) + "\n")


def read_csv_matrix(path, skip_header: bool = False) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", skiprows=1 if skip_header else 0, ndmin=2)


def file_digest(path) -> str:
    """SHA-256 hex digest of a file's bytes."""
    h = hashlib.sha256()
    with open(os.fspath(path), "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()
