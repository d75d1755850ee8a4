"""Blur-kernel footprints of imaging pipelines.

Two estimators live here:

* :func:`blind_deconvolve` / :func:`estimate_kernel` recover a kernel from a
  single image by alternating between the latent sharp gradients and the
  kernel (alternating MAP with a sparse gradient prior);
* :func:`fit_lsi_kernel` fits the best linear shift-invariant kernel to a
  black-box pipeline from random probe images, by least squares.

Kernels are ``a x a`` arrays with odd ``a``, non-negative entries summing to 1.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import fft as sfft
from scipy.optimize import nnls

from .core import as_image, make_rng

__all__ = [
    "DeconvConfig",
    "DeconvResult",
    "DegenerateInputError",
    "blind_deconvolve",
    "estimate_kernel",
    "fit_lsi_kernel",
    "delta_kernel",
    "gaussian_kernel",
    "box_kernel",
    "project_kernel",
    "kernel_correlation",
    "convolve",
    "dead_leaves",
]

log = logging.getLogger(__name__)


class DegenerateInputError(ValueError):
    """The image carries (almost) no gradient energy to estimate a kernel from."""


@dataclass
class DeconvConfig:
    size: int = 9
    outer_iters: int = 15
    inner_iters: int = 5
    prior_weight: float = 2e-3
    prior_exponent: float = 0.8
    tol: float = 1e-5
    cg_iters: int = 10
    irls_floor: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.size < 1 or self.size % 2 == 0:
            raise ValueError("kernel size must be a positive odd integer")
        if self.prior_weight <= 0:
            raise ValueError("prior weight must be positive")
        if not 0 < self.prior_exponent <= 2:
            raise ValueError("prior exponent must be in (0, 2]")


@dataclass
class DeconvResult:
    sharp: np.ndarray
    kernel: np.ndarray
    converged: bool
    iterations: int

    def __iter__(self):
        # unpacks as (sharp, kernel)
        return iter((self.sharp, self.kernel))


# -- kernel helpers ---------------------------------------------------------


def delta_kernel(size: int) -> np.ndarray:
    k = np.zeros((size, size))
    k[size // 2, size // 2] = 1.0
    return k


def gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size) - size // 2
    g = np.exp(-(r[:, None] ** 2 + r[None, :] ** 2) / (2 * sigma**2))
    return g / g.sum()


def box_kernel(size: int) -> np.ndarray:
    return np.full((size, size), 1.0 / size**2)


def project_kernel(k) -> np.ndarray:
    """Clip negative entries and rescale to unit sum (delta if nothing is left)."""
    k = np.maximum(np.asarray(k, dtype=np.float64), 0.0)
    total = k.sum()
    if total <= 0:
        return delta_kernel(k.shape[0])
    return k / total


def kernel_correlation(k1, k2) -> float:
    """Pearson correlation of two equally sized kernels."""
    a = np.ravel(k1) - np.mean(k1)
    b = np.ravel(k2) - np.mean(k2)
    denom = np.linalg.norm(a) * np.linalg.norm(b)
    return float(a @ b / denom) if denom > 0 else 0.0


def convolve(img, k, mode: str = "valid") -> np.ndarray:
    """2-D convolution ``sum_u k[u] img[i - u]`` with a centered odd kernel.

    ``mode="valid"`` returns the ``(h-a+1) x (w-a+1)`` interior,
    ``mode="same"`` pads symmetrically first.
    """
    img = np.asarray(img, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    r = k.shape[0] // 2
    if mode == "same":
        img = np.pad(img, r, mode="symmetric")
    elif mode != "valid":
        raise ValueError(f"unknown mode {mode!r}")
    windows = sliding_window_view(img, k.shape)
    return np.einsum("ijuv,uv->ij", windows, k[::-1, ::-1])


# -- circular operators on the padded working domain ------------------------


def _otf(k, shape):
    """Transfer function of a centered kernel on a periodic grid of ``shape``."""
    pad = np.zeros(shape)
    a = k.shape[0]
    pad[:a, :a] = k
    pad = np.roll(pad, (-(a // 2), -(a // 2)), axis=(0, 1))
    return sfft.rfft2(pad)


def _grad(x):
    return np.roll(x, -1, axis=1) - x, np.roll(x, -1, axis=0) - x


def _grad_adj(gx, gy):
    return (np.roll(gx, 1, axis=1) - gx) + (np.roll(gy, 1, axis=0) - gy)


def _cg(apply, rhs, x0, iters):
    x = x0.copy()
    r = rhs - apply(x)
    p = r.copy()
    rr = np.vdot(r, r)
    tiny = 1e-30 * max(np.vdot(rhs, rhs), 1e-30)
    for _ in range(iters):
        if rr <= tiny:
            break
        Ap = apply(p)
        alpha = rr / np.vdot(p, Ap)
        x += alpha * p
        r -= alpha * Ap
        rr_new = np.vdot(r, r)
        p = r + (rr_new / rr) * p
        rr = rr_new
    return x


def _irls_weights(g, cfg: DeconvConfig):
    p = cfg.prior_exponent
    return cfg.prior_weight * p * np.maximum(np.abs(g), cfg.irls_floor) ** (p - 2)


def _latent_gradient(yd, otf, g0, cfg: DeconvConfig):
    """IRLS estimate of one latent gradient field."""
    shape = yd.shape
    otf2 = np.abs(otf) ** 2
    rhs = sfft.irfft2(np.conj(otf) * sfft.rfft2(yd), s=shape)
    g = g0
    for _ in range(cfg.inner_iters):
        w = _irls_weights(g, cfg)

        def apply(v, w=w):
            return sfft.irfft2(otf2 * sfft.rfft2(v), s=shape) + w * v

        g = _cg(apply, rhs, g, cfg.cg_iters)
    return g


def _kernel_step(latents, observed, size, box):
    """Non-negative least squares ``min_k sum_d ||k * g_d - y_d||^2`` over ``box``."""
    r = size // 2
    gram = np.zeros((size * size, size * size))
    rhs = np.zeros(size * size)
    rows, cols = box
    grown = (slice(rows.start - r, rows.stop + r), slice(cols.start - r, cols.stop + r))
    for g, y in zip(latents, observed):
        patches = sliding_window_view(g[grown], (size, size)).reshape(-1, size * size)
        gram += patches.T @ patches
        rhs += patches.T @ y[box].ravel()
    # tiny jitter keeps the Cholesky factor defined for textureless latents
    gram[np.diag_indices_from(gram)] += 1e-12 * max(np.trace(gram), 1.0)
    upper = np.linalg.cholesky(gram).T
    flipped, _ = nnls(upper, np.linalg.solve(upper.T, rhs), maxiter=50 * size * size)
    return project_kernel(flipped.reshape(size, size)[::-1, ::-1])


def _nonblind(y, k, cfg: DeconvConfig, x0=None):
    """Pixel-domain IRLS deconvolution with a sparse gradient prior."""
    shape = y.shape
    otf = _otf(k, shape)
    otf2 = np.abs(otf) ** 2
    rhs = sfft.irfft2(np.conj(otf) * sfft.rfft2(y), s=shape)
    x = y.copy() if x0 is None else x0
    for _ in range(cfg.inner_iters):
        gx, gy = _grad(x)
        wx, wy = _irls_weights(gx, cfg), _irls_weights(gy, cfg)

        def apply(v, wx=wx, wy=wy):
            vx, vy = _grad(v)
            return sfft.irfft2(otf2 * sfft.rfft2(v), s=shape) + _grad_adj(wx * vx, wy * vy)

        x = _cg(apply, rhs, x, cfg.cg_iters)
    return x


def blind_deconvolve(img, cfg: DeconvConfig | None = None) -> DeconvResult:
    """Jointly estimate a sharp image and an ``a x a`` blur kernel.

    Alternates, starting from a centered delta, between

    1. latent sharp gradients: IRLS for ``||k * g - dy||^2 + lam * sum |g|^p``
       on each derivative image;
    2. the kernel: non-negative least squares on derivative-domain patches
       then projection onto the simplex.

    Stops after ``outer_iters`` rounds or when the kernel changes by less
    than ``tol`` (Frobenius norm).  The returned sharp image is a final
    non-blind deconvolution with the estimated kernel.
    """
    cfg = cfg or DeconvConfig()
    y = as_image(img)
    a = cfg.size
    if min(y.shape) < 4 * a:
        raise ValueError(f"image side must be at least {4 * a} for a {a}x{a} kernel")
    dy_raw = _grad(y)
    interior = (slice(0, -1), slice(0, -1))
    energy = sum(np.sum(d[interior] ** 2) for d in dy_raw)
    if energy < 1e-10 * y.size:
        raise DegenerateInputError("image is flat; no gradient energy to estimate a kernel")

    margin = a
    # pad up to FFT-friendly sizes; the extra rows/columns go bottom/right
    h, w = y.shape
    extra = [sfft.next_fast_len(n + 2 * margin, real=True) - n - 2 * margin for n in (h, w)]
    yp = np.pad(y, ((margin, margin + extra[0]), (margin, margin + extra[1])), mode="symmetric")
    observed = _grad(yp)
    box = (slice(margin, margin + h), slice(margin, margin + w))
    k = delta_kernel(a)
    latents = [d.copy() for d in observed]
    converged = False
    it = 0
    for it in range(1, cfg.outer_iters + 1):
        otf = _otf(k, yp.shape)
        latents = [_latent_gradient(yd, otf, g0, cfg) for g0, yd in zip(latents, observed)]
        k_new = _kernel_step(latents, observed, a, box)
        change = np.linalg.norm(k_new - k)
        k = k_new
        if change < cfg.tol:
            converged = True
            break
    log.debug("blind_deconvolve: %d outer iterations, converged=%s", it, converged)
    sharp = _nonblind(yp, k, cfg)[box]
    return DeconvResult(sharp, k, converged, it)


def estimate_kernel(img, size: int | None = None, cfg: DeconvConfig | None = None) -> np.ndarray:
    """Blur-kernel footprint of one image (the kernel of :func:`blind_deconvolve`)."""
    cfg = cfg or DeconvConfig()
    if size is not None and size != cfg.size:
        cfg = DeconvConfig(**{**cfg.__dict__, "size": size})
    return blind_deconvolve(img, cfg).kernel


# -- probe-based LSI fit ----------------------------------------------------


def dead_leaves(shape, rng, n_disks: int = 4000, rmin: float = 1.0, rmax: float = 48.0) -> np.ndarray:
    """Occlusion ("dead leaves") texture: disks with power-law radii and random gray levels.

    Its gradient statistics and ``1/f`` spectrum resemble natural images.
    """
    h, w = shape
    img = np.full(shape, np.nan)
    yy, xx = np.mgrid[0:h, 0:w]
    # radii follow p(r) ~ r^-3 between rmin and rmax (inverse CDF sampling)
    u = rng.random(n_disks)
    radii = 1.0 / np.sqrt(rmin**-2 - u * (rmin**-2 - rmax**-2))
    cy = rng.uniform(-rmax, h + rmax, n_disks)
    cx = rng.uniform(-rmax, w + rmax, n_disks)
    gray = rng.random(n_disks)
    for r, y0, x0, v in zip(radii, cy, cx, gray):
        y_lo, y_hi = max(int(y0 - r), 0), min(int(y0 + r) + 2, h)
        x_lo, x_hi = max(int(x0 - r), 0), min(int(x0 + r) + 2, w)
        if y_lo >= y_hi or x_lo >= x_hi:
            continue
        sub = img[y_lo:y_hi, x_lo:x_hi]
        inside = ((yy[y_lo:y_hi, x_lo:x_hi] - y0) ** 2 + (xx[y_lo:y_hi, x_lo:x_hi] - x0) ** 2 <= r * r)
        sub[inside & np.isnan(sub)] = v
        if not np.isnan(img).any():
            break
    img[np.isnan(img)] = rng.random()
    return img


def fit_lsi_kernel(pipeline, size: int, n_probes: int | None = None, seed: int = 0,
                   shape=(128, 128), probes=None) -> np.ndarray:
    """Least-squares LSI kernel of a deterministic image-to-image ``pipeline``.

    Runs the pipeline on seeded dead-leaves probes (or on ``probes``) and solves
    the normal equations of ``sum_i ||k * x_i - pipeline(x_i)||^2`` over the
    valid region, then projects the kernel onto the simplex.
    """
    if size % 2 == 0:
        raise ValueError("kernel size must be odd")
    if probes is None:
        n_probes = size * size if n_probes is None else n_probes
        if n_probes < size * size:
            raise ValueError(f"need at least {size * size} probes for a {size}x{size} kernel")
        rng = make_rng(seed)
        probes = [dead_leaves(shape, rng) for _ in range(n_probes)]
    r = size // 2
    gram = np.zeros((size * size, size * size))
    rhs = np.zeros(size * size)
    for x in probes:
        x = as_image(x)
        out = as_image(pipeline(x))
        patches = sliding_window_view(x, (size, size)).reshape(-1, size * size)
        target = out[r : x.shape[0] - r, r : x.shape[1] - r].ravel()
        gram += patches.T @ patches
        rhs += patches.T @ target
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > 1e12:
        raise np.linalg.LinAlgError(f"probe normal equations are singular (cond={cond:.3g})")
    flipped = np.linalg.solve(gram, rhs)
    return project_kernel(flipped.reshape(size, size)[::-1, ::-1])
