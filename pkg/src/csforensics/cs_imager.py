"""Compressive imaging encoder/decoder and closed-form kernel constructions.

The encoder rasterizes an image block, maps it to wavelet coefficients and
takes linear measurements ``y = A s``.  The decoder solves basis pursuit

    minimize ||s||_1  subject to  ||y - A s||_2^2 <= delta

and maps the recovered coefficients back to pixels.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import wavelet
from .core import DimensionError, as_image, inverse_raster_scan, make_rng, raster_scan

__all__ = [
    "SamplingMask",
    "SensingMatrix",
    "MeasurementVector",
    "CsConfig",
    "NonConvergenceError",
    "build_sampling_mask",
    "mask_matrix",
    "build_gaussian_matrix",
    "measure",
    "bp_recover",
    "l2_recover",
    "theoretical_kernel_l2",
    "wavelet_operator",
    "cs_pipeline",
    "SAMPLING_RATES",
]

log = logging.getLogger(__name__)

SAMPLING_RATES = (0.25, 0.40, 0.50, 0.67)


class NonConvergenceError(RuntimeError):
    """The l1 solver hit its iteration cap.

    ``iterate`` holds the last (feasible) estimate, ``residual`` the squared
    measurement residual of each column and ``unfinished`` the indices of the
    columns that missed the tolerance.
    """

    def __init__(self, message, iterate=None, residual=None, block=None, unfinished=None):
        super().__init__(message)
        self.iterate = iterate
        self.residual = residual
        self.block = block
        self.unfinished = unfinished


@dataclass(frozen=True)
class SamplingMask:
    """Random subset of kept sample positions (0-based, strictly increasing)."""

    n: int
    kept: tuple

    @property
    def rate(self) -> float:
        return len(self.kept) / self.n

    def diagonal(self) -> np.ndarray:
        d = np.zeros(self.n)
        d[list(self.kept)] = 1.0
        return d

    def matrix(self) -> np.ndarray:
        """The ``m x n`` selection matrix with a single 1 per row."""
        return mask_matrix(self.n, self.kept)


@dataclass
class SensingMatrix:
    matrix: np.ndarray
    kind: str = "gaussian"
    seed: int | None = None

    @property
    def m(self) -> int:
        return self.matrix.shape[0]

    @property
    def n(self) -> int:
        return self.matrix.shape[1]


@dataclass
class MeasurementVector:
    values: np.ndarray
    delta: float = 0.0


@dataclass
class CsConfig:
    """Simulation settings for the compressive imager.

    ``block=None`` senses the whole image at once (dense and memory heavy).
    """

    rate: float = 0.25
    block: int | None = 32
    levels: int = 4
    sensing: str = "gaussian"
    max_iter: int = 20000
    tol: float = 1e-3
    delta: float = 0.0
    seed: int = 0
    filter_bank: wavelet.FilterBank = field(default=wavelet.BIOR44)

    def __post_init__(self):
        if not 0 < self.rate <= 1:
            raise ValueError("sampling rate must be in (0, 1]")
        if self.sensing not in ("gaussian", "mask"):
            raise ValueError(f"unknown sensing kind {self.sensing!r}")
        if self.delta < 0:
            raise ValueError("delta must be non-negative")


def build_sampling_mask(n: int, rate: float, seed: int) -> SamplingMask:
    """Keep ``round(rate * n)`` positions drawn uniformly without replacement."""
    if not 0 < rate <= 1:
        raise ValueError("sampling rate must be in (0, 1]")
    m = int(round(rate * n))
    if m == 0:
        raise ValueError(f"rate {rate} keeps no sample of {n}")
    kept = np.sort(make_rng(seed).choice(n, size=m, replace=False))
    return SamplingMask(n, tuple(int(k) for k in kept))


def mask_matrix(n: int, kept) -> np.ndarray:
    kept = np.asarray(kept, dtype=int)
    M = np.zeros((kept.size, n))
    M[np.arange(kept.size), kept] = 1.0
    return M


def build_gaussian_matrix(m: int, n: int, seed: int) -> SensingMatrix:
    """I.i.d. ``N(0, 1/m)`` entries."""
    if not 1 <= m <= n:
        raise DimensionError(f"need 1 <= m <= n, got m={m}, n={n}")
    A = make_rng(seed).standard_normal((m, n)) / np.sqrt(m)
    return SensingMatrix(A, "gaussian", seed)


def measure(A, s) -> MeasurementVector:
    A = _as_matrix(A)
    s = np.asarray(s, dtype=np.float64)
    if s.shape[0] != A.shape[1]:
        raise DimensionError(f"signal length {s.shape[0]} does not match n={A.shape[1]}")
    return MeasurementVector(A @ s)


def _as_matrix(A) -> np.ndarray:
    return A.matrix if isinstance(A, SensingMatrix) else np.asarray(A, dtype=np.float64)


class _ConstraintSet:
    """Euclidean projection onto ``{x : ||A x - y||^2 <= delta}`` via a thin SVD."""

    def __init__(self, A: np.ndarray):
        U, s, Vt = np.linalg.svd(A, full_matrices=False)
        if s[-1] <= s[0] * A.shape[1] * np.finfo(float).eps:
            raise np.linalg.LinAlgError("sensing matrix is rank deficient")
        self.U, self.s, self.Vt = U, s, Vt

    def project(self, v, c, delta):
        """Project columns of ``v``; ``c = U^T y`` in singular coordinates."""
        a = self.Vt @ v
        s = self.s[:, None]
        if delta == 0:
            b = c / s
        else:
            gap = s * a - c
            lo = np.zeros(v.shape[1])
            inside = np.sum(gap**2, axis=0) <= delta
            hi = np.full(v.shape[1], 1.0)
            # grow the bracket until every column is feasible
            for _ in range(200):
                r = np.sum((gap / (1 + hi * s**2)) ** 2, axis=0)
                if np.all((r <= delta) | inside):
                    break
                hi = np.where(r > delta, hi * 4, hi)
            for _ in range(100):
                mu = 0.5 * (lo + hi)
                r = np.sum((gap / (1 + mu * s**2)) ** 2, axis=0)
                big = r > delta
                lo = np.where(big, mu, lo)
                hi = np.where(big, hi, mu)
            mu = np.where(inside, 0.0, hi)
            b = (a + mu * s * c) / (1 + mu * s**2)
        return v + self.Vt.T @ (b - a)

    def residual(self, x, c):
        return np.sum((self.s[:, None] * (self.Vt @ x) - c) ** 2, axis=0)


@lru_cache(maxsize=16)
def _constraint_set_cached(key, A_bytes, shape):
    return _ConstraintSet(np.frombuffer(A_bytes).reshape(shape))


def _constraint_set(A: np.ndarray) -> _ConstraintSet:
    A = np.ascontiguousarray(A, dtype=np.float64)
    return _constraint_set_cached(hash(A.tobytes()), A.tobytes(), A.shape)


# penalty re-balancing happens every 10 iterations at first, then ever more rarely,
# so the penalty settles and the fixed-penalty convergence guarantee applies
_ADAPT_GROWTH = 0.25


def _soft(v, t):
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def bp_recover(A, y, delta: float = 0.0, max_iter: int = 3000, tol: float = 1e-4) -> np.ndarray:
    """Basis pursuit (denoising when ``delta > 0``) by ADMM.

    Splits ``x = z`` between the measurement-consistency set and the l1 norm,
    with residual-balanced penalty updates.  The returned iterate is the
    projected ``x`` and therefore always satisfies the fidelity constraint.
    Columns of a 2-D ``y`` are solved jointly.

    Raises
    ------
    NonConvergenceError
        If the primal/dual residuals do not fall below ``tol`` (relative)
        within ``max_iter`` iterations.
    """
    A = _as_matrix(A)
    if isinstance(y, MeasurementVector):
        y = y.values
    y = np.asarray(y, dtype=np.float64)
    single = y.ndim == 1
    Y = y[:, None] if single else y
    if Y.shape[0] != A.shape[0]:
        raise DimensionError(f"{Y.shape[0]} measurements for an {A.shape} matrix")
    if delta < 0:
        raise ValueError("delta must be non-negative")

    cset = _constraint_set(A)
    c = cset.U.T @ Y
    if np.all(Y == 0):
        out = np.zeros((A.shape[1], Y.shape[1]))
        return out[:, 0] if single else out

    x = cset.project(np.zeros((A.shape[1], Y.shape[1])), c, delta)
    z = x.copy()
    u = np.zeros_like(x)
    scale = np.maximum(np.abs(x).max(axis=0), 1e-12)
    rho = 1.0 / (0.1 * scale)
    n_sqrt = np.sqrt(A.shape[1])
    active = np.ones(Y.shape[1], dtype=bool)
    next_adapt = 10

    for it in range(max_iter):
        cols = np.flatnonzero(active)
        xa = cset.project(z[:, cols] - u[:, cols], c[:, cols], delta)
        z_old = z[:, cols]
        za = _soft(xa + u[:, cols], 1.0 / rho[cols])
        ua = u[:, cols] + xa - za
        x[:, cols], z[:, cols], u[:, cols] = xa, za, ua

        r_norm = np.linalg.norm(xa - za, axis=0)
        s_norm = rho[cols] * np.linalg.norm(za - z_old, axis=0)
        eps_pri = tol * np.maximum(np.linalg.norm(xa, axis=0), np.linalg.norm(za, axis=0)) + 1e-12 * n_sqrt
        eps_dual = tol * rho[cols] * np.linalg.norm(ua, axis=0) + 1e-12 * n_sqrt
        done = (r_norm <= eps_pri) & (s_norm <= eps_dual)
        active[cols[done]] = False
        if not active.any():
            log.debug("bp_recover converged after %d iterations", it + 1)
            break

        if it + 1 == next_adapt:
            next_adapt += max(10, int(_ADAPT_GROWTH * next_adapt))
            # balance the residuals relative to their own stopping thresholds
            rel_pri = r_norm / eps_pri
            rel_dual = s_norm / eps_dual
            grow = rel_pri > 10 * rel_dual
            shrink = rel_dual > 10 * rel_pri
            factor = np.where(grow, 2.0, np.where(shrink, 0.5, 1.0))
            rho[cols] *= factor
            u[:, cols] /= factor
    else:
        res = cset.residual(x, c)
        out = x[:, 0] if single else x
        raise NonConvergenceError(
            f"basis pursuit did not converge in {max_iter} iterations "
            f"({int(active.sum())} of {active.size} columns unfinished)",
            iterate=out,
            residual=res,
            unfinished=np.flatnonzero(active),
        )
    return x[:, 0] if single else x


def l2_recover(A, y) -> np.ndarray:
    """Minimum-norm solution ``A^T (A A^T)^{-1} y``."""
    A = _as_matrix(A)
    if isinstance(y, MeasurementVector):
        y = y.values
    gram = A @ A.T
    if np.linalg.matrix_rank(gram) < A.shape[0]:
        raise np.linalg.LinAlgError("A A^T is singular; A must have full row rank")
    return A.T @ np.linalg.solve(gram, np.asarray(y, dtype=np.float64))


def theoretical_kernel_l2(A) -> np.ndarray:
    """``A^+ A``: the system matrix of l2 recovery, an orthogonal projector of rank m."""
    A = _as_matrix(A)
    gram = A @ A.T
    if np.linalg.matrix_rank(gram) < A.shape[0]:
        raise np.linalg.LinAlgError("A must have full row rank")
    P = A.T @ np.linalg.solve(gram, A)
    return 0.5 * (P + P.T)


def wavelet_operator(h: int, w: int, levels: int, fb=wavelet.BIOR44):
    """Forward/inverse callables mapping a rasterized block to flattened coefficients."""

    def forward(x):
        return wavelet.flatten(wavelet.dwt2(inverse_raster_scan(x, h, w), levels, fb))

    def inverse(s):
        return raster_scan(wavelet.idwt2(wavelet.unflatten(s, (h, w), levels), fb))

    return forward, inverse


@lru_cache(maxsize=32)
def _pipeline_matrix(kind: str, m: int, n: int, seed: int) -> np.ndarray:
    if kind == "mask":
        mask = build_sampling_mask(n, m / n, seed)
        return mask.matrix()
    return build_gaussian_matrix(m, n, seed).matrix


def cs_pipeline(img, cfg: CsConfig, return_info: bool = False):
    """Simulate a compressive camera followed by basis-pursuit reconstruction.

    Every block is rasterized, wavelet transformed, measured with the same
    sensing matrix (seeded by ``cfg.seed``), recovered and transformed back.
    The result is clipped to ``[0, 1]``.  With ``return_info`` a dict of
    per-block squared residuals is returned as well.
    """
    x = as_image(img)
    h, w = x.shape
    bh, bw = (h, w) if cfg.block is None else (cfg.block, cfg.block)
    if h % bh or w % bw:
        raise DimensionError(f"image {h}x{w} is not divisible into {bh}x{bw} blocks")
    n = bh * bw
    m = int(round(cfg.rate * n))
    if m == 0:
        raise ValueError("sampling rate yields zero measurements")
    A = _pipeline_matrix(cfg.sensing, m, n, int(cfg.seed))
    forward, inverse = wavelet_operator(bh, bw, cfg.levels, cfg.filter_bank)

    coords = [(i, j) for j in range(0, w, bw) for i in range(0, h, bh)]
    S = np.stack([forward(raster_scan(x[i : i + bh, j : j + bw])) for i, j in coords], axis=1)
    Y = A @ S
    try:
        S_hat = bp_recover(A, Y, cfg.delta, cfg.max_iter, cfg.tol)
    except NonConvergenceError as exc:
        bad = [coords[k] for k in exc.unfinished]
        raise NonConvergenceError(
            str(exc), exc.iterate, exc.residual, block=bad, unfinished=exc.unfinished
        ) from exc

    out = np.empty_like(x)
    for k, (i, j) in enumerate(coords):
        out[i : i + bh, j : j + bw] = inverse_raster_scan(inverse(S_hat[:, k]), bh, bw)
    out = np.clip(out, 0.0, 1.0)
    if return_info:
        residuals = np.sum((Y - A @ S_hat) ** 2, axis=0)
        return out, {"blocks": coords, "residuals": residuals.tolist(), "m": m, "n": n}
    return out
