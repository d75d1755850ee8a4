"""Approximate two-stage thresholding detector used as a comparison baseline.

Both stages look at the finest-scale detail coefficients of a 5-level
bior4.4 decomposition (image on the 0-255 scale):

* stage 1 fits a Laplace law by maximum likelihood and measures the mean
  absolute difference between the empirical pmf (unit bins) and the fitted
  pmf; values below ``tau1`` are called RAW;
* stage 2 refits a two-component zero-centered Laplace mixture by EM and
  measures the same pmf residual; values at or above ``tau2`` are called JP2,
  the rest CS.

The two statistics are surrogates for detectors whose exact definitions are
not available here, so numbers from this module are not the original
method's numbers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import LABEL_ORDER, ClassLabel, as_image
from .wavelet import BIOR44, dwt2

__all__ = [
    "LaplaceFit",
    "DetectorThresholds",
    "DegenerateSubbandError",
    "fit_laplace_ml",
    "detail_coefficients",
    "stage_statistics",
    "chu_classify",
    "classify_statistics",
    "fit_thresholds",
    "TAU1_RANGE",
    "TAU2_RANGE",
]

TAU1_RANGE = (0.001, 0.002)
TAU2_RANGE = (0.002, 0.003)
GRID_POINTS = 21


class DegenerateSubbandError(ValueError):
    """Detail coefficients are all equal, so no Laplace law can be fitted."""


@dataclass(frozen=True)
class LaplaceFit:
    location: float
    diversity: float
    count: int

    def cdf(self, x):
        z = (np.asarray(x, dtype=np.float64) - self.location) / self.diversity
        tail = 0.5 * np.exp(-np.abs(z))
        return np.where(z < 0, tail, 1.0 - tail)

    def pmf(self, centers):
        """Probability of each unit-width bin centered on ``centers``."""
        c = np.asarray(centers, dtype=np.float64)
        return self.cdf(c + 0.5) - self.cdf(c - 0.5)


@dataclass(frozen=True)
class DetectorThresholds:
    tau1: float
    tau2: float


def fit_laplace_ml(coeffs) -> LaplaceFit:
    """Maximum-likelihood Laplace fit: median and mean absolute deviation from it.

    Examples
    --------
    >>> fit_laplace_ml([-1.0, 1.0])
    LaplaceFit(location=0.0, diversity=1.0, count=2)
    """
    x = np.asarray(coeffs, dtype=np.float64).ravel()
    if x.size < 2:
        raise ValueError("need at least two samples")
    loc = float(np.median(x))
    div = float(np.mean(np.abs(x - loc)))
    if div <= 0:
        raise DegenerateSubbandError("all samples are equal; diversity is zero")
    return LaplaceFit(loc, div, int(x.size))


def detail_coefficients(img, levels: int = 5) -> np.ndarray:
    """Finest-level LH, HL and HH coefficients of the image scaled to 0-255."""
    pyr = dwt2(as_image(img) * 255.0, levels, BIOR44)
    return np.concatenate([band.ravel() for band in pyr.details[-1]])


def _empirical_pmf(x):
    bins = np.round(x).astype(np.int64)
    lo = bins.min()
    pmf = np.bincount(bins - lo) / x.size
    return lo + np.arange(pmf.size), pmf


def _em_mixture(x, loc, iters):
    """Two zero-centered (at ``loc``) Laplace components fitted by EM."""
    r = np.abs(x - loc)
    b1 = np.percentile(r, 25) + 1e-3
    b2 = np.percentile(r, 90) + 1e-3
    w = 0.5
    for _ in range(iters):
        p1 = w * np.exp(-r / b1) / (2 * b1)
        p2 = (1 - w) * np.exp(-r / b2) / (2 * b2)
        resp = p1 / np.maximum(p1 + p2, 1e-300)
        w = float(np.clip(resp.mean(), 1e-6, 1 - 1e-6))
        b1 = max(float((resp * r).sum() / resp.sum()), 1e-6)
        b2 = max(float(((1 - resp) * r).sum() / (1 - resp).sum()), 1e-6)
    return w, LaplaceFit(loc, b1, x.size), LaplaceFit(loc, b2, x.size)


def stage_statistics(img, em_iters: int = 100, levels: int = 5):
    """The two detector statistics ``(s1, s2)`` of one image."""
    x = detail_coefficients(img, levels)
    # flat content leaves only float rounding (~1e-11) in the detail bands
    if np.ptp(x) < 1e-6:
        raise DegenerateSubbandError("detail subbands are flat")
    fit = fit_laplace_ml(x)
    centers, emp = _empirical_pmf(x)
    s1 = float(np.mean(np.abs(emp - fit.pmf(centers))))
    w, c1, c2 = _em_mixture(x, fit.location, em_iters)
    mix = w * c1.pmf(centers) + (1 - w) * c2.pmf(centers)
    s2 = float(np.mean(np.abs(emp - mix)))
    return s1, s2


def _decide(s1, s2, tau1, tau2):
    s1, s2 = np.asarray(s1), np.asarray(s2)
    out = np.where(s2 >= tau2, ClassLabel.J.index, ClassLabel.C.index)
    return np.where(s1 < tau1, ClassLabel.R.index, out)


def classify_statistics(s1: float, s2: float, thresholds: DetectorThresholds) -> ClassLabel:
    """Two-stage decision from precomputed statistics."""
    return LABEL_ORDER[int(_decide(s1, s2, thresholds.tau1, thresholds.tau2))]


def chu_classify(img, thresholds: DetectorThresholds, em_iters: int = 100, levels: int = 5) -> ClassLabel:
    s1, s2 = stage_statistics(img, em_iters, levels)
    return classify_statistics(s1, s2, thresholds)


def fit_thresholds(statistics, labels, tau1_range=TAU1_RANGE, tau2_range=TAU2_RANGE,
                   points: int = GRID_POINTS) -> DetectorThresholds:
    """Grid search (endpoints included) maximizing accuracy on a learning split.

    ``statistics`` is a sequence of ``(s1, s2)`` pairs from :func:`stage_statistics`.
    Ties go to the smallest ``tau1``, then the smallest ``tau2``.
    """
    stats = np.asarray(statistics, dtype=np.float64).reshape(-1, 2)
    if stats.shape[0] == 0:
        raise ValueError("empty learning split")
    y = np.array([ClassLabel(lab).index if not isinstance(lab, (int, np.integer)) else int(lab)
                  for lab in labels])
    if y.size != stats.shape[0]:
        raise ValueError("statistics and labels differ in length")
    best, best_acc = None, -1.0
    for t1 in np.linspace(*tau1_range, points):
        for t2 in np.linspace(*tau2_range, points):
            acc = float(np.mean(_decide(stats[:, 0], stats[:, 1], t1, t2) == y))
            if acc > best_acc:
                best, best_acc = DetectorThresholds(float(t1), float(t2)), acc
    return best
