"""Identify whether an image came from a compressive, a raw or a compressing conventional imager.

Sub-modules
-----------
core
    Labels, rasterization, 8-bit conversion, PSNR, seeded RNG and file I/O.
wavelet
    Non-expansive multilevel bior4.4 transform.
cs_imager
    Block compressive camera with basis-pursuit reconstruction.
conventional
    Raw passthrough and a wavelet codec with rate control and PSNR calibration.
kernels
    Blind kernel estimation and probe-based LSI kernel fitting.
learners
    Kernel normalization, one-vs-one linear SVM and a small CNN.
baseline
    Approximate two-stage thresholding detector for comparison.
harness
    Dataset construction, batch kernel extraction, training and scoring.
"""

from .core import LABEL_ORDER, ClassLabel

__version__ = "0.1.0"

__all__ = ["ClassLabel", "LABEL_ORDER", "__version__"]
