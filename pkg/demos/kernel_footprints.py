"""
Blur-kernel footprints of the three imaging systems
===================================================

Each imaging system leaves a characteristic blur kernel in its output.  This
script estimates 9x9 kernels blindly from single images (raw, compressive
at 25%, codec at a matched ratio), prints their central 3x3 part and the
fraction of mass off the center, and then fits the best linear
shift-invariant kernel of each system from random probe images, where the
system itself is available.

Run with ``python demos/kernel_footprints.py``.
"""

import tempfile

import numpy as np

from csforensics import kernels as K
from csforensics.conventional import Jp2Config, calibrate_ratio, jp2_pipeline
from csforensics.core import quantize_8bit
from csforensics.cs_imager import CsConfig, cs_pipeline
from csforensics.harness import extract_patches
from csforensics.sample_corpus import export_sample_corpus

np.set_printoptions(precision=3, suppress=True)

files = export_sample_corpus(tempfile.mkdtemp(prefix="csf_corpus_"))
patches, _ = extract_patches(files, 128, min_std=0.02)
patches = patches[::40][:5]

cs_cfg = CsConfig(rate=0.25)
cs_out = [quantize_8bit(cs_pipeline(p, cs_cfg)) for p in patches]
ratio = calibrate_ratio(patches, cs_outputs=cs_out)
jp2_out = [quantize_8bit(jp2_pipeline(p, Jp2Config(ratio=ratio))) for p in patches]
print(f"codec ratio matched to the 25% compressive imager: {ratio:.1f}\n")

# blind estimates, one per image
for name, images in (("raw", patches), ("compressive", cs_out), ("codec", jp2_out)):
    ks = [K.estimate_kernel(img, 9) for img in images]
    mean = np.mean(ks, axis=0)
    off = [1 - k[4, 4] for k in ks]
    print(f"{name:12s} off-center mass per image: {np.round(off, 2)}")
    print(mean[3:6, 3:6], "\n")

# probe-based fits: the linear shift-invariant system closest to each pipeline
print("probe-fitted kernels (5x5), center row")
for name, fn in (
    ("codec, ratio 1.5", lambda x: jp2_pipeline(x, Jp2Config(ratio=1.5))),
    (f"codec, ratio {ratio:.0f}", lambda x: jp2_pipeline(x, Jp2Config(ratio=ratio))),
):
    k = K.fit_lsi_kernel(fn, 5)
    print(f"{name:18s} {k[2]}  correlation with delta {K.kernel_correlation(k, K.delta_kernel(5)):.3f}")
