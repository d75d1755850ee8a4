"""
Three imaging systems on one patch
==================================

A never-compressed photograph patch goes through the raw camera, the
compressive (single-pixel style) imager at several sampling rates, and the
wavelet codec at compression ratios matched to the compressive imager's
PSNR.  Outputs are written as PGM files next to a short PSNR table.

Run with ``python demos/imaging_systems.py [out_dir]`` (needs scikit-image
for the sample photographs).
"""

import sys
import tempfile
from pathlib import Path

import numpy as np

from csforensics.conventional import Jp2Config, calibrate_ratio, jp2_decode, jp2_encode, raw_pipeline
from csforensics.core import psnr, quantize_8bit, write_pgm
from csforensics.cs_imager import CsConfig, cs_pipeline
from csforensics.harness import extract_patches
from csforensics.sample_corpus import export_sample_corpus

out = Path(sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="csf_demo_"))
out.mkdir(parents=True, exist_ok=True)

# one textured 128x128 patch from the bundled photographs
files = export_sample_corpus(out / "corpus")
patches, origins = extract_patches(files, 128, min_std=0.02)
patch = patches[0]
print(f"patch from {origins[0][0]} at row {origins[0][1]}, column {origins[0][2]}")
write_pgm(out / "original.pgm", patch)

# the raw camera only quantizes to 8 bits, so it is an exact copy here
assert np.array_equal(quantize_8bit(raw_pipeline(patch)), patch)

# compressive imaging: 32x32 blocks, shared Gaussian sensing matrix, basis pursuit in the wavelet domain
print("\n rate    CS PSNR   matched ratio   codec PSNR")
for rate in (0.25, 0.40, 0.50, 0.67):
    cs_img = quantize_8bit(cs_pipeline(patch, CsConfig(rate=rate)))
    write_pgm(out / f"cs_{int(100 * rate)}.pgm", cs_img)

    # pick the codec ratio whose output has the same PSNR
    ratio = calibrate_ratio([patch], cs_outputs=[cs_img])
    stream = jp2_encode(patch, Jp2Config(ratio=ratio))
    jp2_img = quantize_8bit(jp2_decode(stream))
    write_pgm(out / f"jp2_{int(100 * rate)}.pgm", jp2_img)
    print(f" {rate:.2f}   {psnr(patch, cs_img):6.2f} dB   {stream.ratio:8.2f}      {psnr(patch, jp2_img):6.2f} dB")

print(f"\nimages written to {out}")
