"""
A small identification experiment end to end
============================================

Builds a balanced dataset (compressive, codec and raw classes), estimates
one kernel per image, trains the linear SVM and the kernel CNN, runs the
thresholding baseline, and prints the confusion tables.  ``--n-r 60``
gives the full desk-scale run (about half an hour on one core); the default
of 12 originals per sampling rate takes a few minutes.

Run with ``python demos/small_experiment.py [--n-r N] [--out DIR]``.
"""

import argparse
import logging
import tempfile
from pathlib import Path

import numpy as np

from csforensics.harness import ExperimentConfig, run_experiment
from csforensics.sample_corpus import export_sample_corpus

parser = argparse.ArgumentParser()
parser.add_argument("--n-r", type=int, default=12)
parser.add_argument("--out", default=None)
args = parser.parse_args()
logging.basicConfig(level=logging.INFO, format="%(message)s")

work = Path(args.out or tempfile.mkdtemp(prefix="csf_experiment_"))
corpus = work / "corpus"
export_sample_corpus(corpus)

# the codec ratios are calibrated per sampling rate on the learning split
cfg = ExperimentConfig(n_r=args.n_r)
results = run_experiment(corpus, work / "run", cfg)

for c in results["calibration"]:
    print(f"rate {c['rate']:.2f}: codec ratio {c['ratio']:.2f}, "
          f"PSNR {c['psnr_cs']:.2f} dB (compressive) vs {c['psnr_jp2']:.2f} dB (codec)")

# columns are ground truth and sum to 100; rows are predictions
for name, res in results["learners"].items():
    pct = np.array(res["confusion"]["percent"], dtype=float)
    print(f"\n{name}: overall {res['confusion']['accuracy']:.2f}%")
    print("        C       J       R   <- truth")
    for lab, row in zip("CJR", pct):
        print(f"  {lab}  " + "  ".join(f"{v:6.2f}" for v in row))

print(f"\nartifacts in {work / 'run'}")
