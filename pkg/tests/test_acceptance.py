"""Acceptance suite: one test per numbered criterion, each printing a PASS/FAIL line.

Criteria 6, 7, 8, 10 and 11 share two full desk-scale runs (60 originals,
720 images, 9x9 kernels) on the bundled sample corpus; expect about an hour
on a single core.
"""

import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from csforensics import harness, learners, wavelet
from csforensics import kernels as K
from csforensics.conventional import Jp2Config, jp2_pipeline, raw_pipeline
from csforensics.core import quantize_8bit
from csforensics.cs_imager import (CsConfig, NonConvergenceError, bp_recover, build_gaussian_matrix,
                                   cs_pipeline, theoretical_kernel_l2)

pytestmark = pytest.mark.acceptance

ARTIFACTS = ["manifest.json", "kernels.csv", "model_svm.json", "model_cnn-kernel.json", "results.json",
             "confusion_svm.csv", "confusion_cnn-kernel.csv", "confusion_chu.csv"]


def record(num: int, ok: bool, detail: str):
    line = f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[num] = line
    print(line)
    assert ok, line


def non_increasing(values, slack=3.0):
    """At most one inversion, and that one no larger than ``slack`` points."""
    rises = [b - a for a, b in zip(values, values[1:]) if b > a]
    return not rises or (len(rises) == 1 and rises[0] <= slack)


@pytest.fixture(scope="module")
def full_runs(sample_corpus, tmp_path_factory):
    cfg = harness.ExperimentConfig()
    out = []
    for name in ("run_a", "run_b"):
        d = tmp_path_factory.mktemp(name)
        t0 = time.perf_counter()
        results = harness.run_experiment(sample_corpus, d, cfg)
        out.append((d, results, time.perf_counter() - t0))
    return out


@pytest.fixture(scope="module")
def full_run(full_runs):
    return full_runs[0]


def test_criterion_01_wavelet_reconstruction():
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst = 0.0
    for i in range(200):
        n = (32, 64, 128)[i % 3]
        img = rng.random((n, n))
        worst = max(worst, float(np.abs(wavelet.idwt2(wavelet.dwt2(img, 4)) - img).max()))
    elapsed = time.perf_counter() - t0
    record(1, worst < 1e-8 and elapsed < 10, f"max error {worst:.2e} (< 1e-8), {elapsed:.2f} s (< 10 s)")


def test_criterion_02_sparse_recovery():
    n, m, k = 128, 64, 5
    t0 = time.perf_counter()
    hits = 0
    for trial in range(100):
        rng = np.random.default_rng(1000 + trial)
        A = build_gaussian_matrix(m, n, seed=trial).matrix
        x = np.zeros(n)
        x[rng.choice(n, k, replace=False)] = rng.standard_normal(k)
        try:
            xh = bp_recover(A, A @ x, tol=1e-9, max_iter=20000)
        except NonConvergenceError:
            continue
        hits += np.linalg.norm(xh - x) / np.linalg.norm(x) < 1e-4
    elapsed = time.perf_counter() - t0
    record(2, hits >= 95 and elapsed < 60, f"{hits}/100 exact (>= 95), {elapsed:.1f} s (< 60 s)")


def test_criterion_03_limit_cases(camera_patch):
    full_mask = cs_pipeline(camera_patch, CsConfig(rate=1.0, sensing="mask"))
    mask_err = float(np.abs(full_mask - camera_patch).max())
    k = K.fit_lsi_kernel(lambda x: jp2_pipeline(x, Jp2Config(ratio=1.5)), 9)
    corr = K.kernel_correlation(k, K.delta_kernel(9))
    raw = raw_pipeline(camera_patch)
    identical = quantize_8bit(raw).tobytes() == quantize_8bit(camera_patch).tobytes()
    record(3, mask_err < 1e-6 and corr > 0.99 and identical,
           f"full mask error {mask_err:.1e} (< 1e-6), codec kernel vs delta {corr:.5f} (> 0.99), "
           f"raw byte-identical {identical}")


def test_criterion_04_projector():
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        m, n = int(rng.integers(5, 40)), 48
        P = theoretical_kernel_l2(build_gaussian_matrix(m, n, seed).matrix)
        worst = max(worst, float(np.abs(P @ P - P).max()), float(np.abs(P - P.T).max()))
    record(4, worst < 1e-10, f"max |P^2 - P|, |P^T - P| = {worst:.1e} (< 1e-10)")


def test_criterion_05_blind_deconvolution(natural_patches):
    truth = K.gaussian_kernel(9, 1.5)
    corr, center = [], []
    for img in natural_patches[:10]:
        blurred = quantize_8bit(K.convolve(img, truth, "same"))
        corr.append(K.kernel_correlation(K.estimate_kernel(blurred, 9), truth))
        center.append(K.estimate_kernel(img, 9)[4, 4])
    record(5, min(corr) > 0.9 and min(center) > 0.5,
           f"planted-blur correlation min {min(corr):.3f} (> 0.9), raw center mass min {min(center):.3f} (> 0.5)")


def test_criterion_06_separation(full_run):
    out, _, _ = full_run
    _, labels, ratios, kern = harness.read_kernels_csv(out / "kernels.csv")
    labels = np.array(labels)
    ratios = np.array([np.nan if r is None else r for r in ratios])
    rate0 = min(r for r, lab in zip(ratios, labels) if lab == "C")
    ratio0 = max(r for r, lab in zip(ratios, labels) if lab == "J")
    groups = {"C": kern[(labels == "C") & (ratios == rate0)],
              "J": kern[(labels == "J") & (ratios == ratio0)],
              "R": kern[labels == "R"]}
    spread = {c: float(g.std(axis=0, ddof=1).mean()) for c, g in groups.items()}
    parts, ok = [], True
    for a, b in (("C", "J"), ("C", "R"), ("J", "R")):
        dist = float(np.linalg.norm(groups[a].mean(axis=0) - groups[b].mean(axis=0)))
        ok &= dist > max(spread[a], spread[b])
        parts.append(f"{a}-{b} {dist:.4f} vs {max(spread[a], spread[b]):.4f}")
    record(6, ok, "mean distance vs within-class std: " + ", ".join(parts))


def test_criterion_07_classification(full_run):
    _, results, elapsed = full_run
    acc = {k: v["confusion"]["accuracy"] for k, v in results["learners"].items()}
    svm, cnn, chu = acc["svm"], acc["cnn-kernel"], acc["chu"]
    record(7, svm > 60 and cnn >= svm - 5 and chu < svm and elapsed < 7200,
           f"svm {svm:.2f}% (> 60), cnn-kernel {cnn:.2f}% (>= svm - 5), chu {chu:.2f}% (< svm), "
           f"runtime {elapsed / 60:.1f} min (< 120)")


def test_criterion_08_trends(full_run):
    _, results, _ = full_run
    per_ratio = results["learners"]["svm"]["per_ratio"]
    cs = [per_ratio["C"][k] for k in sorted(per_ratio["C"], key=float)]
    jp2 = [per_ratio["J"][k] for k in sorted(per_ratio["J"], key=float, reverse=True)]
    record(8, non_increasing(cs) and non_increasing(jp2),
           f"CS by rising rate {[round(v, 1) for v in cs]}, JP2 by falling ratio {[round(v, 1) for v in jp2]}")


def test_criterion_09_gradients():
    rng = np.random.default_rng(9)
    errors = []
    for seed in (0, 1):
        km = learners.cnn_init((9, 9), "kernel", seed=seed)
        errors.append(learners.cnn_grad_check(km, rng.random((3, 9, 9)), [0, 1, 2]))
        pm = learners.cnn_init((10, 10), "pixel", seed=seed)
        errors.append(learners.cnn_grad_check(pm, rng.random((3, 10, 10)), [2, 1, 0]))
    probs = learners.cnn_forward(learners.cnn_init((9, 9), "kernel", seed=5), rng.random((50, 9, 9)))
    sum_err = float(np.abs(probs.sum(axis=1) - 1).max())
    record(9, max(errors) < 1e-4 and sum_err < 1e-9,
           f"max gradient rel. error {max(errors):.1e} (< 1e-4), softmax sum error {sum_err:.1e} (< 1e-9)")


def test_criterion_10_calibration(full_run):
    out, _, _ = full_run
    calib = harness.load_manifest(out / "manifest.json").meta["calibration"]
    gaps = [abs(c["psnr_jp2"] - c["psnr_cs"]) for c in calib]
    record(10, max(gaps) <= 0.5, "PSNR gaps " + ", ".join(f"{c['rate']:.2f}: {g:.3f} dB"
                                                         for c, g in zip(calib, gaps)) + " (<= 0.5)")


def test_criterion_11_determinism(full_runs):
    (a, _, _), (b, _, _) = full_runs
    differ = [name for name in ARTIFACTS if (a / name).read_bytes() != (b / name).read_bytes()]
    record(11, not differ, f"{len(ARTIFACTS) - len(differ)}/{len(ARTIFACTS)} artifacts byte-identical"
           + (f"; differing: {differ}" if differ else ""))
