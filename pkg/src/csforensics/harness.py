"""Experiment orchestration: dataset construction, kernel extraction, training and scoring.

Everything is driven by an :class:`ExperimentConfig` and a seed.  Outputs
(manifest, kernels CSV, models, results) are written with fixed ordering
and formatting so that identical inputs give byte-identical files.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import baseline, learners
from .conventional import (
    FULL_SCALE_COMPRESSION_RATIOS,
    Jp2Config,
    RateControlError,
    calibrate_ratio,
    encode_with_step,
    jp2_decode,
    jp2_encode,
    mean_psnr,
)
from .core import (
    LABEL_ORDER,
    ClassLabel,
    file_digest,
    make_rng,
    derive_seed,
    quantize_8bit,
    read_image,
    write_pgm,
)
from .cs_imager import SAMPLING_RATES, CsConfig, cs_pipeline
from .kernels import DeconvConfig, estimate_kernel

__all__ = [
    "ExperimentConfig",
    "ManifestEntry",
    "DatasetManifest",
    "ConfusionTable",
    "SweepResult",
    "CorpusError",
    "list_corpus",
    "extract_patches",
    "build_dataset",
    "holdout_split",
    "load_manifest",
    "save_manifest",
    "estimate_all_kernels",
    "read_kernels_csv",
    "evaluate",
    "train_learner",
    "predict_learner",
    "kernel_size_sweep",
    "per_ratio_report",
    "run_experiment",
]

log = logging.getLogger(__name__)

MANIFEST_FORMAT = "csforensics-manifest"
MANIFEST_VERSION = 1
IMAGE_SUFFIXES = (".pgm", ".pnm", ".png", ".bmp", ".tif", ".tiff")
LEARNERS = ("svm", "cnn-kernel", "cnn-pixel")


class CorpusError(ValueError):
    """The corpus cannot supply the requested number of distinct patches."""


@dataclass
class ExperimentConfig:
    n_r: int = 60
    sampling_rates: tuple = SAMPLING_RATES
    # None means: calibrate one ratio per sampling rate on the learning split
    compression_ratios: tuple | None = None
    patch: int = 128
    block: int = 32
    levels: int = 4
    min_patch_std: float = 0.02
    learn_fraction: float = 0.75
    calibration_tol_db: float = 0.5
    kernel_size: int = 9
    svm_c: float = 1.0
    cnn_epochs: int = 30
    pixel_cnn: bool = False
    pixel_train_per_class: int = 60
    seed: int = 0

    def __post_init__(self):
        self.sampling_rates = tuple(float(r) for r in self.sampling_rates)
        if self.compression_ratios is not None:
            self.compression_ratios = tuple(float(r) for r in self.compression_ratios)
            if len(self.compression_ratios) != len(self.sampling_rates):
                raise ValueError("need one compression ratio per sampling rate")
        if self.n_r < 1:
            raise ValueError("n_r must be positive")

    @classmethod
    def full_scale(cls, **overrides) -> "ExperimentConfig":
        base = dict(n_r=655, compression_ratios=FULL_SCALE_COMPRESSION_RATIOS)
        return cls(**{**base, **overrides})

    @classmethod
    def from_json(cls, path, **overrides) -> "ExperimentConfig":
        data = json.loads(Path(path).read_text())
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**{**data, **overrides})

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sampling_rates"] = list(self.sampling_rates)
        if self.compression_ratios is not None:
            d["compression_ratios"] = list(self.compression_ratios)
        return d


# -- manifest ---------------------------------------------------------------


@dataclass
class ManifestEntry:
    id: str
    path: str
    label: str
    ratio: float | None
    split: str
    patch: int
    seed: int | None = None
    sha256: str = ""

    @property
    def subclass(self) -> tuple:
        return (self.label, self.ratio)


@dataclass
class DatasetManifest:
    entries: list
    root: Path = Path(".")
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.entries)

    def by_split(self, split: str) -> list:
        return [e for e in self.entries if e.split == split]

    def image_path(self, entry: ManifestEntry) -> Path:
        return self.root / entry.path

    def counts(self) -> dict:
        out = {lab.value: 0 for lab in LABEL_ORDER}
        for e in self.entries:
            out[e.label] += 1
        return out

    def verify(self) -> None:
        """Check that every image exists and matches its recorded digest."""
        for e in self.entries:
            p = self.image_path(e)
            if not p.exists():
                raise FileNotFoundError(p)
            if e.sha256 and file_digest(p) != e.sha256:
                raise ValueError(f"digest mismatch for {e.id}")


def save_manifest(manifest: DatasetManifest, path) -> None:
    doc = {
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_VERSION,
        **manifest.meta,
        "entries": [asdict(e) for e in manifest.entries],
    }
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    doc = json.loads(path.read_text())
    if doc.get("format") != MANIFEST_FORMAT:
        raise ValueError(f"{path} is not a dataset manifest")
    entries = [ManifestEntry(**e) for e in doc.pop("entries")]
    doc.pop("format")
    doc.pop("version")
    return DatasetManifest(entries, path.parent, doc)


# -- corpus -----------------------------------------------------------------


def list_corpus(corpus_dir) -> list:
    files = sorted(p for p in Path(corpus_dir).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise CorpusError(f"no images in {corpus_dir}")
    return files


def extract_patches(files, size: int = 128, min_std: float = 0.0):
    """Non-overlapping ``size x size`` patches (row-major per file, files sorted).

    Patches whose 8-bit standard deviation is below ``min_std`` are dropped
    because blind deconvolution has nothing to work with on flat content.
    Returns ``(patches, origins)`` with origins ``(file name, row, col)``.
    """
    patches, origins = [], []
    for f in files:
        img = read_image(f)
        h, w = img.shape
        for r in range(0, h - size + 1, size):
            for c in range(0, w - size + 1, size):
                p = img[r : r + size, c : c + size]
                if p.std() >= min_std:
                    patches.append(p)
                    origins.append((Path(f).name, r, c))
    return patches, origins


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _cs_config(cfg: ExperimentConfig, rate_index: int) -> CsConfig:
    return CsConfig(
        rate=cfg.sampling_rates[rate_index],
        block=cfg.block,
        levels=cfg.levels,
        seed=derive_seed(cfg.seed, 1, rate_index) % (2**32),
    )


def _cs_job(args):
    img, cs_cfg = args
    return quantize_8bit(cs_pipeline(img, cs_cfg))


def _jp2_job(args):
    img, ratio, levels = args
    jcfg = Jp2Config(ratio=ratio, levels=levels)
    try:
        stream = jp2_encode(img, jcfg)
    except RateControlError as exc:
        log.warning("rate control missed %.3f; using the closest step", ratio)
        stream = encode_with_step(img, exc.best_step, levels)
    return quantize_8bit(jp2_decode(stream)), stream.ratio


def _imap(fn, items, jobs: int):
    """Ordered lazy map, in-process or over a worker pool."""
    if jobs <= 1:
        yield from (fn(x) for x in items)
        return
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        yield from pool.map(fn, items, chunksize=max(1, len(items) // (4 * jobs)))


def _map(fn, items, jobs: int):
    return list(_imap(fn, items, jobs))


def build_dataset(corpus_dir, out_dir, cfg: ExperimentConfig | None = None, jobs: int = 1,
                  calibration: dict | None = None) -> DatasetManifest:
    """Draw patches, simulate all imaging systems and write images plus ``manifest.json``.

    Originals ``D_I`` (``n_r`` patches) feed the compressive imager at every
    sampling rate and the codec at the matching compression ratio; extra
    distinct patches ``D_O`` top the raw class up to the same size.  Codec
    ratios are calibrated on the learning part of ``D_I`` unless fixed in
    ``cfg`` or supplied via ``calibration``.
    """
    cfg = cfg or ExperimentConfig()
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    files = list_corpus(corpus_dir)
    patches, origins = extract_patches(files, cfg.patch, cfg.min_patch_std)
    n_rates = len(cfg.sampling_rates)
    per_class = cfg.n_r * n_rates
    n_extra = per_class - cfg.n_r
    if len(patches) < cfg.n_r + n_extra:
        raise CorpusError(
            f"corpus yields {len(patches)} usable patches; {cfg.n_r + n_extra} distinct ones are needed"
        )

    rng = make_rng(derive_seed(cfg.seed, 0))
    order = rng.permutation(len(patches))
    d_i = sorted(order[: cfg.n_r].tolist())
    d_o = sorted(order[cfg.n_r : cfg.n_r + n_extra].tolist())
    n_learn = _round_half_up(cfg.learn_fraction * cfg.n_r)
    learn_ids = d_i[:n_learn]

    def save(img, name):
        path = Path("images") / f"{name}.pgm"
        write_pgm(out_dir / path, img)
        return str(path), file_digest(out_dir / path)

    entries = []
    cs_out = {}
    for k in range(n_rates):
        cs_cfg = _cs_config(cfg, k)
        imgs = _map(_cs_job, [(patches[i], cs_cfg) for i in d_i], jobs)
        cs_out[k] = dict(zip(d_i, imgs))
        for i in d_i:
            rel, digest = save(cs_out[k][i], f"C_{k}_{i:05d}")
            entries.append(ManifestEntry(f"C-{k}-{i:05d}", rel, "C", cfg.sampling_rates[k], "",
                                         i, cs_cfg.seed, digest))

    calib = _calibrate(cfg, patches, learn_ids, cs_out, calibration)
    ratios = [c["ratio"] for c in calib]
    for k, ratio in enumerate(ratios):
        results = _map(_jp2_job, [(patches[i], ratio, cfg.levels) for i in d_i], jobs)
        decoded = []
        for i, (img, _achieved) in zip(d_i, results):
            decoded.append(img)
            rel, digest = save(img, f"J_{k}_{i:05d}")
            entries.append(ManifestEntry(f"J-{k}-{i:05d}", rel, "J", ratio, "", i, None, digest))
        learn_pos = [d_i.index(i) for i in learn_ids]
        calib[k]["psnr_jp2"] = mean_psnr([patches[i] for i in learn_ids], [decoded[p] for p in learn_pos])

    for i in sorted(d_i + d_o):
        rel, digest = save(patches[i], f"R_{i:05d}")
        entries.append(ManifestEntry(f"R-{i:05d}", rel, "R", None, "", i, None, digest))

    meta = {
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "corpus": [{"file": f.name, "sha256": file_digest(f)} for f in files],
        "patches": {str(i): list(origins[i]) for i in sorted(d_i + d_o)},
        "originals": d_i,
        "extra_raw": d_o,
        "calibration": calib,
        "calibration_split": "learn",
    }
    manifest = holdout_split(DatasetManifest(entries, out_dir, meta), cfg.learn_fraction)
    save_manifest(manifest, out_dir / "manifest.json")
    return manifest


def _calibrate(cfg, patches, learn_ids, cs_out, calibration):
    originals = [patches[i] for i in learn_ids]
    out = []
    for k, rate in enumerate(cfg.sampling_rates):
        cs_imgs = [cs_out[k][i] for i in learn_ids]
        psnr_cs = mean_psnr(originals, cs_imgs)
        if calibration is not None:
            ratio = float(calibration[k]["ratio"])
        elif cfg.compression_ratios is not None:
            ratio = cfg.compression_ratios[k]
        else:
            ratio = calibrate_ratio(originals, cs_outputs=cs_imgs, tol_db=cfg.calibration_tol_db,
                                    levels=cfg.levels)
        log.info("rate %.2f: ratio %.4f (CS %.2f dB)", rate, ratio, psnr_cs)
        out.append({"rate": rate, "ratio": float(ratio), "psnr_cs": psnr_cs})
    return out


def holdout_split(manifest: DatasetManifest, learn_fraction: float = 0.75) -> DatasetManifest:
    """First ``round(fraction * count)`` entries of each sub-class (by patch id) go to ``learn``.

    RAW has no ratio parameter; its entries (by patch id) are cut into as many
    equal sub-classes as there are sampling rates, mirroring the other classes.
    """
    groups = {}
    raw = []
    for e in manifest.entries:
        if e.label == ClassLabel.R.value:
            raw.append(e)
        else:
            groups.setdefault(e.subclass, []).append(e)
    n_raw_groups = max(1, len({e.ratio for e in manifest.entries if e.label == ClassLabel.C.value}))
    raw.sort(key=lambda e: e.patch)
    for k, chunk in enumerate(np.array_split(np.arange(len(raw)), n_raw_groups)):
        if chunk.size:
            groups[("R", k)] = [raw[j] for j in chunk]
    for key, members in groups.items():
        if len(members) < 2:
            raise ValueError(f"sub-class {key} has fewer than 2 entries")
        members.sort(key=lambda e: e.patch)
        n_learn = _round_half_up(learn_fraction * len(members))
        for j, e in enumerate(members):
            e.split = "learn" if j < n_learn else "test"
    return manifest


# -- kernels ----------------------------------------------------------------


def _kernel_job(args):
    path, size, cfg_dict = args
    try:
        k = estimate_kernel(read_image(path), cfg=DeconvConfig(**cfg_dict))
        return k.ravel(), None
    except Exception as exc:  # recorded per image, never fatal for the batch
        return None, f"{type(exc).__name__}: {exc}"


def _fmt(v) -> str:
    # shortest string that round-trips to the same double
    return repr(float(v))


def estimate_all_kernels(manifest: DatasetManifest, out_path, size: int = 9,
                         cfg: DeconvConfig | None = None, jobs: int = 1) -> dict:
    """Write one kernel per manifest entry to ``out_path`` (CSV), resuming if it exists.

    Rows are ``id, label, ratio, k_0 ... k_{a^2-1}`` (row-major kernel).
    Failed images go to ``<out>.errors.csv`` and are retried on the next run.
    Returns ``{"written": n, "skipped": n, "failed": n}``.
    """
    cfg = cfg or DeconvConfig(size=size)
    if cfg.size != size:
        cfg = DeconvConfig(**{**cfg.__dict__, "size": size})
    out_path = Path(out_path)
    done = set(read_kernels_csv(out_path)[0]) if out_path.exists() else set()
    todo = [e for e in manifest.entries if e.id not in done]
    results = _imap(_kernel_job, [(str(manifest.image_path(e)), size, cfg.__dict__) for e in todo], jobs)

    new_file = not out_path.exists()
    failures = []
    with open(out_path, "a", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if new_file:
            writer.writerow(["id", "label", "ratio"] + [f"k{j}" for j in range(size * size)])
        # rows are flushed as they arrive so an interrupted batch resumes where it stopped
        for e, (k, err) in zip(todo, results):
            if err is not None:
                failures.append((e.id, err))
                continue
            writer.writerow([e.id, e.label, "" if e.ratio is None else _fmt(e.ratio)] + [_fmt(v) for v in k])
            fh.flush()
    err_path = out_path.with_name(out_path.name + ".errors.csv")
    if failures:
        with open(err_path, "w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerows(failures)
    elif err_path.exists():
        err_path.unlink()
    return {"written": len(todo) - len(failures), "skipped": len(done), "failed": len(failures)}


def read_kernels_csv(path):
    """Returns ``(ids, labels, ratios, kernels)`` with kernels of shape ``(n, a*a)``."""
    ids, labels, ratios, rows = [], [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader, None)
        for row in reader:
            ids.append(row[0])
            labels.append(row[1])
            ratios.append(float(row[2]) if row[2] else None)
            rows.append([float(v) for v in row[3:]])
    return ids, labels, ratios, np.asarray(rows, dtype=np.float64)


# -- scoring ----------------------------------------------------------------


@dataclass
class ConfusionTable:
    """Counts with rows = predicted class and columns = ground truth (order C, J, R)."""

    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        return 100.0 * float(np.trace(self.counts)) / self.total if self.total else float("nan")

    def percent(self) -> np.ndarray:
        """Each ground-truth column normalized to 100."""
        col = self.counts.sum(axis=0, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(col > 0, 100.0 * self.counts / np.maximum(col, 1), np.nan)

    def per_class(self) -> dict:
        pct = self.percent()
        return {lab.value: float(pct[i, i]) for i, lab in enumerate(LABEL_ORDER)}

    def to_dict(self) -> dict:
        return {
            "labels": [lab.value for lab in LABEL_ORDER],
            "counts": self.counts.astype(int).tolist(),
            "percent": [[None if np.isnan(v) else round(float(v), 6) for v in row] for row in self.percent()],
            "accuracy": round(self.accuracy, 6),
            "per_class": {k: round(v, 6) for k, v in self.per_class().items()},
        }

    def to_csv(self, path) -> None:
        pct = self.percent()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["predicted\\truth"] + [lab.value for lab in LABEL_ORDER])
            for i, lab in enumerate(LABEL_ORDER):
                w.writerow([lab.value] + [f"{v:.2f}" for v in pct[i]])


def evaluate(predictions, ground_truth) -> ConfusionTable:
    pred = learners._label_indices(predictions)
    gt = learners._label_indices(ground_truth)
    if pred.size != gt.size:
        raise ValueError("predictions and ground truth differ in length")
    counts = np.zeros((3, 3), dtype=np.int64)
    np.add.at(counts, (pred, gt), 1)
    return ConfusionTable(counts)


# -- learners ---------------------------------------------------------------


def _kernel_lookup(kernels):
    ids, _, _, K = kernels
    return {i: K[j] for j, i in enumerate(ids)}


def _rows(entries, lookup):
    keep = [e for e in entries if e.id in lookup]
    if len(keep) < len(entries):
        log.warning("%d entries have no kernel and are skipped", len(entries) - len(keep))
    return keep, np.array([lookup[e.id] for e in keep])


_MIN_CNN_SIDE = 7


def _kernel_images(K):
    """8-bit normalized kernels rescaled to [0,1], zero-padded to at least 7x7.

    The 5x5 convolution and 2x2 pooling of the kernel-mode network need a
    6x6 input; smaller kernels (a = 3, 5 in a size sweep) are centered in a
    zero border so the architecture stays unchanged.
    """
    a = int(round(math.sqrt(K.shape[1])))
    imgs = np.array([learners.normalize_kernel(k.reshape(a, a)) for k in K], dtype=np.float64) / 255.0
    pad = max(0, (_MIN_CNN_SIDE - a) // 2)
    return np.pad(imgs, ((0, 0), (pad, pad), (pad, pad))) if pad else imgs


def _pixel_subset(entries, per_class):
    """Up to ``per_class`` entries per class, taken round-robin over its sub-classes."""
    out = []
    for lab in LABEL_ORDER:
        groups = {}
        for e in entries:
            if e.label == lab.value:
                groups.setdefault(e.ratio, []).append(e)
        queues = [groups[r] for r in sorted(groups, key=lambda r: -1.0 if r is None else r)]
        picked = []
        depth = 0
        while len(picked) < (per_class or len(entries)) and any(depth < len(q) for q in queues):
            picked.extend(q[depth] for q in queues if depth < len(q))
            depth += 1
        out.extend(picked[:per_class] if per_class else picked)
    return out


def train_learner(name: str, manifest: DatasetManifest, kernels=None, cfg: ExperimentConfig | None = None,
                  seed: int | None = None):
    """Train ``svm``, ``cnn-kernel`` or ``cnn-pixel`` on the learning split."""
    cfg = cfg or ExperimentConfig()
    seed = cfg.seed if seed is None else seed
    learn = manifest.by_split("learn")
    if name == "svm":
        entries, K = _rows(learn, _kernel_lookup(kernels))
        stats = learners.fit_normalization(K)
        return learners.svm_train(learners.standardize(K, stats), [e.label for e in entries],
                                  cfg.svm_c, stats=stats)
    if name == "cnn-kernel":
        entries, K = _rows(learn, _kernel_lookup(kernels))
        ccfg = learners.CnnConfig(mode="kernel", epochs=cfg.cnn_epochs, seed=seed)
        return learners.cnn_train(_kernel_images(K), [e.label for e in entries], ccfg)
    if name == "cnn-pixel":
        entries = _pixel_subset(learn, cfg.pixel_train_per_class)
        X = np.array([read_image(manifest.image_path(e)) for e in entries])
        ccfg = learners.CnnConfig(mode="pixel", epochs=cfg.cnn_epochs, seed=seed)
        return learners.cnn_train(X, [e.label for e in entries], ccfg)
    raise ValueError(f"unknown learner {name!r}; choose from {LEARNERS}")


def predict_learner(model, manifest: DatasetManifest, entries, kernels=None):
    """Predicted labels for ``entries`` (those without a kernel are skipped)."""
    if isinstance(model, learners.SvmModel):
        entries, K = _rows(entries, _kernel_lookup(kernels))
        labels, _ = learners.svm_predict(model, learners.standardize(K, model.stats))
        return entries, labels
    if model.mode == "kernel":
        entries, K = _rows(entries, _kernel_lookup(kernels))
        labels, _ = learners.cnn_predict(model, _kernel_images(K))
        return entries, labels
    X = np.array([read_image(manifest.image_path(e)) for e in entries])
    labels, _ = learners.cnn_predict(model, X)
    return entries, labels


def per_ratio_report(entries, predictions) -> dict:
    """Detection accuracy (percent) of class C per sampling rate and class J per ratio."""
    out = {"C": {}, "J": {}}
    for lab in ("C", "J"):
        ratios = sorted({e.ratio for e in entries if e.label == lab}, reverse=(lab == "J"))
        for r in ratios:
            hits = [ClassLabel(p).value == lab for e, p in zip(entries, predictions)
                    if e.label == lab and e.ratio == r]
            if not hits:
                raise ValueError(f"no test entries for sub-class {lab} at {r}")
            out[lab][_fmt(r)] = 100.0 * sum(hits) / len(hits)
    return out


def _score(model, manifest, kernels):
    test = manifest.by_split("test")
    entries, labels = predict_learner(model, manifest, test, kernels)
    table = evaluate(labels, [e.label for e in entries])
    return table, per_ratio_report(entries, labels)


@dataclass
class SweepResult:
    sizes: list
    accuracy: dict  # learner -> list of percentages aligned with ``sizes``

    def best(self, learner: str) -> int:
        acc = self.accuracy[learner]
        return self.sizes[int(np.argmax(acc))]

    def to_dict(self) -> dict:
        return {"sizes": self.sizes, "accuracy": self.accuracy,
                "best": {k: self.best(k) for k in self.accuracy}}


def kernel_size_sweep(manifest: DatasetManifest, work_dir, sizes=(3, 5, 7, 9, 11, 13),
                      learner_names=("svm", "cnn-kernel"), cfg: ExperimentConfig | None = None,
                      deconv: DeconvConfig | None = None, jobs: int = 1) -> SweepResult:
    """Held-out accuracy of each kernel learner as a function of the kernel side."""
    cfg = cfg or ExperimentConfig()
    work_dir = Path(work_dir)
    work_dir.mkdir(parents=True, exist_ok=True)
    acc = {name: [] for name in learner_names}
    for a in sizes:
        if a % 2 == 0 or not 3 <= a <= 13:
            raise ValueError("kernel sizes must be odd and within 3..13")
        path = work_dir / f"kernels_{a}.csv"
        dcfg = DeconvConfig(**{**(deconv or DeconvConfig()).__dict__, "size": a})
        estimate_all_kernels(manifest, path, a, dcfg, jobs)
        kernels = read_kernels_csv(path)
        for name in learner_names:
            model = train_learner(name, manifest, kernels, cfg)
            table, _ = _score(model, manifest, kernels)
            acc[name].append(table.accuracy)
            log.info("a=%d %s: %.2f%%", a, name, table.accuracy)
    return SweepResult(list(sizes), acc)


def _baseline_scores(manifest: DatasetManifest):
    def stats(entries):
        return [baseline.stage_statistics(read_image(manifest.image_path(e))) for e in entries]

    learn, test = manifest.by_split("learn"), manifest.by_split("test")
    thresholds = baseline.fit_thresholds(stats(learn), [e.label for e in learn])
    pred = [baseline.classify_statistics(s1, s2, thresholds) for s1, s2 in stats(test)]
    table = evaluate(pred, [e.label for e in test])
    return thresholds, table, per_ratio_report(test, pred)


def run_experiment(corpus_dir, out_dir, cfg: ExperimentConfig | None = None, jobs: int = 1,
                   deconv: DeconvConfig | None = None) -> dict:
    """Full pipeline: dataset, kernels, SVM and CNN training, baseline and scoring.

    Writes ``manifest.json``, ``kernels.csv``, ``model_<learner>.json``,
    ``results.json`` and ``confusion_<learner>.csv`` under ``out_dir`` and
    returns the results dictionary.
    """
    cfg = cfg or ExperimentConfig()
    out_dir = Path(out_dir)
    manifest = build_dataset(corpus_dir, out_dir, cfg, jobs)
    kpath = out_dir / "kernels.csv"
    dcfg = DeconvConfig(**{**(deconv or DeconvConfig()).__dict__, "size": cfg.kernel_size})
    estimate_all_kernels(manifest, kpath, cfg.kernel_size, dcfg, jobs)
    kernels = read_kernels_csv(kpath)

    results = {"config": cfg.to_dict(), "calibration": manifest.meta["calibration"], "learners": {}}
    names = ["svm", "cnn-kernel"] + (["cnn-pixel"] if cfg.pixel_cnn else [])
    for name in names:
        model = train_learner(name, manifest, kernels, cfg)
        learners.save_model(model, out_dir / f"model_{name}.json")
        table, ratios = _score(model, manifest, kernels)
        table.to_csv(out_dir / f"confusion_{name}.csv")
        entry = {"confusion": table.to_dict(), "per_ratio": ratios}
        if isinstance(model, learners.CnnModel):
            entry["loss_history"] = [round(v, 10) for v in model.loss_history]
        results["learners"][name] = entry

    thresholds, table, ratios = _baseline_scores(manifest)
    table.to_csv(out_dir / "confusion_chu.csv")
    results["learners"]["chu"] = {
        "thresholds": {"tau1": thresholds.tau1, "tau2": thresholds.tau2},
        "confusion": table.to_dict(),
        "per_ratio": ratios,
    }
    (out_dir / "results.json").write_text(json.dumps(results, indent=1, sort_keys=True) + "\n")
    return results


def write_curve(path, xs, columns: dict) -> None:
    """Whitespace-separated data file (gnuplot-friendly) with a commented header."""
    with open(path, "w") as fh:
        fh.write("# x " + " ".join(columns) + "\n")
        for j, x in enumerate(xs):
            fh.write(f"{x} " + " ".join(f"{columns[c][j]:.6f}" for c in columns) + "\n")
