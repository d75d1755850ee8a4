"""Command-line entry point: ``csforensics <command> ...``.

Global flags (``--seed``, ``--config``, ``--jobs``, ``-v``) may be given
before or after the sub-command.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import baseline, harness, learners
from .conventional import Jp2Config, calibrate_ratio, jp2_decode, jp2_encode
from .core import psnr, quantize_8bit, read_image, write_pgm
from .cs_imager import CsConfig, cs_pipeline
from .harness import ExperimentConfig
from .kernels import DeconvConfig

log = logging.getLogger("csforensics")


def _images_in(path):
    path = Path(path)
    return [path] if path.is_file() else harness.list_corpus(path)


def _experiment_config(args) -> ExperimentConfig:
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    for key in ("n_r", "kernel_size"):
        if getattr(args, key, None) is not None:
            overrides[key] = getattr(args, key)
    if args.config:
        return ExperimentConfig.from_json(args.config, **overrides)
    return ExperimentConfig(**overrides)


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


# -- commands ---------------------------------------------------------------


def cmd_dataset_build(args):
    cfg = _experiment_config(args)
    calibration = json.loads(Path(args.calibration).read_text())["calibration"] if args.calibration else None
    manifest = harness.build_dataset(args.corpus, args.out, cfg, args.jobs, calibration)
    print(f"wrote {len(manifest)} images; class counts {manifest.counts()}")


def cmd_calibrate(args):
    cfg = _experiment_config(args)
    originals = [read_image(p) for p in _images_in(args.input)]
    rates = args.rate or list(cfg.sampling_rates)
    out = []
    for k, rate in enumerate(rates):
        cs_cfg = CsConfig(rate=rate, block=cfg.block, levels=cfg.levels, seed=args.seed or 0)
        cs_out = [quantize_8bit(cs_pipeline(im, cs_cfg)) for im in originals]
        ratio = calibrate_ratio(originals, cs_outputs=cs_out, tol_db=cfg.calibration_tol_db, levels=cfg.levels)
        out.append({"rate": rate, "ratio": ratio})
        print(f"R_s={rate:.4g} -> R_c={ratio:.4f}")
    if args.out:
        _write_json(args.out, {"calibration": out})


def cmd_simulate_cs(args):
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = CsConfig(rate=args.rate, block=args.block, delta=args.delta, seed=args.seed or 0)
    for path in _images_in(args.input):
        img = read_image(path)
        rec, info = cs_pipeline(img, cfg, return_info=True)
        rec8 = quantize_8bit(rec)
        write_pgm(out_dir / f"{path.stem}.pgm", rec8)
        info.update(rate=cfg.rate, delta=cfg.delta, seed=cfg.seed, psnr=psnr(img, rec8))
        info["blocks"] = [list(b) for b in info["blocks"]]
        _write_json(out_dir / f"{path.stem}.json", info)
        print(f"{path.name}: {info['psnr']:.2f} dB")


def cmd_simulate_jp2(args):
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = Jp2Config(ratio=args.ratio, tolerance=args.tolerance)
    for path in _images_in(args.input):
        img = read_image(path)
        stream = jp2_encode(img, cfg)
        (out_dir / f"{path.stem}.csfj").write_bytes(stream.data)
        dec = quantize_8bit(jp2_decode(stream))
        write_pgm(out_dir / f"{path.stem}.pgm", dec)
        info = {"target_ratio": cfg.ratio, "ratio": stream.ratio, "bytes": stream.nbytes,
                "step": stream.step, "psnr": psnr(img, dec)}
        _write_json(out_dir / f"{path.stem}.json", info)
        print(f"{path.name}: ratio {stream.ratio:.2f}, {info['psnr']:.2f} dB")


def cmd_kernels(args):
    manifest = harness.load_manifest(args.input)
    cfg = DeconvConfig(size=args.size, seed=args.seed or 0)
    stats = harness.estimate_all_kernels(manifest, args.out, args.size, cfg, args.jobs)
    print(json.dumps(stats))


def _manifest_for(args, path_attr="input"):
    src = Path(getattr(args, path_attr))
    if src.suffix == ".json":
        return harness.load_manifest(src), None
    manifest_path = Path(args.manifest) if args.manifest else src.with_name("manifest.json")
    return harness.load_manifest(manifest_path), harness.read_kernels_csv(src)


def cmd_train(args):
    cfg = _experiment_config(args)
    manifest, kernels = _manifest_for(args)
    if args.learner != "cnn-pixel" and kernels is None:
        raise SystemExit("kernel learners need --in kernels.csv")
    model = harness.train_learner(args.learner, manifest, kernels, cfg)
    learners.save_model(model, args.out)
    print(f"saved {args.learner} model to {args.out}")


def cmd_evaluate(args):
    manifest, kernels = _manifest_for(args)
    model = learners.load_model(args.model)
    test = manifest.by_split(args.split)
    entries, labels = harness.predict_learner(model, manifest, test, kernels)
    table = harness.evaluate(labels, [e.label for e in entries])
    out = Path(args.out)
    _write_json(out, {"confusion": table.to_dict(), "per_ratio": harness.per_ratio_report(entries, labels)})
    table.to_csv(out.with_suffix(".confusion.csv"))
    print(f"overall accuracy {table.accuracy:.2f}%")


def cmd_report(args):
    manifest, kernels = _manifest_for(args)
    model = learners.load_model(args.model)
    entries, labels = harness.predict_learner(model, manifest, manifest.by_split("test"), kernels)
    report = harness.per_ratio_report(entries, labels)
    out = Path(args.out)
    _write_json(out, report)
    for lab in ("C", "J"):
        xs = list(report[lab])
        harness.write_curve(out.with_name(f"{out.stem}_{lab}.dat"), xs, {"accuracy": [report[lab][x] for x in xs]})
    print(json.dumps(report, indent=1))


def cmd_sweep(args):
    cfg = _experiment_config(args)
    manifest = harness.load_manifest(args.input)
    work = Path(args.work or Path(args.out).parent / "sweep")
    result = harness.kernel_size_sweep(manifest, work, args.sizes, args.learners, cfg, jobs=args.jobs)
    out = Path(args.out)
    _write_json(out, result.to_dict())
    harness.write_curve(out.with_suffix(".dat"), result.sizes, result.accuracy)
    print(json.dumps(result.to_dict()))


def cmd_baseline_chu(args):
    train = harness.load_manifest(args.train)
    evalm = harness.load_manifest(args.eval)

    def stats(m, entries):
        return [baseline.stage_statistics(read_image(m.image_path(e))) for e in entries]

    learn = train.by_split("learn")
    th = baseline.fit_thresholds(stats(train, learn), [e.label for e in learn])
    test = evalm.by_split("test")
    s = np.array(stats(evalm, test))
    pred = [baseline.classify_statistics(a, b, th) for a, b in s]
    table = harness.evaluate(pred, [e.label for e in test])
    result = {"thresholds": {"tau1": th.tau1, "tau2": th.tau2}, "confusion": table.to_dict(),
              "per_ratio": harness.per_ratio_report(test, pred)}
    if args.out:
        _write_json(args.out, result)
        table.to_csv(Path(args.out).with_suffix(".confusion.csv"))
    print(f"tau1={th.tau1:.5f} tau2={th.tau2:.5f} accuracy {table.accuracy:.2f}%")


# -- parser -----------------------------------------------------------------


def _global_flags(parser, suppress: bool):
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--seed", type=int, default=default, help="master seed")
    parser.add_argument("--config", default=default, help="experiment config JSON")
    parser.add_argument("--jobs", type=int, default=argparse.SUPPRESS if suppress else 1,
                        help="worker processes")
    parser.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS if suppress else 0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="csforensics", description=__doc__.splitlines()[0])
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, sp=sub, **kw):
        p = sp.add_parser(name, **kw)
        _global_flags(p, suppress=True)
        p.set_defaults(func=func)
        return p

    ds = sub.add_parser("dataset", help="dataset construction")
    ds_sub = ds.add_subparsers(dest="dataset_command", required=True)
    p = add("build", cmd_dataset_build, ds_sub, help="draw patches, simulate all systems, write manifest")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n-r", dest="n_r", type=int)
    p.add_argument("--calibration", help="JSON from 'calibrate --out' to reuse")

    p = add("calibrate", cmd_calibrate, help="match codec PSNR to the compressive imager")
    p.add_argument("--rate", type=float, action="append")
    p.add_argument("--in", dest="input", required=True, help="image file or directory of originals")
    p.add_argument("--out")

    sim = sub.add_parser("simulate", help="run one imaging pipeline on images")
    sim_sub = sim.add_subparsers(dest="system", required=True)
    p = add("cs", cmd_simulate_cs, sim_sub)
    p.add_argument("--rate", type=float, default=0.25)
    p.add_argument("--block", type=int, default=32)
    p.add_argument("--delta", type=float, default=0.0)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p = add("jp2", cmd_simulate_jp2, sim_sub)
    p.add_argument("--ratio", type=float, default=54.0)
    p.add_argument("--tolerance", type=float, default=0.05)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)

    p = add("kernels", cmd_kernels, help="blind kernel estimation for every manifest entry")
    p.add_argument("--size", type=int, default=9)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)

    p = add("train", cmd_train, help="train a learner on the learning split")
    p.add_argument("--learner", choices=harness.LEARNERS, required=True)
    p.add_argument("--in", dest="input", required=True, help="kernels.csv or manifest.json")
    p.add_argument("--manifest", help="manifest for kernels.csv (default: alongside it)")
    p.add_argument("--out", required=True)

    for name, func, helptext in (("evaluate", cmd_evaluate, "confusion table on a split"),
                                 ("report", cmd_report, "per-ratio detection accuracy")):
        p = add(name, func, help=helptext)
        p.add_argument("--model", required=True)
        p.add_argument("--in", dest="input", required=True)
        p.add_argument("--manifest")
        p.add_argument("--out", required=True)
        if name == "evaluate":
            p.add_argument("--split", default="test", choices=("learn", "test"))

    p = add("sweep", cmd_sweep, help="accuracy versus kernel size")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--sizes", type=int, nargs="+", default=[3, 5, 7, 9, 11, 13])
    p.add_argument("--learners", nargs="+", default=["svm", "cnn-kernel"], choices=("svm", "cnn-kernel"))
    p.add_argument("--work")
    p.add_argument("--out", required=True)

    bl = sub.add_parser("baseline", help="comparison baselines")
    bl_sub = bl.add_subparsers(dest="baseline", required=True)
    p = add("chu", cmd_baseline_chu, bl_sub, help="two-stage thresholding detector")
    p.add_argument("--train", required=True)
    p.add_argument("--eval", required=True)
    p.add_argument("--out")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    args.func(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
