"""End-to-end tests of the ``csforensics`` command line on a tiny configuration."""

import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

from csforensics import cli
from csforensics.core import read_pgm, write_pgm

TINY = dict(n_r=4, sampling_rates=[0.25, 0.67], compression_ratios=[40.0, 10.0], patch=64, levels=3,
            kernel_size=5, cnn_epochs=2, pixel_train_per_class=4)


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def workspace(sample_corpus, tmp_path_factory):
    """A config file plus a dataset and kernels built through the CLI."""
    ws = tmp_path_factory.mktemp("cli")
    (ws / "config.json").write_text(json.dumps(TINY))
    run("--config", ws / "config.json", "dataset", "build", "--corpus", sample_corpus, "--out", ws / "data")
    run("kernels", "--size", 5, "--in", ws / "data" / "manifest.json", "--out", ws / "data" / "kernels.csv")
    return ws


@pytest.fixture
def one_image(tmp_path, camera_patch):
    src = tmp_path / "src"
    src.mkdir()
    write_pgm(src / "cam.pgm", camera_patch)
    return src


class TestParser:
    def test_console_script_help(self):
        exe = shutil.which("csforensics")
        cmd = [exe] if exe else [sys.executable, "-m", "csforensics.cli"]
        out = subprocess.run(cmd + ["--help"], capture_output=True, text=True, check=True).stdout
        for name in ("dataset", "calibrate", "simulate", "kernels", "train", "evaluate", "sweep", "report",
                     "baseline"):
            assert name in out

    def test_global_flags_after_subcommand(self):
        args = cli.build_parser().parse_args(["kernels", "--in", "m.json", "--out", "k.csv", "--seed", "4",
                                              "--jobs", "2"])
        assert (args.seed, args.jobs) == (4, 2)

    def test_global_flags_before_subcommand(self):
        args = cli.build_parser().parse_args(["--seed", "4", "kernels", "--in", "m.json", "--out", "k.csv"])
        assert args.seed == 4 and args.jobs == 1

    def test_unknown_learner(self):
        with pytest.raises(SystemExit):
            cli.build_parser().parse_args(["train", "--learner", "forest", "--in", "k.csv", "--out", "m.json"])


class TestSimulate:
    def test_cs(self, one_image, tmp_path, camera_patch):
        run("simulate", "cs", "--rate", 0.5, "--in", one_image, "--out", tmp_path / "cs")
        info = json.loads((tmp_path / "cs" / "cam.json").read_text())
        assert info["rate"] == 0.5 and info["psnr"] > 20
        assert read_pgm(tmp_path / "cs" / "cam.pgm").shape == camera_patch.shape

    def test_jp2(self, one_image, tmp_path):
        run("simulate", "jp2", "--ratio", 20, "--in", one_image / "cam.pgm", "--out", tmp_path / "j")
        info = json.loads((tmp_path / "j" / "cam.json").read_text())
        assert abs(info["ratio"] - 20) <= 1.0
        assert (tmp_path / "j" / "cam.csfj").stat().st_size == info["bytes"]

    def test_calibrate(self, one_image, tmp_path):
        run("calibrate", "--rate", 0.5, "--in", one_image, "--out", tmp_path / "cal.json")
        cal = json.loads((tmp_path / "cal.json").read_text())["calibration"]
        assert cal[0]["rate"] == 0.5 and cal[0]["ratio"] > 1.5


class TestPipeline:
    def test_dataset(self, workspace):
        m = json.loads((workspace / "data" / "manifest.json").read_text())
        assert len(m["entries"]) == 24 and m["config"]["n_r"] == 4

    def test_kernels_rerun_skips(self, workspace, capsys):
        run("kernels", "--size", 5, "--in", workspace / "data" / "manifest.json",
            "--out", workspace / "data" / "kernels.csv")
        assert json.loads(capsys.readouterr().out) == {"written": 0, "skipped": 24, "failed": 0}

    @pytest.mark.parametrize("learner", ["svm", "cnn-kernel"])
    def test_train_evaluate_report(self, workspace, learner, tmp_path):
        data = workspace / "data"
        model = tmp_path / "model.json"
        run("--config", workspace / "config.json", "train", "--learner", learner, "--in", data / "kernels.csv",
            "--out", model)
        run("evaluate", "--model", model, "--in", data / "kernels.csv", "--out", tmp_path / "eval.json")
        res = json.loads((tmp_path / "eval.json").read_text())
        assert np.sum(res["confusion"]["counts"]) == 6
        assert (tmp_path / "eval.confusion.csv").exists()
        run("report", "--model", model, "--in", data / "kernels.csv", "--out", tmp_path / "rep.json")
        assert set(json.loads((tmp_path / "rep.json").read_text())) == {"C", "J"}
        assert (tmp_path / "rep_C.dat").read_text().startswith("# x accuracy")

    def test_pixel_cnn_from_manifest(self, workspace, tmp_path):
        data = workspace / "data"
        run("--config", workspace / "config.json", "train", "--learner", "cnn-pixel",
            "--in", data / "manifest.json", "--out", tmp_path / "px.json")
        run("evaluate", "--model", tmp_path / "px.json", "--in", data / "manifest.json",
            "--out", tmp_path / "px_eval.json")
        assert json.loads((tmp_path / "px_eval.json").read_text())["confusion"]["accuracy"] >= 0

    def test_kernel_learner_needs_kernels(self, workspace, tmp_path):
        with pytest.raises(SystemExit):
            run("train", "--learner", "svm", "--in", workspace / "data" / "manifest.json",
                "--out", tmp_path / "m.json")

    def test_baseline(self, workspace, tmp_path, capsys):
        m = workspace / "data" / "manifest.json"
        run("baseline", "chu", "--train", m, "--eval", m, "--out", tmp_path / "chu.json")
        res = json.loads((tmp_path / "chu.json").read_text())
        assert 0.001 <= res["thresholds"]["tau1"] <= 0.002
        assert "accuracy" in capsys.readouterr().out

    def test_sweep(self, workspace, tmp_path):
        run("--config", workspace / "config.json", "sweep", "--in", workspace / "data" / "manifest.json",
            "--sizes", 3, "--learners", "svm", "--out", tmp_path / "sweep.json")
        res = json.loads((tmp_path / "sweep.json").read_text())
        assert res["sizes"] == [3] and res["best"]["svm"] == 3
        assert (tmp_path / "sweep.dat").exists()
