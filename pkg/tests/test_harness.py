"""Tests for dataset construction, splitting, kernel batching, scoring and orchestration."""

import json

import numpy as np
import pytest

from csforensics import harness as H
from csforensics.learners import CnnModel, SvmModel, load_model


def tiny_config(**kw):
    base = dict(n_r=4, sampling_rates=(0.25, 0.67), compression_ratios=(40.0, 10.0), patch=64,
                levels=3, kernel_size=5, cnn_epochs=2, pixel_cnn=True, pixel_train_per_class=4)
    return H.ExperimentConfig(**{**base, **kw})


@pytest.fixture(scope="module")
def tiny_run(sample_corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny_run")
    results = H.run_experiment(sample_corpus, out, tiny_config())
    return out, results


@pytest.fixture
def manifest(tiny_run):
    return H.load_manifest(tiny_run[0] / "manifest.json")


def _fake_manifest(n_r, n_rates):
    entries = []
    for k in range(n_rates):
        for i in range(n_r):
            entries.append(H.ManifestEntry(f"C-{k}-{i}", "", "C", 0.1 * (k + 1), "", i))
            entries.append(H.ManifestEntry(f"J-{k}-{i}", "", "J", 10.0 * (k + 1), "", i))
    for i in range(n_r * n_rates):
        entries.append(H.ManifestEntry(f"R-{i}", "", "R", None, "", i))
    return H.DatasetManifest(entries)


class TestConfig:
    def test_full_scale(self):
        cfg = H.ExperimentConfig.full_scale()
        assert cfg.n_r == 655 and cfg.compression_ratios == (107.7899, 72.0, 54.0, 33.8)

    def test_ratio_count_must_match(self):
        with pytest.raises(ValueError):
            H.ExperimentConfig(compression_ratios=(10.0,))

    def test_json_round_trip(self, tmp_path):
        cfg = tiny_config()
        (tmp_path / "c.json").write_text(json.dumps(cfg.to_dict()))
        assert H.ExperimentConfig.from_json(tmp_path / "c.json") == cfg

    def test_json_unknown_key(self, tmp_path):
        (tmp_path / "c.json").write_text('{"n_r": 3, "bogus": 1}')
        with pytest.raises(ValueError):
            H.ExperimentConfig.from_json(tmp_path / "c.json")


class TestSplit:
    @pytest.mark.parametrize("n_r,learn,test", [(60, 540, 180), (655, 5892, 1968)])
    def test_split_sizes(self, n_r, learn, test):
        m = H.holdout_split(_fake_manifest(n_r, 4))
        assert len(m) == 3 * 4 * n_r
        assert (len(m.by_split("learn")), len(m.by_split("test"))) == (learn, test)

    def test_first_entries_of_each_subclass_learn(self):
        m = H.holdout_split(_fake_manifest(8, 2))
        for e in m.entries:
            if e.label != "R":
                assert (e.split == "learn") == (e.patch < 6)

    def test_raw_cut_like_other_classes(self):
        m = H.holdout_split(_fake_manifest(8, 2))
        raw = sorted((e for e in m.entries if e.label == "R"), key=lambda e: e.patch)
        assert [e.split for e in raw] == (["learn"] * 6 + ["test"] * 2) * 2

    def test_tiny_subclass(self):
        with pytest.raises(ValueError):
            H.holdout_split(_fake_manifest(1, 1))


class TestBuildDataset:
    def test_balanced_classes(self, manifest):
        assert manifest.counts() == {"C": 8, "J": 8, "R": 8}

    def test_splits_disjoint_and_exhaustive(self, manifest):
        learn = {e.id for e in manifest.by_split("learn")}
        test = {e.id for e in manifest.by_split("test")}
        assert not learn & test and len(learn | test) == len(manifest)
        assert (len(learn), len(test)) == (18, 6)

    def test_raw_patches_distinct(self, manifest):
        raw = [e.patch for e in manifest.entries if e.label == "R"]
        assert len(set(raw)) == len(raw)
        assert set(manifest.meta["originals"]) <= set(raw)

    def test_files_verified(self, manifest):
        manifest.verify()

    def test_tampered_file_detected(self, manifest, tmp_path):
        e = manifest.entries[0]
        copy = tmp_path / "copy.pgm"
        data = manifest.image_path(e).read_bytes()
        copy.write_bytes(data[:-1] + bytes([data[-1] ^ 1]))
        e.path = str(copy)
        with pytest.raises(ValueError):
            manifest.verify()

    def test_calibration_recorded(self, manifest):
        calib = manifest.meta["calibration"]
        assert [c["ratio"] for c in calib] == [40.0, 10.0]
        assert all({"psnr_cs", "psnr_jp2"} <= set(c) for c in calib)
        assert manifest.meta["calibration_split"] == "learn"

    def test_rebuild_is_byte_identical(self, sample_corpus, tiny_run, tmp_path):
        H.build_dataset(sample_corpus, tmp_path, tiny_config())
        assert (tmp_path / "manifest.json").read_bytes() == (tiny_run[0] / "manifest.json").read_bytes()

    def test_corpus_too_small(self, sample_corpus, tmp_path):
        with pytest.raises(H.CorpusError):
            H.build_dataset(sample_corpus, tmp_path, tiny_config(n_r=100_000))

    def test_empty_corpus(self, tmp_path):
        with pytest.raises(H.CorpusError):
            H.list_corpus(tmp_path)


class TestKernels:
    def test_one_row_per_entry(self, tiny_run, manifest):
        ids, labels, ratios, K = H.read_kernels_csv(tiny_run[0] / "kernels.csv")
        assert sorted(ids) == sorted(e.id for e in manifest.entries)
        assert K.shape == (24, 25)
        np.testing.assert_allclose(K.sum(axis=1), 1.0)

    def test_raw_rows_near_delta(self, tiny_run):
        ids, labels, _, K = H.read_kernels_csv(tiny_run[0] / "kernels.csv")
        raw = K[np.array(labels) == "R"]
        assert raw[:, 12].mean() > 0.5

    def test_resume_completes_identically(self, tiny_run, manifest, tmp_path):
        full = (tiny_run[0] / "kernels.csv").read_text().splitlines(keepends=True)
        partial = tmp_path / "kernels.csv"
        partial.write_text("".join(full[:10]))
        stats = H.estimate_all_kernels(manifest, partial, 5)
        assert stats == {"written": 15, "skipped": 9, "failed": 0}
        assert partial.read_text() == "".join(full)
        assert H.estimate_all_kernels(manifest, partial, 5)["written"] == 0

    def test_failures_recorded(self, manifest, tmp_path):
        manifest.entries = manifest.entries[:2]
        manifest.entries[1].path = "missing.pgm"
        out = tmp_path / "k.csv"
        assert H.estimate_all_kernels(manifest, out, 5) == {"written": 1, "skipped": 0, "failed": 1}
        assert manifest.entries[1].id in (tmp_path / "k.csv.errors.csv").read_text()


class TestConfusion:
    def test_identity(self):
        t = H.evaluate(list("CJRRC"), list("CJRRC"))
        assert t.accuracy == 100.0
        np.testing.assert_array_equal(t.counts, np.diag([2, 1, 2]))

    def test_rows_predicted_columns_truth(self):
        t = H.evaluate(["J"], ["C"])
        assert t.counts[1, 0] == 1

    def test_columns_sum_to_class_counts_and_100(self, rng):
        truth = rng.choice(list("CJR"), 300)
        pred = rng.choice(list("CJR"), 300)
        t = H.evaluate(pred, truth)
        for j, lab in enumerate("CJR"):
            assert t.counts[:, j].sum() == np.sum(truth == lab)
        np.testing.assert_allclose(t.percent().sum(axis=0), 100.0)
        assert t.accuracy == 100.0 * np.mean(pred == truth)

    def test_uniform_guessing_is_chance(self, rng):
        n = 30_000
        t = H.evaluate(rng.choice(list("CJR"), n), rng.choice(list("CJR"), n))
        # binomial std at p = 1/3 is ~0.27 points
        assert abs(t.accuracy - 100 / 3) < 1.5

    def test_unknown_label(self):
        with pytest.raises(ValueError):
            H.evaluate(["X"], ["C"])

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            H.evaluate(["C"], ["C", "J"])

    def test_csv(self, tmp_path):
        H.evaluate(list("CJRR"), list("CJJR")).to_csv(tmp_path / "t.csv")
        rows = (tmp_path / "t.csv").read_text().splitlines()
        assert rows[0] == "predicted\\truth,C,J,R"
        assert rows[2] == "J,0.00,50.00,0.00"
        assert rows[3] == "R,0.00,50.00,100.00"

    def test_empty_column_is_nan(self):
        t = H.evaluate(["C"], ["C"])
        assert np.isnan(t.percent()[0, 2])
        assert t.to_dict()["percent"][0][2] is None


class TestReports:
    def test_per_ratio_rows(self, manifest):
        test = manifest.by_split("test")
        report = H.per_ratio_report(test, [e.label for e in test])
        assert len(report["C"]) + len(report["J"]) == 2 + 2
        assert list(report["J"]) == ["40.0", "10.0"]
        assert all(v == 100.0 for d in report.values() for v in d.values())

    def test_missing_subclass(self, manifest):
        test = [e for e in manifest.by_split("test") if not (e.label == "C" and e.ratio == 0.25)]
        report = H.per_ratio_report(test, [e.label for e in test])
        assert list(report["C"]) == ["0.67"]

    def test_results_file(self, tiny_run):
        out, results = tiny_run
        on_disk = json.loads((out / "results.json").read_text())
        assert set(on_disk["learners"]) == {"svm", "cnn-kernel", "cnn-pixel", "chu"}
        for name, entry in on_disk["learners"].items():
            assert 0 <= entry["confusion"]["accuracy"] <= 100
            counts = np.array(entry["confusion"]["counts"])
            assert counts.sum() == 6
            assert (out / f"confusion_{name}.csv").exists()
        tau = on_disk["learners"]["chu"]["thresholds"]
        assert 0.001 <= tau["tau1"] <= 0.002 and 0.002 <= tau["tau2"] <= 0.003

    def test_saved_models_load(self, tiny_run):
        out, _ = tiny_run
        assert isinstance(load_model(out / "model_svm.json"), SvmModel)
        assert load_model(out / "model_cnn-kernel.json").mode == "kernel"
        assert isinstance(load_model(out / "model_cnn-pixel.json"), CnnModel)

    def test_curve_file(self, tmp_path):
        H.write_curve(tmp_path / "c.dat", [3, 5], {"svm": [40.0, 50.5]})
        assert (tmp_path / "c.dat").read_text() == "# x svm\n3 40.000000\n5 50.500000\n"


class TestSweep:
    def test_small_sizes(self, manifest, tmp_path):
        res = H.kernel_size_sweep(manifest, tmp_path, sizes=(3, 5), cfg=tiny_config())
        assert res.sizes == [3, 5]
        for acc in res.accuracy.values():
            assert len(acc) == 2 and all(0 <= v <= 100 for v in acc)
        assert res.best("svm") in (3, 5)
        again = H.kernel_size_sweep(manifest, tmp_path, sizes=(3, 5), cfg=tiny_config())
        assert again.to_dict() == res.to_dict()

    def test_even_size_rejected(self, manifest, tmp_path):
        with pytest.raises(ValueError):
            H.kernel_size_sweep(manifest, tmp_path, sizes=(4,))
