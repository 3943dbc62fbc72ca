"""CLI contract: commands, exit codes, error JSON, config precedence."""

import json

import numpy as np
import pytest

from physio_bench.cli import main


def _run(tmp_path, monkeypatch, argv):
    monkeypatch.chdir(tmp_path)
    return main(argv)


@pytest.fixture()
def synth_data(tmp_path, monkeypatch):
    code = _run(tmp_path, monkeypatch, [
        "synth", "--preset", "interaction", "--n-subjects", "3",
        "--duration-s", "250", "--seed", "5", "--out", "data"])
    assert code == 0
    return tmp_path


class TestSynthExtract:
    def test_chain_runs_clean(self, synth_data, tmp_path, monkeypatch):
        assert (tmp_path / "data/manifest.json").is_file()
        assert (tmp_path / "data/sessions/S000/EDA.csv").is_file()
        code = _run(tmp_path, monkeypatch, [
            "extract", "--manifest", "data/manifest.json", "--seed", "5",
            "--out", "run"])
        assert code == 0
        text = (tmp_path / "run/features.csv").read_text()
        header = [ln for ln in text.splitlines() if not ln.startswith("#")][0]
        assert header.startswith("subject_id,window_start,label,")
        report = json.loads((tmp_path / "run/extract_report.json").read_text())
        assert report["provenance"]["seed"] == 5

    def test_expected_window_count(self, synth_data, tmp_path, monkeypatch):
        _run(tmp_path, monkeypatch, [
            "extract", "--manifest", "data/manifest.json", "--out", "run"])
        rows = [ln for ln in (tmp_path / "run/features.csv").read_text().splitlines()
                if ln and not ln.startswith("#")][1:]
        # 250 s session, 60 s blocks: strict labels keep windows inside one
        # block: per block offsets {0, 15, 30} -> 3 per full block, 4 blocks,
        # plus the tail block [240, 250) too short for any window.
        assert len(rows) == 3 * (3 * 4 + 0)

    def test_missing_manifest_is_config_error(self, tmp_path, monkeypatch, capfd):
        code = _run(tmp_path, monkeypatch, [
            "extract", "--manifest", "nope.json", "--out", "run"])
        assert code == 2
        err = capfd.readouterr().err
        doc = json.loads(err.strip().splitlines()[-1])
        assert doc["error"]["code"] == 2

    def test_bad_session_skipped_when_others_succeed(self, synth_data, tmp_path,
                                                     monkeypatch):
        # wreck one session directory: header-only (empty) channel files
        bad = tmp_path / "data/sessions/S001"
        for f in bad.iterdir():
            if f.name == "ACC.csv":
                f.write_text("0,0,0\n32,32,32\n")
            elif f.name == "IBI.csv":
                f.write_text("0, IBI\n")
            else:
                f.write_text("0\n4\n")
        code = _run(tmp_path, monkeypatch, [
            "extract", "--manifest", "data/manifest.json", "--out", "run2"])
        assert code == 0
        report = json.loads((tmp_path / "run2/extract_report.json").read_text())
        assert "skipped" in report["report"]["sessions"]["S001"]


class TestEvaluateLoso:
    def test_evaluate_and_rerun_byte_identical(self, synth_data, tmp_path,
                                               monkeypatch):
        _run(tmp_path, monkeypatch, [
            "extract", "--manifest", "data/manifest.json", "--out", "run"])
        args = ["evaluate", "--features", "run/features.csv", "--split", "kfold",
                "--folds", "3", "--trees", "10", "--seed", "5", "--out", "run"]
        assert _run(tmp_path, monkeypatch, args) == 0
        first = (tmp_path / "run/results.json").read_bytes()
        assert _run(tmp_path, monkeypatch, args) == 0
        assert (tmp_path / "run/results.json").read_bytes() == first
        doc = json.loads(first)
        assert doc["dataset"] == "run/features.csv"
        assert doc["model"]["kind"] == "boosting"
        assert doc["split"] == "kfold"

    def test_loso_rows_and_mean_line(self, synth_data, tmp_path, monkeypatch):
        _run(tmp_path, monkeypatch, [
            "extract", "--manifest", "data/manifest.json", "--out", "run"])
        code = _run(tmp_path, monkeypatch, [
            "loso", "--features", "run/features.csv", "--trees", "10",
            "--seed", "5", "--out", "run"])
        assert code == 0
        lines = [ln for ln in (tmp_path / "run/loso_subjects.csv").read_text().splitlines()
                 if ln and not ln.startswith("#")]
        assert lines[0] == "subject_id,n_windows,accuracy"
        assert len(lines) == 1 + 3 + 1  # header + 3 subjects + mean
        assert lines[-1].startswith("mean,")
        accs = [float(ln.split(",")[2]) for ln in lines[1:4]]
        assert abs(float(lines[-1].split(",")[2]) - np.mean(accs)) < 1e-9

    def test_single_class_data_is_data_error(self, tmp_path, monkeypatch, capfd):
        lines = ["subject_id,window_start,label," + ",".join(
            f for f in ["eda_mean", "eda_std", "eda_slope", "eda_scr_count",
                        "temp_mean", "temp_std", "hr_mean", "hr_std", "sdnn",
                        "rmssd", "acc_x_mean", "acc_x_std", "acc_y_mean",
                        "acc_y_std", "acc_z_mean", "acc_z_std"])]
        rng = np.random.default_rng(0)
        for i in range(12):
            vals = ",".join(format(v, ".6g") for v in rng.normal(size=16))
            lines.append(f"s{i % 3},{i * 15.0},onlyclass,{vals}")
        (tmp_path / "one.csv").write_text("\n".join(lines) + "\n")
        code = _run(tmp_path, monkeypatch, [
            "evaluate", "--features", "one.csv", "--split", "kfold",
            "--folds", "3", "--out", "run"])
        assert code == 3
        doc = json.loads(capfd.readouterr().err.strip().splitlines()[-1])
        assert doc["error"]["type"] == "SingleClass"


class TestTrainExplain:
    def test_train_then_explain_tree_model(self, synth_data, tmp_path, monkeypatch):
        _run(tmp_path, monkeypatch, [
            "extract", "--manifest", "data/manifest.json", "--out", "run"])
        assert _run(tmp_path, monkeypatch, [
            "train", "--features", "run/features.csv", "--trees", "15",
            "--seed", "5", "--out", "run"]) == 0
        assert _run(tmp_path, monkeypatch, [
            "explain", "--model-path", "run/model.json", "--features",
            "run/features.csv", "--out", "run"]) == 0
        doc = json.loads((tmp_path / "run/importance.json").read_text())
        assert doc["local_accuracy"]["all_rows_within_1e-8"] is True
        assert len(doc["global_importance"]) == 16
        att_lines = (tmp_path / "run/attributions.csv").read_text().splitlines()
        assert att_lines[1] == "subject_id,window_start,class,feature,value,shap"

    def test_train_with_tuning_records_trace(self, synth_data, tmp_path,
                                             monkeypatch):
        _run(tmp_path, monkeypatch, [
            "extract", "--manifest", "data/manifest.json", "--out", "run"])
        assert _run(tmp_path, monkeypatch, [
            "train", "--features", "run/features.csv", "--model", "logistic",
            "--tune", "--folds", "3", "--seed", "5", "--out", "runT"]) == 0
        doc = json.loads((tmp_path / "runT/train_results.json").read_text())
        assert doc["tuning_trace"] is not None
        assert len(doc["tuning_trace"]) == 3  # declared l2 grid

    def test_explain_rejects_knn(self, synth_data, tmp_path, monkeypatch, capfd):
        _run(tmp_path, monkeypatch, [
            "extract", "--manifest", "data/manifest.json", "--out", "run"])
        _run(tmp_path, monkeypatch, [
            "train", "--features", "run/features.csv", "--model", "knn",
            "--out", "run"])
        code = _run(tmp_path, monkeypatch, [
            "explain", "--model-path", "run/model.json", "--features",
            "run/features.csv", "--out", "run"])
        assert code == 2
        doc = json.loads(capfd.readouterr().err.strip().splitlines()[-1])
        assert "knn" in doc["error"]["message"]


class TestConfigHandling:
    def test_config_file_with_flag_override(self, synth_data, tmp_path, monkeypatch):
        cfg = {"manifest": "data/manifest.json", "seed": 5, "trees": 10,
               "split": "kfold", "folds": 3}
        (tmp_path / "cfg.json").write_text(json.dumps(cfg))
        assert _run(tmp_path, monkeypatch, [
            "extract", "--config", "cfg.json", "--out", "runA"]) == 0
        # flag overrides the config file's seed
        assert _run(tmp_path, monkeypatch, [
            "extract", "--config", "cfg.json", "--seed", "9", "--out", "runB"]) == 0
        provA = json.loads((tmp_path / "runA/extract_report.json").read_text())
        provB = json.loads((tmp_path / "runB/extract_report.json").read_text())
        assert provA["provenance"]["seed"] == 5
        assert provB["provenance"]["seed"] == 9

    def test_unknown_config_key_rejected(self, tmp_path, monkeypatch, capfd):
        (tmp_path / "cfg.json").write_text(json.dumps({"shiny": True}))
        code = _run(tmp_path, monkeypatch, ["extract", "--config", "cfg.json"])
        assert code == 2
        doc = json.loads(capfd.readouterr().err.strip().splitlines()[-1])
        assert "shiny" in doc["error"]["message"]

    def test_provenance_excludes_execution_fields(self, synth_data, tmp_path,
                                                  monkeypatch):
        _run(tmp_path, monkeypatch, [
            "extract", "--manifest", "data/manifest.json", "--out", "runC",
            "--jobs", "4"])
        prov = json.loads((tmp_path / "runC/extract_report.json").read_text())
        assert "jobs" not in prov["provenance"]["config"]
        assert "out" not in prov["provenance"]["config"]


class TestAblateSummary:
    def test_ablate_writes_nine_rows(self, synth_data, tmp_path, monkeypatch):
        _run(tmp_path, monkeypatch, [
            "extract", "--manifest", "data/manifest.json", "--out", "run"])
        assert _run(tmp_path, monkeypatch, [
            "ablate", "--features", "run/features.csv", "--folds", "3",
            "--trees", "8", "--seed", "5", "--out", "run"]) == 0
        lines = [ln for ln in (tmp_path / "run/ablation.csv").read_text().splitlines()
                 if ln and not ln.startswith("#")]
        assert len(lines) == 10
        doc = json.loads((tmp_path / "run/ablation.json").read_text())
        assert len(doc["rows"]) == 9

    def test_ablate_five_modality_schema_gives_eleven_rows(self, synth_data,
                                                           tmp_path, monkeypatch):
        _run(tmp_path, monkeypatch, [
            "extract", "--manifest", "data/manifest.json", "--schema",
            "exam_18", "--out", "run18"])
        assert _run(tmp_path, monkeypatch, [
            "ablate", "--features", "run18/features.csv", "--schema", "exam_18",
            "--folds", "3", "--trees", "6", "--seed", "5", "--out", "run18"]) == 0
        lines = [ln for ln in (tmp_path / "run18/ablation.csv").read_text().splitlines()
                 if ln and not ln.startswith("#")]
        assert len(lines) == 12  # header + All + 5 No_ + 5 Only_

    def test_correction_flag_changes_only_corrected_columns(self, synth_data,
                                                            tmp_path, monkeypatch):
        _run(tmp_path, monkeypatch, [
            "extract", "--manifest", "data/manifest.json", "--out", "run"])
        for method, out in (("fdr", "runF"), ("bonferroni", "runB")):
            _run(tmp_path, monkeypatch, [
                "ablate", "--features", "run/features.csv", "--folds", "3",
                "--trees", "8", "--seed", "5", "--correction", method,
                "--out", out])
        fdr = json.loads((tmp_path / "runF/ablation.json").read_text())["rows"]
        bon = json.loads((tmp_path / "runB/ablation.json").read_text())["rows"]
        for rf, rb in zip(fdr, bon):
            assert rf["p_raw"] == rb["p_raw"]
            assert rf["statistic"] == rb["statistic"]
            assert rf["f1_mean"] == rb["f1_mean"]

    def test_summary_structure(self, synth_data, tmp_path, monkeypatch):
        assert _run(tmp_path, monkeypatch, [
            "summary", "--manifest", "data/manifest.json", "--out", "run"]) == 0
        doc = json.loads((tmp_path / "run/summary.json").read_text())
        assert set(doc["per_subject"]) == {"S000", "S001", "S002"}
        assert "EDA" in doc["cross_subject"]
        mom = doc["cross_subject"]["EDA"]["mean_of_means"]
        means = [doc["per_subject"][s]["EDA"]["mean"] for s in doc["per_subject"]]
        assert abs(mom - np.mean(means)) < 1e-12

    def test_two_identical_subjects_have_zero_cross_std(self, tmp_path, monkeypatch):
        from physio_bench.ingest import write_session
        from physio_bench.synth import PRESETS, generate_session

        spec, coeffs = PRESETS["interaction"]()
        import dataclasses
        spec = dataclasses.replace(spec, duration_s=130.0)
        rec = generate_session(spec, coeffs, seed=3, subject_id="A")
        rec2 = generate_session(spec, coeffs, seed=3, subject_id="B")
        write_session(tmp_path / "sess/A", rec)
        write_session(tmp_path / "sess/B", rec2)
        manifest = {"sessions": [
            {"subject_id": "A", "path": "sess/A", "segments": [
                {"label": s.label, "t_start": s.t_start, "t_end": s.t_end}
                for s in rec.segments]},
            {"subject_id": "B", "path": "sess/B", "segments": [
                {"label": s.label, "t_start": s.t_start, "t_end": s.t_end}
                for s in rec2.segments]},
        ]}
        (tmp_path / "manifest.json").write_text(json.dumps(manifest))
        assert _run(tmp_path, monkeypatch, [
            "summary", "--manifest", "manifest.json", "--out", "run"]) == 0
        doc = json.loads((tmp_path / "run/summary.json").read_text())
        for ch in doc["cross_subject"]:
            assert doc["cross_subject"][ch]["std_of_means"] == 0.0
