"""Command-line surface: config precedence, exit codes, artifact determinism."""
import json
import subprocess
import sys

import numpy as np
import pytest

from attrikit.cli import main
from attrikit.methods import METHODS, AxiomFlags, MethodSpec, saliency_map
from attrikit.schemas import strip_timing, validate_artifact

BLOBS = "synthetic:blobs(n=60, seed=3)"
BARS = "synthetic:bars(n=80, seed=7)"


def write_config(tmp_path, payload) -> str:
    path = tmp_path / "config.json"
    path.write_text(json.dumps(payload))
    return str(path)


@pytest.fixture(scope="module")
def logistic_weights(tmp_path_factory):
    out = tmp_path_factory.mktemp("train_logistic")
    rc = main(["train", "--model", "logistic", "--data", BLOBS, "--seed", "5",
               "--out", str(out), "--config", write_config(out, {"epochs": 8, "learning_rate": 0.3})])
    assert rc == 0
    return str(out / "weights.bin")


@pytest.fixture(scope="module")
def mlp_weights(tmp_path_factory):
    out = tmp_path_factory.mktemp("train_mlp")
    rc = main(["train", "--model", "mlp", "--data", BARS, "--seed", "5",
               "--out", str(out), "--config", write_config(out, {"epochs": 3, "learning_rate": 0.2})])
    assert rc == 0
    return str(out / "weights.bin")


class TestConfigResolution:
    def test_flags_override_config_file(self, tmp_path):
        cfg = write_config(tmp_path, {"epochs": 3, "seed": 99})
        rc = main(["train", "--model", "logistic", "--data", BLOBS,
                   "--seed", "5", "--out", str(tmp_path), "--config", cfg])
        assert rc == 0
        summary = json.loads((tmp_path / "train.json").read_text())
        assert summary["config"]["epochs"] == 3      # from the file
        assert summary["config"]["seed"] == 5        # flag beats file

    def test_unknown_config_key_rejected(self, tmp_path, capsys):
        cfg = write_config(tmp_path, {"learning_rat": 0.1})
        rc = main(["train", "--model", "logistic", "--data", BLOBS,
                   "--out", str(tmp_path), "--config", cfg])
        assert rc == 1
        assert "unknown keys" in capsys.readouterr().err

    def test_wrongly_typed_config_value_rejected(self, tmp_path, capsys):
        cfg = write_config(tmp_path, {"epochs": "ten"})
        rc = main(["train", "--model", "logistic", "--data", BLOBS,
                   "--out", str(tmp_path), "--config", cfg])
        assert rc == 1
        assert "wrong type" in capsys.readouterr().err

    def test_malformed_config_file(self, tmp_path, capsys):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        rc = main(["train", "--model", "logistic", "--data", BLOBS,
                   "--out", str(tmp_path), "--config", str(path)])
        assert rc == 1
        assert "invalid JSON" in capsys.readouterr().err

    def test_env_seed_fallback(self, tmp_path, monkeypatch):
        monkeypatch.setenv("ABE_SEED", "42")
        rc = main(["train", "--model", "logistic", "--data", BLOBS,
                   "--out", str(tmp_path), "--config", write_config(tmp_path, {"epochs": 2})])
        assert rc == 0
        assert json.loads((tmp_path / "train.json").read_text())["config"]["seed"] == 42

    def test_config_seed_beats_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv("ABE_SEED", "42")
        cfg = write_config(tmp_path, {"epochs": 2, "seed": 7})
        rc = main(["train", "--model", "logistic", "--data", BLOBS,
                   "--out", str(tmp_path), "--config", cfg])
        assert rc == 0
        assert json.loads((tmp_path / "train.json").read_text())["config"]["seed"] == 7

    def test_bad_env_seed_is_usage_error(self, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv("ABE_SEED", "many")
        rc = main(["train", "--model", "logistic", "--data", BLOBS, "--out", str(tmp_path)])
        assert rc == 1
        assert "ABE_SEED" in capsys.readouterr().err


class TestUsageErrors:
    def test_no_subcommand(self):
        assert main([]) == 1

    def test_unknown_method_lists_registry(self, tmp_path, capsys):
        rc = main(["attribute", "--model", "logistic", "--data", BLOBS,
                   "--method", "bogus", "--out", str(tmp_path)])
        assert rc == 1
        err = capsys.readouterr().err
        assert "available" in err and "gradcam" in err

    def test_unknown_model_lists_registry(self, tmp_path, capsys):
        rc = main(["train", "--model", "resnet", "--data", BLOBS, "--out", str(tmp_path)])
        assert rc == 1
        assert "available" in capsys.readouterr().err

    def test_non_attack_update_rejected_by_attack(self, tmp_path, capsys):
        rc = main(["attack", "--model", "logistic", "--data", BLOBS,
                   "--update", "linearpath", "--out", str(tmp_path)])
        assert rc == 1
        assert "not an attack" in capsys.readouterr().err

    def test_missing_data_flag(self, tmp_path, capsys):
        rc = main(["train", "--model", "logistic", "--out", str(tmp_path)])
        assert rc == 1
        assert "--data" in capsys.readouterr().err

    def test_model_weights_kind_conflict(self, tmp_path, logistic_weights, capsys):
        rc = main(["attribute", "--model", "mlp", "--weights", logistic_weights,
                   "--data", BLOBS, "--out", str(tmp_path)])
        assert rc == 1
        assert "conflicts" in capsys.readouterr().err

    def test_conv_model_on_flat_data(self, tmp_path, capsys):
        rc = main(["train", "--model", "tinycnn", "--data", BLOBS, "--out", str(tmp_path)])
        assert rc == 1
        assert "image-shaped" in capsys.readouterr().err

    def test_method_rejects_foreign_parameter(self, tmp_path, logistic_weights, capsys):
        rc = main(["attribute", "--weights", logistic_weights, "--data", BLOBS,
                   "--method", "sm", "--T", "50", "--out", str(tmp_path)])
        assert rc == 1
        assert "sm" in capsys.readouterr().err

    def test_help_exits_zero(self):
        proc = subprocess.run([sys.executable, "-m", "attrikit", "--help"],
                              capture_output=True, text=True)
        assert proc.returncode == 0
        for command in ("train", "attribute", "attack", "metrics", "axioms", "bench"):
            assert command in proc.stdout


class TestDataErrors:
    def test_missing_csv(self, tmp_path, capsys):
        rc = main(["train", "--model", "logistic", "--data",
                   str(tmp_path / "nope.csv"), "--out", str(tmp_path)])
        assert rc == 2

    def test_malformed_csv_names_row(self, tmp_path, capsys):
        path = tmp_path / "bad.csv"
        path.write_text("a,b,label\n1.0,2.0,0\n1.0,1\n")
        rc = main(["train", "--model", "logistic", "--data", str(path),
                   "--out", str(tmp_path)])
        assert rc == 2
        assert "row 3" in capsys.readouterr().err

    def test_corrupt_weights(self, tmp_path, capsys):
        path = tmp_path / "weights.bin"
        path.write_bytes(b"not a weight file")
        rc = main(["attribute", "--weights", str(path), "--data", BLOBS,
                   "--out", str(tmp_path)])
        assert rc == 2

    def test_sample_index_out_of_range(self, tmp_path, logistic_weights, capsys):
        cfg = write_config(tmp_path, {"index": 999})
        rc = main(["attribute", "--weights", logistic_weights, "--data", BLOBS,
                   "--out", str(tmp_path), "--config", cfg])
        assert rc == 2
        assert "out of range" in capsys.readouterr().err


class TestTrain:
    def test_artifacts_written_and_valid(self, tmp_path):
        rc = main(["train", "--model", "logistic", "--data", BLOBS, "--seed", "5",
                   "--out", str(tmp_path), "--config", write_config(tmp_path, {"epochs": 4})])
        assert rc == 0
        summary = json.loads((tmp_path / "train.json").read_text())
        validate_artifact(summary)
        assert (tmp_path / "weights.bin").exists()
        curve = (tmp_path / "train_curve.csv").read_text().splitlines()
        assert curve[0] == "epoch,loss,accuracy"
        assert len(curve) == 1 + 4

    def test_rerun_is_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            out.mkdir()
            rc = main(["train", "--model", "logistic", "--data", BLOBS, "--seed", "5",
                       "--out", str(out), "--config", write_config(out, {"epochs": 4})])
            assert rc == 0
        for name in ("train.json", "train_curve.csv", "weights.bin"):
            assert (a / name).read_bytes() == (b / name).read_bytes(), name

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_is_a_numerical_failure(self, tmp_path, capsys):
        # the step size must push float64 past overflow before the stable
        # log-softmax can absorb it
        cfg = write_config(tmp_path, {"epochs": 3, "learning_rate": 1e150})
        rc = main(["train", "--model", "mlp", "--data", BLOBS,
                   "--out", str(tmp_path), "--config", cfg])
        assert rc == 3
        assert "numerical failure" in capsys.readouterr().err


class TestAttribute:
    def test_affine_residual_is_tiny(self, tmp_path, logistic_weights):
        rc = main(["attribute", "--weights", logistic_weights, "--data", BLOBS,
                   "--method", "ig", "--T", "50", "--seed", "5", "--out", str(tmp_path)])
        assert rc == 0
        result = json.loads((tmp_path / "attribution.json").read_text())
        validate_artifact(result)
        assert result["completeness_residual"] < 1e-10
        assert result["params"]["T"] == 50

    def test_image_heatmap_geometry(self, tmp_path, mlp_weights):
        rc = main(["attribute", "--weights", mlp_weights, "--data", BARS,
                   "--method", "sm", "--out", str(tmp_path)])
        assert rc == 0
        raw = (tmp_path / "heatmap.pgm").read_bytes()
        assert raw.startswith(b"P5\n8 8\n255\n")
        meta = json.loads((tmp_path / "attribution.json").read_text())
        assert meta["heatmap"] == "heatmap.pgm"
        assert np.asarray(meta["attribution"]).shape == (64,)
        # the sidecar must survive next to the result artifact
        sidecar = json.loads((tmp_path / "heatmap.json").read_text())
        assert sidecar["schema"] == "heatmap-sidecar/v1"
        assert sidecar["shape"] == [8, 8]

    def test_png_emission(self, tmp_path, mlp_weights):
        cfg = write_config(tmp_path, {"png": True, "colormap": "diverging"})
        rc = main(["attribute", "--weights", mlp_weights, "--data", BARS,
                   "--method", "sm", "--out", str(tmp_path), "--config", cfg])
        assert rc == 0
        assert (tmp_path / "heatmap.png").exists()

    def test_attack_flags_reach_the_method(self, tmp_path, mlp_weights):
        rc = main(["attribute", "--weights", mlp_weights, "--data", BARS,
                   "--method", "big", "--update", "bim", "--eps", "0.2",
                   "--steps", "5", "--seed", "3", "--out", str(tmp_path)])
        assert rc == 0
        result = json.loads((tmp_path / "attribution.json").read_text())
        assert result["params"]["attack"] == "bim"
        assert any("baseline" in note for note in result["notes"])

    def test_rerun_is_byte_identical(self, tmp_path, logistic_weights):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            out.mkdir()
            rc = main(["attribute", "--weights", logistic_weights, "--data", BLOBS,
                       "--method", "sg", "--seed", "9", "--out", str(out)])
            assert rc == 0
        for name in ("attribution.json", "heatmap.pgm", "heatmap.json"):
            assert (a / name).read_bytes() == (b / name).read_bytes()


class TestAttack:
    def test_report_shape(self, tmp_path, logistic_weights):
        rc = main(["attack", "--weights", logistic_weights, "--data", BLOBS,
                   "--update", "pgd", "--eps", "0.05", "--steps", "5",
                   "--seed", "5", "--out", str(tmp_path)])
        assert rc == 0
        report = json.loads((tmp_path / "robustness.json").read_text())
        validate_artifact(report)
        assert report["kind"] == "pgd"
        assert report["epsilon"] == 0.05
        assert 0.0 <= report["accuracy"] <= 1.0

    def test_zero_budget_means_perfect_accuracy(self, tmp_path, logistic_weights):
        rc = main(["attack", "--weights", logistic_weights, "--data", BLOBS,
                   "--update", "fgsm", "--eps", "0", "--out", str(tmp_path)])
        assert rc == 0
        assert json.loads((tmp_path / "robustness.json").read_text())["accuracy"] == 1.0

    def test_sample_cap_and_determinism(self, tmp_path, logistic_weights):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            out.mkdir()
            cfg = write_config(out, {"n_samples": 10})
            rc = main(["attack", "--weights", logistic_weights, "--data", BLOBS,
                       "--update", "pgd", "--eps", "0.1", "--seed", "2",
                       "--out", str(out), "--config", cfg])
            assert rc == 0
        ra = (a / "robustness.json").read_bytes()
        assert ra == (b / "robustness.json").read_bytes()
        assert json.loads(ra)["n_samples"] == 10


class TestMetrics:
    def test_report_and_csv(self, tmp_path, logistic_weights):
        cfg = write_config(tmp_path, {"n_samples": 8, "fps_samples": 2})
        rc = main(["metrics", "--weights", logistic_weights, "--data", BLOBS,
                   "--method", "ig", "--seed", "5", "--out", str(tmp_path),
                   "--config", cfg])
        assert rc == 0
        payload = json.loads((tmp_path / "metrics.json").read_text())
        validate_artifact(payload)
        row = payload["report"]
        assert row["method_name"] == "ig" and row["n_samples"] == 8
        assert 0.0 <= row["ins"] <= 1.0 and 0.0 <= row["del"] <= 1.0
        assert row["timing"]["fps"] > 0
        lines = (tmp_path / "metrics.csv").read_text().splitlines()
        assert lines[0].startswith("model_name,method_name")
        assert len(lines) == 2

    def test_rerun_identical_modulo_timing(self, tmp_path, logistic_weights):
        payloads = []
        for name in ("a", "b"):
            out = tmp_path / name
            out.mkdir()
            cfg = write_config(out, {"n_samples": 6, "fps_samples": 2})
            rc = main(["metrics", "--weights", logistic_weights, "--data", BLOBS,
                       "--method", "sm", "--seed", "1", "--out", str(out),
                       "--config", cfg])
            assert rc == 0
            payloads.append(json.loads((out / "metrics.json").read_text()))
        assert strip_timing(payloads[0]) == strip_timing(payloads[1])

    def test_fps_disabled_gives_bytewise_determinism(self, tmp_path, logistic_weights):
        blobs = []
        for name in ("a", "b"):
            out = tmp_path / name
            out.mkdir()
            cfg = write_config(out, {"n_samples": 6, "with_fps": False})
            rc = main(["metrics", "--weights", logistic_weights, "--data", BLOBS,
                       "--method", "sm", "--seed", "1", "--out", str(out),
                       "--config", cfg])
            assert rc == 0
            blobs.append((out / "metrics.json").read_bytes())
        assert blobs[0] == blobs[1]

    def test_incompatible_method_model(self, tmp_path, mlp_weights, capsys):
        rc = main(["metrics", "--weights", mlp_weights, "--data", BARS,
                   "--method", "gradcam", "--out", str(tmp_path)])
        assert rc == 1
        assert "conv" in capsys.readouterr().err


class TestAxioms:
    def test_honest_declarations_exit_zero(self, tmp_path):
        rc = main(["axioms", "--method", "ig", "--seed", "0", "--out", str(tmp_path)])
        assert rc == 0
        payload = json.loads((tmp_path / "axioms.json").read_text())
        validate_artifact(payload)
        assert [v["axiom"] for v in payload["verdicts"]] == [
            "Sensitivity", "ImplementationInvariance", "Complete", "Linear"]
        assert payload["refuted"] == []

    def test_modest_declarations_survive_failed_checks(self, tmp_path):
        # sm fails the sensitivity check but never claimed it; exit stays 0
        rc = main(["axioms", "--method", "sm", "--seed", "0", "--out", str(tmp_path)])
        assert rc == 0
        payload = json.loads((tmp_path / "axioms.json").read_text())
        sens = payload["verdicts"][0]
        assert sens["holds"] is False and sens["witness"] is not None
        assert payload["refuted"] == []

    def test_overclaiming_method_exits_nonzero(self, tmp_path, monkeypatch):
        liar = MethodSpec("liar", AxiomFlags(True, True, True), saliency_map,
                          path_based=True)
        monkeypatch.setitem(METHODS, "liar", liar)
        rc = main(["axioms", "--method", "liar", "--seed", "0", "--out", str(tmp_path)])
        assert rc == 4
        payload = json.loads((tmp_path / "axioms.json").read_text())
        assert "Sensitivity" in payload["refuted"]
        assert (tmp_path / "axioms.json").exists()

    def test_verdicts_deterministic(self, tmp_path):
        blobs = []
        for name in ("a", "b"):
            out = tmp_path / name
            out.mkdir()
            rc = main(["axioms", "--method", "eg", "--seed", "3", "--out", str(out)])
            assert rc == 0
            blobs.append((out / "axioms.json").read_bytes())
        assert blobs[0] == blobs[1]


class TestBench:
    def _run(self, out, weights, with_fps=False):
        cfg = write_config(out, {"n_samples": 5, "methods": ["ig", "sm", "random"],
                                 "with_fps": with_fps, "infd_probes": 16,
                                 "fps_samples": 2})
        return main(["bench", "--weights", weights, "--data", BARS,
                     "--eps", "0.1", "--seed", "5", "--out", str(out),
                     "--config", cfg])

    def test_grid_and_sweep_sections(self, tmp_path, mlp_weights):
        assert self._run(tmp_path, mlp_weights) == 0
        payload = json.loads((tmp_path / "bench.json").read_text())
        validate_artifact(payload)
        assert payload["baseline_row"] == "core[linearpath]"
        assert [r["method_name"] for r in payload["methods_grid"]] == ["ig", "sm", "random"]
        sweep = payload["update_sweep"]
        assert [r["method_name"] for r in sweep] == [
            "core[linearpath]", "core[fgsm]", "core[bim]", "core[pgd]", "core[mim]"]
        assert sweep[0]["robust_acc"] is None
        assert all(r["robust_acc"] is not None for r in sweep[1:])
        lines = (tmp_path / "bench.csv").read_text().splitlines()
        assert len(lines) == 1 + 3 + 5

    def test_rerun_is_byte_identical_without_fps(self, tmp_path, mlp_weights):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            out.mkdir()
            assert self._run(out, mlp_weights) == 0
        assert (a / "bench.json").read_bytes() == (b / "bench.json").read_bytes()
        assert (a / "bench.csv").read_bytes() == (b / "bench.csv").read_bytes()

    def test_unknown_method_fails_before_work(self, tmp_path, mlp_weights, capsys):
        cfg = write_config(tmp_path, {"methods": ["ig", "bogus"]})
        rc = main(["bench", "--weights", mlp_weights, "--data", BARS,
                   "--out", str(tmp_path), "--config", cfg])
        assert rc == 1
        assert "bogus" in capsys.readouterr().err
        assert not (tmp_path / "bench.json").exists()
