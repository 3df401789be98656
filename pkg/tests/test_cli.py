import json

import numpy as np
import pytest

from spikereg.cli import main
from spikereg.config import (
    ExperimentConfig,
    apply_overrides,
    bench_defaults,
    config_hash,
    emit_config,
    load_config_file,
    parse_config_text,
    toy_defaults,
)
from spikereg.errors import ConfigError

TINY_TOY_ARGS = [
    "--epochs", "3", "--hidden", "4", "--t-steps", "2", "--k-bins", "6",
    "--learning-rate", "0.01",
]


def write_synth_benchmark(tmp_path, n=60, q=3, name="synth"):
    gen = np.random.default_rng(7)
    X = gen.normal(size=(n, q))
    y = X @ np.array([2.0, -1.0, 0.5])[:q] + 0.1 * gen.standard_normal(n)
    header = [f"f{i}" for i in range(q)] + ["target"]
    lines = [",".join(header)]
    for i in range(n):
        lines.append(",".join(repr(float(v)) for v in X[i]) + f",{float(y[i])!r}")
    (tmp_path / f"{name}.csv").write_text("\n".join(lines) + "\n")
    manifest = {name: {"file": f"{name}.csv", "target": "target", "n": n, "q": q}}
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps(manifest))
    return path


class TestConfigFormat:
    def test_emit_parse_round_trip(self):
        cfg = ExperimentConfig(
            dataset="energy", head="rac", t_steps=4, hidden=32, k_bins=25,
            q_power=2.0, tau_entropy=0.5, dropout_rates=(0.01, 0.1),
            epochs=123, batch_size=64, learning_rate=0.0025, folds=7,
            val_fraction=0.25, seed=99, workers=3, out_dir="elsewhere",
            standardize_targets=False, readout_leak="fixed1",
            rac_entropy="penalize", n_forwards=2,
        )
        assert parse_config_text(emit_config(cfg)) == cfg

    def test_parse_ignores_comments_and_blanks(self):
        cfg = parse_config_text("# comment\n\nseed = 5\n")
        assert cfg.seed == 5

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError):
            parse_config_text("not_a_key = 1\n")

    def test_malformed_line_rejected(self):
        with pytest.raises(ConfigError):
            parse_config_text("seed 5\n")

    def test_config_file_layered_with_flags(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("seed = 4\nhidden = 16\n")
        cfg = load_config_file(path, base=bench_defaults())
        assert (cfg.seed, cfg.hidden) == (4, 16)
        cfg = apply_overrides(cfg, seed=11)  # flag wins over file
        assert cfg.seed == 11 and cfg.hidden == 16

    def test_hash_tracks_content(self):
        a = config_hash(ExperimentConfig(seed=1))
        b = config_hash(ExperimentConfig(seed=2))
        assert a != b and len(a) == 12
        assert a == config_hash(ExperimentConfig(seed=1))

    def test_validation_errors(self):
        with pytest.raises(ConfigError):
            ExperimentConfig(t_steps=0).validate()
        with pytest.raises(ConfigError):
            ExperimentConfig(head="rac", k_bins=1).validate()
        with pytest.raises(ConfigError):
            ExperimentConfig(dropout_rates=(1.0,)).validate()
        with pytest.raises(ConfigError):
            ExperimentConfig(head="banana").validate()

    def test_per_head_epoch_defaults(self):
        cfg = ExperimentConfig(epochs=0)
        assert cfg.epochs_for("gaussian") == 600
        assert cfg.epochs_for("rac") == 200
        assert ExperimentConfig(epochs=42).epochs_for("rac") == 42


class TestToyCommand:
    def run_toy(self, tmp_path, extra=()):
        out = tmp_path / "out"
        code = main(["toy", "--out", str(out), "--seed", "3", *TINY_TOY_ARGS, *extra])
        assert code == 0
        return out

    def test_artifacts_and_row_counts(self, tmp_path):
        out = self.run_toy(tmp_path)
        for head in ("gaussian", "rac"):
            lines = (out / f"toy_{head}.csv").read_text().splitlines()
            assert lines[0].startswith("# config_hash=") and "seed=3" in lines[0]
            assert lines[1] == "x,y_true,y_pred,sigma_lower,sigma_upper"
            assert len(lines) == 2 + 100  # header comment + columns + 100 test rows
        metrics = (out / "toy_metrics.jsonl").read_text().splitlines()
        assert metrics[0].startswith("# config_hash=")
        records = [json.loads(line) for line in metrics[1:]]
        assert {r["head"] for r in records} == {"gaussian", "rac"}
        assert all(np.isfinite(r["rmse"]) and np.isfinite(r["nll"]) for r in records)

    def test_rerun_byte_identical(self, tmp_path):
        out1 = self.run_toy(tmp_path / "a")
        out2 = self.run_toy(tmp_path / "b")
        for name in ("toy_gaussian.csv", "toy_rac.csv", "toy_metrics.jsonl"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes(), name

    def test_interval_columns_bracket_predictions(self, tmp_path):
        out = self.run_toy(tmp_path)
        for head in ("gaussian", "rac"):
            rows = (out / f"toy_{head}.csv").read_text().splitlines()[2:]
            table = np.array([[float(v) for v in r.split(",")] for r in rows])
            assert np.all(table[:, 3] <= table[:, 2] + 1e-12)
            assert np.all(table[:, 2] <= table[:, 4] + 1e-12)

    def test_env_var_out_dir(self, tmp_path, monkeypatch):
        target = tmp_path / "from-env"
        monkeypatch.setenv("SPIKEREG_OUT", str(target))
        code = main(["toy", "--seed", "1", *TINY_TOY_ARGS])
        assert code == 0
        assert (target / "toy_metrics.jsonl").exists()

    def test_invalid_config_exit_code(self, tmp_path):
        assert main(["toy", "--out", str(tmp_path), "--t-steps", "0"]) == 2

    def test_head_selector(self, tmp_path):
        out = tmp_path / "g"
        assert main(["toy", "--out", str(out), "--seed", "1", "--head", "gaussian",
                     *TINY_TOY_ARGS]) == 0
        assert (out / "toy_gaussian.csv").exists()
        assert not (out / "toy_rac.csv").exists()


class TestBenchCommand:
    BENCH_ARGS = [
        "--epochs", "3", "--hidden", "4", "--t-steps", "2", "--k-bins", "5",
        "--learning-rate", "0.01", "--seed", "2",
    ]

    def test_two_fold_smoke(self, tmp_path):
        manifest = write_synth_benchmark(tmp_path)
        out = tmp_path / "out"
        code = main(["bench", "--manifest", str(manifest), "--folds", "2",
                     "--out", str(out), *self.BENCH_ARGS])
        assert code == 0
        results = (out / "results.jsonl").read_text().splitlines()
        assert results[0].startswith("# config_hash=")
        records = [json.loads(r) for r in results[1:]]
        assert len(records) == 4  # 2 folds x 2 heads
        summary = (out / "summary.csv").read_text().splitlines()
        assert len(summary) == 4  # header comment + columns + 2 groups
        assert all(",2," in line for line in summary[2:])  # n_folds column
        assert (out / "timings.txt").exists()

    def test_determinism_byte_identical(self, tmp_path):
        manifest = write_synth_benchmark(tmp_path)
        outs = []
        for sub in ("r1", "r2"):
            out = tmp_path / sub
            code = main(["bench", "--manifest", str(manifest), "--folds", "2",
                         "--out", str(out), *self.BENCH_ARGS])
            assert code == 0
            outs.append(out)
        for name in ("results.jsonl", "summary.csv"):
            assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()

    def test_workers_do_not_change_results(self, tmp_path):
        manifest = write_synth_benchmark(tmp_path)
        blobs = []
        for sub, workers in (("w1", "1"), ("w2", "2")):
            out = tmp_path / sub
            code = main(["bench", "--manifest", str(manifest), "--folds", "2",
                         "--out", str(out), "--workers", workers, *self.BENCH_ARGS])
            assert code == 0
            blobs.append((out / "results.jsonl").read_bytes())
        assert blobs[0] == blobs[1]

    def test_manifest_size_mismatch_fails_before_training(self, tmp_path):
        manifest = write_synth_benchmark(tmp_path)
        wrong = json.loads(manifest.read_text())
        wrong["synth"]["n"] = 999
        manifest.write_text(json.dumps(wrong))
        code = main(["bench", "--manifest", str(manifest), "--folds", "2",
                     "--out", str(tmp_path / "out"), *self.BENCH_ARGS])
        assert code == 4
        assert not (tmp_path / "out" / "results.jsonl").exists()

    def test_missing_manifest_is_data_error(self, tmp_path):
        code = main(["bench", "--manifest", str(tmp_path / "nope.json"),
                     "--out", str(tmp_path / "out")])
        assert code == 4


class TestGradcheckCommand:
    def test_fresh_build_passes(self, capsys):
        assert main(["gradcheck"]) == 0
        out = capsys.readouterr().out
        assert "PASS" in out
        last = [l for l in out.splitlines() if l.startswith("PASS")][-1]
        reported = float(last.split("max rel err ")[1].split()[0])
        assert reported <= 1e-5

    def test_corrupted_gradient_fails_with_named_slot(self, capsys):
        assert main(["gradcheck", "--corrupt-slot", "hidden.W"]) == 3
        out = capsys.readouterr().out
        assert "FAIL" in out
        assert any("hidden.W" in l and "FAIL" in l for l in out.splitlines())


class TestSummarizeCommand:
    def test_summarize_results_file(self, tmp_path, capsys):
        from spikereg.evaluate import FoldResult, write_results

        results = [
            FoldResult("d", 0, "rac", 0.05, 1.0, 0.2, 0.0, 5),
            FoldResult("d", 1, "rac", 0.05, 3.0, 0.4, 0.0, 5),
        ]
        path = tmp_path / "results.jsonl"
        write_results(path, results, "beef", 5)
        assert main(["summarize", str(path), "--out", str(tmp_path / "s")]) == 0
        out = capsys.readouterr().out
        assert "d,rac,2,2.0,1.0," in out
        summary = (tmp_path / "s" / "summary.csv").read_text()
        assert "# config_hash=beef seed=5" in summary


class TestShowConfig:
    def test_round_trips_through_parser(self, capsys):
        assert main(["show-config", "--profile", "toy"]) == 0
        text = capsys.readouterr().out
        assert parse_config_text(text) == toy_defaults()
