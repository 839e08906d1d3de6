import json
from pathlib import Path

import pytest

from trafficrecon.cli import load_config, main

SMALL_WAVES = {
    "fleet": {"N": 300, "T": 0.1},
    "training": {"epochs": 20, "eta": 1e5},
    "solver": {"eval_steps": 200, "m_cells": 200},
}

SMALL_SHOCK = {
    "fleet": {"N": 400, "T": 0.1},
    "training": {"epochs": 50, "eta": 1e5},
    "solver": {"eval_steps": 200, "m_cells": 300},
}


def write_config(tmp_path, payload, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(payload))
    return path


def run_pipeline(tmp_path, tag, config, preset):
    cfg_path = write_config(tmp_path, config, f"cfg_{tag}.json")
    data = tmp_path / f"data_{tag}"
    result = tmp_path / f"result_{tag}"
    report = tmp_path / f"report_{tag}"
    assert main(["generate", "--preset", preset, "--config", str(cfg_path),
                 "--out", str(data)]) == 0
    assert main(["train", "--config", str(cfg_path), "--data", str(data),
                 "--out", str(result)]) == 0
    assert main(["evaluate", "--config", str(cfg_path), "--data", str(data),
                 "--result", str(result), "--out", str(report)]) == 0
    return data, result, report


class TestConfig:
    def test_preset_with_overrides(self):
        cfg = load_config(None, "waves")
        assert cfg["scenario"]["kind"] == "sinusoidal"
        assert cfg["fleet"]["N"] == 2000
        assert cfg["training"]["epochs"] == 5000

    def test_toml_config(self, tmp_path):
        path = tmp_path / "cfg.toml"
        path.write_text('[fleet]\nN = 120\nT = 0.1\n[scenario]\nkind = "shock"\n'
                        'left = 0.4\nright = 0.9\njump = 0.5\n')
        cfg = load_config(path, None)
        assert cfg["fleet"]["N"] == 120
        assert cfg["scenario"]["kind"] == "shock"

    def test_invalid_fleet_rejected_before_any_output(self, tmp_path):
        cfg_path = write_config(tmp_path, {"fleet": {"N": 0}})
        out = tmp_path / "out"
        assert main(["generate", "--preset", "waves", "--config", str(cfg_path),
                     "--out", str(out)]) == 2
        assert not out.exists()

    def test_missing_scenario_rejected(self, tmp_path):
        cfg_path = write_config(tmp_path, {"fleet": {"N": 100, "T": 0.1}})
        assert main(["generate", "--config", str(cfg_path),
                     "--out", str(tmp_path / "o")]) == 2

    def test_stride_validation(self, tmp_path):
        cfg_path = write_config(tmp_path, {"fleet": {"stride": 1}})
        assert main(["generate", "--preset", "waves", "--config", str(cfg_path),
                     "--out", str(tmp_path / "o")]) == 2


class TestGenerate:
    def test_waves_preset_writes_dataset(self, tmp_path, capsys):
        cfg_path = write_config(tmp_path, SMALL_WAVES)
        out = tmp_path / "data"
        assert main(["generate", "--preset", "waves", "--config", str(cfg_path),
                     "--out", str(out)]) == 0
        meta = json.loads((out / "meta.json").read_text())
        assert meta["scenario"]["kind"] == "sinusoidal"
        assert meta["scenario"]["parameters"] == {"mean": 0.6, "amplitude": 0.3,
                                                  "waves": 3}
        assert meta["N"] == 300
        assert (out / "train.csv").exists() and (out / "test.csv").exists()
        assert "pass" in capsys.readouterr().out

    def test_shock_preset_parameters(self, tmp_path):
        cfg_path = write_config(tmp_path, SMALL_SHOCK)
        out = tmp_path / "data"
        assert main(["generate", "--preset", "shock", "--config", str(cfg_path),
                     "--out", str(out)]) == 0
        meta = json.loads((out / "meta.json").read_text())
        assert meta["scenario"]["parameters"] == {"left": 0.4, "right": 0.9,
                                                  "jump": 0.5}


class TestTrain:
    def test_zero_epochs_writes_projected_initialization(self, tmp_path):
        cfg_path = write_config(tmp_path, {**SMALL_WAVES,
                                           "training": {"epochs": 0}})
        data = tmp_path / "data"
        result = tmp_path / "result"
        main(["generate", "--preset", "waves", "--config", str(cfg_path),
              "--out", str(data)])
        assert main(["train", "--config", str(cfg_path), "--data", str(data),
                     "--out", str(result)]) == 0
        payload = json.loads((result / "alpha.json").read_text())
        assert payload["epochs_run"] == 0
        assert all(abs(a - 10.0) < 1e-9 for a in payload["alpha"])
        lines = (result / "loss_history.csv").read_text().strip().splitlines()
        assert len(lines) == 2  # header + the initialization row

    def test_loss_history_length(self, tmp_path):
        cfg_path = write_config(tmp_path, SMALL_WAVES)
        data, result, _ = run_pipeline(tmp_path, "len", SMALL_WAVES, "waves")
        lines = (result / "loss_history.csv").read_text().strip().splitlines()
        assert len(lines) == 1 + SMALL_WAVES["training"]["epochs"] + 1


class TestEvaluate:
    def test_report_schema(self, tmp_path):
        _, _, report = run_pipeline(tmp_path, "waves", SMALL_WAVES, "waves")
        payload = json.loads((report / "report.json").read_text())
        for key in ("mse_test", "re_test", "mse_train", "wasserstein_init",
                    "alpha_error", "lemma1_violations", "density_l1_vs_godunov",
                    "mse_test_physical", "re_definition"):
            assert key in payload
        for key, value in payload.items():
            if not isinstance(value, str):
                assert value == value and abs(value) < float("inf"), key

    def test_density_final_covers_probe_support(self, tmp_path):
        data, result, report = run_pipeline(tmp_path, "supp", SMALL_WAVES, "waves")
        rows = (report / "density_final.csv").read_text().strip().splitlines()[1:]
        first_left = float(rows[0].split(",")[0])
        last_right = float(rows[-1].split(",")[1])
        # right end: the leader's final position is analytic in every artifact
        train_rows = (data / "train.csv").read_text().strip().splitlines()[1:]
        leader_final = float(train_rows[-1].split(",")[2])
        assert last_right == pytest.approx(leader_final, rel=1e-12)
        # left end: the last follower of the evaluation trajectory itself
        st_rows = (report / "density_spacetime.csv").read_text().strip().splitlines()[1:]
        t_last = st_rows[-1].split(",")[0]
        final_block = [r.split(",") for r in st_rows if r.split(",")[0] == t_last]
        assert first_left == float(final_block[0][1])
        assert last_right == float(final_block[-1][2])

    def test_output_files_present(self, tmp_path):
        _, _, report = run_pipeline(tmp_path, "files", SMALL_WAVES, "waves")
        for name in ("report.json", "density_spacetime.csv", "density_final.csv",
                     "godunov_spacetime.csv", "test_trajectories.csv"):
            assert (report / name).exists()

    def test_shock_final_density_regression(self, tmp_path):
        """Golden-run guard on the shock reconstruction output."""
        _, _, report = run_pipeline(tmp_path, "shock", SMALL_SHOCK, "shock")
        payload = json.loads((report / "report.json").read_text())
        # frozen from the run that produced the committed baseline
        assert payload["mse_test"] == pytest.approx(GOLDEN_SHOCK["mse_test"], rel=1e-9)
        rows = (report / "density_final.csv").read_text().strip().splitlines()[1:]
        values = [float(r.split(",")[2]) for r in rows]
        for idx, expected in GOLDEN_SHOCK["density_final_samples"]:
            assert values[idx] == pytest.approx(expected, rel=1e-9)


GOLDEN_SHOCK = {
    "mse_test": 5.488115942696772e-06,
    "density_final_samples": [
        (0, 0.3964628630834305),
        (10, 0.6073249850877922),
        (25, 0.8986330947617235),
        (39, 0.2873416613396523),
    ],
}


class TestConvergence:
    def test_two_rows(self, tmp_path):
        payload = {**SMALL_WAVES, "convergence": {"N_list": [100, 200], "workers": 1}}
        cfg_path = write_config(tmp_path, payload)
        out = tmp_path / "conv"
        assert main(["convergence", "--preset", "waves", "--config", str(cfg_path),
                     "--out", str(out)]) == 0
        lines = (out / "convergence.csv").read_text().strip().splitlines()
        assert len(lines) == 3
        assert lines[0] == "N,wasserstein_init,l1_vs_godunov_final,mse_test"
        w100 = float(lines[1].split(",")[1])
        w200 = float(lines[2].split(",")[1])
        assert w200 < w100


class TestDeterminism:
    def test_byte_identical_reruns(self, tmp_path):
        outs = [run_pipeline(tmp_path, f"det{i}", SMALL_WAVES, "waves")
                for i in range(2)]
        for sub in range(3):
            a_dir, b_dir = outs[0][sub], outs[1][sub]
            files_a = sorted(p.name for p in Path(a_dir).iterdir())
            files_b = sorted(p.name for p in Path(b_dir).iterdir())
            assert files_a == files_b
            for name in files_a:
                assert (Path(a_dir) / name).read_bytes() == \
                    (Path(b_dir) / name).read_bytes(), name
