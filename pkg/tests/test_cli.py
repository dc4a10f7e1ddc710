import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from conjoint_crt.cli import main
from conjoint_crt.randomization import rng_for


CONFIG_TOML = """
[factor.origin]
levels = ["Germany", "France", "Poland", "Mexico", "China", "India"]

[factor.reason]
levels = ["family", "job", "persecution"]

[factor.skill]
levels = ["low", "high"]

[covariate.age]
numeric = true

[[restriction]]
if_factor = "origin"
if_levels = ["China"]
then_factor = "skill"
allowed_levels = ["high"]
"""

EUROPE_TOML = """
factors = ["origin"]

[map]
Germany = "Europe"
France = "Europe"
Poland = "Europe"

[groups]
Mexico = "mexico-europe"
Europe = "mexico-europe"
"""


def _write_fixture_dataset(tmp_path, n=240, j=2, seed=0, mexico_gap=0.0,
                           fatigue=0.0):
    """CSV matching CONFIG_TOML; optional Mexico-vs-Europe latent gap."""
    rng = rng_for(seed, "clifixture", 0)
    origin_levels = ["Germany", "France", "Poland", "Mexico", "China", "India"]
    reasons = ["family", "job", "persecution"]
    rows = []
    for r in range(n):
        age = float(rng.integers(20, 70))
        for t in range(1, j + 1):
            rec = {"respondent_id": r, "task": t, "age": age}
            latent = rng.logistic()
            for side in ("L", "R"):
                origin = origin_levels[rng.integers(0, 6)]
                reason = reasons[rng.integers(0, 3)]
                skill = "high" if origin == "China" else \
                    ("low", "high")[rng.integers(0, 2)]
                sign = 1.0 if side == "L" else -1.0
                if origin == "Mexico":
                    latent += sign * mexico_gap
                elif origin in ("Germany", "France", "Poland"):
                    latent -= sign * mexico_gap
                latent += sign * fatigue * (t - (j + 1) / 2)
                rec[f"origin_{side}"] = origin
                rec[f"reason_{side}"] = reason
                rec[f"skill_{side}"] = skill
            rec["Y"] = int(latent > 0)
            rows.append(rec)
    path = tmp_path / "data.csv"
    pd.DataFrame(rows).to_csv(path, index=False)
    cfg = tmp_path / "config.toml"
    cfg.write_text(CONFIG_TOML)
    return path, cfg


class TestTestCommand:
    def test_basic_run_and_output(self, tmp_path, capsys):
        data, cfg = _write_fixture_dataset(tmp_path, n=60, j=1)
        out = tmp_path / "res.json"
        code = main(["test", "--data", str(data), "--config", str(cfg),
                     "--statistic", "lasso-main", "--target", "origin",
                     "--B", "9", "--seed", "7", "--output", str(out)])
        assert code == 0
        captured = capsys.readouterr().out
        assert captured.strip().splitlines()[-1].startswith("p_value=")
        payload = json.loads(out.read_text())
        assert 1 / 10 <= payload["p_value"] <= 1
        # the stored statistics reproduce the (reduced) exact p-value
        from fractions import Fraction
        count = sum(v >= payload["observed_statistic"]
                    for v in payload["resampled_statistics"])
        assert Fraction(payload["p_numerator"], payload["p_denominator"]) == \
            Fraction(1 + count, 10)
        assert len(payload["resampled_statistics"]) == 9

    def test_byte_identical_runs_modulo_walltime(self, tmp_path):
        data, cfg = _write_fixture_dataset(tmp_path, n=50, j=1)
        outs = []
        for i, workers in enumerate(("1", "2")):
            out = tmp_path / f"r{i}.json"
            code = main(["test", "--data", str(data), "--config", str(cfg),
                         "--statistic", "lasso-main", "--target", "origin",
                         "--B", "6", "--seed", "3", "--workers", workers,
                         "--output", str(out)])
            assert code == 0
            payload = json.loads(out.read_text())
            payload.pop("wall_time")
            outs.append(json.dumps(payload, sort_keys=True))
        assert outs[0] == outs[1]

    def test_validation_exit_code(self, tmp_path):
        data, cfg = _write_fixture_dataset(tmp_path, n=20, j=1)
        code = main(["test", "--data", str(data), "--config", str(cfg),
                     "--target", "not_a_factor", "--B", "4", "--seed", "1"])
        assert code == 2

    def test_coarsened_run(self, tmp_path):
        data, cfg = _write_fixture_dataset(tmp_path, n=60, j=1)
        europe = tmp_path / "europe.toml"
        europe.write_text(EUROPE_TOML)
        out = tmp_path / "res.json"
        code = main(["test", "--data", str(data), "--config", str(cfg),
                     "--statistic", "hiernet", "--target", "origin",
                     "--coarsen", str(europe), "--group", "mexico-europe",
                     "--B", "5", "--seed", "2", "--n-lambda", "5",
                     "--output", str(out)])
        assert code == 0
        payload = json.loads(out.read_text())
        assert payload["statistic"]["kind"] == "hiernet_coarsened"

    def test_coarsen_requires_group(self, tmp_path):
        data, cfg = _write_fixture_dataset(tmp_path, n=20, j=1)
        europe = tmp_path / "europe.toml"
        europe.write_text(EUROPE_TOML)
        code = main(["test", "--data", str(data), "--config", str(cfg),
                     "--target", "origin", "--coarsen", str(europe),
                     "--B", "4", "--seed", "1"])
        assert code == 2


class TestRegularityCommand:
    def test_fatigue_j1_exits_2(self, tmp_path, capsys):
        data, cfg = _write_fixture_dataset(tmp_path, n=30, j=1)
        code = main(["regularity", "--which", "fatigue", "--data", str(data),
                     "--config", str(cfg), "--B", "4", "--seed", "1"])
        assert code == 2
        assert "requires J >= 2" in capsys.readouterr().err

    def test_carryover_odd_j_warns_and_runs(self, tmp_path, capsys):
        data, cfg = _write_fixture_dataset(tmp_path, n=40, j=3)
        code = main(["regularity", "--which", "carryover", "--data", str(data),
                     "--config", str(cfg), "--B", "4", "--seed", "1",
                     "--n-lambda", "4"])
        assert code == 0
        out = capsys.readouterr().out
        assert "dropping each respondent's final task" in out
        assert "p_value=" in out

    def test_order_runs(self, tmp_path, capsys):
        data, cfg = _write_fixture_dataset(tmp_path, n=40, j=1)
        code = main(["regularity", "--which", "order", "--data", str(data),
                     "--config", str(cfg), "--B", "4", "--seed", "1",
                     "--n-lambda", "4"])
        assert code == 0
        assert "p_value=" in capsys.readouterr().out


class TestAmceCommand:
    def test_amce_with_contrast(self, tmp_path, capsys):
        data, cfg = _write_fixture_dataset(tmp_path, n=150, j=2, mexico_gap=0.5)
        out = tmp_path / "amce.json"
        code = main(["amce", "--data", str(data), "--config", str(cfg),
                     "--target", "origin", "--extra", "reason",
                     "--contrast", "Mexico=1,Germany=-1",
                     "--cluster", "respondent", "--output", str(out)])
        assert code == 0
        payload = json.loads(out.read_text())
        assert 0 <= payload["p_value"] <= 1


class TestScreenCommand:
    def test_screen_table(self, tmp_path, capsys):
        data, cfg = _write_fixture_dataset(tmp_path, n=50, j=1)
        out = tmp_path / "screen.csv"
        code = main(["screen", "--data", str(data), "--config", str(cfg),
                     "--target", "origin", "--variables", "reason,age",
                     "--B", "5", "--seed", "4", "--output", str(out)])
        assert code == 0
        table = pd.read_csv(out)
        assert set(table["variable"]) == {"reason", "age"}
        assert ((table["p_value"] > 0) & (table["p_value"] <= 1)).all()


class TestSimulateCommand:
    def test_unknown_study_exit_2(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["simulate", "nope", "--out-dir", str(tmp_path)])
        assert exc.value.code == 2

    def test_inflation_tiny(self, tmp_path):
        code = main(["simulate", "inflation", "--reps", "3", "--n", "1500",
                     "--seed", "1", "--out-dir", str(tmp_path), "--plot"])
        assert code == 0
        summary = pd.read_csv(tmp_path / "inflation_summary.csv")
        assert len(summary) == 6
        assert (tmp_path / "inflation_rejection.png").exists()
        assert (tmp_path / "inflation_pvalue_hist.png").exists()

    def test_power_tiny_with_figure(self, tmp_path):
        code = main(["simulate", "power", "--reps", "2", "--B", "5",
                     "--n", "150", "--sizes", "0.0", "0.1", "--seed", "2",
                     "--out-dir", str(tmp_path), "--plot", "--n-lambda", "4",
                     "--cv-folds", "3"])
        assert code == 0
        pv = pd.read_csv(tmp_path / "power_pvalues.csv")
        assert set(pv["method"]) == {"amce", "crt_hiernet"}
        assert len(pv) == 2 * 2 * 2
        assert (tmp_path / "power_power.png").exists()


def test_unknown_study_via_argparse_error():
    with pytest.raises(SystemExit) as exc:
        main(["simulate"])
    assert exc.value.code == 2
