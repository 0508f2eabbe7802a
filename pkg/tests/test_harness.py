import numpy as np
import pytest

from cmdpkit import fixtures, harness
from cmdpkit import primal_dual as pd
from cmdpkit.core import uniform_policy


def synthetic_trail(regime, n=400, intercept=3.0, slope=1.7):
    t = np.arange(1.0, n + 1.0)
    x = 1.0 / t if regime == "constant" else 1.0 / np.sqrt(t)
    return intercept + slope * x


@pytest.mark.parametrize("regime", ["constant", "inverse_sqrt"])
def test_rate_regression_recovers_exact_decay(regime):
    fit = harness.rate_regression(synthetic_trail(regime), regime)
    assert fit.r_squared >= 1.0 - 1e-12
    assert fit.slope == pytest.approx(1.7, abs=1e-9)
    assert fit.intercept == pytest.approx(3.0, abs=1e-9)


def test_rate_regression_mismatched_regressor_scores_lower():
    # a 1/T trail fitted against 1/sqrt(T) still correlates, but visibly
    # less than the exact fit
    fit = harness.rate_regression(synthetic_trail("constant"), "inverse_sqrt")
    assert fit.r_squared < 0.995


def test_rate_regression_accepts_iteration_records():
    cmdp = fixtures.random_cmdp(np.random.default_rng(3))
    result = pd.run(cmdp, pd.SolverConfig(
        schedule=pd.StepSchedule("constant", 0.2), iterations=80,
        evaluator="exact", slater_policy=uniform_policy(cmdp)))
    fit = harness.rate_regression(result.trail, "constant")
    assert np.isfinite(fit.r_squared)


def test_rate_regression_validation():
    with pytest.raises(ValueError, match="regime"):
        harness.rate_regression(synthetic_trail("constant"), "linear")
    with pytest.raises(ValueError, match="at least"):
        harness.rate_regression([1.0] * 10, "constant")


def test_theorem_check_small_fixture_inside_bounds():
    cmdp = fixtures.random_cmdp(np.random.default_rng(21), n_states=3,
                                n_actions=2, n_constraints=1)
    report = harness.theorem_check(
        cmdp, pd.StepSchedule("inverse_sqrt", 0.2), horizons=(50, 200),
        slater_policy=uniform_policy(cmdp))
    assert report.passed, report.failures()
    assert len(report.rows) == 6
    assert report.constants["g_bound"] > 0.0


def trail_for_csv():
    cmdp = fixtures.random_cmdp(np.random.default_rng(5), n_constraints=2)
    result = pd.run(cmdp, pd.SolverConfig(
        schedule=pd.StepSchedule("constant", 0.2), iterations=60,
        evaluator="exact", slater_policy=uniform_policy(cmdp)))
    return result.trail


def test_trail_csv_layout(tmp_path):
    trail = trail_for_csv()
    path = tmp_path / "trail.csv"
    harness.write_trail_csv(path, trail)
    lines = path.read_text().splitlines()
    assert lines[0].split(",") == harness.trail_columns(2)
    assert len(lines) == 1 + len(trail)
    first = lines[1].split(",")
    assert first[0] == "0"
    assert float(first[1]) == trail[0].eta


def test_csv_writers_are_deterministic(tmp_path):
    trail = trail_for_csv()
    harness.write_trail_csv(tmp_path / "a.csv", trail)
    harness.write_trail_csv(tmp_path / "b.csv", trail)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    harness.write_rate_csv(tmp_path / "ra.csv", trail)
    harness.write_rate_csv(tmp_path / "rb.csv", trail)
    assert (tmp_path / "ra.csv").read_bytes() == (tmp_path / "rb.csv").read_bytes()


def test_summary_json_round_trip(tmp_path):
    import json

    path = tmp_path / "summary.json"
    harness.write_summary_json(path, {
        "vector": np.arange(3.0), "scalar": np.float64(1.5), "n": np.int64(4)})
    data = json.loads(path.read_text())
    assert data["vector"] == [0.0, 1.0, 2.0]
    assert data["scalar"] == 1.5
    assert data["n"] == 4
    assert data["schema"] == harness.SUMMARY_SCHEMA


def test_experiment_config_validation():
    with pytest.raises(harness.ConfigError, match="kind"):
        harness.ExperimentConfig(kind="mystery", seed=1, params={})
    with pytest.raises(harness.ConfigError, match="seed"):
        harness.ExperimentConfig(kind="inventory", seed=None, params={})
    with pytest.raises(harness.ConfigError, match="table"):
        harness.ExperimentConfig(kind="inventory", seed=1, params=[1, 2])


def test_load_config_errors(tmp_path):
    with pytest.raises(harness.ConfigError, match="not found"):
        harness.load_config(tmp_path / "missing.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("experiment = [unclosed")
    with pytest.raises(harness.ConfigError, match="invalid TOML"):
        harness.load_config(bad)
    no_kind = tmp_path / "no_kind.toml"
    no_kind.write_text("[experiment]\nseed = 1\n")
    with pytest.raises(harness.ConfigError, match="kind"):
        harness.load_config(no_kind)
    no_seed = tmp_path / "no_seed.toml"
    no_seed.write_text("[experiment]\nkind = \"random-cmdp\"\n")
    with pytest.raises(harness.ConfigError, match="seed"):
        harness.load_config(no_seed)
    assert harness.load_config(no_seed, seed_override=9).seed == 9


RANDOM_TOML = """
[experiment]
kind = "random-cmdp"
seed = 11

[random_cmdp]
n_states = 4
n_actions = 2
n_constraints = 1
iterations = 120
schedule = "constant"
step = 0.2
"""


def test_cli_run_random_cmdp(tmp_path, capsys):
    config = tmp_path / "random.toml"
    config.write_text(RANDOM_TOML)
    out = tmp_path / "artifacts"
    code = harness.main(["run", "--config", str(config), "--out", str(out)])
    assert code == harness.EXIT_OK
    trail = (out / "trail.csv").read_text().splitlines()
    assert len(trail) == 1 + 120
    assert (out / "rate.csv").exists()
    assert (out / "summary.json").exists()
    capsys.readouterr()


def test_cli_run_is_reproducible(tmp_path, capsys):
    config = tmp_path / "random.toml"
    config.write_text(RANDOM_TOML)
    out1 = tmp_path / "run1"
    out2 = tmp_path / "run2"
    assert harness.main(["run", "--config", str(config), "--out", str(out1)]) == 0
    assert harness.main(["run", "--config", str(config), "--out", str(out2)]) == 0
    capsys.readouterr()
    assert (out1 / "trail.csv").read_bytes() == (out2 / "trail.csv").read_bytes()


def test_cli_seed_override_changes_run(tmp_path, capsys):
    config = tmp_path / "random.toml"
    config.write_text(RANDOM_TOML)
    out1 = tmp_path / "run1"
    out2 = tmp_path / "run2"
    harness.main(["run", "--config", str(config), "--out", str(out1)])
    harness.main(["run", "--config", str(config), "--seed", "99",
                  "--out", str(out2)])
    capsys.readouterr()
    assert (out1 / "trail.csv").read_bytes() != (out2 / "trail.csv").read_bytes()


def test_cli_missing_config_flag_exits_with_usage():
    with pytest.raises(SystemExit) as info:
        harness.main(["run"])
    assert info.value.code == 2


def test_cli_nonexistent_config_path(tmp_path, capsys):
    code = harness.main(["run", "--config", str(tmp_path / "nope.toml")])
    captured = capsys.readouterr()
    assert code == harness.EXIT_CONFIG
    assert "not found" in captured.err
    assert "usage" in captured.err


def test_oracle_check_experiment(tmp_path):
    config = harness.ExperimentConfig(
        kind="oracle-check", seed=4,
        params={"n_states": 4, "n_actions": 2, "n_constraints": 1,
                "iterations": 800})
    summary = harness.run_experiment(config, tmp_path)
    assert summary["passed"] is True
    assert summary["status"] == "optimal"
    assert summary["slackness_problems"] == []
    assert (tmp_path / "summary.json").exists()


def test_theorem_check_experiment(tmp_path):
    config = harness.ExperimentConfig(
        kind="theorem-check", seed=6,
        params={"n_states": 3, "n_actions": 2, "n_constraints": 1,
                "horizons": [50, 200]})
    summary = harness.run_experiment(config, tmp_path)
    assert summary["passed"] is True
    bounds = (tmp_path / "bounds.csv").read_text().splitlines()
    assert bounds[0] == "horizon,regime,quantity,measured,bound,ok"
    assert len(bounds) == 1 + 2 * 2 * 3  # regimes x horizons x quantities
