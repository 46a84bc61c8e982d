import csv
import json
from dataclasses import replace

import numpy as np
import pytest
import yaml
from scipy import stats

from recnac.checks import ZDENOM
from recnac.cli import main
from recnac.harness import (ConfigError, ExperimentConfig, PolicySpec, PomdpSpec, TdSpec,
                            aggregate_ci, config_from_dict, config_to_dict, load_config,
                            run_experiment, verify)

TINY = PomdpSpec(2, 2, 2, seed=0)


def small_td(**kw):
    base = dict(kind="rec-td", pomdp=TINY, rec_td=replace(TdSpec(), K=10), trials=2, widths=[4],
                seq_lengths=[3])
    base.update(kw)
    return ExperimentConfig(**base)


def test_ci_arithmetic():
    mean, lo, hi = aggregate_ci(np.array([[0.0], [2.0]]))
    assert mean[0] == 1.0
    assert hi[0] - 1.0 == pytest.approx(ZDENOM, abs=1e-12)
    assert 1.0 - lo[0] == pytest.approx(ZDENOM, abs=1e-12)
    assert ZDENOM == pytest.approx(stats.norm.ppf(0.95), abs=1e-15)


def test_identical_curves_give_zero_width_band():
    mean, lo, hi = aggregate_ci(np.tile([0.5, 1.5, -2.0], (5, 1)))
    np.testing.assert_array_equal(lo, mean)
    np.testing.assert_array_equal(hi, mean)


def test_single_curve_warns_and_collapses():
    with pytest.warns(UserWarning):
        mean, lo, hi = aggregate_ci(np.array([[1.0, 2.0]]))
    np.testing.assert_array_equal(lo, mean)
    np.testing.assert_array_equal(hi, mean)


def test_normal_band_coverage_with_five_trials():
    # a z band with the sample sd covers at 2 * t_4.cdf(z) - 1, not at the nominal 90%
    rng = np.random.default_rng(0)
    curves = rng.standard_normal((20000, 5, 1))
    hits = 0
    for c in curves:
        _, lo, hi = aggregate_ci(c)
        hits += lo[0] <= 0.0 <= hi[0]
    expected = 2 * stats.t(4).cdf(ZDENOM) - 1
    assert expected == pytest.approx(0.8247, abs=1e-4)
    assert abs(hits / len(curves) - expected) <= 0.02


def test_bootstrap_band_contains_mean():
    curves = np.random.default_rng(1).standard_normal((6, 4))
    mean, lo, hi = aggregate_ci(curves, method="bootstrap")
    assert np.all(lo <= mean) and np.all(mean <= hi)
    with pytest.raises(ValueError):
        aggregate_ci(curves, method="jackknife")


def test_config_round_trip_through_yaml(tmp_path):
    cfg = small_td()
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump(config_to_dict(cfg)))
    assert load_config(path) == cfg


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError, match="unknown"):
        config_from_dict({"kind": "rec-td", "rec_td": {"etta": 0.1}})
    with pytest.raises(ConfigError):
        config_from_dict({"trails": 5})


@pytest.mark.parametrize("data", [
    {"trials": 0},
    {"widths": [3]},
    {"kind": "bogus"},
    {"kind": "mean-path", "policy": {"kind": "epsilon-greedy"}},
])
def test_invalid_configs(data):
    with pytest.raises(ConfigError):
        config_from_dict(data)


def test_unreadable_config(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")
    (tmp_path / "bad.yaml").write_text("kind: [unclosed")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.yaml")


def test_trial_seeds():
    assert small_td(base_seed=10, trials=3).trial_seeds() == [10, 11, 12]


def test_run_writes_bands_and_metadata(tmp_path):
    bundle = run_experiment(small_td(), tmp_path)
    assert bundle.curves[("mstd", 4, 3)].shape == (2, 10)
    rows = list(csv.reader(open(tmp_path / "mstd_m4_T3.csv")))
    assert rows[0] == ["iteration", "mean", "lo", "hi"] and len(rows) == 11
    meta = json.loads((tmp_path / "metadata.json").read_text())
    assert meta["trial_seeds"] == [0, 1]
    assert set(meta["files"]) == {"mstd_m4_T3.csv", "dev_u_m4_T3.csv", "dev_w_m4_T3.csv"}
    assert config_from_dict(meta) == small_td()


def test_trials_share_initialization_across_kinds(tmp_path):
    cfg = small_td(policy=PolicySpec("uniform"), rec_td=replace(TdSpec(), K=10, eta=0.0))
    a = run_experiment(cfg)
    b = run_experiment(replace(cfg, kind="mean-path"))
    # with a zero step both stay at the shared initialization
    np.testing.assert_array_equal(a.curves[("dev_u", 4, 3)], b.curves[("dev_u", 4, 3)])


def test_workers_give_identical_results():
    a = run_experiment(small_td(workers=1))
    b = run_experiment(small_td(workers=2))
    for key in a.curves:
        np.testing.assert_array_equal(a.curves[key], b.curves[key])


def test_verify_suite_passes_and_detects_fault():
    assert verify().ok
    cfg = ExperimentConfig(kind="verify")
    cfg.verify.fault = "gradient"
    report = verify(cfg)
    failed = [c.name for c in report.checks if not c.passed]
    assert failed == ["gradient_fd"]


def test_verify_rejects_unknown_tolerance():
    cfg = ExperimentConfig(kind="verify")
    cfg.verify.tolerances["nope"] = 1.0
    with pytest.raises(ConfigError):
        verify(cfg)


# command line

def test_cli_gen_pomdp(tmp_path, capsys):
    out = tmp_path / "p.json"
    assert main(["gen-pomdp", "--states", "3", "--obs", "2", "--actions", "2", "--seed", "4",
                 "--output", str(out)]) == 0
    data = json.loads(out.read_text())
    assert data["seed"] == 4
    assert main(["gen-pomdp", "--states", "0"]) == 2


def test_cli_run_and_rerun(tmp_path, capsys):
    first, second = tmp_path / "a", tmp_path / "b"
    argv = ["run-rec-td", "--pomdp-seed", "0", "--trials", "2", "--widths", "4",
            "--seq-lengths", "3", "--K", "8"]
    assert main(argv + ["--output", str(first)]) == 0
    assert "mstd" in capsys.readouterr().out
    assert main(["run-rec-td", "--config", str(first / "metadata.json"),
                 "--output", str(second)]) == 0
    for name in ("mstd_m4_T3.csv", "dev_u_m4_T3.csv", "dev_w_m4_T3.csv"):
        assert (first / name).read_bytes() == (second / name).read_bytes()


def test_cli_output_env(tmp_path, monkeypatch):
    monkeypatch.setenv("RECNAC_OUTPUT_DIR", str(tmp_path))
    cfg = tmp_path / "tiny.yaml"
    cfg.write_text(yaml.safe_dump({"pomdp": {"n_states": 2, "n_obs": 2, "n_actions": 2}}))
    assert main(["run-mean-path", "--config", str(cfg), "--trials", "1", "--widths", "4",
                 "--seq-lengths", "2", "--K", "3"]) == 0
    assert (tmp_path / "mean-path" / "metadata.json").exists()


def test_cli_bad_config_exit_code(tmp_path, capsys):
    assert main(["run-rec-td", "--trials", "0"]) == 2
    assert "invalid config" in capsys.readouterr().err
    (tmp_path / "c.yaml").write_text("rec_td: {bogus: 1}\n")
    assert main(["run-rec-td", "--config", str(tmp_path / "c.yaml")]) == 2


def test_cli_verify_exit_codes(capsys):
    assert main(["verify", "--fault", "gradient"]) == 1
    assert "FAIL gradient_fd" in capsys.readouterr().out
    assert main(["verify", "--tol", "nope=1"]) == 2


def test_cli_aggregate(tmp_path, capsys):
    for i, vals in enumerate(([0.0, 1.0], [2.0, 3.0])):
        with open(tmp_path / f"t{i}.csv", "w") as fh:
            fh.write("k,v\n" + "".join(f"{k},{v}\n" for k, v in enumerate(vals)))
    out = tmp_path / "band.csv"
    assert main(["aggregate", str(tmp_path / "t0.csv"), str(tmp_path / "t1.csv"),
                 "--column", "v", "--output", str(out)]) == 0
    rows = list(csv.DictReader(open(out)))
    assert float(rows[0]["mean"]) == 1.0
    assert float(rows[1]["hi"]) - 2.0 == pytest.approx(ZDENOM)
    assert main(["aggregate", str(tmp_path / "t0.csv"), "--column", "w",
                 "--output", str(out)]) == 2


def test_cli_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["run-rec-td", "--pomdp-seed", "0", "--trials", "1", "--widths", "4",
                 "--seq-lengths", "2", "--K", "2", "--output", str(blocker / "sub")]) == 1
