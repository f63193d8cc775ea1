import filecmp

import numpy as np
import pytest
import yaml

from germmft import cli
from germmft.experiment import (DEFAULT_N, ExperimentConfig, RunReport, fit_slope, resolve_jobs, run)


def test_fit_slope_examples():
    xs = np.array([4.0, 6.0, 8.0, 10.0])
    s, e = fit_slope(xs, 3 * xs**-0.5)
    assert s == pytest.approx(-0.5) and e <= 1e-12
    s, e = fit_slope([1, 2, 4], [1.0, 2.2, 3.9])
    assert 0.9 < s < 1.0 and e > 0
    with pytest.raises(ValueError):
        fit_slope([1, 2], [1, 2])
    with pytest.raises(ValueError):
        fit_slope([1, 2, 3], [1, 0, 2])


def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig("nonsense", [4])
    with pytest.raises(ValueError):
        ExperimentConfig("converge", [])
    with pytest.raises(ValueError):
        ExperimentConfig("converge", [6, 4])
    with pytest.raises(ValueError):
        ExperimentConfig("converge", [4, 40])
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"scenario": "converge", "bogus": 1})
    cfg = ExperimentConfig("germ_qm")
    assert cfg.N_list == [] and cfg.params["lam"] == 0.5
    cfg = ExperimentConfig.from_dict({"scenario": "branches", "params": {"kappa": 0.3}})
    assert cfg.N_list == DEFAULT_N["branches"] and cfg.params["kappa"] == 0.3 and cfg.params["e0"] == 3.0


def test_rng_is_reproducible():
    a = ExperimentConfig("converge", [4], seed=7).rng().standard_normal(4)
    b = ExperimentConfig("converge", [4], seed=7).rng().standard_normal(4)
    assert np.array_equal(a, b)


def test_environment_overrides_jobs(monkeypatch):
    monkeypatch.delenv("GERMMFT_JOBS", raising=False)
    assert resolve_jobs(3) == 3 and resolve_jobs(None) == 1
    monkeypatch.setenv("GERMMFT_JOBS", "2")
    assert resolve_jobs(5) == 2
    monkeypatch.setenv("GERMMFT_JOBS", "many")
    with pytest.raises(ValueError):
        resolve_jobs(1)


def test_report_summary_lines(tmp_path):
    rep = RunReport("converge", ["N", "x"], [[4, 0.5], [6, 0.25]], {"x": (-0.5, 0.01)}, {"AC4": True, "AC5": False})
    rep.write(tmp_path)
    text = (tmp_path / "summary.txt").read_text()
    assert "AC4: PASS" in text and "AC5: FAIL" in text
    assert (tmp_path / "converge.csv").read_text().splitlines()[0] == "N,x"
    assert not rep.passed


def _write_cfg(path, **doc):
    path.write_text(yaml.safe_dump(doc))
    return str(path)


def test_cli_writes_outputs_and_is_deterministic(tmp_path, monkeypatch):
    monkeypatch.delenv("GERMMFT_JOBS", raising=False)
    cfg = _write_cfg(tmp_path / "c.yaml", scenario="converge", T=0.1, params={"T": 0.1})
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        code = cli.main(["converge", "--config", cfg, "--out", str(out), "--n-list", "3,4,5", "--dt", "0.01"])
        assert code in (0, 1)
        assert (out / "converge.csv").exists() and (out / "summary.txt").exists()
        outs.append(out)
    assert filecmp.cmp(outs[0] / "converge.csv", outs[1] / "converge.csv", shallow=False)
    rows = (outs[0] / "converge.csv").read_text().splitlines()
    assert rows[0] == "N,t,D_N" and [r.split(",")[0] for r in rows[1:]] == ["3", "4", "5"]


def test_cli_parallel_matches_serial(tmp_path, monkeypatch):
    cfg = _write_cfg(tmp_path / "c.yaml", T=0.1)
    monkeypatch.delenv("GERMMFT_JOBS", raising=False)
    cli.main(["chaos", "--config", cfg, "--out", str(tmp_path / "a"), "--n-list", "3,4,5", "--dt", "0.01"])
    monkeypatch.setenv("GERMMFT_JOBS", "2")
    cli.main(["chaos", "--config", cfg, "--out", str(tmp_path / "b"), "--n-list", "3,4,5", "--dt", "0.01",
              "--jobs", "1"])
    assert filecmp.cmp(tmp_path / "a" / "chaos.csv", tmp_path / "b" / "chaos.csv", shallow=False)


def test_cli_reports_bad_input(tmp_path, capsys):
    cfg = _write_cfg(tmp_path / "c.yaml", N_list=[8, 4])
    assert cli.main(["converge", "--config", cfg, "--out", str(tmp_path)]) == 2
    assert "sorted" in capsys.readouterr().err
    assert cli.main(["converge", "--config", str(tmp_path / "missing.yaml")]) == 2
    with pytest.raises(SystemExit):
        cli.main(["unknown", "--config", cfg])


def test_hartree_linear_exactness_flag(tmp_path):
    cfg = ExperimentConfig("hartree", [3, 5], T=0.2, params={"n_random": 1, "n_fock": 3, "T_random": 0.1},
                           output_dir=str(tmp_path))
    rep = run(cfg)
    assert rep.flags["linear-exactness"] and rep.flags["AC1"]
    assert rep.metrics["linear_max"] <= 1e-8
