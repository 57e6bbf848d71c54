import datetime as dt
import json

import numpy as np
import pytest

from robustmsd.cli import ingest_prices, main, read_solution, read_table
from robustmsd.errors import DataError


def _write_prices(path, rows, header="date,a,b"):
    path.write_text(header + "\n" + "\n".join(rows) + "\n")
    return path


def _synthetic_prices(path, n_rows=262, seed=3):
    rng = np.random.default_rng(seed)
    mu = np.array([7, 22, 16]) * 1e-4
    sigma = np.array([[3, 1, 1], [1, 4, 1], [1, 1, 3]]) * 1e-4
    r = mu + rng.standard_normal((n_rows - 1, 3)) @ np.linalg.cholesky(sigma).T
    p = 100 * np.vstack([np.ones(3), np.cumprod(1 + r, axis=0)])
    start = dt.date(2021, 1, 1)
    lines = [f"{start + dt.timedelta(days=i)}," + ",".join(f"{x:.8f}" for x in row) for i, row in enumerate(p)]
    return _write_prices(path, lines, "date,x,y,z")


def test_ingest_single_return(tmp_path):
    _, r = ingest_prices(_write_prices(tmp_path / "p.csv", ["2020-01-01,100,50", "2020-01-02,110,50"]))
    np.testing.assert_allclose(r, [[0.10, 0.0]])


def test_ingest_constant_prices(tmp_path):
    _, r = ingest_prices(_write_prices(tmp_path / "p.csv", [f"2020-01-0{i},5,7" for i in range(1, 5)]))
    np.testing.assert_array_equal(r, np.zeros((3, 2)))


def test_ingest_row_count(tmp_path):
    names, r = ingest_prices(_synthetic_prices(tmp_path / "p.csv", 262))
    assert names == ["x", "y", "z"]
    assert r.shape == (261, 3)


@pytest.mark.parametrize("rows,needle", [
    (["2020-01-01,100,50", "2020-01-02,,50"], "missing value at row 3"),
    (["2020-01-01,100,50", "2020-01-02,0,50"], "non-positive"),
    (["2020-01-01,100,50", "2020-01-01,101,50"], "duplicate"),
    (["2020-01-02,100,50", "2020-01-01,101,50"], "out-of-order"),
    (["2020-01-01,100,50"], "at least two"),
])
def test_ingest_errors(tmp_path, rows, needle):
    with pytest.raises(DataError, match=needle):
        ingest_prices(_write_prices(tmp_path / "p.csv", rows))


def _files(out):
    return {p.name: p.read_bytes() for p in sorted(out.iterdir())}


def test_solve_zero_eta_files_identical(tmp_path):
    out = tmp_path / "o"
    assert main(["solve", "--eta", "0", "--mc-samples", "5000", "--out", str(out)]) == 0
    robust = read_solution(out / "solution_robust.csv")
    nonrobust = read_solution(out / "solution_nonrobust.csv")
    assert np.max(np.abs(robust - nonrobust)) <= 1e-6
    assert robust.shape == (5, 3)


def test_sweep_table_layout_and_roundtrip(tmp_path):
    out = tmp_path / "o"
    rc = main(["sweep", "--eta", "0.05,0.5", "--mc-samples", "5000", "--paths", "3000", "--seed", "4", "--out", str(out)])
    assert rc == 0
    table = read_table(out / "table.csv")
    assert [r["eta"] for r in table] == [0.05, 0.5]
    assert list(table[0])[:12] == ["eta", "gamma", "beta", "outperform_count", "outperform_pct",
                                   "mean_wealth_robust", "mean_wealth_nonrobust", "mean_wealth_diff",
                                   "ratio_robust", "ratio_nonrobust", "ratio_diff", "path_count"]
    for name in ("series_outperform.csv", "series_mean_wealth.csv", "series_ratio.csv"):
        assert len(read_table(out / name)) == 2
    text = (out / "table.csv").read_text().splitlines()[1].split(",")
    assert len(text[5].split(".")[1]) == 6 and len(text[4].split(".")[1]) == 4


def test_flags_override_config_and_env_seed(tmp_path, monkeypatch):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"kappa": 4.0, "mc_samples": 3000, "eta": 0.1}))
    monkeypatch.setenv("ROBUSTMSD_SEED", "77")
    out = tmp_path / "o"
    assert main(["solve", "--config", str(cfg), "--kappa", "5", "--out", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())["config"]
    assert manifest["kappa"] == 5.0 and manifest["mc_samples"] == 3000 and manifest["seed"] == 77
    assert "out" not in manifest and "threads" not in manifest


def test_skew_compare(tmp_path):
    out = tmp_path / "o"
    rc = main(["compare", "--scenario", "skew", "--beta", "-242.54", "--mc-samples", "5000", "--paths", "2000",
               "--out", str(out)])
    assert rc == 0
    row = read_table(out / "table.csv")[0]
    assert row["beta"] == -242.54
    assert row["xi2"] == pytest.approx(-0.3042, abs=2e-3)


def test_estimate_kl_and_model_risk(tmp_path):
    prices = _synthetic_prices(tmp_path / "p.csv")
    out = tmp_path / "kl"
    assert main(["estimate-kl", "--prices", str(prices), "--repeats", "50", "--out", str(out)]) == 0
    assert len(read_table(out / "kl_estimates.csv")) == 50
    out = tmp_path / "mr"
    rc = main(["model-risk", "--prices", str(prices), "--repeats", "50", "--mc-samples", "5000", "--boot", "2000",
               "--out", str(out)])
    assert rc == 0
    res = read_table(out / "model_risk.csv")[0]
    assert res["confidence"] == 0.95
    assert sum(r["count"] for r in read_table(out / "diff_histogram.csv")) == 2000


def test_error_exit_writes_record(tmp_path):
    out = tmp_path / "o"
    assert main(["solve", "--kappa", "0.001", "--eta", "0.1", "--mc-samples", "2000", "--out", str(out)]) == 1
    record = json.loads((out / "error.json").read_text())
    assert record["error"] == "KappaTooSmall"
    assert record["period"] == 4


def test_missing_prices_is_error(tmp_path):
    assert main(["estimate-kl", "--out", str(tmp_path / "o")]) == 1


def test_abandon_exit_code(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"mu": [-0.5, -0.5, -0.5], "sigma": np.eye(3).tolist(), "eta": 0.05,
                               "mc_samples": 5000, "horizon": 2, "penalties": [0.0]}))
    out = tmp_path / "o"
    assert main(["solve", "--config", str(cfg), "--out", str(out)]) == 2
    assert read_table(out / "summary.csv")[0]["accepted"] == 0


def test_manifest_replay_is_byte_identical(tmp_path):
    first = tmp_path / "a"
    args = ["sweep", "--eta", "0.1,0.3", "--mc-samples", "4000", "--paths", "30000", "--seed", "11"]
    assert main(args + ["--threads", "1", "--out", str(first)]) == 0
    second = tmp_path / "b"
    assert main(["sweep", "--config", str(first / "manifest.json"), "--threads", "3", "--out", str(second)]) == 0
    assert _files(first) == _files(second)
