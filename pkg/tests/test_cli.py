import csv
import json
from pathlib import Path

import numpy as np
import pytest

from fnmiss.cli import main
from fnmiss.estimators import estimate_cc, estimate_dr, estimate_or
from fnmiss.io import read_curve_table, read_dataset, read_saved_estimate, write_dataset
from fnmiss.model import Dataset, Grid
from fnmiss.nuisance import fit_logistic, fit_ols
from fnmiss.simulation import SimConfig, replicate_data, run_replication

DATA = Path(__file__).parent / "data"
GOLDEN = DATA / "golden"
FIXTURE = DATA / "fixture50.csv"


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_golden_fixture_byte_identical(tmp_path):
    assert main(["--out-dir", str(tmp_path), "estimate", str(FIXTURE)]) == 0
    for ref in sorted(GOLDEN.iterdir()):
        assert (tmp_path / ref.name).read_bytes() == ref.read_bytes(), ref.name


def test_fixture_shape():
    ds = read_dataset(FIXTURE)
    assert (ds.n, ds.p, ds.T) == (50, 6, 10)
    assert 0 < ds.n_obs < ds.n


def test_no_missing_rows_collapse(tmp_path, rng):
    n, T = 40, 6
    X = np.column_stack([np.ones(n), rng.normal(size=(n, 2))])
    Y = X @ rng.normal(size=(3, T)) + rng.normal(size=(n, T))
    src = tmp_path / "full.csv"
    write_dataset(src, Dataset.from_arrays(X, np.ones(n), Y, Grid.equidistant(T)))
    assert main(["--out-dir", str(tmp_path), "estimate", str(src)]) == 0
    curves = {k: read_curve_table(tmp_path / f"{k}_curve.csv")["mu_hat"] for k in ("or", "dr", "cc")}
    for k in ("or", "dr", "cc"):
        np.testing.assert_allclose(curves[k], Y.mean(axis=0), rtol=0, atol=1e-10)
    m = json.loads((tmp_path / "manifest.json").read_text())
    assert m["propensity_model"]["fully_observed"] is True


@pytest.mark.parametrize(
    "body, fragment",
    [
        ("a,1,1,2,3\nb,2,1,4,5\n", ":4: z must be 0 or 1"),
        ("a,1,1,2,3\nb,1,1,,5\n", ":4: empty outcome"),
        ("a,1,1,2,3\nb,1,1,4\n", ":4: expected 5 fields"),
        ("a,1,1,2,3\nb,1,x,4,5\n", ":4: cannot parse"),
        ("a,1,1,2,3\nb,1,1,nan,5\n", ":4: non-finite"),
    ],
)
def test_schema_errors_exit_2(tmp_path, capsys, body, fragment):
    f = _write(tmp_path / "bad.csv", "# grid: 0,1\nid,z,x1,y_1,y_2\n" + body)
    assert main(["--out-dir", str(tmp_path), "estimate", str(f)]) == 2
    assert fragment in capsys.readouterr().err


@pytest.mark.parametrize(
    "text",
    [
        "id,z,x1,y_1,y_2\na,1,1,2,3\n",
        "# grid: 0,1\nid,zz,x1,y_1,y_2\na,1,1,2,3\n",
        "# grid: 0,1\nid,z,x1,y_1\na,1,1,2\n",
        "# grid: 0,1\nid,z,x1,y_1,y_2\n",
        "# grid: 1,0\nid,z,x1,y_1,y_2\na,1,1,2,3\n",
    ],
)
def test_layout_errors_exit_2(tmp_path, text):
    f = _write(tmp_path / "bad.csv", text)
    assert main(["--out-dir", str(tmp_path), "estimate", str(f)]) == 2


def test_missing_file_exit_2(tmp_path):
    assert main(["estimate", str(tmp_path / "nope.csv")]) == 2


def test_too_few_observed_exit_2(tmp_path):
    f = _write(tmp_path / "few.csv", "# grid: 0,1\nid,z,x1,x2,y_1,y_2\na,1,1,0,2,3\nb,0,1,1,,\n")
    assert main(["--out-dir", str(tmp_path), "estimate", str(f)]) == 2


def test_separation_exit_3(tmp_path, capsys):
    rng = np.random.default_rng(3)
    n, T = 40, 4
    x = rng.normal(size=n)
    X = np.column_stack([np.ones(n), x])
    Z = (x > 0).astype(int)
    Y = X @ rng.normal(size=(2, T)) + rng.normal(size=(n, T))
    f = tmp_path / "sep.csv"
    write_dataset(f, Dataset.from_arrays(X, Z, Y, Grid.equidistant(T)))
    assert main(["--out-dir", str(tmp_path), "estimate", str(f)]) == 3
    assert "Separation" in capsys.readouterr().err


def test_singular_design_exit_3(tmp_path, capsys):
    text = "# grid: 0,1\nid,z,x1,x2,y_1,y_2\n" + "".join(
        f"u{i},1,1,0,{i},{i + 1}\n" for i in range(5)
    ) + "v,0,1,1,,\n"
    f = _write(tmp_path / "sing.csv", text)
    assert main(["--out-dir", str(tmp_path), "estimate", str(f)]) == 3
    assert "SingularDesign" in capsys.readouterr().err


def test_manifest_contents(tmp_path):
    main(["--out-dir", str(tmp_path), "estimate", "--drop-outcome", "3,5", str(FIXTURE)])
    m = json.loads((tmp_path / "manifest.json").read_text())
    assert m["n"] == 50 and m["p"] == 6
    assert m["outcome_model"]["dropped_columns"] == ["x3", "x5"]
    assert m["propensity_model"]["converged"] is True
    assert "seed" not in m


def test_bands_matches_estimate(tmp_path):
    main(["--out-dir", str(tmp_path), "estimate", str(FIXTURE)])
    for name in ("or", "dr", "cc"):
        assert main(["--out-dir", str(tmp_path), "bands", str(tmp_path / f"{name}_estimate.csv")]) == 0
        a = (tmp_path / f"{name}_curve.csv").read_bytes()
        b = (tmp_path / f"{name}_estimate_bands.csv").read_bytes()
        assert a == b


def test_bands_partition_and_alpha(tmp_path):
    main(["--out-dir", str(tmp_path), "estimate", "--estimators", "DR", str(FIXTURE)])
    saved = str(tmp_path / "dr_estimate.csv")
    main(["bands", saved, "--partition", "4", "-o", str(tmp_path / "p4.csv")])
    p4 = read_curve_table(tmp_path / "p4.csv")
    assert 1 < len(np.unique(p4["u_scb"])) <= 4
    main(["bands", saved, "--alpha", "0.5", "-o", str(tmp_path / "a50.csv")])
    main(["bands", saved, "--alpha", "0.05", "-o", str(tmp_path / "a05.csv")])
    a50, a05 = read_curve_table(tmp_path / "a50.csv"), read_curve_table(tmp_path / "a05.csv")
    assert np.all(a50["scb_upper"] - a50["scb_lower"] < a05["scb_upper"] - a05["scb_lower"])
    assert np.all(a50["pcb_upper"] - a50["pcb_lower"] < a05["pcb_upper"] - a05["pcb_lower"])


@pytest.mark.parametrize(
    "text",
    [
        "",
        "# method: DR\n",
        "# method: DR\n# n: x\nt,mu_hat,c_1\n0,1,1\n",
        "# method: DR\n# n: 10\nt,mu_hat,c_1,c_2\n0,1,1,0.5\n1,2,0.4,1\n",
        "# method: DR\n# n: 10\nt,mu_hat,c_1,c_2\n0,1,1,0.5\n",
    ],
)
def test_bands_malformed_exit_2(tmp_path, text):
    f = _write(tmp_path / "est.csv", text)
    assert main(["--out-dir", str(tmp_path), "bands", str(f)]) == 2


def test_simulate_smoke_and_determinism(tmp_path):
    args = ["simulate", "--n", "60", "--reps", "1", "--T", "8", "--calibrate-missingness"]
    assert main(["--out-dir", str(tmp_path / "a"), *args]) == 0
    assert main(["--out-dir", str(tmp_path / "b"), "--threads", "2", *args]) == 0
    for name in ("coverage.csv", "metrics.csv", "manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    with open(tmp_path / "a" / "coverage.csv", newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 3 * 2 * 4  # estimator x band x misspec
    assert {r["misspec"] for r in rows} == {"none", "outcome", "missingness", "both"}
    with open(tmp_path / "a" / "metrics.csv", newline="", encoding="utf-8") as fh:
        header = next(csv.reader(fh))
    assert header == ["t", "n", "error_kind", "scenario", "estimator", "bias",
                      "est_variance", "mc_variance", "mse"]


def test_simulate_failure_rate_exit_4(tmp_path, monkeypatch):
    import fnmiss.simulation as sim
    from fnmiss.exceptions import SingularDesign

    def boom(*a, **k):
        raise SingularDesign("forced")

    monkeypatch.setattr(sim, "fit_ols", boom)
    rc = main(["--out-dir", str(tmp_path), "simulate", "--n", "60", "--reps", "2",
               "--T", "5", "--misspec", "none"])
    assert rc == 4


def test_config_file_and_override(tmp_path):
    cfg = _write(tmp_path / "c.json", json.dumps({"n": [60], "reps": 2, "T": 6,
                                                  "misspec": ["none"], "seed": 5}))
    assert main(["--config", str(cfg), "--out-dir", str(tmp_path / "a"), "simulate"]) == 0
    assert main(["--config", str(cfg), "--out-dir", str(tmp_path / "b"), "simulate",
                 "--reps", "3"]) == 0
    ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
    mb = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert ma["config"]["reps"] == 2 and mb["config"]["reps"] == 3
    assert ma["seed"] == 5


@pytest.mark.parametrize(
    "content",
    ['{"reps": 2, "bogus": 1}', '{"reps": "two"}', "[1, 2]", "{not json", '{"misspec": ["odd"]}'],
)
def test_config_rejected(tmp_path, content):
    cfg = _write(tmp_path / "c.json", content)
    assert main(["--config", str(cfg), "--out-dir", str(tmp_path), "simulate"]) == 2


def test_threads_env_fallback(tmp_path, monkeypatch):
    monkeypatch.setenv("FNMISS_THREADS", "zero")
    assert main(["--out-dir", str(tmp_path), "simulate", "--n", "60", "--reps", "1"]) == 2


def test_export_round_trip(tmp_path):
    out = tmp_path / "exp.csv"
    args = ["--seed", "11", "--out-dir", str(tmp_path), "simulate", "--n", "120", "--reps", "1",
            "--T", "9", "--misspec", "none", "--calibrate-missingness", "--export-dataset", str(out)]
    assert main(args) == 0
    cfg = SimConfig(n=120, T=9, reps=1, seed=11, calibrate_missingness=True)
    mem = replicate_data(cfg, 0).dataset
    ds = read_dataset(out)
    np.testing.assert_array_equal(ds.Z, mem.Z)
    np.testing.assert_array_equal(ds.X, mem.X)
    rec = run_replication(cfg, 0)
    om, pm = fit_ols(ds), fit_logistic(ds)
    for name, est in (("OR", estimate_or(ds, om)), ("DR", estimate_dr(ds, om, pm)),
                      ("CC", estimate_cc(ds))):
        np.testing.assert_allclose(est.mu_hat, rec.estimates[name].mu_hat, rtol=0, atol=1e-12)
        np.testing.assert_allclose(est.C_hat, rec.estimates[name].C_hat, rtol=0, atol=1e-12)


def test_outputs_strict_format(tmp_path):
    main(["--out-dir", str(tmp_path), "estimate", str(FIXTURE)])
    for f in tmp_path.glob("*.csv"):
        raw = f.read_bytes()
        assert b"\r" not in raw
        raw.decode("utf-8")
        for line in raw.decode().splitlines():
            if line.startswith("#"):
                continue
            for field in line.split(","):
                assert ";" not in field
    saved = read_saved_estimate(tmp_path / "dr_estimate.csv")
    assert saved.n == 50 and saved.method == "DR"


def test_help_lists_defaults(capsys):
    with pytest.raises(SystemExit) as info:
        main(["simulate", "--help"])
    assert info.value.code == 0
    out = capsys.readouterr().out
    assert "default 1000" in out and "250,500,1000,3000" in out
