import json

import numpy as np
import pandas as pd
import pytest

from cyboost.archive import load_model, model_from_dict, model_to_dict, save_model
from cyboost.binning import FeatureSpec
from cyboost.cli import main, parse_feature_specs
from cyboost.engine import ADDITIVE, CLASSIFICATION, MULTIPLICATIVE, TrainingConfig, predict, train
from cyboost.errors import ArchiveError, SchemaError
from cyboost.explanation import DIAGNOSTIC_COLUMNS
from cyboost.forecasting import generate_synthetic


def toy(seed=0, n=800):
    rng = np.random.default_rng(seed)
    df = pd.DataFrame({
        "c": rng.choice(list("abcd"), n),
        "x": rng.uniform(0, 10, n),
        "g": rng.integers(0, 2, n),
    })
    df["y"] = rng.poisson(2 + (df["c"] == "a") * 3 + 0.2 * df["x"])
    df["label"] = (rng.uniform(size=n) < 0.3 + 0.4 * (df["c"] == "b")).astype(int)
    return df


SPECS = "c:categorical,x:continuous:8,c*x"


@pytest.mark.parametrize("mode", [MULTIPLICATIVE, ADDITIVE, CLASSIFICATION])
def test_round_trip_bit_exact(tmp_path, mode):
    df = toy()
    y = df["label"] if mode == CLASSIFICATION else df["y"]
    m = train(df, y.to_numpy(float), TrainingConfig(parse_feature_specs(SPECS), mode=mode))
    path = tmp_path / "m.json"
    save_model(m, path)
    back = load_model(path)
    assert back.mu == m.mu
    for a, b in zip(m.tables, back.tables):
        assert np.array_equal(a.link, b.link)
    assert np.array_equal(predict(m, df), predict(back, df))
    assert model_to_dict(back) == model_to_dict(m)


def test_archive_version_mismatch():
    df = toy()
    d = model_to_dict(train(df, df["y"].to_numpy(float), TrainingConfig([FeatureSpec("c")])))
    d["format_version"] = 99
    with pytest.raises(ArchiveError):
        model_from_dict(d)
    with pytest.raises(ArchiveError):
        model_from_dict({"hello": 1})


def test_parse_feature_specs():
    specs = parse_feature_specs("a:categorical, b:continuous:20:quantile\nc:continuous,a*b")
    assert [s.name for s in specs] == ["a", "b", "c", "a*b"]
    assert specs[1].n_bins == 20 and specs[1].strategy == "quantile"
    assert specs[2].n_bins == 100
    with pytest.raises(SchemaError):
        parse_feature_specs("a:weird")


@pytest.fixture
def data(tmp_path):
    df = toy()
    path = tmp_path / "data.csv"
    df.to_csv(path, index=False)
    return path


def test_train_predict_explain_diagnose(tmp_path, data, capsys):
    model = tmp_path / "m.json"
    assert main(["train", "--data", str(data), "--target", "y", "--features", SPECS,
                 "--out", str(model)]) == 0
    preds = tmp_path / "p.csv"
    assert main(["predict", "--model", str(model), "--data", str(data), "--out", str(preds)]) == 0
    p = pd.read_csv(preds)["prediction"].to_numpy()
    expl = tmp_path / "e.jsonl"
    assert main(["explain", "--model", str(model), "--data", str(data), "--out", str(expl)]) == 0
    records = [json.loads(line) for line in expl.read_text().splitlines()]
    assert len(records) == len(p)
    for r, v in zip(records, p):
        assert r["prediction"] == pytest.approx(v, rel=1e-15)
        prod = r["mu"] * np.prod([c["factor"] for c in r["contributions"]])
        assert prod == pytest.approx(v, rel=1e-12)
    diag = tmp_path / "d.csv"
    grid = tmp_path / "g.json"
    assert main(["diagnose", "--model", str(model), "--data", str(data), "--target", "y",
                 "--feature", "c*x", "--out", str(diag), "--grid-out", str(grid)]) == 0
    assert tuple(pd.read_csv(diag).columns) == DIAGNOSTIC_COLUMNS
    assert "marginal_rows" in json.loads(grid.read_text())
    capsys.readouterr()
    assert main(["explain", "--model", str(model), "--data", str(data), "--top-n", "2"]) == 0
    assert "prediction=" in capsys.readouterr().out


def test_cli_is_deterministic(tmp_path, data):
    outs = []
    for k in range(2):
        model = tmp_path / f"m{k}.json"
        main(["train", "--data", str(data), "--target", "y", "--features", SPECS,
              "--seed", "3", "--out", str(model)])
        outs.append(model.read_text())
    assert outs[0] == outs[1]


def test_features_file(tmp_path, data):
    spec_file = tmp_path / "features.txt"
    spec_file.write_text("c:categorical\nx:continuous:5\n")
    assert main(["train", "--data", str(data), "--target", "y", "--features", str(spec_file),
                 "--out", str(tmp_path / "m.json")]) == 0


def test_exit_codes(tmp_path, data, capsys):
    out = str(tmp_path / "m.json")
    base = ["train", "--data", str(data), "--features", SPECS, "--out", out]
    assert main(base + ["--target", "nope"]) == 2
    assert main(base + ["--target", "y", "--mode", "classification"]) == 3
    assert main(["train", "--data", str(tmp_path / "missing.csv"), "--target", "y",
                 "--features", SPECS, "--out", out]) == 4
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["predict", "--model", str(bad), "--data", str(data)]) == 4
    assert main(["train", "--data", str(data), "--target", "y", "--features", "zz:categorical",
                 "--out", out]) == 2
    err = capsys.readouterr().err
    assert "error:" in err


def test_classification_target_row_reported(tmp_path, capsys):
    path = tmp_path / "c.csv"
    path.write_text("c,label\na,1\nb,0\na,5\n")
    code = main(["train", "--data", str(path), "--target", "label", "--mode", "classification",
                 "--features", "c:categorical", "--out", str(tmp_path / "m.json")])
    assert code == 3
    assert "row 2" in capsys.readouterr().err


def test_uplift_command(tmp_path, capsys):
    rng = np.random.default_rng(0)
    n = 4000
    g = rng.integers(0, 2, n)
    df = pd.DataFrame({"s": rng.integers(0, 3, n), "grp": np.where(g == 1, "T", "C")})
    df["y"] = 5 + df["s"] + 2.0 * g + rng.normal(0, 1, n)
    path = tmp_path / "u.csv"
    df.to_csv(path, index=False)
    out = tmp_path / "u.json"
    assert main(["uplift", "--data", str(path), "--target", "y", "--weight-col", "grp",
                 "--treated-label", "T", "--control-label", "C", "--features", "s:categorical",
                 "--out", str(out)]) == 0
    assert load_model(out).mu == pytest.approx(2.0, abs=0.15)
    assert main(["uplift", "--data", str(path), "--target", "y", "--weight-col", "grp",
                 "--treated-label", "T", "--features", "s:categorical", "--out", str(out)]) == 2


@pytest.mark.slow
def test_experiment_command(tmp_path, capsys):
    data = generate_synthetic(n_stores=2, n_items=3, end="2014-06-30", seed=4)
    path = tmp_path / "sales.csv"
    data.records.to_csv(path, index=False)
    code = main(["experiment", "--data", str(path), "--train-end", "2014-03-31",
                 "--test-start", "2014-04-01", "--test-end", "2014-06-30", "--n-bins", "20",
                 "--out-dir", str(tmp_path / "run")])
    assert code == 0
    assert "SMAPE =" in capsys.readouterr().out
    assert (tmp_path / "run" / "report.json").exists()
    assert main(["experiment", "--data", str(path), "--train-end", "2020-01-01",
                 "--test-start", "2020-01-02", "--test-end", "2020-02-01"]) == 3
