"""Acceptance suite: one test per criterion, each reported as PASS/FAIL/SKIP.

Criterion 8 needs the store-item demand training file, which is not
redistributed; point ``CYBOOST_SALES_CSV`` at it to run that check.
"""

import os
import time

import numpy as np
import pandas as pd
import pytest

from cyboost import smoothing as sm
from cyboost.archive import load_model, save_model
from cyboost.binning import FeatureSpec
from cyboost.conjugate import PriorConfig, aggregate_gamma, gamma_point_estimate
from cyboost.engine import (
    ADDITIVE,
    CLASSIFICATION,
    MULTIPLICATIVE,
    TrainingConfig,
    _Trainer,
    predict,
    train,
)
from cyboost.explanation import explain_rows
from cyboost.forecasting import (
    ALTERNATE_SPLIT,
    BENCHMARK_SPLIT,
    SplitConfig,
    default_config,
    evaluate,
    generate_synthetic,
    read_sales_csv,
    smape,
)
from cyboost.uplift import train_uplift

from test_smoothing import best_rank_oracle

OFF = sm.SmootherConfig.off()


@pytest.mark.criterion(1, "hand oracle: alpha=6, beta=5.67834, g=1.05665 per bin (1e-9, < 1 s)")
def test_hand_oracle():
    start = time.perf_counter()
    X = {"x": np.array(["a", "a", "b", "b"])}
    y = np.array([1.0, 3.0, 2.0, 2.0])
    post = aggregate_gamma(y, np.full(4, 2.0), np.ones(4), np.array([0, 0, 1, 1]), 2)
    np.testing.assert_allclose(post.alpha[:2], 6.0, atol=1e-9)
    np.testing.assert_allclose(post.beta[:2], 5.67834, atol=1e-9)
    g = gamma_point_estimate(post)[:2]
    np.testing.assert_allclose(g, 6.0 / 5.67834, atol=1e-9)
    m = train(X, y, TrainingConfig([FeatureSpec("x")], max_cycles=1, smoothing=OFF))
    assert m.mu == 2.0
    np.testing.assert_allclose(m.tables[0].values[:2], 6.0 / 5.67834, atol=1e-9)
    assert abs(g[0] - 1.05665) < 5e-6
    assert time.perf_counter() - start < 1.0


@pytest.mark.criterion(2, "factor recovery within 5% per bin, holdout SMAPE within 1pp of floor (< 60 s)")
def test_factor_recovery():
    start = time.perf_counter()
    data = generate_synthetic(n_stores=10, n_items=20, start="2013-01-01", end="2015-09-27",
                              seed=11, seasonality=0.0, trend=0.0, factor_range=(0.5, 2.0))
    rec = data.records
    assert len(rec) == 200_000
    X = {
        "store": rec["store"].astype(str).to_numpy(),
        "item": rec["item"].astype(str).to_numpy(),
        "dow": pd.to_datetime(rec["date"]).dt.dayofweek.astype(str).to_numpy(),
    }
    y = rec["sales"].to_numpy(float)
    holdout = np.random.default_rng(0).uniform(size=len(y)) < 0.2
    fit = ~holdout
    cfg = TrainingConfig([FeatureSpec("store"), FeatureSpec("item"), FeatureSpec("dow")])
    m = train({k: v[fit] for k, v in X.items()}, y[fit], cfg)

    for name in ("store", "item", "dow"):
        t = m.table(name)
        truth = data.factors[name]
        counts = t.count[:-1]
        learned = t.values[:-1]
        # Factors are identified up to a shared scale; truth has mean 1 over
        # levels in a balanced design, so compare after the same normalization.
        learned = learned / learned.mean()
        expected = np.array([truth[lbl] for lbl in t.labels[:-1]])
        ok = counts >= 500
        assert ok.all()
        rel = np.abs(learned[ok] / expected[ok] - 1)
        assert rel.max() < 0.05, (name, rel.max())

    got = smape(y[holdout], predict(m, {k: v[holdout] for k, v in X.items()}))
    floor = smape(y[holdout], data.expected[holdout])
    assert abs(got - floor) < 1.0, (got, floor)
    assert time.perf_counter() - start < 60.0


def _rebalance_data(seed, n=5000):
    rng = np.random.default_rng(seed)
    X = {"c": rng.integers(0, 7, n), "x": rng.gamma(2.0, 2.0, n), "d": rng.choice(list("pqrs"), n)}
    lam = 3 * (1 + 0.2 * X["c"]) * np.exp(-0.1 * X["x"]) * np.where(X["d"] == "q", 1.6, 1.0)
    return X, rng.poisson(lam).astype(float), rng.uniform(0.2, 3.0, n)


@pytest.mark.criterion(3, "rebalancing: per-bin sum y / sum y_hat = 1 within 1e-9 after each update")
def test_rebalancing_invariant():
    eps = PriorConfig(gamma_alpha_prior=1e-12, gamma_beta_prior=1e-12)
    for seed in (101, 202, 303):
        X, y, w = _rebalance_data(seed)
        specs = [FeatureSpec("c"), FeatureSpec("x", "continuous", n_bins=12, strategy="quantile"),
                 FeatureSpec("d"), FeatureSpec.composed("c", "d")]
        cfg = TrainingConfig(specs, max_cycles=4, learning_rate_start=1.0, smoothing=OFF,
                             priors=eps, stop_rel_tol=0.0)
        bins = {}
        worst = []

        def check(cycle, feature, y_hat):
            b = bins[feature]
            sy = np.bincount(b, weights=w * y)
            sp = np.bincount(b, weights=w * y_hat)
            seen = sp > 0
            worst.append(np.max(np.abs(sy[seen] / sp[seen] - 1)))

        tr = _Trainer(X, y, w, cfg, on_update=check)
        bins.update({s.name: b for s, b in zip(tr.specs, tr.bins)})
        tr.run()
        assert len(worst) == 4 * len(specs)
        assert max(worst) < 1e-9, max(worst)


def _mode_model(mode, seed):
    rng = np.random.default_rng(seed)
    n = 20_000
    X = {"c": rng.integers(0, 8, n), "x": rng.normal(0, 2, n), "d": rng.choice(list("abcde"), n)}
    if mode == MULTIPLICATIVE:
        y = rng.poisson(np.exp(0.5 + 0.1 * X["c"] + 0.2 * np.tanh(X["x"]))).astype(float)
    elif mode == ADDITIVE:
        y = X["c"] + np.sin(X["x"]) + rng.normal(0, 1, n)
    else:
        y = (rng.uniform(size=n) < 1 / (1 + np.exp(-(0.3 * X["c"] - 1 + X["x"] / 3)))).astype(float)
    specs = [FeatureSpec("c"), FeatureSpec("x", "continuous", n_bins=20), FeatureSpec("d"),
             FeatureSpec.composed("c", "x")]
    return train(X, y, TrainingConfig(specs, mode=mode))


def _random_rows(seed, n):
    rng = np.random.default_rng(seed)
    return {"c": rng.integers(-2, 10, n), "x": rng.normal(0, 3, n),
            "d": rng.choice(list("abcdefg"), n)}


@pytest.mark.criterion(4, "explanation recombination equals predict within 1e-12, all modes, 1e4 rows")
def test_explanation_consistency():
    rows = _random_rows(7, 10_000)
    for mode in (MULTIPLICATIVE, ADDITIVE, CLASSIFICATION):
        m = _mode_model(mode, 3)
        preds = predict(m, rows)
        recombined = np.array([r.recombine() for r in explain_rows(m, rows)])
        if mode == ADDITIVE:
            err = np.abs(recombined - preds) / np.maximum(np.abs(preds), 1e-300)
        else:
            err = np.abs(recombined / preds - 1)
        assert err.max() <= 1e-12, (mode, err.max())


@pytest.mark.criterion(5, "classification: decile calibration <= 0.05, log-loss below baseline, p in (0,1)")
def test_classification_calibration():
    rng = np.random.default_rng(5)
    n = 100_000
    X = {"c": rng.integers(0, 10, n), "x": rng.uniform(-3, 3, n), "d": rng.choice(list("abc"), n)}
    logit = -0.5 + 0.25 * (X["c"] - 4.5) + 0.8 * np.sin(X["x"]) + np.where(X["d"] == "a", 0.7, 0.0)
    y = (rng.uniform(size=n) < 1 / (1 + np.exp(-logit))).astype(float)
    specs = [FeatureSpec("c"), FeatureSpec("x", "continuous", n_bins=30), FeatureSpec("d")]
    m = train(X, y, TrainingConfig(specs, mode=CLASSIFICATION, max_cycles=30))
    p = predict(m, X)
    assert np.all((p > 0) & (p < 1))
    order = np.argsort(p, kind="stable")
    for dec in np.array_split(order, 10):
        assert abs(p[dec].mean() - y[dec].mean()) <= 0.05
    base = y.mean()
    ll = -np.mean(y * np.log(p) + (1 - y) * np.log(1 - p))
    ll0 = -np.mean(y * np.log(base) + (1 - y) * np.log(1 - base))
    assert ll < ll0


@pytest.mark.criterion(6, "uplift: mean effect 3.0 +- 0.2, per-bin within 10%, +1 weights equal additive")
def test_uplift_recovery():
    rng = np.random.default_rng(6)
    n = 100_000
    X = {"s": rng.integers(0, 5, n), "x": rng.uniform(0, 1, n)}
    treated = rng.uniform(size=n) < 0.5
    ramp = 3.0 + 0.5 * (X["s"] - 2)  # average effect 3.0 over the balanced bins
    y = 20 + 3 * X["s"] - 5 * X["x"] + treated * ramp + rng.normal(0, 2, n)
    w = np.where(treated, 1.0, -1.0)
    specs = [FeatureSpec("s"), FeatureSpec("x", "continuous", n_bins=10)]
    cfg = TrainingConfig(specs, mode=ADDITIVE)
    m = train_uplift(X, y, w, cfg)
    eff = predict(m, X)
    assert abs(eff.mean() - 3.0) <= 0.2
    for s in range(5):
        sel = X["s"] == s
        assert sel.sum() >= 5000
        truth = 3.0 + 0.5 * (s - 2)
        assert abs(eff[sel].mean() / truth - 1) <= 0.10, (s, eff[sel].mean(), truth)

    ones = np.ones(n)
    with pytest.warns(UserWarning):
        a = train_uplift(X, y, ones, cfg)
    b = train(X, y, cfg, sample_weight=ones)
    assert a.mu == b.mu
    assert all(np.array_equal(ta.link, tb.link) for ta, tb in zip(a.tables, b.tables))


@pytest.mark.criterion(7, "halving/doubling continuous bins changes synthetic SMAPE by < 0.1pp")
def test_bin_count_robustness():
    data = generate_synthetic(seed=0)
    split = SplitConfig("2015-03-31", "2015-04-01", "2015-06-30")
    scores = {nb: evaluate(data.records, split, default_config(n_bins=nb)).smape_pct
              for nb in (50, 100, 200)}
    assert abs(scores[50] - scores[100]) < 0.1, scores
    assert abs(scores[200] - scores[100]) < 0.1, scores


SALES_CSV = os.environ.get("CYBOOST_SALES_CSV")


@pytest.mark.criterion(8, "store-item demand data: SMAPE <= 14.0% (benchmark split), <= 14.4% (alternate)")
@pytest.mark.skipif(not SALES_CSV or not os.path.exists(SALES_CSV),
                    reason="set CYBOOST_SALES_CSV to the store-item demand training file")
def test_headline_numbers():
    records = read_sales_csv(SALES_CSV)
    start = time.perf_counter()
    benchmark = evaluate(records, BENCHMARK_SPLIT, default_config()).smape_pct
    print(f"benchmark split SMAPE = {benchmark:.4f}% in {time.perf_counter() - start:.0f} s")
    alternate = evaluate(records, ALTERNATE_SPLIT, default_config()).smape_pct
    print(f"alternate split SMAPE = {alternate:.4f}%")
    assert benchmark <= 14.0
    assert alternate <= 14.4


@pytest.mark.criterion(9, "save/load round-trip gives bit-identical predictions on 1e4 rows")
def test_persistence(tmp_path):
    rows = _random_rows(9, 10_000)
    for mode in (MULTIPLICATIVE, ADDITIVE, CLASSIFICATION):
        m = _mode_model(mode, 4)
        path = tmp_path / f"{mode}.json"
        save_model(m, path)
        assert np.array_equal(predict(m, rows), predict(load_model(path), rows))


@pytest.mark.criterion(10, "SVD smoother vs eigen-solver (1e-8), exact polynomials reproduced (1e-9)")
def test_smoothing_oracles():
    for seed in range(20):
        g = np.random.default_rng(seed).normal(size=(6, 5))
        got = sm.smooth_two_dim_svd(g, sm.SmootherConfig(svd_rank=2))
        assert np.linalg.norm(got - best_rank_oracle(g, 2)) < 1e-8
    rng = np.random.default_rng(10)
    x = np.linspace(-5, 15, 40)
    for degree in range(4):
        coef = rng.normal(size=degree + 1)
        v = np.polynomial.polynomial.polyval(x / 10, coef)
        out = sm.smooth_continuous(x, v, np.full(40, 1e-6), sm.SmootherConfig(max_degree=3))
        assert np.max(np.abs(out - v)) < 1e-9
