"""Store-item daily demand forecasting on date/store/item/sales tables."""

from __future__ import annotations

import datetime as dt
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .binning import CATEGORICAL, CONTINUOUS, FeatureSpec
from .engine import MULTIPLICATIVE, Model, TrainingConfig, predict, train
from .errors import DataError, DomainError, SchemaError, SplitError
from .explanation import diagnose_feature

EPOCH = pd.Timestamp("2013-01-01")
CSV_COLUMNS = ("date", "store", "item", "sales")


@dataclass(frozen=True)
class SplitConfig:
    train_end: dt.date
    test_start: dt.date
    test_end: dt.date

    def __post_init__(self):
        for name in ("train_end", "test_start", "test_end"):
            object.__setattr__(self, name, pd.Timestamp(getattr(self, name)).date())
        if not self.train_end < self.test_start <= self.test_end:
            raise SplitError("need train_end < test_start <= test_end")

    def to_dict(self) -> dict:
        return {k: str(getattr(self, k)) for k in ("train_end", "test_start", "test_end")}


BENCHMARK_SPLIT = SplitConfig(dt.date(2016, 12, 31), dt.date(2017, 1, 1), dt.date(2017, 3, 31))
ALTERNATE_SPLIT = SplitConfig(dt.date(2015, 12, 31), dt.date(2016, 1, 1), dt.date(2016, 3, 31))


def parse_dates(values) -> pd.Series:
    dates = pd.to_datetime(pd.Series(values), format="%Y-%m-%d", errors="coerce")
    bad = dates.isna().to_numpy()
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise DataError(f"row {row}: unparseable date {list(values)[row]!r}")
    return dates


def engineer_features(records: pd.DataFrame) -> pd.DataFrame:
    """Calendar features derived from each record's date, plus store and item."""
    dates = parse_dates(records["date"].to_numpy())
    out = pd.DataFrame({
        "store": records["store"].astype(str).to_numpy(),
        "item": records["item"].astype(str).to_numpy(),
        "td": (dates - EPOCH).dt.days.to_numpy().astype(float),
        "dow": dates.dt.dayofweek.to_numpy(),
        "doy": dates.dt.dayofyear.to_numpy().astype(float),
        "month": dates.dt.month.to_numpy(),
        "wom": ((dates.dt.day.to_numpy() - 1) // 7 + 1),
    })
    return out


def default_features(n_bins: int = 100) -> list[FeatureSpec]:
    singles = [
        FeatureSpec("store", CATEGORICAL),
        FeatureSpec("item", CATEGORICAL),
        FeatureSpec("td", CONTINUOUS, n_bins=n_bins),
        FeatureSpec("dow", CATEGORICAL),
        FeatureSpec("doy", CONTINUOUS, n_bins=n_bins),
        FeatureSpec("month", CATEGORICAL),
        FeatureSpec("wom", CATEGORICAL),
    ]
    pairs = [("item", "dow"), ("item", "month"), ("store", "td"), ("item", "td"), ("store", "item")]
    return singles + [FeatureSpec.composed(a, b) for a, b in pairs]


def default_config(n_bins: int = 100, **kwargs) -> TrainingConfig:
    return TrainingConfig(features=default_features(n_bins), mode=MULTIPLICATIVE, **kwargs)


def smape(y, y_hat) -> float:
    """Symmetric MAPE in percent; terms with y == y_hat == 0 count as 0."""
    y, y_hat = np.asarray(y, dtype=float), np.asarray(y_hat, dtype=float)
    if len(y) == 0 or len(y) != len(y_hat):
        raise DomainError("smape needs equal, nonempty inputs")
    denom = np.abs(y) + np.abs(y_hat)
    num = 2.0 * np.abs(y_hat - y)
    terms = np.divide(num, denom, out=np.zeros_like(num), where=denom > 0)
    return float(100.0 * terms.mean())


@dataclass
class SyntheticData:
    records: pd.DataFrame
    expected: np.ndarray
    mu: float
    factors: dict


def _norm(f: np.ndarray) -> np.ndarray:
    return f / f.mean()


def generate_synthetic(n_stores=10, n_items=20, start="2013-01-01", end="2015-09-27",
                       seed=0, mu=20.0, seasonality=0.3, trend=0.2,
                       factor_range=(0.6, 1.7)) -> SyntheticData:
    """Poisson sales with known multiplicative structure.

    ``sales ~ Poisson(mu * f_store * f_item * f_dow * f_doy(doy) * f_trend(td))``.
    Categorical factors are drawn log-uniformly in ``factor_range`` and
    rescaled to mean 1; ``seasonality`` and ``trend`` are log-amplitudes of a
    yearly sinusoid and of a linear drift across the date range.
    """
    rng = np.random.default_rng(seed)
    lo, hi = np.log(factor_range[0]), np.log(factor_range[1])
    f_store = _norm(np.exp(rng.uniform(lo, hi, n_stores)))
    f_item = _norm(np.exp(rng.uniform(lo, hi, n_items)))
    f_dow = _norm(np.exp(rng.uniform(lo, hi, 7)))

    dates = pd.date_range(start, end, freq="D")
    n_days = len(dates)
    grid_date = np.repeat(np.arange(n_days), n_stores * n_items)
    grid_store = np.tile(np.repeat(np.arange(n_stores), n_items), n_days)
    grid_item = np.tile(np.arange(n_items), n_days * n_stores)
    d = dates[grid_date]
    doy = d.dayofyear.to_numpy()
    td = (d - EPOCH).days.to_numpy()
    span = max(td.max() - td.min(), 1)
    f_doy = np.exp(seasonality * np.sin(2 * np.pi * (doy - 1) / 365.25))
    f_trend = np.exp(trend * ((td - td.min()) / span - 0.5))
    expected = (mu * f_store[grid_store] * f_item[grid_item]
                * f_dow[d.dayofweek.to_numpy()] * f_doy * f_trend)
    sales = rng.poisson(expected)
    records = pd.DataFrame({
        "date": d.strftime("%Y-%m-%d"),
        "store": grid_store + 1,
        "item": grid_item + 1,
        "sales": sales,
    })
    factors = {
        "store": {str(i + 1): float(v) for i, v in enumerate(f_store)},
        "item": {str(i + 1): float(v) for i, v in enumerate(f_item)},
        "dow": {str(i): float(v) for i, v in enumerate(f_dow)},
        "seasonality": seasonality,
        "trend": trend,
    }
    return SyntheticData(records, expected, mu, factors)


def read_sales_csv(path) -> pd.DataFrame:
    df = pd.read_csv(path, dtype={"store": str, "item": str})
    missing = [c for c in CSV_COLUMNS if c not in df.columns]
    if missing:
        raise SchemaError(f"{path}: missing column(s) {', '.join(missing)}")
    if df["sales"].isna().any() or (df["sales"] < 0).any():
        row = int(np.flatnonzero(df["sales"].isna() | (df["sales"] < 0))[0])
        raise DataError(f"row {row}: sales must be a nonnegative number")
    return df


def config_hash(cfg: TrainingConfig, split: SplitConfig) -> str:
    blob = json.dumps({"config": cfg.to_dict(), "split": split.to_dict()}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def split_frame(records: pd.DataFrame, split: SplitConfig):
    dates = parse_dates(records["date"].to_numpy()).dt.date.to_numpy()
    train_mask = dates <= split.train_end
    test_mask = (dates >= split.test_start) & (dates <= split.test_end)
    if not train_mask.any() or not test_mask.any():
        raise SplitError(
            f"empty partition: {train_mask.sum()} training and {test_mask.sum()} test rows"
        )
    return records[train_mask].reset_index(drop=True), records[test_mask].reset_index(drop=True)


@dataclass
class ExperimentResult:
    smape_pct: float
    n_test: int
    split: SplitConfig
    config_hash: str
    per_item: pd.DataFrame
    model: Model
    predictions: np.ndarray

    def report(self) -> dict:
        return {
            "smape_pct": self.smape_pct,
            "n_test": self.n_test,
            "split": self.split.to_dict(),
            "config_hash": self.config_hash,
        }


def evaluate(records: pd.DataFrame, split: SplitConfig, cfg: TrainingConfig) -> ExperimentResult:
    """Train on the training window only, then score the test window."""
    train_df, test_df = split_frame(records, split)
    X_train = engineer_features(train_df)
    model = train(X_train, train_df["sales"].to_numpy(dtype=float), cfg)
    X_test = engineer_features(test_df)
    y_test = test_df["sales"].to_numpy(dtype=float)
    y_hat = predict(model, X_test)
    per_item = (
        pd.DataFrame({"item": X_test["item"], "y": y_test, "y_hat": y_hat})
        .groupby("item", sort=False)
        .apply(lambda g: pd.Series({"n": len(g), "smape_pct": smape(g["y"], g["y_hat"])}),
               include_groups=False)
        .reset_index()
    )
    per_item["n"] = per_item["n"].astype(int)
    return ExperimentResult(
        smape_pct=smape(y_test, y_hat),
        n_test=len(y_test),
        split=split,
        config_hash=config_hash(cfg, split),
        per_item=per_item,
        model=model,
        predictions=y_hat,
    )


def run_experiment(csv_path, split: SplitConfig, cfg: TrainingConfig | None = None,
                   out_dir=None) -> dict:
    """Full harness run from a ``date,store,item,sales`` CSV file.

    When ``out_dir`` is given it receives ``report.json``, ``per_item_smape.csv``,
    ``diagnostics.json`` and the serialized model ``model.json``.
    """
    from .archive import save_model

    cfg = cfg or default_config()
    records = read_sales_csv(csv_path)
    result = evaluate(records, split, cfg)
    report = result.report()
    train_df, _ = split_frame(records, split)
    X_train = engineer_features(train_df)
    y_train = train_df["sales"].to_numpy(dtype=float)
    diagnostics = {
        s.name: [dict(r) for r in diagnose_feature(result.model, X_train, y_train, s.name).rows]
        for s in result.model.features if not s.is_composed
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        model_path = out / "model.json"
        save_model(result.model, model_path)
        result.per_item.to_csv(out / "per_item_smape.csv", index=False)
        (out / "diagnostics.json").write_text(json.dumps(diagnostics, indent=1))
        report["model_path"] = str(model_path)
        (out / "report.json").write_text(json.dumps(report, indent=2))
    report["per_item"] = result.per_item
    report["diagnostics"] = diagnostics
    return report
