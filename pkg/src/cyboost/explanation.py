"""Per-prediction factor breakdowns and per-feature training diagnostics."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterator, Mapping

import numpy as np

from .binning import ComposedBinning
from .engine import (
    ADDITIVE,
    CLASSIFICATION,
    Model,
    compose_link,
    feature_bins,
    inverse_link,
    link_contributions,
    predict,
)
from .errors import SchemaError

RECORD_VERSION = 1
DIAGNOSTIC_COLUMNS = ("bin", "count", "y_norm", "yhat_norm", "factor_smoothed")


@dataclass
class Contribution:
    feature: str
    bin: str
    factor: float
    link_value: float


@dataclass
class ExplanationRecord:
    prediction: float
    mu: float
    mode: str
    contributions: list[Contribution]

    def recombine(self) -> float:
        """Compose mu with the contributions under the mode's law."""
        if self.mode == ADDITIVE:
            return self.mu + sum(c.factor for c in self.contributions)
        value = self.mu
        for c in self.contributions:
            value *= c.factor
        if self.mode == CLASSIFICATION:
            return value / (1.0 + value)
        return value

    def top(self, n: int) -> list[Contribution]:
        return sorted(self.contributions, key=lambda c: -abs(c.link_value))[:n]

    def to_dict(self) -> dict:
        return {
            "version": RECORD_VERSION,
            "prediction": self.prediction,
            "mu": self.mu,
            "mode": self.mode,
            "contributions": [c.__dict__ for c in self.contributions],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def explain_rows(model: Model, data: Mapping) -> Iterator[ExplanationRecord]:
    """Explanation records for every row of ``data``, using predict's code path."""
    bins, contrib = link_contributions(model, data)
    preds = inverse_link(model.mode, compose_link(model, contrib))
    labels = [t.labels for t in model.tables]
    for i in range(contrib.shape[0]):
        contributions = []
        for j, table in enumerate(model.tables):
            k = int(bins[j][i])
            link = float(contrib[i, j])
            factor = link if model.mode == ADDITIVE else float(np.exp(link))
            contributions.append(Contribution(table.feature, labels[j][k], factor, link))
        yield ExplanationRecord(float(preds[i]), model.mu, model.mode, contributions)


def explain(model: Model, row: Mapping) -> ExplanationRecord:
    """Explanation of a single row given as ``{column: value}``."""
    data = {k: np.asarray([v], dtype=object if isinstance(v, str) else None)
            for k, v in row.items()}
    return next(explain_rows(model, data))


def render_table(record: ExplanationRecord, top_n: int = 5) -> str:
    lines = [f"prediction={record.prediction:.6g}  mu={record.mu:.6g}  ({record.mode})"]
    for c in record.top(top_n):
        lines.append(f"  {c.feature:<20} {c.bin:<28} {c.factor:>10.4f}")
    return "\n".join(lines)


@dataclass
class FeatureDiagnostics:
    feature: str
    rows: list[dict]
    grid: dict | None = field(default=None)

    def to_csv(self) -> str:
        out = [",".join(DIAGNOSTIC_COLUMNS)]
        for r in self.rows:
            vals = [r[c] for c in DIAGNOSTIC_COLUMNS]
            out.append(",".join(_csv_cell(v) for v in vals))
        return "\n".join(out) + "\n"


def _csv_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, str):
        return '"' + v.replace('"', '""') + '"' if ("," in v or '"' in v) else v
    return repr(v)


def _nullable(a: np.ndarray, empty: np.ndarray) -> list:
    return [None if e else float(x) for x, e in zip(a, empty)]


def diagnose_feature(model: Model, data: Mapping, target, feature: str) -> FeatureDiagnostics:
    """Per-bin mean truth and mean prediction, each divided by the global mean.

    For two-dimensional composed features the dense grid of every quantity
    is attached together with the count-weighted marginals of the smoothed
    factor along both axes.
    """
    try:
        j = [s.name for s in model.features].index(feature)
    except ValueError:
        raise SchemaError(f"unknown feature {feature!r}") from None
    spec = model.features[j]
    table = model.tables[j]
    y = np.asarray(target, dtype=float)
    y_hat = predict(model, data)
    bins = feature_bins(spec, model.binnings, data)
    n = len(table.link)
    count = np.bincount(bins, minlength=n)[:n]
    sy = np.bincount(bins, weights=y, minlength=n)[:n]
    sp = np.bincount(bins, weights=y_hat, minlength=n)[:n]
    global_mean = float(np.mean(y))
    safe = np.where(count > 0, count, 1)
    y_norm = sy / safe / global_mean
    yhat_norm = sp / safe / global_mean
    factors = table.values
    empty = count == 0

    rows = []
    for k in range(n):
        rows.append({
            "bin": table.labels[k],
            "count": int(count[k]),
            "y_norm": None if empty[k] else float(y_norm[k]),
            "yhat_norm": None if empty[k] else float(yhat_norm[k]),
            "factor_smoothed": float(factors[k]),
            "empty": bool(empty[k]),
        })

    grid = None
    defn = model.binnings[feature]
    if isinstance(defn, ComposedBinning) and len(defn.shape) == 2:
        shape = defn.shape
        m = n - 1
        c2 = count[:m].reshape(shape).astype(float)
        f2 = factors[:m].reshape(shape)
        e2 = empty[:m].reshape(shape)

        def marginal(axis):
            w = c2.sum(axis=axis)
            num = (c2 * f2).sum(axis=axis)
            return [None if wi == 0 else float(v / wi) for v, wi in zip(num, w)]

        grid = {
            "axes": list(defn.names),
            "axis_labels": [p.labels()[:-1] for p in defn.parts],
            "count": c2.astype(int).tolist(),
            "y_norm": [_nullable(r, e) for r, e in zip(y_norm[:m].reshape(shape), e2)],
            "yhat_norm": [_nullable(r, e) for r, e in zip(yhat_norm[:m].reshape(shape), e2)],
            "factor_smoothed": f2.tolist(),
            "marginal_rows": marginal(1),
            "marginal_columns": marginal(0),
        }
    return FeatureDiagnostics(feature, rows, grid)
