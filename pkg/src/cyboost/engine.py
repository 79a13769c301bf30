"""Cyclic coordinate-descent training and prediction.

A model predicts ``mu * prod(f)`` (multiplicative), ``mu + sum(f)``
(additive) or odds ``mu * prod(f)`` (classification), with one factor or
summand per feature chosen by the bin the row falls into.  Internally every
factor is kept in link space: ``ln f`` for the multiplicative and
classification modes, the summand itself for the additive mode.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.special import expit

from . import conjugate as cj
from . import smoothing as sm
from .binning import (
    CATEGORICAL,
    CONTINUOUS,
    ComposedBinning,
    FeatureSpec,
    apply_binning,
    fit_binning,
    fit_composed,
    validate_specs,
)
from .errors import DataError, DegenerateTargetError, DomainError, ModeError, SchemaError

log = logging.getLogger(__name__)

MULTIPLICATIVE = "multiplicative"
ADDITIVE = "additive"
CLASSIFICATION = "classification"
MODES = (MULTIPLICATIVE, ADDITIVE, CLASSIFICATION)

LINEAR = "linear"
LOGISTIC = "logistic"
MAD = "MAD"
MSE = "MSE"

FORMAT_VERSION = 1

# Log-odds are clipped here so that probabilities stay strictly inside (0, 1).
MAX_LOG_ODDS = 35.0


@dataclass
class TrainingConfig:
    features: Sequence[FeatureSpec]
    mode: str = MULTIPLICATIVE
    max_cycles: int = 10
    learning_rate_start: float = 0.1
    learning_rate_shape: str = LINEAR
    stop_metric: str = MAD
    stop_rel_tol: float = 1e-4
    priors: cj.PriorConfig = field(default_factory=cj.PriorConfig)
    smoothing: sm.SmootherConfig | Mapping[str, sm.SmootherConfig] | None = None
    boost_classification_weights: bool = True
    seed: int = 0

    def __post_init__(self):
        self.features = list(self.features)
        if self.mode not in MODES:
            raise ModeError(f"unknown mode {self.mode!r}")
        if not self.features:
            raise SchemaError("at least one feature is required")
        validate_specs(self.features)
        if self.max_cycles < 0:
            raise DomainError("max_cycles must be >= 0")
        if not 0 < self.learning_rate_start <= 1:
            raise DomainError("learning_rate_start must lie in (0, 1]")
        if self.learning_rate_shape not in (LINEAR, LOGISTIC):
            raise DomainError(f"unknown learning-rate shape {self.learning_rate_shape!r}")
        if self.stop_metric not in (MAD, MSE):
            raise DomainError(f"unknown stop metric {self.stop_metric!r}")

    def smoother_for(self, name: str) -> sm.SmootherConfig:
        if self.smoothing is None:
            return sm.SmootherConfig()
        if isinstance(self.smoothing, sm.SmootherConfig):
            return self.smoothing
        return self.smoothing.get(name, self.smoothing.get("*", sm.SmootherConfig()))

    def to_dict(self) -> dict:
        if isinstance(self.smoothing, sm.SmootherConfig):
            smoothing = {"*": self.smoothing.to_dict()}
        else:
            smoothing = {k: v.to_dict() for k, v in (self.smoothing or {}).items()}
        return {
            "mode": self.mode,
            "features": [f.to_dict() for f in self.features],
            "max_cycles": self.max_cycles,
            "learning_rate_start": self.learning_rate_start,
            "learning_rate_shape": self.learning_rate_shape,
            "stop_metric": self.stop_metric,
            "stop_rel_tol": self.stop_rel_tol,
            "priors": dict(self.priors.__dict__),
            "smoothing": smoothing,
            "boost_classification_weights": self.boost_classification_weights,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingConfig":
        d = dict(d)
        d["features"] = [FeatureSpec.from_dict(f) for f in d["features"]]
        d["priors"] = cj.PriorConfig(**d["priors"])
        d["smoothing"] = {k: sm.SmootherConfig(**v) for k, v in d["smoothing"].items()}
        return cls(**d)


@dataclass
class FactorTable:
    feature: str
    mode: str
    link: np.ndarray
    sigma: np.ndarray
    count: np.ndarray
    labels: list[str]

    @property
    def values(self) -> np.ndarray:
        """Response-space factors (or summands in additive mode)."""
        return self.link.copy() if self.mode == ADDITIVE else np.exp(self.link)

    @property
    def reserved(self) -> int:
        return len(self.link) - 1


@dataclass
class Model:
    mode: str
    mu: float
    features: list[FeatureSpec]
    binnings: dict
    tables: list[FactorTable]
    history: list[dict]
    config: dict
    best_cycle: int = 0
    format_version: int = FORMAT_VERSION

    @property
    def link_offset(self) -> float:
        return self.mu if self.mode == ADDITIVE else float(np.log(self.mu))

    def table(self, name: str) -> FactorTable:
        for t in self.tables:
            if t.feature == name:
                return t
        raise SchemaError(f"unknown feature {name!r}")

    def spec(self, name: str) -> FeatureSpec:
        for s in self.features:
            if s.name == name:
                return s
        raise SchemaError(f"unknown feature {name!r}")


def learning_rate(t: int, T: int, eta0: float = 0.1, shape: str = LINEAR) -> float:
    """Learning rate of cycle ``t`` (1-based); ramps from ``eta0`` to exactly 1."""
    if not 1 <= t <= T:
        raise DomainError(f"cycle {t} outside 1..{T}")
    if T == 1 or t == T:
        return 1.0
    if shape == LINEAR:
        s = (t - 1) / (T - 1)
    elif shape == LOGISTIC:
        k = 8.0 / T

        def raw(x):
            return 1.0 / (1.0 + np.exp(-k * (x - T / 2)))

        s = (raw(t) - raw(1)) / (raw(T) - raw(1))
    else:
        raise DomainError(f"unknown learning-rate shape {shape!r}")
    return float(eta0 + (1.0 - eta0) * s)


def convergence_metric(y, y_hat, kind: str = MAD, weights=None) -> float:
    y, y_hat = np.asarray(y, dtype=float), np.asarray(y_hat, dtype=float)
    if len(y) == 0:
        raise DomainError("metric of an empty sample")
    if len(y) != len(y_hat):
        raise DomainError("y and y_hat differ in length")
    d = y - y_hat
    terms = np.abs(d) if kind == MAD else d * d
    if kind not in (MAD, MSE):
        raise DomainError(f"unknown metric {kind!r}")
    return float(np.average(terms, weights=None if weights is None else np.abs(weights)))


def column(data: Mapping, name: str):
    try:
        return np.asarray(data[name])
    except (KeyError, IndexError):
        raise SchemaError(f"missing feature column {name!r}") from None


def feature_bins(spec: FeatureSpec, binnings: dict, data: Mapping) -> np.ndarray:
    defn = binnings[spec.name]
    if isinstance(defn, ComposedBinning):
        return apply_binning(defn, [column(data, c) for c in spec.components])
    return apply_binning(defn, column(data, spec.name))


def inverse_link(mode: str, link):
    link = np.asarray(link, dtype=float)
    if mode == ADDITIVE:
        return link
    if mode == MULTIPLICATIVE:
        return np.exp(link)
    return expit(np.clip(link, -MAX_LOG_ODDS, MAX_LOG_ODDS))


def link_contributions(model: Model, data: Mapping) -> tuple[list[np.ndarray], np.ndarray]:
    """Bin indices and link-space contributions (rows x features)."""
    bins = [feature_bins(s, model.binnings, data) for s in model.features]
    n = len(bins[0]) if bins else 0
    contrib = np.empty((n, len(bins)))
    for j, (b, table) in enumerate(zip(bins, model.tables)):
        contrib[:, j] = table.link[b]
    return bins, contrib


def compose_link(model: Model, contrib: np.ndarray) -> np.ndarray:
    total = np.full(contrib.shape[0], model.link_offset)
    for j in range(contrib.shape[1]):
        total += contrib[:, j]
    return total


def predict(model: Model, data: Mapping) -> np.ndarray:
    """Predictions (probabilities in classification mode) for raw rows."""
    _, contrib = link_contributions(model, data)
    return inverse_link(model.mode, compose_link(model, contrib))


# --------------------------------------------------------------------------
# training


def _check_target(mode, y, w, signed):
    if not np.all(np.isfinite(y)):
        raise DataError(f"non-finite target at row {int(np.flatnonzero(~np.isfinite(y))[0])}")
    if not np.all(np.isfinite(w)):
        raise DataError("non-finite sample weight")
    if not signed and np.any(w < 0):
        row = int(np.flatnonzero(w < 0)[0])
        raise ModeError(f"negative sample weight at row {row}; use uplift training")
    if mode == MULTIPLICATIVE and np.any(y < 0):
        row = int(np.flatnonzero(y < 0)[0])
        raise ModeError(f"multiplicative mode needs y >= 0; row {row} has y={y[row]}")
    if mode == CLASSIFICATION and np.any((y != 0) & (y != 1)):
        row = int(np.flatnonzero((y != 0) & (y != 1))[0])
        raise ModeError(f"classification needs y in {{0, 1}}; row {row} has y={y[row]}")


def _global_mean(mode, y, w):
    total = float(np.sum(w))
    if total <= 0:
        raise ModeError("sample weights sum to zero")
    mean = float(np.sum(w * y)) / total
    if mode == MULTIPLICATIVE and mean <= 0:
        raise DegenerateTargetError("all-zero target: the global mean is 0")
    if mode == CLASSIFICATION:
        if mean <= 0 or mean >= 1:
            raise DegenerateTargetError("classification target holds a single class")
        return mean / (1.0 - mean)
    return mean


def fit_binnings(specs: Sequence[FeatureSpec], data: Mapping) -> dict:
    out: dict = {}
    for spec in specs:
        if spec.is_composed:
            out[spec.name] = fit_composed(spec, out)
        else:
            out[spec.name] = fit_binning(column(data, spec.name), spec)
    return out



def smooth_table(link, sigma, count, spec: FeatureSpec, defn, cfg: sm.SmootherConfig,
                 neutral_sigma: float) -> np.ndarray:
    """Smooth the regular bins of one feature's link values.

    Empty bins enter as neutral with the prior-only sigma so that
    continuous fits interpolate across them.
    """
    n = len(link) - 1
    values = np.where(count[:n] > 0, link[:n], 0.0)
    sig = np.where(count[:n] > 0, sigma[:n], neutral_sigma)
    out = np.zeros(n + 1)

    if isinstance(defn, ComposedBinning):
        kinds = [p.kind for p in defn.parts]
        method = cfg.two_dim_method
        if method is None:
            if len(kinds) == 2 and sorted(kinds) == [CATEGORICAL, CONTINUOUS]:
                method = sm.GROUPBY
            elif kinds == [CONTINUOUS, CONTINUOUS]:
                method = sm.TRUNCATED_SVD
            else:
                method = cfg.categorical_method
        if method == sm.GROUPBY and len(kinds) == 2:
            grid, sgrid = values.reshape(defn.shape), sig.reshape(defn.shape)
            cont_axis = 1 if kinds[1] == CONTINUOUS else 0
            if cont_axis == 0:
                grid, sgrid = grid.T, sgrid.T
            centers = defn.parts[cont_axis].centers()
            res = sm.smooth_two_dim_groupby(grid, sgrid, centers, cfg)
            out[:n] = (res.T if cont_axis == 0 else res).ravel()
        elif method == sm.TRUNCATED_SVD and len(kinds) == 2:
            out[:n] = sm.smooth_two_dim_svd(values.reshape(defn.shape), cfg).ravel()
        elif method == sm.SHRINK_TO_NEUTRAL:
            out[:n] = _shrink_nonempty(values, sig, count[:n])
        else:
            out[:n] = values
        return out

    if defn.kind == CONTINUOUS:
        out[:n] = sm.smooth_continuous(defn.centers(), values, sig, cfg)
    elif cfg.categorical_method == sm.SHRINK_TO_NEUTRAL:
        out[:n] = _shrink_nonempty(values, sig, count[:n])
    else:
        out[:n] = values
    return out


def _shrink_nonempty(values, sigma, count):
    out = np.zeros(len(values))
    seen = count > 0
    if seen.sum() >= 2:
        out[seen] = sm.shrink_categorical(values[seen], sigma[seen])
    return out


@dataclass
class TrainingState:
    """Mutable state owned by one training run."""

    cycle: int
    link_sum: np.ndarray
    weights: np.ndarray
    history: list = field(default_factory=list)


class _Trainer:
    def __init__(self, X, y, w, cfg: TrainingConfig, signed=None, mu=None,
                 on_update: Callable | None = None, metric_target=None,
                 select_best: bool = True):
        self.cfg = cfg
        self.mode = cfg.mode
        self.signed = signed
        self.select_best = select_best
        self.on_update = on_update
        self.y = np.asarray(y, dtype=float)
        n = len(self.y)
        self.w = np.ones(n) if w is None else np.asarray(w, dtype=float)
        if len(self.w) != n:
            raise SchemaError("sample weights and target differ in length")
        _check_target(self.mode, self.y, self.w, bool(signed))
        self.metric_y = self.y if metric_target is None else np.asarray(metric_target, float)

        self.specs = list(cfg.features)
        self.binnings = fit_binnings(self.specs, X)
        self.bins = [feature_bins(s, self.binnings, X) for s in self.specs]
        for s, b in zip(self.specs, self.bins):
            if len(b) != n:
                raise SchemaError(f"column {s.name!r} has {len(b)} rows, target has {n}")
        self.n_bins = [self.binnings[s.name].n_bins for s in self.specs]

        self.mu = _global_mean(self.mode, self.y, self.w) if mu is None else float(mu)
        self.offset = self.mu if self.mode == ADDITIVE else float(np.log(self.mu))
        self.links = [np.zeros(k + 1) for k in self.n_bins]
        self.sigmas = [np.zeros(k + 1) for k in self.n_bins]
        self.counts = [np.bincount(b, minlength=k + 1)[: k + 1] for b, k in zip(self.bins, self.n_bins)]
        self.eps_w = cj.weight_floor(self.w)
        self.state = TrainingState(cycle=0, link_sum=np.zeros(n), weights=self.w)
        self.neutral_sigma = self._neutral_sigma()

    def _neutral_sigma(self) -> float:
        pr = self.cfg.priors
        if self.mode == MULTIPLICATIVE:
            return float(cj.log_factor_uncertainty(pr.gamma_alpha_prior))
        if self.mode == CLASSIFICATION:
            return float(cj.log_odds_uncertainty(pr.beta_alpha_prior, pr.beta_beta_prior))
        return self._residual_spread()

    def _residual_spread(self) -> float:
        r = self.y - self.prediction()
        aw = np.abs(self.w)
        mean = np.average(r, weights=aw)
        return float(np.sqrt(np.average((r - mean) ** 2, weights=aw))) or 1.0

    def prediction(self) -> np.ndarray:
        return inverse_link(self.mode, self.offset + self.state.link_sum)

    def _partial(self, j):
        """Link-space partial update and per-bin sigma for feature ``j``."""
        y, w, bins, k = self.y, self.w, self.bins[j], self.n_bins[j]
        pred = self.prediction()
        pr = self.cfg.priors
        if self.mode == MULTIPLICATIVE:
            post = cj.aggregate_gamma(y, pred, w, bins, k, pr)
            delta = np.log(cj.gamma_point_estimate(post, pr.estimator))
            sigma = cj.log_factor_uncertainty(post.alpha)
        elif self.mode == CLASSIFICATION:
            boost = self.cfg.boost_classification_weights
            post = cj.aggregate_beta(y, pred, bins, k, boost, w, pr)
            plain = post if not boost else cj.aggregate_beta(y, pred, bins, k, False, w, pr)
            if boost:
                ref = 1.0
            else:
                ws = np.bincount(bins, weights=w, minlength=k + 1)[: k + 1]
                pbar = np.bincount(bins, weights=w * pred, minlength=k + 1)[: k + 1]
                pbar = np.where(ws > 0, pbar / np.where(ws > 0, ws, 1.0), 0.5)
                ref = pbar / (1.0 - pbar)
            delta = np.log(cj.beta_point_estimate(post, ref, pr.estimator))
            sigma = cj.log_odds_uncertainty(plain.alpha, plain.beta)
        elif self.signed == "groups":
            stats = cj.aggregate_signed(y, pred, w, bins, k)
            delta, _ = cj.signed_point_estimate(stats, self.eps_w)
            sigma = cj.signed_uncertainty(stats, self._residual_spread())
        else:
            stats = cj.aggregate_gaussian(y, pred, w, bins, k)
            delta, _ = cj.gaussian_point_estimate(stats, self.eps_w)
            sigma = cj.gaussian_uncertainty(stats, self._residual_spread())
        delta = np.where(self.counts[j] > 0, delta, 0.0)
        delta[k] = 0.0
        return delta, sigma

    def update_feature(self, j, eta):
        if self.n_bins[j] < 2:
            # A single regular bin is indistinguishable from the global mean.
            return
        spec = self.specs[j]
        delta, sigma = self._partial(j)
        raw = self.links[j] + eta * delta
        new = smooth_table(
            raw, sigma, self.counts[j], spec, self.binnings[spec.name],
            self.cfg.smoother_for(spec.name), self.neutral_sigma,
        )
        new[-1] = 0.0
        b = self.bins[j]
        self.state.link_sum += new[b] - self.links[j][b]
        self.links[j] = new
        self.sigmas[j] = sigma
        if self.on_update is not None:
            self.on_update(self.state.cycle, spec.name, self.prediction())

    def _resync(self):
        total = np.zeros(len(self.y))
        for link, b in zip(self.links, self.bins):
            total += link[b]
        self.state.link_sum = total

    def _snapshot(self):
        return [l.copy() for l in self.links], [s.copy() for s in self.sigmas]

    def run(self) -> Model:
        cfg = self.cfg
        T = cfg.max_cycles
        metric0 = convergence_metric(self.metric_y, self.prediction(), cfg.stop_metric, self.w)
        history = [{"cycle": 0, "eta": 0.0, "metric": metric0}]
        best = (np.inf, 0, self._snapshot()) if T > 0 else (metric0, 0, self._snapshot())
        prev = metric0
        for t in range(1, T + 1):
            self.state.cycle = t
            eta = learning_rate(t, T, cfg.learning_rate_start, cfg.learning_rate_shape)
            for j in range(len(self.specs)):
                self.update_feature(j, eta)
            self._resync()
            metric = convergence_metric(self.metric_y, self.prediction(), cfg.stop_metric, self.w)
            history.append({"cycle": t, "eta": eta, "metric": metric})
            log.debug("cycle %d eta=%.4f %s=%.6g", t, eta, cfg.stop_metric, metric)
            if metric < best[0] or not self.select_best:
                best = (metric, t, self._snapshot())
            rel = (prev - metric) / prev if prev > 0 else 0.0
            if self.select_best and t > 1 and rel < cfg.stop_rel_tol:
                break
            prev = metric
        self.state.history = history
        _, best_cycle, (links, sigmas) = best
        return self._model(links, sigmas, history, best_cycle)

    def _model(self, links, sigmas, history, best_cycle) -> Model:
        tables = []
        for spec, link, sigma, count in zip(self.specs, links, sigmas, self.counts):
            tables.append(FactorTable(
                feature=spec.name,
                mode=self.mode,
                link=link,
                sigma=sigma,
                count=count.astype(np.int64),
                labels=self.binnings[spec.name].labels(),
            ))
        return Model(
            mode=self.mode,
            mu=self.mu,
            features=list(self.specs),
            binnings=self.binnings,
            tables=tables,
            history=history,
            config=self.cfg.to_dict(),
            best_cycle=best_cycle,
        )


def train(X: Mapping, y, cfg: TrainingConfig, sample_weight=None,
          on_update: Callable | None = None) -> Model:
    """Fit a model on feature columns ``X`` and target ``y``.

    ``on_update(cycle, feature, y_hat)`` is called after every feature update
    with the current training predictions.
    """
    return _Trainer(X, y, sample_weight, cfg, on_update=on_update).run()
