"""Per-bin sufficient statistics and conjugate-posterior estimates.

All aggregations are vectorized over bins: they take the bin-index column of
one feature and return arrays with one entry per bin (reserved bin included).
Aggregations are plain weighted sums, so partial results computed on disjoint
row partitions can be merged with :meth:`BinPosterior.merge` and friends.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammainc

from .errors import DataError, DomainError, ModeError

MEAN = "mean"
MEDIAN = "median"


@dataclass(frozen=True)
class PriorConfig:
    gamma_alpha_prior: float = 2.0
    gamma_beta_prior: float = 1.67834
    beta_alpha_prior: float = 1.001
    beta_beta_prior: float = 1.001
    estimator: str = MEAN

    def __post_init__(self):
        priors = (
            self.gamma_alpha_prior,
            self.gamma_beta_prior,
            self.beta_alpha_prior,
            self.beta_beta_prior,
        )
        if min(priors) <= 0:
            raise DomainError("all prior parameters must be positive")
        if self.estimator not in (MEAN, MEDIAN):
            raise DomainError(f"unknown estimator {self.estimator!r}")


@dataclass
class BinPosterior:
    """Gamma or Beta posterior parameters, one entry per bin."""

    alpha: np.ndarray
    beta: np.ndarray
    weight_sum: np.ndarray
    count: np.ndarray

    def merge(self, other: "BinPosterior", alpha_prior: float, beta_prior: float):
        """Combine posteriors aggregated on disjoint row partitions."""
        return BinPosterior(
            alpha=self.alpha + other.alpha - alpha_prior,
            beta=self.beta + other.beta - beta_prior,
            weight_sum=self.weight_sum + other.weight_sum,
            count=self.count + other.count,
        )


@dataclass
class GaussianBinStats:
    weighted_residual_sum: np.ndarray
    weight_sum: np.ndarray
    count: np.ndarray
    weighted_residual_sq_sum: np.ndarray

    def merge(self, other: "GaussianBinStats") -> "GaussianBinStats":
        return GaussianBinStats(
            self.weighted_residual_sum + other.weighted_residual_sum,
            self.weight_sum + other.weight_sum,
            self.count + other.count,
            self.weighted_residual_sq_sum + other.weighted_residual_sq_sum,
        )


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise DataError("NaN or infinite value in aggregation input")


def _bincount(bins, weights, n_bins):
    return np.bincount(bins, weights=weights, minlength=n_bins + 1)[: n_bins + 1]


def aggregate_gamma(y, y_hat, w, bins, n_bins, priors: PriorConfig = PriorConfig()):
    """Gamma posterior of the partial factor in every bin.

    ``bins`` must hold indices in ``[0, n_bins]``; index ``n_bins`` is the
    reserved bin, which keeps its prior-only posterior.
    """
    y, y_hat, w = (np.asarray(a, dtype=float) for a in (y, y_hat, w))
    bins = np.asarray(bins, dtype=np.int64)
    _check_finite(y, y_hat, w)
    if np.any(w < 0):
        raise ModeError("negative sample weights need signed-weight (uplift) training")
    regular = bins < n_bins
    b = bins[regular]
    alpha = priors.gamma_alpha_prior + _bincount(b, (w * y)[regular], n_bins)
    beta = priors.gamma_beta_prior + _bincount(b, (w * y_hat)[regular], n_bins)
    return BinPosterior(
        alpha=alpha,
        beta=beta,
        weight_sum=_bincount(b, w[regular], n_bins),
        count=_bincount(b, None, n_bins).astype(np.int64),
    )


def _gamma_median(alpha, beta, rtol=1e-10):
    # Bisection in log space on P(a, x) = 1/2; the unit-rate median lies in
    # [a - 1/3 - 0.1, a + 1] for a >= 1 and far below a for small a.
    a = np.atleast_1d(np.asarray(alpha, dtype=float))
    lo = np.full_like(a, -745.0)
    hi = np.log(a + 2.0)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        below = gammainc(a, np.exp(mid)) < 0.5
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        if np.all(hi - lo < rtol * 0.5):
            break
    return np.exp(0.5 * (lo + hi)) / np.asarray(beta, dtype=float)


def gamma_point_estimate(p: BinPosterior, estimator: str = MEAN) -> np.ndarray:
    if estimator == MEAN:
        return p.alpha / p.beta
    if estimator == MEDIAN:
        return np.reshape(_gamma_median(p.alpha, p.beta), np.shape(p.alpha))
    raise DomainError(f"unknown estimator {estimator!r}")


def log_factor_uncertainty(alpha) -> np.ndarray:
    """Standard deviation of ``ln f`` from moment matching Gamma to log-normal."""
    alpha = np.asarray(alpha, dtype=float)
    if np.any(alpha <= 0):
        raise DomainError("alpha must be positive")
    return np.sqrt(np.log1p(1.0 / alpha))


def aggregate_gaussian(y, y_hat, w, bins, n_bins) -> GaussianBinStats:
    """Weighted residual sums per bin; weights may carry either sign."""
    y, y_hat, w = (np.asarray(a, dtype=float) for a in (y, y_hat, w))
    bins = np.asarray(bins, dtype=np.int64)
    _check_finite(y, y_hat, w)
    regular = bins < n_bins
    b = bins[regular]
    r = (y - y_hat)[regular]
    wr = w[regular]
    return GaussianBinStats(
        weighted_residual_sum=_bincount(b, wr * r, n_bins),
        weight_sum=_bincount(b, wr, n_bins),
        count=_bincount(b, None, n_bins).astype(np.int64),
        weighted_residual_sq_sum=_bincount(b, wr * r * r, n_bins),
    )


def weight_floor(w) -> float:
    """Denominator floor for weight sums: 1e-9 of the global absolute weight."""
    return 1e-9 * float(np.sum(np.abs(w)))


def gaussian_point_estimate(stats: GaussianBinStats, eps_w: float):
    """Partial summand per bin and a mask of low-statistics bins.

    Bins whose weight sum falls below ``eps_w`` are flagged and get summand 0.
    """
    low = stats.weight_sum < eps_w
    g = stats.weighted_residual_sum / np.maximum(stats.weight_sum, eps_w)
    g = np.where(low, 0.0, g)
    return g, low


def gaussian_uncertainty(stats: GaussianBinStats, fallback: float) -> np.ndarray:
    """Standard error of the bin's residual mean.

    The weight sum acts as the sample count (frequency-weight semantics), so a
    row with weight 2 is equivalent to a duplicated row.  Bins holding at most
    one unit of weight use ``fallback`` as their residual spread.
    """
    ws = stats.weight_sum
    safe = np.where(ws > 0, ws, 1.0)
    mean = stats.weighted_residual_sum / safe
    var = np.maximum(stats.weighted_residual_sq_sum / safe - mean**2, 0.0)
    std = np.where(ws > 1.0, np.sqrt(var), fallback)
    sigma = std / np.sqrt(np.maximum(ws, 1.0))
    return np.maximum(sigma, 1e-12 * max(fallback, 1.0))


def aggregate_beta(y, p_hat, bins, n_bins, boost_weights=True, w=None,
                   priors: PriorConfig = PriorConfig()) -> BinPosterior:
    """Beta posterior of the success probability in every bin.

    With ``boost_weights`` each row is weighted by how badly the current
    prediction misclassifies it, and the success/failure masses are the
    normalized weighted fractions.  ``w`` are optional sample weights that
    multiply the misclassification weights.
    """
    y, p_hat = np.asarray(y, dtype=float), np.asarray(p_hat, dtype=float)
    w = np.ones_like(y) if w is None else np.asarray(w, dtype=float)
    bins = np.asarray(bins, dtype=np.int64)
    _check_finite(y, p_hat, w)
    if np.any((y != 0) & (y != 1)):
        raise DataError("classification targets must be 0 or 1")
    regular = bins < n_bins
    b = bins[regular]
    if boost_weights:
        w = w * np.where(y == 1, 1.0 - p_hat, p_hat)
    wy = _bincount(b, (w * y)[regular], n_bins)
    wn = _bincount(b, (w * (1.0 - y))[regular], n_bins)
    ws = _bincount(b, w[regular], n_bins)
    if boost_weights:
        safe = np.where(ws > 0, ws, 1.0)
        wy, wn = np.where(ws > 0, wy / safe, 0.0), np.where(ws > 0, wn / safe, 0.0)
    return BinPosterior(
        alpha=priors.beta_alpha_prior + wy,
        beta=priors.beta_beta_prior + wn,
        weight_sum=ws,
        count=_bincount(b, None, n_bins).astype(np.int64),
    )


def beta_point_estimate(p: BinPosterior, reference_odds=1.0, estimator: str = MEAN):
    """Odds-space factor of a Beta posterior relative to ``reference_odds``.

    The median option uses the (a - 1/3) / (a + b - 2/3) approximation.
    """
    a, b = np.asarray(p.alpha, dtype=float), np.asarray(p.beta, dtype=float)
    if np.any(a + b <= 0):
        raise DomainError("alpha + beta must be positive")
    if estimator == MEAN:
        q = a / (a + b)
    elif estimator == MEDIAN:
        q = np.clip((a - 1 / 3) / (a + b - 2 / 3), 1e-12, 1 - 1e-12)
    else:
        raise DomainError(f"unknown estimator {estimator!r}")
    return q / (1.0 - q) / reference_odds


def log_odds_uncertainty(alpha, beta) -> np.ndarray:
    """Delta-method standard deviation of the log-odds of a Beta variable."""
    a, b = np.asarray(alpha, dtype=float), np.asarray(beta, dtype=float)
    if np.any(a + b <= 0):
        raise DomainError("alpha + beta must be positive")
    s = a + b
    return np.sqrt(s * s / (a * b * (s + 1.0)))


@dataclass
class SignedBinStats:
    """Per-bin sums split by weight sign, for background subtraction."""

    pos_weight: np.ndarray
    pos_y: np.ndarray
    pos_y_sq: np.ndarray
    pos_weight_sq: np.ndarray
    neg_weight: np.ndarray
    neg_y: np.ndarray
    neg_y_sq: np.ndarray
    neg_weight_sq: np.ndarray
    abs_weight: np.ndarray
    abs_weighted_pred: np.ndarray
    count: np.ndarray

    @property
    def signed_weight_sum(self) -> np.ndarray:
        return self.pos_weight - self.neg_weight

    @property
    def signed_target_sum(self) -> np.ndarray:
        return self.pos_y - self.neg_y


def aggregate_signed(y, y_hat, w, bins, n_bins) -> SignedBinStats:
    """Per-bin sums of the treated (w > 0) and control (w < 0) groups.

    Negative-weight rows enter with ``|w|``.  ``y`` is the raw target; the
    current prediction is averaged over both groups with weight ``|w|``.
    """
    y, y_hat, w = (np.asarray(a, dtype=float) for a in (y, y_hat, w))
    bins = np.asarray(bins, dtype=np.int64)
    _check_finite(y, y_hat, w)
    regular = bins < n_bins
    b, y, y_hat, w = bins[regular], y[regular], y_hat[regular], w[regular]
    wp = np.where(w > 0, w, 0.0)
    wn = np.where(w < 0, -w, 0.0)

    def s(v):
        return _bincount(b, v, n_bins)

    return SignedBinStats(
        pos_weight=s(wp), pos_y=s(wp * y), pos_y_sq=s(wp * y * y), pos_weight_sq=s(wp * wp),
        neg_weight=s(wn), neg_y=s(wn * y), neg_y_sq=s(wn * y * y), neg_weight_sq=s(wn * wn),
        abs_weight=s(np.abs(w)), abs_weighted_pred=s(np.abs(w) * y_hat),
        count=_bincount(b, None, n_bins).astype(np.int64),
    )


def signed_point_estimate(stats: SignedBinStats, eps_w: float):
    """Partial summand = treated mean - control mean - mean current prediction.

    A bin whose control mass is below ``eps_w`` while the treated mass is not
    (or vice versa) cannot separate the groups: it is flagged and gets 0.  If
    no negative weight exists at all the control term is dropped, which
    reduces the estimate to the ordinary weighted residual mean.
    """
    pos_ok = stats.pos_weight >= eps_w
    neg_ok = stats.neg_weight >= eps_w
    has_control = bool(np.any(stats.neg_weight > 0))
    safe_p = np.where(pos_ok, stats.pos_weight, 1.0)
    safe_n = np.where(neg_ok, stats.neg_weight, 1.0)
    safe_a = np.where(stats.abs_weight > 0, stats.abs_weight, 1.0)
    treated = stats.pos_y / safe_p
    control = np.where(neg_ok, stats.neg_y / safe_n, 0.0)
    pred = stats.abs_weighted_pred / safe_a
    ok = pos_ok & neg_ok if has_control else pos_ok
    g = np.where(ok, treated - control - pred, 0.0)
    return g, ~ok


def signed_uncertainty(stats: SignedBinStats, fallback: float) -> np.ndarray:
    """Standard error of the difference of group means.

    Each group contributes its weighted variance divided by its effective
    sample size ``(sum |w|)^2 / sum w^2``.
    """
    total = np.zeros_like(stats.pos_weight)
    groups = (
        (stats.pos_weight, stats.pos_y, stats.pos_y_sq, stats.pos_weight_sq),
        (stats.neg_weight, stats.neg_y, stats.neg_y_sq, stats.neg_weight_sq),
    )
    for wsum, ysum, ysq, w2 in groups:
        if not np.any(wsum > 0):
            continue
        safe = np.where(wsum > 0, wsum, 1.0)
        mean = ysum / safe
        var = np.maximum(ysq / safe - mean**2, 0.0)
        n_eff = np.where(w2 > 0, wsum * wsum / np.where(w2 > 0, w2, 1.0), 0.0)
        var = np.where(n_eff > 1.0, var, fallback**2)
        total += var / np.maximum(n_eff, 1.0)
    return np.maximum(np.sqrt(total), 1e-12 * max(fallback, 1.0))
