"""Regularization of per-bin link values across the bins of one feature.

Inputs are link-space values (``ln f`` or additive summands) of the regular
bins only; the reserved bin never enters and stays neutral.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial import legendre

from .errors import DomainError

ORTHOGONAL_POLYNOMIAL = "orthogonal_polynomial"
SHRINK_TO_NEUTRAL = "shrink_to_neutral"
GROUPBY = "groupby"
TRUNCATED_SVD = "truncated_svd"
NONE = "none"


@dataclass(frozen=True)
class SmootherConfig:
    continuous_method: str = ORTHOGONAL_POLYNOMIAL
    max_degree: int = 3
    categorical_method: str = SHRINK_TO_NEUTRAL
    two_dim_method: str | None = None
    svd_rank: int = 2

    def __post_init__(self):
        if self.continuous_method not in (ORTHOGONAL_POLYNOMIAL, NONE):
            raise DomainError(f"unknown continuous_method {self.continuous_method!r}")
        if self.categorical_method not in (SHRINK_TO_NEUTRAL, NONE):
            raise DomainError(f"unknown categorical_method {self.categorical_method!r}")
        if self.two_dim_method not in (None, GROUPBY, TRUNCATED_SVD, NONE):
            raise DomainError(f"unknown two_dim_method {self.two_dim_method!r}")
        if self.max_degree < 0 or self.svd_rank < 1:
            raise DomainError("max_degree must be >= 0 and svd_rank >= 1")

    @classmethod
    def off(cls) -> "SmootherConfig":
        return cls(continuous_method=NONE, categorical_method=NONE, two_dim_method=NONE)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _wls(design, values, weights):
    sw = np.sqrt(weights)
    coef, *_ = np.linalg.lstsq(design * sw[:, None], values * sw, rcond=None)
    fitted = design @ coef
    chi2 = float(np.sum(weights * (values - fitted) ** 2))
    return fitted, chi2


def polynomial_fit(centers, values, sigmas, max_degree=3):
    """Weighted least-squares fit in a Legendre basis with degree selection.

    Bin centers are mapped affinely onto [-1, 1], so the result does not
    depend on the location or scale of the centers.  The smallest degree with
    chi2/dof <= 1 wins; otherwise the largest admissible degree is used.

    Returns the fitted values and the selected degree.
    """
    x = np.asarray(centers, dtype=float)
    v = np.asarray(values, dtype=float)
    s = np.asarray(sigmas, dtype=float)
    if not (len(x) == len(v) == len(s)):
        raise DomainError("centers, values and sigmas differ in length")
    if np.any(s <= 0):
        raise DomainError("sigmas must be positive")
    n = len(x)
    weights = 1.0 / s**2
    span = x.max() - x.min() if n else 0.0
    t = (2.0 * (x - x.min()) / span - 1.0) if span > 0 else np.zeros(n)
    top = min(max_degree, n - 1) if span > 0 else 0
    best = None
    for d in range(top + 1):
        fitted, chi2 = _wls(legendre.legvander(t, d), v, weights)
        best = (fitted, d)
        dof = n - (d + 1)
        if dof > 0 and chi2 / dof <= 1.0:
            break
    return best


def smooth_continuous(centers, values, sigmas, cfg: SmootherConfig = SmootherConfig()):
    if cfg.continuous_method == NONE:
        return np.asarray(values, dtype=float).copy()
    if len(values) < 2:
        return np.zeros(len(values))
    fitted, _ = polynomial_fit(centers, values, sigmas, cfg.max_degree)
    return fitted


def shrinkage_coefficients(values, sigmas) -> np.ndarray:
    """Empirical-Bayes factors tau^2 / (tau^2 + sigma^2), each in [0, 1]."""
    v = np.asarray(values, dtype=float)
    s2 = np.asarray(sigmas, dtype=float) ** 2
    if len(v) < 2:
        return np.zeros(len(v))
    tau2 = max(float(np.var(v) - np.mean(s2)), 1e-12)
    return tau2 / (tau2 + s2)


def shrink_categorical(values, sigmas) -> np.ndarray:
    """Pull link values toward neutral 0, harder where sigma is large."""
    return np.asarray(values, dtype=float) * shrinkage_coefficients(values, sigmas)


def smooth_two_dim_groupby(grid, sigma_grid, centers, cfg: SmootherConfig = SmootherConfig()):
    """Smooth each row (categorical level) along the continuous column axis."""
    grid = np.asarray(grid, dtype=float)
    sigma_grid = np.asarray(sigma_grid, dtype=float)
    out = np.empty_like(grid)
    for r in range(grid.shape[0]):
        out[r] = smooth_continuous(centers, grid[r], sigma_grid[r], cfg)
    return out


def truncated_svd(grid, rank: int) -> np.ndarray:
    """Best rank-``rank`` approximation of ``grid`` in Frobenius norm."""
    grid = np.asarray(grid, dtype=float)
    r = min(rank, *grid.shape)
    u, s, vt = np.linalg.svd(grid, full_matrices=False)
    return (u[:, :r] * s[:r]) @ vt[:r]


def smooth_two_dim_svd(grid, cfg: SmootherConfig = SmootherConfig()) -> np.ndarray:
    return truncated_svd(grid, cfg.svd_rank)
