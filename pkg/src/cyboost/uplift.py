"""Individual causal effects by statistical background subtraction.

Treated rows carry positive and control rows negative sample weights.  The
additive model then learns, in every bin, the treated-minus-control
difference of the target directly, so its predictions are effect estimates.
"""

from __future__ import annotations

import logging
import warnings
from typing import Mapping

import numpy as np

from .engine import ADDITIVE, Model, TrainingConfig, _Trainer, predict
from .errors import DataError, DegenerateWeights, ModeError

log = logging.getLogger(__name__)

IMBALANCE_WARN = 0.1


def group_weights(treated, treated_label=1, control_label=0) -> np.ndarray:
    """+1 / -1 weights from a group-membership column."""
    treated = np.asarray(treated, dtype=object)
    is_t = np.array([str(v) == str(treated_label) for v in treated])
    is_c = np.array([str(v) == str(control_label) for v in treated])
    if np.any(~(is_t | is_c)):
        row = int(np.flatnonzero(~(is_t | is_c))[0])
        raise DataError(f"row {row}: group label {treated[row]!r} is neither treated nor control")
    return np.where(is_t, 1.0, -1.0)


def normalize_group_weights(w) -> np.ndarray:
    """Rescale so both groups carry half of the total absolute weight."""
    w = np.asarray(w, dtype=float)
    pos, neg = w[w > 0].sum(), -w[w < 0].sum()
    half = 0.5 * (pos + neg)
    return np.where(w > 0, w * (half / pos), w * (half / neg))


def train_uplift(X: Mapping, y, weights, cfg: TrainingConfig, normalize: bool = True) -> Model:
    """Train an additive model on signed group weights.

    With ``normalize`` (default) each bin's summand is the difference of the
    treated and control weighted means of the residual target, and the
    global mean is the difference of the group means.  With
    ``normalize=False`` the raw signed sums are divided by the signed weight
    sum in every bin.

    Weights that are all nonnegative reduce to plain additive training.
    """
    if cfg.mode != ADDITIVE:
        raise ModeError("uplift training requires additive mode")
    y = np.asarray(y, dtype=float)
    w = np.asarray(weights, dtype=float)
    if len(w) != len(y):
        raise DataError("weights and target differ in length")
    if not np.all(np.isfinite(w)):
        raise DataError("non-finite group weight")
    if not np.any(w > 0):
        raise ModeError("uplift weights need a treated (positive-weight) group")
    if not np.any(w < 0):
        warnings.warn("no control rows: uplift reduces to plain additive training")
        return _Trainer(X, y, w, cfg).run()

    abs_sum = float(np.abs(w).sum())
    imbalance = abs(float(w.sum())) / abs_sum
    if imbalance > IMBALANCE_WARN:
        log.warning("group weights unbalanced: |sum w| / sum |w| = %.3f", imbalance)

    eps = 1e-9
    if normalize:
        pos, neg = w[w > 0].sum(), -w[w < 0].sum()
        if min(pos, neg) < eps * abs_sum:
            raise DegenerateWeights("one group carries negligible weight")
        w = normalize_group_weights(w)
        t, c = w > 0, w < 0
        mu = np.sum(w[t] * y[t]) / np.sum(w[t]) - np.sum(-w[c] * y[c]) / np.sum(-w[c])
        # Transformed outcome: its conditional mean is the effect itself.
        pseudo = 2.0 * np.sign(w) * y
        signed = "groups"
    else:
        if abs(float(w.sum())) < eps * abs_sum:
            raise DegenerateWeights("signed weights cancel: the global effect is not identifiable")
        mu = float(np.sum(w * y) / np.sum(w))
        pseudo = None
        signed = "raw"

    # Outcome noise swamps any effect-level metric, so run the full learning
    # rate schedule and keep the last cycle; the metric is only reported.
    trainer = _Trainer(X, y, w, cfg, signed=signed, mu=float(mu), metric_target=pseudo,
                       select_best=False)
    model = trainer.run()
    model.config["uplift"] = {"normalize": normalize}
    return model


def estimate_effects(model: Model, rows: Mapping) -> np.ndarray:
    """Per-row effect estimates of a model returned by :func:`train_uplift`."""
    return predict(model, rows)
