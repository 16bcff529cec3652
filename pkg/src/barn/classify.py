"""Binary probit classification via latent-variable augmentation.

Labels in {0, 1} are linked to a latent Gaussian score z: y = 1 iff z > 0.
Each Gibbs iteration first redraws z from a unit-variance truncated normal
around the current ensemble predictions, then runs one regression sweep
against z with the noise scale pinned to 1. Probabilities come out through
the standard normal CDF.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np
from scipy.special import erfc, erfcinv

from . import ensemble
from .ensemble import BarnConfig, EnsembleState

_SQRT2 = math.sqrt(2.0)


def norm_cdf(z) -> np.ndarray:
    """Standard normal CDF via the complementary error function."""
    z = np.asarray(z, dtype=float)
    return 0.5 * erfc(-z / _SQRT2)


def _surv(x):
    # upper-tail probability of the standard normal
    return 0.5 * erfc(x / _SQRT2)


def _surv_inv(q):
    return _SQRT2 * erfcinv(2.0 * q)


def sample_latent(labels: np.ndarray, z_pred: np.ndarray,
                  rng: np.random.Generator) -> np.ndarray:
    """Draw latent scores from N(z_pred, 1) truncated to the label's side.

    y=1 truncates to (0, inf), y=0 to (-inf, 0]. Sampling inverts the
    survival function, which stays accurate under deep truncation (large
    |z_pred| on the wrong side); past the double-precision floor (~37
    standard deviations) an exponential tail approximation takes over.
    """
    labels = np.asarray(labels)
    mu = np.asarray(z_pred, dtype=float).ravel()
    if labels.shape[0] != mu.shape[0]:
        raise ValueError("labels and z_pred must have the same length")
    if not np.all(np.isfinite(mu)):
        raise ValueError("z_pred must be finite")

    sign = np.where(labels == 1, 1.0, -1.0)
    a = -sign * mu  # standardized truncation bound, truncating to (a, inf)
    u = np.clip(rng.random(mu.shape[0]), 1e-300, None)
    q = u * _surv(a)
    # q can underflow only under extreme truncation, where a is large and the
    # conditional tail is essentially exponential with rate a
    xi_exact = _surv_inv(np.where(q > 0.0, q, 0.5))
    xi_tail = a - np.log(u) / np.maximum(a, 1.0)
    xi = np.where(q > 0.0, xi_exact, xi_tail)
    return mu + sign * xi


def fit_bin(X, labels, cfg: BarnConfig | None = None,
            callbacks: Sequence[Callable] = ()):
    """Fit the ensemble to binary labels.

    Same contract as ensemble.fit, except the targets must be exactly {0, 1}
    with both classes present, no target standardization is applied, and the
    noise scale stays fixed at 1.

    Returns (model, trace) with model.task == "binary".
    """
    labels = np.asarray(labels).ravel()
    values = np.unique(labels)
    if not np.all(np.isin(values, (0, 1))):
        raise ValueError("labels must be 0 or 1")
    if values.size < 2:
        raise ValueError("need both classes present")
    return ensemble._fit_core(X, labels.astype(float), cfg or BarnConfig(),
                              callbacks, task="binary",
                              latent_sampler=sample_latent)


def _require_binary(model: EnsembleState):
    if model.task != "binary":
        raise TypeError("this model was fit for regression; "
                        "probabilities are only defined for binary models")


def predict_z(model: EnsembleState, X_new) -> np.ndarray:
    """Latent scores for new rows (the raw ensemble sum)."""
    _require_binary(model)
    return ensemble.predict(model, X_new)


def predict_proba(model: EnsembleState, X_new) -> np.ndarray:
    """P(y=1) for new rows, clamped inside the open interval (0, 1)."""
    _require_binary(model)
    p = norm_cdf(predict_z(model, X_new))
    lo = np.nextafter(0.0, 1.0)
    hi = np.nextafter(1.0, 0.0)
    return np.clip(p, lo, hi)
