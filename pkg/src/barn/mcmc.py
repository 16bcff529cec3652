"""Architecture-move kernel: size proposals, prior, evidence, acceptance, noise scale."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import gammaln

from .mlp import SmallNet

LOG_2PI = math.log(2.0 * math.pi)


class SamplerError(RuntimeError):
    """The sampler produced an invalid quantity (NaN acceptance ratio)."""


@dataclass(frozen=True)
class PriorConfig:
    """Prior and kernel settings for the architecture moves.

    lam is the Poisson mean for the neuron-count prior (restricted to k >= 1),
    p_grow the grow probability of the proposal kernel. custom_log_pmf, when
    given, replaces the Poisson log pmf. sigma_nu/sigma_lambda parameterize
    the scaled-inverse-gamma prior on the noise variance.
    """

    lam: float = 1.0
    p_grow: float = 0.4
    custom_log_pmf: Callable[[int], float] | None = None
    sigma_nu: float = 3.0
    sigma_lambda: float = 1.0

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError("lam must be positive")
        if not 0.0 < self.p_grow <= 1.0:
            raise ValueError("p_grow must be in (0, 1]")
        if self.sigma_nu <= 0 or self.sigma_lambda <= 0:
            raise ValueError("sigma_nu and sigma_lambda must be positive")


def poisson_log_pmf(k: int, lam: float) -> float:
    """Unrestricted Poisson log pmf, valid for any integer k >= 0."""
    if k < 0:
        raise ValueError("k must be nonnegative")
    return k * math.log(lam) - lam - float(gammaln(k + 1))


def log_prior(k: int, prior: PriorConfig) -> float:
    """Log prior mass on k hidden neurons (k >= 1)."""
    if k < 1:
        raise ValueError("k must be at least 1")
    if prior.custom_log_pmf is not None:
        val = float(prior.custom_log_pmf(k))
        if math.isnan(val):
            raise ValueError(f"custom_log_pmf returned NaN at k={k}")
        return val
    return poisson_log_pmf(k, prior.lam)


def propose_size(k: int, p_grow: float, rng: np.random.Generator) -> int:
    """Propose k+1 with probability p_grow, else k-1; k=1 always grows."""
    if k < 1:
        raise ValueError("k must be at least 1")
    if k == 1:
        return 2
    return k + 1 if rng.random() < p_grow else k - 1


def _log(p: float) -> float:
    return math.log(p) if p > 0.0 else -math.inf


def log_transition(k_from: int, k_to: int, p_grow: float) -> float:
    """Log probability of proposing k_to from k_from under the move kernel.

    Growing from k=1 is forced (log 1 = 0), the correction that keeps the
    acceptance ratio honest at the lower boundary.
    """
    if k_from < 1 or k_to < 1:
        raise ValueError("neuron counts must be at least 1")
    if abs(k_to - k_from) != 1:
        raise ValueError("moves change the neuron count by exactly 1")
    if k_to == k_from + 1:
        return 0.0 if k_from == 1 else _log(p_grow)
    return _log(1.0 - p_grow)


def log_evidence(preds: np.ndarray, r: np.ndarray, sigma: float) -> float:
    """Gaussian log likelihood of residual targets r under N(preds, sigma^2)."""
    preds = np.asarray(preds, dtype=float).ravel()
    r = np.asarray(r, dtype=float).ravel()
    if preds.shape != r.shape:
        raise ValueError("preds and r must have the same length")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    e = r - preds
    n = e.shape[0]
    return -0.5 * n * (LOG_2PI + 2.0 * math.log(sigma)) - (e @ e) / (2.0 * sigma * sigma)


def log_accept_ratio(old: SmallNet, new: SmallNet, preds_old: np.ndarray,
                     preds_new: np.ndarray, r: np.ndarray, sigma: float,
                     prior: PriorConfig) -> float:
    """Log Metropolis-Hastings ratio for replacing `old` with `new`.

    Evidence, prior mass on the neuron count, and the reverse/forward
    transition probabilities, as one difference in log space.
    """
    p = prior.p_grow
    new_side = (log_evidence(preds_new, r, sigma)
                + log_prior(new.k, prior)
                + log_transition(new.k, old.k, p))
    old_side = (log_evidence(preds_old, r, sigma)
                + log_prior(old.k, prior)
                + log_transition(old.k, new.k, p))
    return new_side - old_side


def accept(log_ratio: float, rng: np.random.Generator) -> bool:
    """MH accept: true iff ln(U) < log_ratio. NaN ratios are sampler errors."""
    if math.isnan(log_ratio):
        raise SamplerError("acceptance ratio is NaN")
    u = rng.random()
    log_u = math.log(u) if u > 0.0 else -math.inf
    return log_u < log_ratio


def sample_sigma(errors: np.ndarray, prior: PriorConfig,
                 rng: np.random.Generator) -> float:
    """Draw sigma from its conjugate posterior given ensemble errors.

    sigma^2 ~ InvGamma(shape (nu + n)/2, scale (nu*lambda + sum e^2)/2),
    sampled as the reciprocal of a gamma draw. An empty error vector is
    allowed and yields a draw from the prior.
    """
    e = np.asarray(errors, dtype=float).ravel()
    if e.size and not np.all(np.isfinite(e)):
        raise ValueError("errors must be finite")
    shape = 0.5 * (prior.sigma_nu + e.size)
    scale = 0.5 * (prior.sigma_nu * prior.sigma_lambda + (e @ e if e.size else 0.0))
    g = rng.gamma(shape, 1.0 / scale)
    return float(math.sqrt(1.0 / g))
