"""Early-stopping rules, evaluated between MCMC sweeps.

Each rule is a pure function of the CallbackContext: it inspects the trace
recorded so far and returns a StopSignal (or None), so replaying a trace
reproduces the same decision. Rules never raise to stop a run.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import partial
from typing import Sequence

import numpy as np

REASONS = ("trans_enough", "wasserstein", "validation", "rfwsr")

VALIDATION_IMPROVEMENT_FLOOR = 1e-4  # absolute, on standardized RMSE

# Two-sided t critical values, df 1..30; normal quantile beyond. Keeping the
# table inline avoids a numerics dependency inside a stopping rule.
_T_TABLE = {
    0.90: (1.6449, [
        6.3138, 2.92, 2.3534, 2.1318, 2.015, 1.9432, 1.8946, 1.8595, 1.8331,
        1.8125, 1.7959, 1.7823, 1.7709, 1.7613, 1.7531, 1.7459, 1.7396,
        1.7341, 1.7291, 1.7247, 1.7207, 1.7171, 1.7139, 1.7109, 1.7081,
        1.7056, 1.7033, 1.7011, 1.6991, 1.6973]),
    0.95: (1.96, [
        12.7062, 4.3027, 3.1824, 2.7764, 2.5706, 2.4469, 2.3646, 2.306,
        2.2622, 2.2281, 2.201, 2.1788, 2.1604, 2.1448, 2.1314, 2.1199,
        2.1098, 2.1009, 2.093, 2.086, 2.0796, 2.0739, 2.0687, 2.0639,
        2.0595, 2.0555, 2.0518, 2.0484, 2.0452, 2.0423]),
    0.99: (2.5758, [
        63.6567, 9.9248, 5.8409, 4.6041, 4.0321, 3.7074, 3.4995, 3.3554,
        3.2498, 3.1693, 3.1058, 3.0545, 3.0123, 2.9768, 2.9467, 2.9208,
        2.8982, 2.8784, 2.8609, 2.8453, 2.8314, 2.8188, 2.8073, 2.7969,
        2.7874, 2.7787, 2.7707, 2.7633, 2.7564, 2.75]),
}


@dataclass(frozen=True)
class StopSignal:
    """Request to end the run, emitted at most once per fit."""

    reason: str
    iter: int

    def __post_init__(self):
        if self.reason not in REASONS:
            raise ValueError(f"reason must be one of {REASONS}, got {self.reason!r}")


@dataclass
class CallbackContext:
    """Snapshot handed to stopping rules after each completed sweep.

    iter equals the number of completed sweeps, which is the length of trace.
    val_errors is the per-sweep validation RMSE series (empty without a
    validation split). burn_in is the configured burn-in of the run.
    """

    iter: int
    n_iter: int
    num_nets: int
    trace: Sequence
    val_errors: Sequence[float] = field(default_factory=list)
    burn_in: int = 0


def check_every_default(n_iter: int) -> int:
    """Default check cadence: max(n_iter // 10, 1)."""
    if n_iter < 1:
        raise ValueError("n_iter must be at least 1")
    return max(n_iter // 10, 1)


def t_critical(confidence: float, df: int) -> float:
    """Two-sided t critical value from the built-in table.

    df 1..30 are tabulated for confidence 0.90/0.95/0.99; larger df use the
    normal approximation.
    """
    if df < 1:
        raise ValueError("df must be at least 1")
    key = round(confidence, 2)
    if key not in _T_TABLE:
        raise ValueError("confidence must be one of 0.90, 0.95, 0.99")
    normal, table = _T_TABLE[key]
    return table[df - 1] if df <= 30 else normal


def wasserstein1(a: Sequence[float], b: Sequence[float]) -> float:
    """1-D 1-Wasserstein distance between equal-size multisets.

    Sorting matches the optimal transport plan, so this is
    mean |sorted(a)_i - sorted(b)_i|.
    """
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size != b.size or a.size == 0:
        raise ValueError("need two nonempty multisets of the same size")
    return float(np.abs(np.sort(a) - np.sort(b)).mean())


def _resolve_check(ctx: CallbackContext, check_every: int | None) -> int:
    ce = check_every if check_every is not None else check_every_default(ctx.n_iter)
    if ce < 1:
        raise ValueError("check_every must be at least 1")
    return ce


def trans_enough(ctx: CallbackContext, check_every: int | None = None,
                 skip_first: int = 0, ntrans: int | None = None) -> StopSignal | None:
    """Stop when the previous sweep accepted fewer than ntrans transitions.

    Checked every check_every sweeps (default max(n_iter // 10, 1)), never at
    iter 0 or before skip_first. ntrans defaults to max(num_nets // 5, 1).
    """
    ce = _resolve_check(ctx, check_every)
    i = ctx.iter
    if i == 0 or i % ce or i < skip_first:
        return None
    threshold = ntrans if ntrans is not None else max(ctx.num_nets // 5, 1)
    if ctx.trace[i - 1].ntrans < threshold:
        return StopSignal("trans_enough", i)
    return None


def wasserstein_stop(ctx: CallbackContext, threshold: float = 0.1,
                     check_every: int | None = None, window: int = 3) -> StopSignal | None:
    """Stop when the neuron-count distribution has settled.

    At each check, compare the neuron counts of the last two sweeps with
    wasserstein1; signal when the distance fell strictly below threshold at
    `window` consecutive checks.
    """
    ce = _resolve_check(ctx, check_every)
    i = ctx.iter
    if i == 0 or i % ce:
        return None
    checks = [i - j * ce for j in range(window)]
    if checks[-1] < 2:  # each check needs the two preceding sweeps
        return None
    for j in checks:
        d = wasserstein1(ctx.trace[j - 2].neuron_counts, ctx.trace[j - 1].neuron_counts)
        if not d < threshold:
            return None
    return StopSignal("wasserstein", i)


def validation_stop(ctx: CallbackContext, patience: int = 3,
                    check_every: int | None = None) -> StopSignal | None:
    """Stop when the best validation RMSE stalls.

    A check is non-improving when the running best failed to drop by at least
    1e-4 (absolute, standardized scale) since the previous check; `patience`
    consecutive non-improving checks end the run. The first evaluation only
    initializes the running best. Requires a validation series, i.e.
    evidence_split="heldout".
    """
    if patience < 1:
        raise ValueError("patience must be at least 1")
    ce = _resolve_check(ctx, check_every)
    i = ctx.iter
    if i == 0 or i % ce:
        return None
    if not ctx.val_errors:
        raise ValueError('validation_stop needs a validation series '
                         '(evidence_split="heldout")')
    vals = np.asarray(ctx.val_errors, dtype=float)
    best = None
    streak = 0
    for j in range(ce, i + 1, ce):
        current = float(vals[: min(j, vals.size)].min())
        if best is None:
            best = current
        elif current <= best - VALIDATION_IMPROVEMENT_FLOOR:
            best = current
            streak = 0
        else:
            streak += 1
    if streak >= patience:
        return StopSignal("validation", i)
    return None


def rfwsr_stop(ctx: CallbackContext, n_batches: int = 10, eps_rel: float = 0.05,
               confidence: float = 0.95) -> StopSignal | None:
    """Relative fixed-width stopping rule on post-burn-in train RMSE.

    Batch-means the series into n_batches batches; signal once the
    half-width t_crit * se is within eps_rel * |mean|. Needs at least
    2 * n_batches post-burn-in sweeps before it can fire.
    """
    if n_batches < 2:
        raise ValueError("n_batches must be at least 2")
    if eps_rel <= 0:
        raise ValueError("eps_rel must be positive")
    from .ensemble import batch_means

    series = [rec.train_rmse for rec in ctx.trace[ctx.burn_in:]]
    if len(series) < 2 * n_batches:
        return None
    mean, se = batch_means(series, n_batches)
    if t_critical(confidence, n_batches - 1) * se <= eps_rel * abs(mean):
        return StopSignal("rfwsr", ctx.iter)
    return None


def make_stop_callback(name: str, **params):
    """Build a single-argument callback for fit() from a rule name."""
    rules = {
        "trans": trans_enough,
        "trans_enough": trans_enough,
        "wasserstein": wasserstein_stop,
        "validation": validation_stop,
        "rfwsr": rfwsr_stop,
    }
    if name not in rules:
        raise ValueError(f"unknown stopping rule {name!r}")
    return partial(rules[name], **params)
