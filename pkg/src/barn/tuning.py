"""Hyperparameter search over sampler configurations: grid and random, k-fold CV."""

from __future__ import annotations

import itertools
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import classify, ensemble
from .ensemble import BarnConfig

# candidate_count * k * n_iter above this draws a cost warning
BUDGET_HEURISTIC = 100_000

# fields where a drawn 0 is meaningless and gets resampled
POSITIVE_PARAMS = {"l", "lam", "num_nets", "n_iter", "max_epochs"}

SCORINGS = ("neg_rmse", "neg_log_loss")


@dataclass(frozen=True)
class Poisson:
    """Poisson-distributed integer draws with mean mu."""
    mu: float


@dataclass(frozen=True)
class UniformInt:
    """Uniform integer draws, both bounds inclusive."""
    lo: int
    hi: int


@dataclass(frozen=True)
class Uniform:
    """Uniform real draws on [lo, hi)."""
    lo: float
    hi: float


def apply_params(base: BarnConfig, params: dict) -> BarnConfig:
    """Overlay flat parameter names onto a config.

    Recognized names map onto BarnConfig and its nested prior/train configs;
    "l" and "p" are accepted as the usual short spellings of lam and p_grow,
    "lr" of learning_rate. Unknown names raise ValueError.
    """
    cfg = base
    prior_kw = {}
    train_kw = {}
    top_kw = {}
    for name, value in params.items():
        if name in ("l", "lam"):
            prior_kw["lam"] = float(value)
        elif name in ("p", "p_grow"):
            prior_kw["p_grow"] = float(value)
        elif name in ("sigma_nu", "sigma_lambda"):
            prior_kw[name] = float(value)
        elif name in ("lr", "learning_rate"):
            train_kw["learning_rate"] = float(value)
        elif name in ("reg_l1", "reg_l2", "tol"):
            train_kw[name] = float(value)
        elif name == "max_epochs":
            train_kw[name] = int(value)
        elif name == "solver":
            train_kw[name] = str(value)
        elif name in ("num_nets", "n_iter", "burn_in"):
            top_kw[name] = int(value)
        elif name == "heldout_fraction":
            top_kw[name] = float(value)
        elif name == "evidence_split":
            top_kw[name] = str(value)
        else:
            raise ValueError(f"unknown tunable parameter {name!r}")
    if prior_kw:
        top_kw["prior"] = replace(cfg.prior, **prior_kw)
    if train_kw:
        top_kw["train"] = replace(cfg.train, **train_kw)
    if "n_iter" in top_kw and "burn_in" not in top_kw:
        top_kw["burn_in"] = None  # keep the n_iter // 2 default consistent
    return replace(cfg, **top_kw) if top_kw else cfg


def kfold_split(n: int, k: int = 5, seed: int = 0):
    """Seeded shuffle of 0..n-1 cut into k folds with sizes differing by <= 1.

    Returns a list of (train_idx, val_idx) pairs covering every row exactly
    once as validation.
    """
    if k < 2:
        raise ValueError("k must be at least 2")
    if n < k:
        raise ValueError("need at least one row per fold")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    folds = np.array_split(perm, k)
    out = []
    for i in range(k):
        val = np.sort(folds[i])
        tr = np.sort(np.concatenate([folds[j] for j in range(k) if j != i]))
        out.append((tr, val))
    return out


@dataclass
class CvResult:
    """Search outcome: per-candidate scores plus the refit best model."""

    candidates: list          # dicts: params, fold_scores, mean_score
    best_index: int
    best_params: dict
    best_score: float
    model: object
    trace: list


def _child_seed(seed: int, cand_idx: int, fold_idx: int) -> int:
    # order-independent so concurrent evaluation reproduces sequential results
    ss = np.random.SeedSequence([int(seed), int(cand_idx), int(fold_idx)])
    return int(ss.generate_state(1, dtype=np.uint64)[0] % (2 ** 63))


def _log_loss(labels: np.ndarray, proba: np.ndarray) -> float:
    labels = np.asarray(labels, dtype=float)
    return float(-np.mean(labels * np.log(proba) + (1.0 - labels) * np.log1p(-proba)))


def _fit_and_score(payload):
    X, y, cfg, tr_idx, val_idx, scoring = payload
    if scoring == "neg_log_loss":
        model, _ = classify.fit_bin(X[tr_idx], y[tr_idx], cfg)
        return -_log_loss(y[val_idx], classify.predict_proba(model, X[val_idx]))
    model, _ = ensemble.fit(X[tr_idx], y[tr_idx], cfg)
    pred = ensemble.predict(model, X[val_idx])
    e = pred - y[val_idx]
    return -float(np.sqrt(np.mean(e * e)))


def worker_limit() -> int:
    """Parallel worker cap from BARN_THREADS (default 1 = sequential)."""
    raw = os.environ.get("BARN_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValueError(f"BARN_THREADS must be an integer, got {raw!r}") from None


def _run_tasks(payloads):
    workers = worker_limit()
    if workers <= 1 or len(payloads) <= 1:
        return [_fit_and_score(p) for p in payloads]
    with ProcessPoolExecutor(max_workers=min(workers, len(payloads))) as pool:
        return list(pool.map(_fit_and_score, payloads))


def _evaluate(X, y, base, param_sets, k, scoring, seed):
    n = X.shape[0]
    folds = kfold_split(n, k, seed)
    if len(param_sets) * k * base.n_iter > BUDGET_HEURISTIC:
        warnings.warn(
            f"search budget: {len(param_sets)} candidates x {k} folds x "
            f"{base.n_iter} iterations multiplies out; consider fewer "
            "candidates, folds, or iterations", UserWarning, stacklevel=3)
    payloads = []
    for ci, params in enumerate(param_sets):
        cfg = apply_params(base, params)
        for fi, (tr_idx, val_idx) in enumerate(folds):
            payloads.append((X, y, replace(cfg, seed=_child_seed(seed, ci, fi)),
                             tr_idx, val_idx, scoring))
    scores = _run_tasks(payloads)

    candidates = []
    for ci, params in enumerate(param_sets):
        fold_scores = [scores[ci * k + fi] for fi in range(k)]
        candidates.append({"params": dict(params),
                           "fold_scores": fold_scores,
                           "mean_score": float(np.mean(fold_scores))})
    best_index = max(range(len(candidates)),
                     key=lambda i: (candidates[i]["mean_score"], -i))
    best_params = dict(param_sets[best_index])

    refit_cfg = apply_params(base, best_params)
    if scoring == "neg_log_loss":
        model, trace = classify.fit_bin(X, y, refit_cfg)
    else:
        model, trace = ensemble.fit(X, y, refit_cfg)
    return CvResult(candidates=candidates, best_index=best_index,
                    best_params=best_params,
                    best_score=candidates[best_index]["mean_score"],
                    model=model, trace=trace)


def _validate_inputs(X, y, k, scoring):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError("X must be 2-D with one y per row")
    if scoring not in SCORINGS:
        raise ValueError(f"scoring must be one of {SCORINGS}")
    if X.shape[0] < k:
        raise ValueError("need at least one row per fold")
    return X, y


def grid_search(X, y, base: BarnConfig | None = None, space: dict | None = None,
                k: int = 5, scoring: str = "neg_rmse") -> CvResult:
    """Exhaustive search over the Cartesian product of listed values.

    space maps parameter names (see apply_params) to lists of values. The
    best candidate (highest mean score, ties to the first in enumeration
    order) is refit on all rows with base.seed.
    """
    base = base or BarnConfig()
    X, y = _validate_inputs(X, y, k, scoring)
    if not space:
        raise ValueError("space must map at least one parameter to values")
    names = list(space.keys())
    value_lists = []
    for name in names:
        vals = list(space[name])
        if not vals:
            raise ValueError(f"parameter {name!r} has no values")
        value_lists.append(vals)
    param_sets = [dict(zip(names, combo))
                  for combo in itertools.product(*value_lists)]
    return _evaluate(X, y, base, param_sets, k, scoring, base.seed)


def _draw(name, spec, rng):
    if isinstance(spec, Poisson):
        val = int(rng.poisson(spec.mu))
        while name in POSITIVE_PARAMS and val < 1:
            val = int(rng.poisson(spec.mu))
        return val
    if isinstance(spec, UniformInt):
        if spec.hi < spec.lo:
            raise ValueError(f"uniform_int bounds reversed for {name!r}")
        return int(rng.integers(spec.lo, spec.hi + 1))
    if isinstance(spec, Uniform):
        if spec.hi < spec.lo:
            raise ValueError(f"uniform bounds reversed for {name!r}")
        return float(rng.uniform(spec.lo, spec.hi))
    if isinstance(spec, (list, tuple)):
        if not spec:
            raise ValueError(f"parameter {name!r} has no values")
        return spec[int(rng.integers(len(spec)))]
    raise ValueError(f"unsupported distribution for {name!r}: {spec!r}")


def random_search(X, y, base: BarnConfig | None = None, space: dict | None = None,
                  k: int = 5, n_iter_search: int = 10, scoring: str = "neg_rmse",
                  seed: int = 0) -> CvResult:
    """Randomized search: n_iter_search candidates drawn from distributions.

    space values may be Poisson(mu), UniformInt(lo, hi), Uniform(lo, hi), or a
    plain list sampled uniformly. Draws for positivity-requiring parameters
    (lam, num_nets, ...) are resampled until >= 1.
    """
    base = base or BarnConfig()
    X, y = _validate_inputs(X, y, k, scoring)
    if not space:
        raise ValueError("space must map at least one parameter to distributions")
    if n_iter_search < 1:
        raise ValueError("n_iter_search must be at least 1")
    rng = np.random.default_rng(seed)
    param_sets = [{name: _draw(name, spec, rng) for name, spec in space.items()}
                  for _ in range(n_iter_search)]
    return _evaluate(X, y, base, param_sets, k, scoring, seed)
