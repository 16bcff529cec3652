"""Additive ensemble of small nets, sampled by a Gibbs sweep over architectures.

fit() runs the sampler: every sweep visits each net in order, proposes growing
or shrinking it by one neuron, retrains the proposal on the partial residual,
and accepts or rejects by Metropolis-Hastings. The returned model is the state
at the last completed sweep.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import mcmc
from .callbacks import CallbackContext, StopSignal
from .mlp import SmallNet, TrainConfig, donate_weights, forward, train

MODEL_FORMAT_VERSION = 1

EVIDENCE_SPLITS = ("train", "heldout")


@dataclass(frozen=True)
class BarnConfig:
    """Full configuration of one sampler run.

    burn_in defaults to n_iter // 2 when left unset. evidence_split chooses the
    rows the acceptance ratio is evaluated on: "train" reuses the training rows,
    "heldout" reserves heldout_fraction of them up front (also enabling the
    validation series that validation_stop consumes).
    """

    num_nets: int = 10
    n_iter: int = 200
    prior: mcmc.PriorConfig = field(default_factory=mcmc.PriorConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0
    burn_in: int | None = None
    evidence_split: str = "train"
    heldout_fraction: float = 0.25

    def __post_init__(self):
        if self.num_nets < 1:
            raise ValueError("num_nets must be at least 1")
        if self.n_iter < 1:
            raise ValueError("n_iter must be at least 1")
        if self.burn_in is None:
            object.__setattr__(self, "burn_in", self.n_iter // 2)
        if not 0 <= self.burn_in < self.n_iter:
            raise ValueError("burn_in must lie in [0, n_iter)")
        if self.evidence_split not in EVIDENCE_SPLITS:
            raise ValueError(f"evidence_split must be one of {EVIDENCE_SPLITS}")
        if not 0.0 < self.heldout_fraction < 1.0:
            raise ValueError("heldout_fraction must be in (0, 1)")


@dataclass(frozen=True)
class TraceRecord:
    """Diagnostics of one completed sweep. RMSEs are on the standardized scale."""

    iter: int
    neuron_counts: tuple
    ntrans: int
    sigma: float
    train_rmse: float
    val_rmse: float | None = None


@dataclass
class EnsembleState:
    """Sampler state; doubles as the returned model.

    pred_sum caches the summed predictions of all nets on the (standardized)
    training rows and is updated incrementally on accepted moves only;
    recompute_prediction_sum exists for test oracles and counts its own calls.
    On a returned model the nets are in raw input coordinates (the internal
    feature scaling has been folded into W1/b1) and x_mean/x_sd are None.
    """

    nets: list
    sigma: float
    pred_sum: np.ndarray | None
    rng: np.random.Generator | None
    config: BarnConfig
    task: str = "regression"
    y_mean: float = 0.0
    y_sd: float = 1.0
    x_mean: np.ndarray | None = None
    x_sd: np.ndarray | None = None
    fit_idx: np.ndarray | None = None
    ev_idx: np.ndarray | None = None
    net_preds: np.ndarray | None = None
    stopped_early: StopSignal | None = None
    n_full_recomputes: int = 0

    @property
    def num_nets(self) -> int:
        return len(self.nets)

    @property
    def d(self) -> int:
        return self.nets[0].d

    def neuron_counts(self) -> tuple:
        return tuple(net.k for net in self.nets)

    def recompute_prediction_sum(self, X: np.ndarray) -> np.ndarray:
        """Full O(num_nets * n) recomputation; never called on the fit path."""
        self.n_full_recomputes += 1
        total = np.zeros(np.asarray(X).shape[0])
        for net in self.nets:
            total += forward(net, X)
        return total


def batch_means(values: Sequence[float], n_batches: int) -> tuple[float, float]:
    """Batch-means estimate (mean, standard error) of a series.

    The series is cut into n_batches equal batches (trailing remainder
    dropped); the standard error is the sample sd of the batch means divided
    by sqrt(n_batches).
    """
    v = np.asarray(values, dtype=float).ravel()
    if n_batches < 2:
        raise ValueError("n_batches must be at least 2")
    if v.size < n_batches:
        raise ValueError("need at least one value per batch")
    b = v.size // n_batches
    means = v[: b * n_batches].reshape(n_batches, b).mean(axis=1)
    se = float(means.std(ddof=1) / math.sqrt(n_batches))
    return float(means.mean()), se


def _rmse(e: np.ndarray) -> float:
    return float(math.sqrt(float(e @ e) / e.size))


def gibbs_sweep(state: EnsembleState, X: np.ndarray, y: np.ndarray,
                cfg: BarnConfig) -> tuple[EnsembleState, int]:
    """One sweep over all nets in fixed order 0..num_nets-1.

    X and y are the internal (standardized) training arrays. For each net,
    the residual against the rest of the ensemble is recomputed from the
    cached pred_sum, a resize proposal is trained on the fit rows, and the
    move is accepted on the evidence rows. Returns the accepted-move count.
    """
    rng = state.rng
    fit_idx, ev_idx = state.fit_idx, state.ev_idx
    X_fit = X if fit_idx is None else X[fit_idx]
    ntrans = 0
    for j in range(cfg.num_nets):
        net = state.nets[j]
        preds_old = state.net_preds[j]
        r = y - state.pred_sum + preds_old
        k_new = mcmc.propose_size(net.k, cfg.prior.p_grow, rng)
        cand = donate_weights(net, k_new, rng)
        r_fit = r if fit_idx is None else r[fit_idx]
        cand = train(cand, X_fit, r_fit, cfg.train, rng)
        preds_new = forward(cand, X)
        if ev_idx is None:
            ratio = mcmc.log_accept_ratio(net, cand, preds_old, preds_new, r,
                                          state.sigma, cfg.prior)
        else:
            ratio = mcmc.log_accept_ratio(net, cand, preds_old[ev_idx],
                                          preds_new[ev_idx], r[ev_idx],
                                          state.sigma, cfg.prior)
        if mcmc.accept(ratio, rng):
            state.pred_sum += preds_new - preds_old
            state.net_preds[j] = preds_new
            state.nets[j] = cand
            ntrans += 1
    return state, ntrans


def _standardize(values: np.ndarray, axis=None):
    mean = values.mean(axis=axis)
    sd = values.std(axis=axis)
    sd = np.where(sd < 1e-12, 1.0, sd) if np.ndim(sd) else (sd if sd >= 1e-12 else 1.0)
    return mean, sd


def _fold_input_scaling(net: SmallNet, x_mean: np.ndarray, x_sd: np.ndarray) -> SmallNet:
    # net was trained on (x - mean) / sd; absorb that affine map into W1/b1 so
    # the stored net acts on raw inputs.
    W1 = net.W1 / x_sd
    b1 = net.b1 - W1 @ x_mean
    return SmallNet(W1, b1, net.w2.copy(), net.b2, net.activation)


def _validate_xy(X, y):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim != 2:
        raise ValueError(f"X must be 2-D, got shape {X.shape}")
    if X.shape[0] != y.shape[0]:
        raise ValueError(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
    if X.shape[0] < 2:
        raise ValueError("need at least 2 rows")
    if X.shape[1] < 1:
        raise ValueError("need at least 1 feature")
    if not np.all(np.isfinite(X)) or not np.all(np.isfinite(y)):
        raise ValueError("X and y must be finite (no NaN or Inf)")
    return X, y


def _fit_core(X, y, cfg, callbacks, task,
              latent_sampler: Callable | None = None):
    X, y_raw = _validate_xy(X, y)
    n, d = X.shape
    rng = np.random.default_rng(cfg.seed)

    x_mean, x_sd = _standardize(X, axis=0)
    Xs = (X - x_mean) / x_sd

    if task == "binary":
        labels = y_raw
        y_mean, y_sd = 0.0, 1.0
        ys = np.zeros(n)  # replaced by the first latent draw
    else:
        y_mean, y_sd = _standardize(y_raw)
        ys = (y_raw - y_mean) / y_sd

    fit_idx = ev_idx = None
    if cfg.evidence_split == "heldout":
        perm = rng.permutation(n)
        n_ev = max(1, round(cfg.heldout_fraction * n))
        if n_ev >= n:
            raise ValueError("heldout_fraction leaves no training rows")
        ev_idx = np.sort(perm[:n_ev])
        fit_idx = np.sort(perm[n_ev:])

    # all nets start as a single neuron splitting the target mean
    b2_init = float(ys.mean()) / cfg.num_nets
    nets = []
    for _ in range(cfg.num_nets):
        nets.append(SmallNet(rng.normal(0.0, 0.1, size=(1, d)),
                             rng.normal(0.0, 0.1, size=1),
                             rng.normal(0.0, 0.1, size=1),
                             b2_init, "relu"))

    state = EnsembleState(nets=nets, sigma=1.0, pred_sum=None, rng=rng,
                          config=cfg, task=task, y_mean=float(y_mean),
                          y_sd=float(y_sd), x_mean=x_mean, x_sd=x_sd,
                          fit_idx=fit_idx, ev_idx=ev_idx)
    state.net_preds = np.stack([forward(net, Xs) for net in nets])
    state.pred_sum = state.net_preds.sum(axis=0)

    if task == "binary":
        state.sigma = 1.0
    else:
        state.sigma = mcmc.sample_sigma(ys - state.pred_sum, cfg.prior, rng)

    trace: list[TraceRecord] = []
    val_errors: list[float] = []
    for t in range(cfg.n_iter):
        if task == "binary":
            ys = latent_sampler(labels, state.pred_sum, rng)
        state, ntrans = gibbs_sweep(state, Xs, ys, cfg)
        if task != "binary":
            state.sigma = mcmc.sample_sigma(ys - state.pred_sum, cfg.prior, rng)
        err = ys - state.pred_sum
        train_rmse = _rmse(err if fit_idx is None else err[fit_idx])
        val_rmse = None if ev_idx is None else _rmse(err[ev_idx])
        trace.append(TraceRecord(iter=t + 1, neuron_counts=state.neuron_counts(),
                                 ntrans=ntrans, sigma=state.sigma,
                                 train_rmse=train_rmse, val_rmse=val_rmse))
        if val_rmse is not None:
            val_errors.append(val_rmse)
        ctx = CallbackContext(iter=t + 1, n_iter=cfg.n_iter,
                              num_nets=cfg.num_nets, trace=trace,
                              val_errors=val_errors, burn_in=cfg.burn_in)
        signal = None
        for cb in callbacks:
            signal = cb(ctx)
            if signal is not None:
                break
        if signal is not None:
            state.stopped_early = signal
            break

    state.nets = [_fold_input_scaling(net, x_mean, x_sd) for net in state.nets]
    state.x_mean = None
    state.x_sd = None
    return state, trace


def fit(X, y, cfg: BarnConfig | None = None, callbacks: Sequence[Callable] = ()):
    """Run the sampler on regression data.

    Parameters
    ----------
    X, y : array-like
        Training rows (n, d) and targets (n,). Must be finite; the target is
        standardized internally and predictions are mapped back.
    cfg : BarnConfig, optional
        Defaults to BarnConfig().
    callbacks : sequence of callables
        Each maps a CallbackContext to StopSignal or None, checked after
        every sweep; the first signal ends the run early (flagged on the
        returned model, not an error).

    Returns
    -------
    (model, trace) : EnsembleState and list of TraceRecord
        The state at the last completed sweep and one record per sweep.
    """
    return _fit_core(X, y, cfg or BarnConfig(), callbacks, task="regression")


def predict(model: EnsembleState, X_new) -> np.ndarray:
    """Sum the nets on new rows and map back to the original target scale."""
    X_new = np.asarray(X_new, dtype=float)
    if X_new.ndim != 2:
        raise ValueError(f"X_new must be 2-D, got shape {X_new.shape}")
    if X_new.shape[1] != model.d:
        raise ValueError(f"model expects {model.d} features, got {X_new.shape[1]}")
    total = np.zeros(X_new.shape[0])
    for net in model.nets:
        total += forward(net, X_new)
    return model.y_mean + model.y_sd * total


def _net_to_dict(net: SmallNet) -> dict:
    return {
        "k": net.k,
        "W1": [list(row) for row in net.W1],
        "b1": list(net.b1),
        "w2": list(net.w2),
        "b2": net.b2,
        "activation": net.activation,
    }


def _net_from_dict(obj: dict) -> SmallNet:
    return SmallNet(np.array(obj["W1"], dtype=float),
                    np.array(obj["b1"], dtype=float),
                    np.array(obj["w2"], dtype=float),
                    float(obj["b2"]), obj["activation"])


def _config_to_dict(cfg: BarnConfig) -> dict:
    prior = {"lam": cfg.prior.lam, "p_grow": cfg.prior.p_grow,
             "sigma_nu": cfg.prior.sigma_nu, "sigma_lambda": cfg.prior.sigma_lambda}
    train_cfg = {"solver": cfg.train.solver, "learning_rate": cfg.train.learning_rate,
                 "reg_l1": cfg.train.reg_l1, "reg_l2": cfg.train.reg_l2,
                 "max_epochs": cfg.train.max_epochs, "tol": cfg.train.tol}
    return {"num_nets": cfg.num_nets, "n_iter": cfg.n_iter, "seed": cfg.seed,
            "burn_in": cfg.burn_in, "evidence_split": cfg.evidence_split,
            "heldout_fraction": cfg.heldout_fraction, "prior": prior,
            "train": train_cfg}


def _config_from_dict(obj: dict) -> BarnConfig:
    prior = mcmc.PriorConfig(**obj["prior"])
    train_cfg = TrainConfig(**obj["train"])
    return BarnConfig(num_nets=obj["num_nets"], n_iter=obj["n_iter"],
                      prior=prior, train=train_cfg, seed=obj["seed"],
                      burn_in=obj["burn_in"], evidence_split=obj["evidence_split"],
                      heldout_fraction=obj["heldout_fraction"])


def model_to_json(model: EnsembleState) -> str:
    """Serialize a fitted model. Floats keep full round-trip precision."""
    doc = {
        "version": MODEL_FORMAT_VERSION,
        "task": model.task,
        "config": _config_to_dict(model.config),
        "standardization": {"y_mean": model.y_mean, "y_sd": model.y_sd},
        "sigma": model.sigma,
        "nets": [_net_to_dict(net) for net in model.nets],
    }
    return json.dumps(doc, indent=2)


def model_from_json(text: str) -> EnsembleState:
    doc = json.loads(text)
    if doc.get("version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {doc.get('version')!r}")
    std = doc["standardization"]
    return EnsembleState(nets=[_net_from_dict(o) for o in doc["nets"]],
                         sigma=float(doc["sigma"]), pred_sum=None, rng=None,
                         config=_config_from_dict(doc["config"]),
                         task=doc.get("task", "regression"),
                         y_mean=float(std["y_mean"]), y_sd=float(std["y_sd"]))


def save_model(model: EnsembleState, path) -> None:
    with open(path, "w") as fh:
        fh.write(model_to_json(model))
        fh.write("\n")


def load_model(path) -> EnsembleState:
    with open(path) as fh:
        return model_from_json(fh.read())


def save_trace(trace: Sequence[TraceRecord], path) -> None:
    """Write the trace as JSON lines, one record per completed sweep."""
    with open(path, "w") as fh:
        for rec in trace:
            fh.write(json.dumps({"iter": rec.iter,
                                 "neuron_counts": list(rec.neuron_counts),
                                 "ntrans": rec.ntrans, "sigma": rec.sigma,
                                 "train_rmse": rec.train_rmse,
                                 "val_rmse": rec.val_rmse}))
            fh.write("\n")


def load_trace(path) -> list[TraceRecord]:
    out = []
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            out.append(TraceRecord(iter=obj["iter"],
                                   neuron_counts=tuple(obj["neuron_counts"]),
                                   ntrans=obj["ntrans"], sigma=obj["sigma"],
                                   train_rmse=obj["train_rmse"],
                                   val_rmse=obj["val_rmse"]))
    return out
