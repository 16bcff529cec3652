"""Ensemble fitting: Gibbs sweep mechanics, the running prediction-sum
cache, batch means, serialization round trips."""

import json
import math

import numpy as np
import pytest

import barn.ensemble as ens
import barn.mcmc as mcmc
from barn.datasets import gen_linear, ols_fit
from barn.ensemble import (BarnConfig, EnsembleState, TraceRecord,
                           batch_means, fit, load_model, load_trace,
                           model_from_json, model_to_json, predict,
                           save_model, save_trace)
from barn.mlp import SmallNet, forward


# ------------------------------------------------------------ batch means

def test_batch_means_constant():
    mean, se = batch_means([3.3] * 10, 5)
    assert mean == pytest.approx(3.3)
    assert se == 0.0


def test_batch_means_hand_example():
    # batches (1,2) and (3,4): means 1.5 and 3.5, sample sd sqrt(2)
    mean, se = batch_means([1.0, 2.0, 3.0, 4.0], 2)
    assert mean == pytest.approx(2.5, abs=1e-12)
    assert se == pytest.approx(1.0, abs=1e-12)


def test_batch_means_drops_trailing_remainder():
    assert batch_means([1.0, 2.0, 3.0, 4.0, 5.0], 2) == batch_means(
        [1.0, 2.0, 3.0, 4.0], 2)


def test_batch_means_iid_sanity():
    rng = np.random.default_rng(0)
    v = rng.standard_normal(10_000)
    mean, se = batch_means(v, 50)
    assert abs(mean) < 3.0 * se


def test_batch_means_validates():
    with pytest.raises(ValueError):
        batch_means([1.0, 2.0], 5)
    with pytest.raises(ValueError):
        batch_means([1.0, 2.0, 3.0], 1)


# ----------------------------------------------------------------- config

def test_config_defaults():
    cfg = BarnConfig()
    assert cfg.num_nets == 10
    assert cfg.n_iter == 200
    assert cfg.prior.lam == 1.0
    assert cfg.prior.p_grow == 0.4
    assert cfg.burn_in == 100  # half of n_iter when unset


def test_config_burn_in_explicit():
    assert BarnConfig(n_iter=50, burn_in=7).burn_in == 7
    assert BarnConfig(n_iter=50).burn_in == 25


def test_config_validation():
    with pytest.raises(ValueError):
        BarnConfig(num_nets=0)
    with pytest.raises(ValueError):
        BarnConfig(n_iter=0)
    with pytest.raises(ValueError):
        BarnConfig(burn_in=-1)
    with pytest.raises(ValueError):
        BarnConfig(n_iter=10, burn_in=10)
    with pytest.raises(ValueError):
        BarnConfig(evidence_split="test")
    with pytest.raises(ValueError):
        BarnConfig(heldout_fraction=0.0)


SMALL = BarnConfig(num_nets=3, n_iter=25, seed=0)


# -------------------------------------------------------------------- fit

def test_fit_constant_target():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((40, 2))
    y = np.full(40, 5.0)
    model, trace = fit(X, y, SMALL)
    rmse = float(np.sqrt(np.mean((predict(model, X) - y) ** 2)))
    assert rmse < 1e-2 * (abs(5.0) + 1.0)
    assert len(trace) == 25


def test_fit_linear_close_to_ols():
    ds = gen_linear(n=200, d=1, noise_sd=0.1, seed=4)
    split = int(0.8 * 200)
    Xtr, ytr = ds.X[:split], ds.y[:split]
    Xte, yte = ds.X[split:], ds.y[split:]
    model, _ = fit(Xtr, ytr, BarnConfig(seed=1))
    coef, ols_pred = ols_fit(type(ds)(X=Xtr, y=ytr, feature_names=ds.feature_names))
    barn_rmse = float(np.sqrt(np.mean((predict(model, Xte) - yte) ** 2)))
    ols_rmse = float(np.sqrt(np.mean((ols_pred(Xte) - yte) ** 2)))
    assert barn_rmse <= 1.10 * ols_rmse


def test_fit_deterministic_trace():
    ds = gen_linear(n=60, d=2, seed=2)
    _, tr_a = fit(ds.X, ds.y, SMALL)
    _, tr_b = fit(ds.X, ds.y, SMALL)
    assert len(tr_a) == len(tr_b)
    for a, b in zip(tr_a, tr_b):
        assert a.neuron_counts == b.neuron_counts
        assert a.ntrans == b.ntrans
        assert a.sigma == b.sigma
        assert a.train_rmse == b.train_rmse


def test_fit_rejects_bad_inputs():
    with pytest.raises(ValueError):
        fit(np.ones((5, 2)), np.ones(4), SMALL)
    with pytest.raises(ValueError):
        fit(np.array([[1.0, np.nan]] * 5), np.ones(5), SMALL)
    with pytest.raises(ValueError):
        fit(np.ones((0, 2)), np.ones(0), SMALL)


def test_fit_trace_fields():
    ds = gen_linear(n=50, d=2, seed=3)
    model, trace = fit(ds.X, ds.y, SMALL)
    for i, rec in enumerate(trace):
        assert rec.iter == i + 1
        assert len(rec.neuron_counts) == 3
        assert all(k >= 1 for k in rec.neuron_counts)
        assert 0 <= rec.ntrans <= 3
        assert rec.sigma > 0
        assert rec.val_rmse is None  # evidence on train rows


def test_fit_heldout_split_populates_val_rmse():
    ds = gen_linear(n=80, d=2, seed=5)
    cfg = BarnConfig(num_nets=3, n_iter=15, seed=0,
                     evidence_split="heldout", heldout_fraction=0.25)
    model, trace = fit(ds.X, ds.y, cfg)
    assert all(rec.val_rmse is not None and rec.val_rmse > 0 for rec in trace)
    assert model.fit_idx is not None and model.ev_idx is not None
    assert len(model.ev_idx) == 20
    together = np.sort(np.concatenate([model.fit_idx, model.ev_idx]))
    assert np.array_equal(together, np.arange(80))


# ----------------------------------------------- sweep mechanics via spies

def test_single_net_sees_full_target_as_residual(monkeypatch):
    captured = []
    real_train = ens.train

    def spy(net, X, r, cfg, rng):
        captured.append(r.copy())
        return real_train(net, X, r, cfg, rng)

    monkeypatch.setattr(ens, "train", spy)
    ds = gen_linear(n=40, d=2, seed=7)
    fit(ds.X, ds.y, BarnConfig(num_nets=1, n_iter=2, seed=0))
    ys = (ds.y - ds.y.mean()) / ds.y.std()
    # with a single net the backfitting residual is the whole target
    assert np.allclose(captured[0], ys, atol=1e-12)


def test_forced_reject_changes_nothing(monkeypatch):
    monkeypatch.setattr(mcmc, "accept", lambda log_ratio, rng: False)
    ds = gen_linear(n=40, d=2, seed=8)
    model, trace = fit(ds.X, ds.y, BarnConfig(num_nets=3, n_iter=10, seed=0))
    assert all(rec.ntrans == 0 for rec in trace)
    assert all(rec.neuron_counts == (1, 1, 1) for rec in trace)
    assert all(net.k == 1 for net in model.nets)


def test_pred_sum_matches_brute_force_every_sweep(monkeypatch):
    real_sweep = ens.gibbs_sweep
    devs = []

    def shadow(state, X, y, cfg):
        state, ntrans = real_sweep(state, X, y, cfg)
        brute = np.zeros(X.shape[0])
        for net in state.nets:
            brute += forward(net, X)
        devs.append(float(np.max(np.abs(brute - state.pred_sum))))
        return state, ntrans

    monkeypatch.setattr(ens, "gibbs_sweep", shadow)
    ds = gen_linear(n=80, d=3, seed=9)
    fit(ds.X, ds.y, BarnConfig(num_nets=4, n_iter=30, seed=0))
    assert len(devs) == 30
    assert max(devs) < 1e-8


def test_fit_never_recomputes_prediction_sum():
    ds = gen_linear(n=60, d=2, seed=10)
    model, _ = fit(ds.X, ds.y, SMALL)
    assert model.n_full_recomputes == 0


def test_recompute_counter_increments():
    # after fit the feature scaling lives inside the weights, so the full
    # recomputation runs on raw X and must agree with the cached sum
    ds = gen_linear(n=30, d=2, seed=11)
    model, _ = fit(ds.X, ds.y, BarnConfig(num_nets=2, n_iter=3, seed=0))
    before = model.n_full_recomputes
    brute = model.recompute_prediction_sum(ds.X)
    assert model.n_full_recomputes == before + 1
    assert np.allclose(brute, model.pred_sum, atol=1e-8)


# ---------------------------------------------------------------- predict

def test_predict_matches_training_cache():
    ds = gen_linear(n=70, d=2, seed=12)
    model, _ = fit(ds.X, ds.y, SMALL)
    # the stored cache is on the standardized scale
    cached = model.pred_sum * model.y_sd + model.y_mean
    assert np.allclose(predict(model, ds.X), cached, atol=1e-8)


def test_predict_bias_only_constant():
    nets = [SmallNet(np.zeros((1, 2)), np.zeros(1), np.zeros(1), 1.25),
            SmallNet(np.zeros((1, 2)), np.zeros(1), np.zeros(1), -0.25)]
    model = EnsembleState(nets=nets, sigma=1.0, pred_sum=None, rng=None,
                          config=BarnConfig(num_nets=2))
    out = predict(model, np.random.default_rng(0).standard_normal((6, 2)))
    assert np.allclose(out, 1.0)


def test_predict_pointwise():
    ds = gen_linear(n=50, d=2, seed=13)
    model, _ = fit(ds.X, ds.y, SMALL)
    X_new = np.vstack([ds.X[:5], ds.X[:5]])
    out = predict(model, X_new)
    assert np.array_equal(out[:5], out[5:])


def test_predict_validates_width():
    ds = gen_linear(n=30, d=2, seed=14)
    model, _ = fit(ds.X, ds.y, BarnConfig(num_nets=2, n_iter=3, seed=0))
    with pytest.raises(ValueError):
        predict(model, np.ones((4, 3)))


# ---------------------------------------------------------- serialization

def test_model_json_roundtrip_bitwise():
    ds = gen_linear(n=60, d=3, seed=15)
    model, _ = fit(ds.X, ds.y, SMALL)
    text = model_to_json(model)
    back = model_from_json(text)
    assert model_to_json(back) == text
    for a, b in zip(model.nets, back.nets):
        assert np.array_equal(a.W1, b.W1)
        assert np.array_equal(a.b1, b.b1)
        assert np.array_equal(a.w2, b.w2)
        assert a.b2 == b.b2
        assert a.activation == b.activation
    assert back.sigma == model.sigma
    assert back.y_mean == model.y_mean
    assert back.y_sd == model.y_sd
    assert back.task == model.task
    X_new = np.random.default_rng(0).standard_normal((8, 3))
    assert np.array_equal(predict(back, X_new), predict(model, X_new))


def test_model_json_schema():
    ds = gen_linear(n=40, d=2, seed=16)
    model, _ = fit(ds.X, ds.y, BarnConfig(num_nets=2, n_iter=4, seed=0))
    doc = json.loads(model_to_json(model))
    assert doc["version"] == 1
    assert doc["task"] == "regression"
    assert set(doc["standardization"]) == {"y_mean", "y_sd"}
    assert len(doc["nets"]) == 2
    net0 = doc["nets"][0]
    assert set(net0) >= {"k", "W1", "b1", "w2", "b2", "activation"}
    assert len(net0["W1"]) == net0["k"]
    assert isinstance(net0["W1"][0], list)


def test_model_file_roundtrip(tmp_path):
    ds = gen_linear(n=40, d=2, seed=17)
    model, _ = fit(ds.X, ds.y, BarnConfig(num_nets=2, n_iter=4, seed=0))
    path = tmp_path / "model.json"
    save_model(model, path)
    again = load_model(path)
    save_model(again, tmp_path / "model2.json")
    assert (tmp_path / "model.json").read_bytes() == \
        (tmp_path / "model2.json").read_bytes()


def test_trace_roundtrip(tmp_path):
    ds = gen_linear(n=40, d=2, seed=18)
    _, trace = fit(ds.X, ds.y, BarnConfig(num_nets=2, n_iter=6, seed=0))
    path = tmp_path / "trace.jsonl"
    save_trace(trace, path)
    back = load_trace(path)
    assert len(back) == len(trace)
    for a, b in zip(trace, back):
        assert a.iter == b.iter
        assert a.neuron_counts == b.neuron_counts
        assert a.ntrans == b.ntrans
        assert a.sigma == b.sigma
        assert a.train_rmse == b.train_rmse
        assert a.val_rmse == b.val_rmse
    text = path.read_text().strip().splitlines()
    assert len(text) == 6
    json.loads(text[0])  # each line is standalone json


def test_model_from_json_rejects_unknown_version():
    ds = gen_linear(n=30, d=2, seed=19)
    model, _ = fit(ds.X, ds.y, BarnConfig(num_nets=2, n_iter=3, seed=0))
    doc = json.loads(model_to_json(model))
    doc["version"] = 99
    with pytest.raises(ValueError):
        model_from_json(json.dumps(doc))


# ---------------------------------------------------------- standardizing

def test_targets_standardized_internally():
    # shifting and scaling y should leave the standardized-scale trace alone
    ds = gen_linear(n=60, d=2, seed=20)
    cfg = BarnConfig(num_nets=3, n_iter=10, seed=0)
    _, tr_a = fit(ds.X, ds.y, cfg)
    _, tr_b = fit(ds.X, ds.y * 100.0 + 7.0, cfg)
    for a, b in zip(tr_a, tr_b):
        assert a.train_rmse == pytest.approx(b.train_rmse, rel=1e-9)
        assert a.neuron_counts == b.neuron_counts


def test_wide_feature_scales_are_handled():
    rng = np.random.default_rng(21)
    X = np.column_stack([rng.uniform(0, 1, 120), rng.uniform(0, 1700, 120)])
    y = X[:, 0] + X[:, 1] / 1000.0
    model, _ = fit(X, y, BarnConfig(num_nets=3, n_iter=30, seed=0))
    rmse = float(np.sqrt(np.mean((predict(model, X) - y) ** 2)))
    assert rmse < 0.5 * float(np.std(y))
