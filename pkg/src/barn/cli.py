"""Command-line front end: train, predict, classify, tune, bench.

Exit codes: 0 success, 2 flag errors, 3 data errors, 4 numeric failures.
Diagnostics go to stderr; with --stdout the primary tabular output goes to
stdout instead of (only) a file.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import classify, datasets, ensemble, tuning
from .callbacks import make_stop_callback
from .mcmc import PriorConfig, SamplerError
from .mlp import TrainConfig, TrainingError

SOLVER_FLAGS = {"auto": "auto", "lbfgs-like": "quasi_newton", "adam": "adam"}
STOP_CHOICES = ("validation", "trans", "wasserstein", "rfwsr", "none")
SUITES = ("linear", "f1", "f2", "f3")
BENCH_NOISE = {"linear": 0.1, "f1": 1.0, "f2": 125.0, "f3": 0.1}


class FlagError(Exception):
    """Flag combinations argparse cannot catch on its own."""


def _say(msg: str, to_stderr: bool = False):
    print(msg, file=sys.stderr if to_stderr else sys.stdout)


def _file_fingerprint(path) -> dict:
    digest = hashlib.sha256(Path(path).read_bytes()).hexdigest()
    return {"sha256": digest}


def _array_fingerprint(X: np.ndarray, y: np.ndarray) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(X).tobytes())
    h.update(np.ascontiguousarray(y).tobytes())
    return h.hexdigest()


def _manifest_path(args, primary) -> Path:
    if getattr(args, "out_manifest", None):
        return Path(args.out_manifest)
    return Path(primary).with_suffix(".manifest.json")


def _write_manifest(path, command, config, seed, dataset, wall_seconds,
                    stopped_early, artifacts):
    doc = {"command": command, "config": config, "seed": seed,
           "dataset": dataset, "wall_seconds": wall_seconds,
           "stopped_early": stopped_early, "artifacts": artifacts}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def _add_data_flags(p, need_target=True):
    p.add_argument("--data", required=True, help="CSV file with the dataset")
    p.add_argument("--target", required=need_target,
                   help="name of the target column"
                        + ("" if need_target else " (dropped if present)"))
    p.add_argument("--no-header", action="store_true",
                   help="CSV has no header row; columns are col0..colN")


def _add_model_flags(p):
    p.add_argument("--num-nets", type=int, default=10, help="ensemble size")
    p.add_argument("--l", type=float, default=1.0, dest="lam",
                   help="Poisson mean of the neuron-count prior")
    p.add_argument("--p", type=float, default=0.4, dest="p_grow",
                   help="grow probability of the size proposal")
    p.add_argument("--iters", type=int, default=200, help="MCMC sweeps")
    p.add_argument("--burn-in", type=int, default=None,
                   help="burn-in sweeps (default iters//2)")
    p.add_argument("--solver", choices=sorted(SOLVER_FLAGS), default="auto")
    p.add_argument("--lr", type=float, default=0.01, help="adam learning rate")
    p.add_argument("--reg-l1", type=float, default=0.01)
    p.add_argument("--reg-l2", type=float, default=0.01)
    p.add_argument("--max-epochs", type=int, default=200,
                   help="training steps per proposal")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--evidence", choices=("train", "heldout"), default="train",
                   help="rows the acceptance ratio is evaluated on")
    p.add_argument("--heldout-fraction", type=float, default=0.25)


def _add_stop_flags(p):
    p.add_argument("--stop", choices=STOP_CHOICES, default="none",
                   help="early-stopping rule")
    p.add_argument("--patience", type=int, default=3)
    p.add_argument("--ntrans", type=int, default=None,
                   help="accepted-move threshold (default num_nets//5)")
    p.add_argument("--w1-threshold", type=float, default=0.1)
    p.add_argument("--eps-rel", type=float, default=0.05)
    p.add_argument("--check-every", type=int, default=None,
                   help="check cadence (default iters//10)")


def _config_from_args(args) -> ensemble.BarnConfig:
    prior = PriorConfig(lam=args.lam, p_grow=args.p_grow)
    train_cfg = TrainConfig(solver=SOLVER_FLAGS[args.solver],
                            learning_rate=args.lr, reg_l1=args.reg_l1,
                            reg_l2=args.reg_l2, max_epochs=args.max_epochs)
    return ensemble.BarnConfig(num_nets=args.num_nets, n_iter=args.iters,
                               prior=prior, train=train_cfg, seed=args.seed,
                               burn_in=args.burn_in,
                               evidence_split=args.evidence,
                               heldout_fraction=args.heldout_fraction)


def _callbacks_from_args(args):
    if args.stop == "none":
        return []
    if args.stop == "validation" and args.evidence != "heldout":
        raise FlagError("--stop validation requires --evidence heldout")
    params = {}
    if args.check_every is not None and args.stop != "rfwsr":
        params["check_every"] = args.check_every
    if args.stop == "validation":
        params["patience"] = args.patience
    elif args.stop == "trans" and args.ntrans is not None:
        params["ntrans"] = args.ntrans
    elif args.stop == "wasserstein":
        params["threshold"] = args.w1_threshold
    elif args.stop == "rfwsr":
        params["eps_rel"] = args.eps_rel
    return [make_stop_callback(args.stop, **params)]


def _rmse(a, b) -> float:
    e = np.asarray(a, float) - np.asarray(b, float)
    return float(np.sqrt(np.mean(e * e)))


def _run_fit(args, task):
    ds = datasets.load_csv(args.data, args.target, header=not args.no_header)
    cfg = _config_from_args(args)
    callbacks = _callbacks_from_args(args)
    started = time.perf_counter()
    if task == "binary":
        model, trace = classify.fit_bin(ds.X, ds.y, cfg, callbacks)
    else:
        model, trace = ensemble.fit(ds.X, ds.y, cfg, callbacks)
    wall = time.perf_counter() - started

    out_model = Path(args.out_model)
    ensemble.save_model(model, out_model)
    artifacts = {"model": str(out_model)}
    if args.out_trace:
        ensemble.save_trace(trace, args.out_trace)
        artifacts["trace"] = str(args.out_trace)

    stopped = model.stopped_early.reason if model.stopped_early else None
    dataset_info = {"path": str(args.data), "rows": ds.n, "cols": ds.d + 1,
                    **_file_fingerprint(args.data)}
    manifest = _manifest_path(args, out_model)
    _write_manifest(manifest, "classify" if task == "binary" else "train",
                    ensemble._config_to_dict(cfg), args.seed, dataset_info,
                    wall, stopped, artifacts)

    if task == "binary":
        proba = classify.predict_proba(model, ds.X)
        acc = float(np.mean((proba >= 0.5) == (ds.y >= 0.5)))
        _say(f"seed={args.seed} sweeps={len(trace)} train_acc={acc:.4f}"
             + (f" stopped_early={stopped}" if stopped else ""))
    else:
        train_rmse = _rmse(ensemble.predict(model, ds.X), ds.y)
        val_rmse = trace[-1].val_rmse
        val_part = (f" val_rmse={val_rmse * model.y_sd:.6g}"
                    if val_rmse is not None else "")
        _say(f"seed={args.seed} sweeps={len(trace)} "
             f"train_rmse={train_rmse:.6g}{val_part}"
             + (f" stopped_early={stopped}" if stopped else ""))
    _say(f"model written to {out_model}; manifest {manifest}", to_stderr=True)
    return 0


def cmd_train(args):
    return _run_fit(args, "regression")


def cmd_classify(args):
    return _run_fit(args, "binary")


def _read_full_matrix(path, header: bool) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = [row for row in csv.reader(fh) if row]
    if not rows:
        raise ValueError(f"{path}: file is empty")
    data_rows = rows[1:] if header else rows
    first_line = 2 if header else 1
    if not data_rows:
        raise ValueError(f"{path}: no data rows")
    width = len(rows[0])
    mat = np.empty((len(data_rows), width))
    for i, row in enumerate(data_rows):
        if len(row) != width:
            raise ValueError(f"{path}: row {first_line + i} has {len(row)} "
                             f"cells, expected {width}")
        for j, cell in enumerate(row):
            try:
                mat[i, j] = float(cell)
            except ValueError:
                raise ValueError(f"{path}: row {first_line + i}: non-numeric "
                                 f"value {cell!r}") from None
    return mat


def _load_predict_matrix(args, model):
    if args.target:
        X = datasets.load_csv(args.data, args.target,
                              header=not args.no_header).X
    else:
        X = _read_full_matrix(args.data, header=not args.no_header)
    if X.shape[1] != model.d:
        raise ValueError(f"model expects {model.d} feature columns, data has "
                         f"{X.shape[1]}")
    return X


def cmd_predict(args):
    model = ensemble.load_model(args.model)
    if args.proba and model.task != "binary":
        raise FlagError("--proba needs a binary model; this one is regression")
    X = _load_predict_matrix(args, model)

    buf = io.StringIO()
    writer = csv.writer(buf)
    if model.task == "binary":
        z = classify.predict_z(model, X)
        proba = classify.predict_proba(model, X)
        writer.writerow(["proba", "z"])
        for p, zi in zip(proba, z):
            writer.writerow([repr(float(p)), repr(float(zi))])
    else:
        pred = ensemble.predict(model, X)
        writer.writerow(["pred"])
        for v in pred:
            writer.writerow([repr(float(v))])
    text = buf.getvalue()

    artifacts = {}
    if args.out_pred:
        Path(args.out_pred).write_text(text)
        artifacts["predictions"] = str(args.out_pred)
    if args.stdout or not args.out_pred:
        sys.stdout.write(text)

    primary = args.out_pred or "predictions.csv"
    manifest = _manifest_path(args, primary)
    _write_manifest(manifest, "predict", {"model": str(args.model)}, None,
                    {"path": str(args.data), "rows": int(X.shape[0]),
                     "cols": int(X.shape[1]), **_file_fingerprint(args.data)},
                    0.0, None, artifacts)
    _say(f"{X.shape[0]} predictions; manifest {manifest}", to_stderr=True)
    return 0


def _parse_value(text: str):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            continue
    return SOLVER_FLAGS.get(text, text)


def _parse_grid(text: str) -> dict:
    space = {}
    for part in filter(None, (p.strip() for p in text.split(";"))):
        if "=" not in part:
            raise FlagError(f"grid entry {part!r} is not name=v1,v2,...")
        name, _, values = part.partition("=")
        vals = [_parse_value(v.strip()) for v in values.split(",") if v.strip()]
        if not vals:
            raise FlagError(f"grid entry {part!r} has no values")
        space[name.strip()] = vals
    if not space:
        raise FlagError("the grid is empty")
    return space


def _parse_random_space(text: str) -> dict:
    space = {}
    for part in filter(None, (p.strip() for p in text.split(";"))):
        if "~" in part:
            name, _, spec = part.partition("~")
            spec = spec.strip()
            if not (spec.endswith(")") and "(" in spec):
                raise FlagError(f"distribution {spec!r} is not tag(args)")
            tag, _, inner = spec[:-1].partition("(")
            params = [s.strip() for s in inner.split(",") if s.strip()]
            tag = tag.strip()
            try:
                if tag == "poisson" and len(params) == 1:
                    dist = tuning.Poisson(float(params[0]))
                elif tag == "uniform_int" and len(params) == 2:
                    dist = tuning.UniformInt(int(params[0]), int(params[1]))
                elif tag == "uniform" and len(params) == 2:
                    dist = tuning.Uniform(float(params[0]), float(params[1]))
                else:
                    raise FlagError(f"unknown distribution {spec!r}")
            except ValueError:
                raise FlagError(f"bad arguments in {spec!r}") from None
            space[name.strip()] = dist
        elif "=" in part:
            name, _, values = part.partition("=")
            space[name.strip()] = [_parse_value(v.strip())
                                   for v in values.split(",") if v.strip()]
        else:
            raise FlagError(f"entry {part!r} is neither name~dist() nor name=v1,v2")
    if not space:
        raise FlagError("the search space is empty")
    return space


def cmd_tune(args):
    if bool(args.grid) == bool(args.random):
        raise FlagError("exactly one of --grid or --random is required")
    ds = datasets.load_csv(args.data, args.target, header=not args.no_header)
    base = _config_from_args(args)
    scoring = "neg_log_loss" if args.task == "binary" else "neg_rmse"

    started = time.perf_counter()
    if args.grid:
        space = _parse_grid(args.grid)
        result = tuning.grid_search(ds.X, ds.y, base, space, k=args.k,
                                    scoring=scoring)
    else:
        space = _parse_random_space(args.random)
        result = tuning.random_search(ds.X, ds.y, base, space, k=args.k,
                                      n_iter_search=args.n_candidates,
                                      scoring=scoring, seed=args.seed)
    wall = time.perf_counter() - started

    names = sorted({n for c in result.candidates for n in c["params"]})
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["candidate"] + names + ["mean_score"]
                    + [f"fold_{i}" for i in range(args.k)])
    for idx, cand in enumerate(result.candidates):
        row = [idx] + [cand["params"].get(n, "") for n in names]
        row.append(repr(cand["mean_score"]))
        row.extend(repr(s) for s in cand["fold_scores"])
        writer.writerow(row)
    text = buf.getvalue()

    artifacts = {}
    Path(args.out_csv).write_text(text)
    artifacts["candidates"] = str(args.out_csv)
    with open(args.out_best, "w") as fh:
        json.dump({"params": result.best_params,
                   "mean_score": result.best_score,
                   "candidate": result.best_index}, fh, indent=2)
        fh.write("\n")
    artifacts["best_params"] = str(args.out_best)
    if args.out_model:
        ensemble.save_model(result.model, args.out_model)
        artifacts["model"] = str(args.out_model)
    if args.stdout:
        sys.stdout.write(text)

    manifest = _manifest_path(args, args.out_best)
    _write_manifest(manifest, "tune",
                    {"base": ensemble._config_to_dict(base),
                     "grid": args.grid, "random": args.random,
                     "n_candidates": args.n_candidates, "k": args.k,
                     "scoring": scoring},
                    args.seed,
                    {"path": str(args.data), "rows": ds.n, "cols": ds.d + 1,
                     **_file_fingerprint(args.data)},
                    wall, None, artifacts)
    _say(f"seed={args.seed} candidates={len(result.candidates)} "
         f"best={result.best_params} score={result.best_score:.6g}")
    _say(f"candidates {args.out_csv}; best {args.out_best}; manifest {manifest}",
         to_stderr=True)
    return 0


def _gen_suite(suite: str, n: int, seed: int) -> datasets.Dataset:
    if suite == "linear":
        return datasets.gen_linear(n, d=5, noise_sd=BENCH_NOISE["linear"], seed=seed)
    return datasets.gen_friedman(suite, n, noise_sd=BENCH_NOISE[suite], seed=seed)


def _bench_task(payload):
    suite, n, seed, cfg = payload
    ds = _gen_suite(suite, n, seed)
    tr, te = datasets.train_test_split(ds, test_fraction=0.2, seed=seed)
    out = {}

    started = time.perf_counter()
    _, ols_predict = datasets.ols_fit(tr)
    out["ols"] = (_rmse(ols_predict(te.X), te.y), time.perf_counter() - started)

    started = time.perf_counter()
    nn_predict = datasets.bignn_fit(tr, k=100, seed=seed)
    out["bignn"] = (_rmse(nn_predict(te.X), te.y), time.perf_counter() - started)

    started = time.perf_counter()
    model, _ = ensemble.fit(tr.X, tr.y, replace(cfg, seed=seed))
    out["barn"] = (_rmse(ensemble.predict(model, te.X), te.y),
                   time.perf_counter() - started)
    return suite, out


def cmd_bench(args):
    suites = (list(SUITES) if args.suite == "all"
              else [s.strip() for s in args.suite.split(",") if s.strip()])
    for s in suites:
        if s not in SUITES:
            raise FlagError(f"unknown suite {s!r} (choose from {', '.join(SUITES)})")
    if args.trials < 1:
        raise FlagError("--trials must be at least 1")
    cfg = _config_from_args(args)

    payloads = [(suite, args.n, args.seed + t, cfg)
                for suite in suites for t in range(args.trials)]
    workers = tuning.worker_limit()
    started = time.perf_counter()
    if workers > 1 and len(payloads) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(payloads))) as pool:
            results = list(pool.map(_bench_task, payloads))
    else:
        results = [_bench_task(p) for p in payloads]
    wall = time.perf_counter() - started

    by_suite = {s: {"ols": [], "bignn": [], "barn": []} for s in suites}
    for suite, out in results:
        for method, pair in out.items():
            by_suite[suite][method].append(pair)

    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["suite", "method", "mean_rmse", "mean_seconds", "rel_time"])
    for suite in suites:
        ols_secs = float(np.mean([s for _, s in by_suite[suite]["ols"]]))
        for method in ("ols", "bignn", "barn"):
            pairs = by_suite[suite][method]
            mean_rmse = float(np.mean([r for r, _ in pairs]))
            mean_secs = float(np.mean([s for _, s in pairs]))
            writer.writerow([suite, method, repr(mean_rmse), repr(mean_secs),
                             repr(mean_secs / ols_secs)])
    text = buf.getvalue()

    artifacts = {}
    if args.out:
        Path(args.out).write_text(text)
        artifacts["results"] = str(args.out)
    if args.stdout or not args.out:
        sys.stdout.write(text)

    fingerprints = {}
    for suite in suites:
        ds = _gen_suite(suite, args.n, args.seed)
        fingerprints[suite] = _array_fingerprint(ds.X, ds.y)
    manifest = _manifest_path(args, args.out or "bench.csv")
    _write_manifest(manifest, "bench",
                    {"suites": suites, "trials": args.trials, "n": args.n,
                     "barn": ensemble._config_to_dict(cfg)},
                    args.seed, {"generated": fingerprints}, wall, None,
                    artifacts)
    _say(f"seed={args.seed} suites={','.join(suites)} trials={args.trials}; "
         f"manifest {manifest}", to_stderr=True)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="barn",
        description="Ensembles of small neural nets sampled by MCMC over "
                    "architectures")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit a regression ensemble")
    _add_data_flags(p)
    _add_model_flags(p)
    _add_stop_flags(p)
    p.add_argument("--out-model", default="model.json")
    p.add_argument("--out-trace", default=None)
    p.add_argument("--out-manifest", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("classify", help="fit a binary probit ensemble")
    _add_data_flags(p)
    _add_model_flags(p)
    _add_stop_flags(p)
    p.add_argument("--out-model", default="model.json")
    p.add_argument("--out-trace", default=None)
    p.add_argument("--out-manifest", default=None)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("predict", help="apply a saved model to new rows")
    p.add_argument("--model", required=True, help="model JSON from train/classify")
    _add_data_flags(p, need_target=False)
    p.add_argument("--out-pred", default=None, help="predictions CSV")
    p.add_argument("--proba", action="store_true",
                   help="require probability output (binary models only)")
    p.add_argument("--stdout", action="store_true",
                   help="write predictions to stdout")
    p.add_argument("--out-manifest", default=None)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("tune", help="hyperparameter search with k-fold CV")
    _add_data_flags(p)
    _add_model_flags(p)
    p.add_argument("--grid", default=None,
                   help='grid spec, e.g. "l=1,2,3;p=0.3,0.4"')
    p.add_argument("--random", default=None,
                   help='random spec, e.g. "l~poisson(2);lr~uniform(0.001,0.1)"')
    p.add_argument("--n-candidates", type=int, default=10,
                   help="candidates drawn with --random")
    p.add_argument("--k", type=int, default=5, help="CV folds")
    p.add_argument("--task", choices=("regression", "binary"),
                   default="regression")
    p.add_argument("--out-csv", default="candidates.csv")
    p.add_argument("--out-best", default="best.json")
    p.add_argument("--out-model", default=None, help="refit model JSON")
    p.add_argument("--stdout", action="store_true")
    p.add_argument("--out-manifest", default=None)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("bench", help="benchmark against OLS and a big NN")
    p.add_argument("--suite", default="linear",
                   help="comma-separated suites from linear,f1,f2,f3 or 'all'")
    p.add_argument("--trials", type=int, default=3)
    p.add_argument("--n", type=int, default=500, help="rows per trial")
    _add_model_flags(p)
    p.add_argument("--out", default=None, help="results CSV")
    p.add_argument("--stdout", action="store_true")
    p.add_argument("--out-manifest", default=None)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FlagError as err:
        print(f"barn: {err}", file=sys.stderr)
        return 2
    except (TrainingError, SamplerError, FloatingPointError) as err:
        print(f"barn: numeric failure: {err}", file=sys.stderr)
        return 4
    except np.linalg.LinAlgError as err:
        print(f"barn: numeric failure: {err}", file=sys.stderr)
        return 4
    except (ValueError, OSError) as err:
        print(f"barn: {err}", file=sys.stderr)
        return 3


def main_entry():
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
