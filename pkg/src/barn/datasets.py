"""Dataset plumbing: CSV IO, splits, synthetic generators, baseline fits."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .mlp import SmallNet, TrainConfig, forward, train

FRIEDMAN_VARIANTS = ("f1", "f2", "f3")


@dataclass
class Dataset:
    """Feature matrix X (n, d), target y (n,), and column names."""

    X: np.ndarray
    y: np.ndarray
    feature_names: tuple
    standardization: dict | None = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=float).ravel()
        self.feature_names = tuple(self.feature_names)
        if self.X.ndim != 2:
            raise ValueError("X must be 2-D")
        if self.X.shape[0] != self.y.shape[0]:
            raise ValueError("X and y row counts differ")
        if self.X.shape[0] < 2:
            raise ValueError("need at least 2 rows")
        if self.X.shape[1] < 1:
            raise ValueError("need at least 1 feature")
        if len(self.feature_names) != self.X.shape[1]:
            raise ValueError("one name per feature column required")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.y))):
            raise ValueError("data must be finite (no NaN or Inf)")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]


def load_csv(path, target_column: str, header: bool = True) -> Dataset:
    """Load a numeric CSV into a Dataset.

    With header=False columns are named col0..col{d-1} and target_column may
    be such a name or a plain integer index. Non-numeric cells raise a
    ValueError naming the offending file row.
    """
    with open(path, newline="") as fh:
        rows = [row for row in csv.reader(fh) if row]
    if not rows:
        raise ValueError(f"{path}: file is empty")

    if header:
        names = [c.strip() for c in rows[0]]
        data_rows = rows[1:]
        first_line = 2
    else:
        names = [f"col{i}" for i in range(len(rows[0]))]
        data_rows = rows
        first_line = 1
    if not data_rows:
        raise ValueError(f"{path}: no data rows")

    target = target_column.strip()
    if target in names:
        t_idx = names.index(target)
    elif not header and target.lstrip("-").isdigit():
        t_idx = int(target)
        if not 0 <= t_idx < len(names):
            raise ValueError(f"{path}: target index {t_idx} out of range")
    else:
        raise ValueError(f"{path}: target column {target_column!r} not found "
                         f"(columns: {', '.join(names)})")

    width = len(names)
    values = np.empty((len(data_rows), width))
    for i, row in enumerate(data_rows):
        if len(row) != width:
            raise ValueError(f"{path}: row {first_line + i} has {len(row)} "
                             f"cells, expected {width}")
        for j, cell in enumerate(row):
            try:
                values[i, j] = float(cell)
            except ValueError:
                raise ValueError(f"{path}: row {first_line + i}: non-numeric "
                                 f"value {cell!r} in column {names[j]!r}") from None

    y = values[:, t_idx]
    X = np.delete(values, t_idx, axis=1)
    feature_names = tuple(nm for i, nm in enumerate(names) if i != t_idx)
    return Dataset(X, y, feature_names)


def save_csv(ds: Dataset, path, target_name: str = "y") -> None:
    """Write a Dataset as CSV with a header; floats keep full precision."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(ds.feature_names) + [target_name])
        for xi, yi in zip(ds.X, ds.y):
            writer.writerow([repr(float(v)) for v in xi] + [repr(float(yi))])


def train_test_split(ds: Dataset, test_fraction: float = 0.2,
                     seed: int = 0) -> tuple[Dataset, Dataset]:
    """Seeded row shuffle, test split within one row of the fraction."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must be in (0, 1)")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(ds.n)
    n_test = min(max(1, round(test_fraction * ds.n)), ds.n - 2)
    test, tr = np.sort(perm[:n_test]), np.sort(perm[n_test:])
    return (Dataset(ds.X[tr], ds.y[tr], ds.feature_names),
            Dataset(ds.X[test], ds.y[test], ds.feature_names))


def standardize(ds: Dataset) -> Dataset:
    """Center/scale all columns; the parameters ride along for inversion."""
    x_mean = ds.X.mean(axis=0)
    x_sd = ds.X.std(axis=0)
    x_sd = np.where(x_sd < 1e-12, 1.0, x_sd)
    y_mean = float(ds.y.mean())
    y_sd = float(ds.y.std())
    if y_sd < 1e-12:
        y_sd = 1.0
    st = {"x_mean": x_mean, "x_sd": x_sd, "y_mean": y_mean, "y_sd": y_sd}
    return Dataset((ds.X - x_mean) / x_sd, (ds.y - y_mean) / y_sd,
                   ds.feature_names, standardization=st)


def destandardize_y(y_std, standardization: dict) -> np.ndarray:
    return standardization["y_mean"] + standardization["y_sd"] * np.asarray(y_std, float)


def gen_linear(n: int, d: int = 3, noise_sd: float = 0.1, seed: int = 0,
               null_beta: bool = False) -> Dataset:
    """Linear data: X ~ U(0,1)^(n,d), y = X @ beta + eps.

    beta ~ N(0,1) is drawn once per seed; null_beta=True zeroes it so y is
    pure noise.
    """
    if n < 2 or d < 1:
        raise ValueError("need n >= 2 and d >= 1")
    if noise_sd < 0:
        raise ValueError("noise_sd must be nonnegative")
    rng = np.random.default_rng(seed)
    beta = np.zeros(d) if null_beta else rng.normal(size=d)
    X = rng.uniform(size=(n, d))
    y = X @ beta + (rng.normal(0.0, noise_sd, size=n) if noise_sd > 0 else 0.0)
    return Dataset(X, y, tuple(f"x{i + 1}" for i in range(d)))


def gen_friedman(variant: str, n: int, noise_sd: float = 0.0,
                 seed: int = 0) -> Dataset:
    """Friedman benchmark surfaces.

    f1: 10 uniform(0,1) features, five of them pure noise;
        y = 10 sin(pi x1 x2) + 20 (x3 - 0.5)^2 + 10 x4 + 5 x5.
    f2: y = sqrt(x1^2 + (x2 x3 - 1/(x2 x4))^2)
    f3: y = atan((x2 x3 - 1/(x2 x4)) / x1)
    f2/f3 draw x1 in [0.01, 100] (lower bound shifted off 0, which f3
    divides by), x2 in [40 pi, 560 pi], x3 in [0, 1], x4 in [1, 11].
    """
    variant = variant.lower()
    if variant not in FRIEDMAN_VARIANTS:
        raise ValueError(f"variant must be one of {FRIEDMAN_VARIANTS}")
    if n < 2:
        raise ValueError("need n >= 2")
    if noise_sd < 0:
        raise ValueError("noise_sd must be nonnegative")
    rng = np.random.default_rng(seed)
    if variant == "f1":
        X = rng.uniform(size=(n, 10))
        y = (10.0 * np.sin(np.pi * X[:, 0] * X[:, 1])
             + 20.0 * (X[:, 2] - 0.5) ** 2 + 10.0 * X[:, 3] + 5.0 * X[:, 4])
    else:
        x1 = rng.uniform(0.01, 100.0, size=n)
        x2 = rng.uniform(40.0 * np.pi, 560.0 * np.pi, size=n)
        x3 = rng.uniform(0.0, 1.0, size=n)
        x4 = rng.uniform(1.0, 11.0, size=n)
        X = np.column_stack([x1, x2, x3, x4])
        inner = x2 * x3 - 1.0 / (x2 * x4)
        y = np.sqrt(x1 ** 2 + inner ** 2) if variant == "f2" else np.arctan(inner / x1)
    if noise_sd > 0:
        y = y + rng.normal(0.0, noise_sd, size=n)
    return Dataset(X, y, tuple(f"x{i + 1}" for i in range(X.shape[1])))


def friedman1_clean(X: np.ndarray) -> np.ndarray:
    """Noise-free f1 surface, exposed for spot checks."""
    X = np.asarray(X, dtype=float)
    return (10.0 * np.sin(np.pi * X[:, 0] * X[:, 1])
            + 20.0 * (X[:, 2] - 0.5) ** 2 + 10.0 * X[:, 3] + 5.0 * X[:, 4])


def ols_fit(ds: Dataset):
    """Least squares with intercept via the normal equations.

    Returns (coef, predict) where coef[0] is the intercept. Singular systems
    get a ridge jitter of 1e-10 on the diagonal.
    """
    A = np.column_stack([np.ones(ds.n), ds.X])
    ata = A.T @ A
    aty = A.T @ ds.y
    try:
        coef = np.linalg.solve(ata, aty)
        if not np.all(np.isfinite(coef)):
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        coef = np.linalg.solve(ata + 1e-10 * np.eye(ata.shape[0]), aty)

    def predict(X_new):
        X_new = np.asarray(X_new, dtype=float)
        return coef[0] + X_new @ coef[1:]

    return coef, predict


def bignn_fit(ds: Dataset, k: int = 100, cfg: TrainConfig | None = None,
              seed: int = 0):
    """Single wide net baseline: k hidden neurons trained in one shot.

    Inputs and target are standardized internally; the returned predict
    callable maps back to the original scale. Deterministic per seed.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    cfg = cfg or TrainConfig()
    std = standardize(ds)
    st = std.standardization
    rng = np.random.default_rng(seed)
    scale = 1.0 / math.sqrt(ds.d)
    net = SmallNet(rng.normal(0.0, scale, size=(k, ds.d)),
                   rng.normal(0.0, scale, size=k),
                   rng.normal(0.0, scale, size=k), 0.0, "relu")
    net = train(net, std.X, std.y, cfg)

    def predict(X_new):
        X_new = np.asarray(X_new, dtype=float)
        Xs = (X_new - st["x_mean"]) / st["x_sd"]
        return destandardize_y(forward(net, Xs), st)

    return predict
