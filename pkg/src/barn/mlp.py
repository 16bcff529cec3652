"""Single-hidden-layer networks: forward pass, regularized loss, training, resizing."""

from __future__ import annotations

from dataclasses import dataclass
import numpy as np

ACTIVATIONS = ("relu", "tanh")
SOLVERS = ("adam", "quasi_newton", "auto")

# auto solver thresholds: quasi-Newton only while the problem stays small
MAX_QN_PARAMS = 1000
MAX_QN_ROWS = 10000


class TrainingError(RuntimeError):
    """Training hit a non-finite objective. Carries the last finite iterate."""

    def __init__(self, message: str, last_net: "SmallNet | None" = None):
        super().__init__(message)
        self.last_net = last_net


@dataclass(frozen=True)
class TrainConfig:
    """Settings for fitting one small network.

    solver "auto" picks quasi_newton for small problems (see select_solver),
    adam otherwise. reg_l1/reg_l2 penalize W1, b1 and w2 but never b2.
    """

    solver: str = "auto"
    learning_rate: float = 0.01
    reg_l1: float = 0.01
    reg_l2: float = 0.01
    max_epochs: int = 200
    tol: float = 1e-6

    def __post_init__(self):
        if self.solver not in SOLVERS:
            raise ValueError(f"solver must be one of {SOLVERS}, got {self.solver!r}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.reg_l1 < 0 or self.reg_l2 < 0:
            raise ValueError("regularization strengths must be nonnegative")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be at least 1")
        if self.tol < 0:
            raise ValueError("tol must be nonnegative")


@dataclass
class SmallNet:
    """One hidden layer of k neurons, linear output.

    W1 has shape (k, d), b1 and w2 have shape (k,), b2 is the scalar output
    bias. Output is b2 + sum_h w2[h] * act(W1[h] @ x + b1[h]).
    """

    W1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: float
    activation: str = "relu"

    def __post_init__(self):
        self.W1 = np.atleast_2d(np.asarray(self.W1, dtype=float))
        self.b1 = np.asarray(self.b1, dtype=float).ravel()
        self.w2 = np.asarray(self.w2, dtype=float).ravel()
        self.b2 = float(self.b2)
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        k = self.W1.shape[0]
        if k < 1:
            raise ValueError("a net needs at least one neuron")
        if self.b1.shape != (k,) or self.w2.shape != (k,):
            raise ValueError("b1 and w2 must have one entry per hidden neuron")
        for arr in (self.W1, self.b1, self.w2):
            if not np.all(np.isfinite(arr)):
                raise ValueError("weights must be finite")
        if not np.isfinite(self.b2):
            raise ValueError("weights must be finite")

    @property
    def k(self) -> int:
        return self.W1.shape[0]

    @property
    def d(self) -> int:
        return self.W1.shape[1]

    @property
    def n_params(self) -> int:
        return self.k * (self.d + 2) + 1

    def copy(self) -> "SmallNet":
        return SmallNet(self.W1.copy(), self.b1.copy(), self.w2.copy(), self.b2,
                        self.activation)


def _check_data(net: SmallNet, X: np.ndarray, y: np.ndarray | None = None):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError(f"X must be 2-D, got shape {X.shape}")
    if X.shape[1] != net.d:
        raise ValueError(f"X has {X.shape[1]} columns but the net expects {net.d}")
    if y is None:
        return X, None
    y = np.asarray(y, dtype=float).ravel()
    if y.shape[0] != X.shape[0]:
        raise ValueError(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
    if y.size == 0:
        raise ValueError("need at least one row")
    return X, y


def forward(net: SmallNet, X: np.ndarray) -> np.ndarray:
    """Evaluate the net on X (n, d), returning predictions (n,)."""
    X, _ = _check_data(net, X)
    H = X @ net.W1.T + net.b1
    A = np.maximum(H, 0.0) if net.activation == "relu" else np.tanh(H)
    return A @ net.w2 + net.b2


def _pack(net: SmallNet) -> np.ndarray:
    return np.concatenate([net.W1.ravel(), net.b1, net.w2, [net.b2]])


def _unpack(theta: np.ndarray, k: int, d: int, activation: str) -> SmallNet:
    W1 = theta[: k * d].reshape(k, d).copy()
    b1 = theta[k * d : k * d + k].copy()
    w2 = theta[k * d + k : k * d + 2 * k].copy()
    return SmallNet(W1, b1, w2, float(theta[-1]), activation)


def _objective(theta: np.ndarray, X: np.ndarray, y: np.ndarray, k: int, d: int,
               activation: str, reg_l1: float, reg_l2: float):
    """Mean squared error plus L1/L2 penalties on all weights except b2.

    Returns (loss, flat gradient). Subgradient conventions: 0 at |w| = 0 and
    at the relu kink.
    """
    kd = k * d
    W1 = theta[:kd].reshape(k, d)
    b1 = theta[kd : kd + k]
    w2 = theta[kd + k : kd + 2 * k]
    b2 = theta[-1]

    H = X @ W1.T + b1
    if activation == "relu":
        A = np.maximum(H, 0.0)
        D = (H > 0.0).astype(float)
    else:
        A = np.tanh(H)
        D = 1.0 - A * A
    f = A @ w2 + b2
    e = f - y
    n = y.shape[0]

    reg = theta[:-1]
    loss = (e @ e) / n + reg_l1 * np.abs(reg).sum() + reg_l2 * (reg @ reg)

    gf = (2.0 / n) * e
    gw2 = A.T @ gf
    gb2 = gf.sum()
    GH = (gf[:, None] * w2) * D
    gW1 = GH.T @ X
    gb1 = GH.sum(axis=0)

    grad = np.concatenate([gW1.ravel(), gb1, gw2, [gb2]])
    grad[:-1] += reg_l1 * np.sign(reg) + 2.0 * reg_l2 * reg
    return loss, grad


def loss_and_grad(net: SmallNet, X: np.ndarray, y: np.ndarray, cfg: TrainConfig):
    """Objective value and gradients for the net on (X, y).

    Returns (loss, grads) where grads is a dict with keys "W1", "b1", "w2",
    "b2" holding arrays shaped like the corresponding weights.
    """
    X, y = _check_data(net, X, y)
    loss, g = _objective(_pack(net), X, y, net.k, net.d, net.activation,
                         cfg.reg_l1, cfg.reg_l2)
    k, d = net.k, net.d
    grads = {
        "W1": g[: k * d].reshape(k, d),
        "b1": g[k * d : k * d + k],
        "w2": g[k * d + k : k * d + 2 * k],
        "b2": float(g[-1]),
    }
    return loss, grads


def select_solver(k: int, d: int, n: int) -> str:
    """Pick quasi_newton while k*(d+2)+1 <= 1000 and n <= 10000, else adam."""
    if k < 1 or d < 1 or n < 1:
        raise ValueError("k, d and n must be positive")
    if k * (d + 2) + 1 <= MAX_QN_PARAMS and n <= MAX_QN_ROWS:
        return "quasi_newton"
    return "adam"


def _two_loop(g, S, Y, RHO):
    q = g.copy()
    alphas = []
    for s, yv, rho in zip(reversed(S), reversed(Y), reversed(RHO)):
        a = rho * (s @ q)
        alphas.append(a)
        q -= a * yv
    if S:
        s, yv = S[-1], Y[-1]
        q *= (s @ yv) / (yv @ yv)
    for (s, yv, rho), a in zip(zip(S, Y, RHO), reversed(alphas)):
        b = rho * (yv @ q)
        q += (a - b) * s
    return -q


def _train_quasi_newton(obj, theta, f, g, max_iter, tol):
    # limited-memory BFGS direction (two-loop recursion, memory 10) with
    # Armijo backtracking; every accepted step strictly decreases the loss.
    memory = 10
    c1 = 1e-4
    S: list[np.ndarray] = []
    Y: list[np.ndarray] = []
    RHO: list[float] = []
    for _ in range(max_iter):
        if np.max(np.abs(g)) <= 1e-9:
            break
        p = _two_loop(g, S, Y, RHO)
        gtp = g @ p
        if not np.isfinite(gtp) or gtp >= 0.0:
            S.clear(); Y.clear(); RHO.clear()
            p = -g
            gtp = g @ p
        alpha = 1.0
        accepted = False
        for _ in range(40):
            theta_new = theta + alpha * p
            f_new, g_new = obj(theta_new)
            if np.isfinite(f_new) and f_new <= f + c1 * alpha * gtp:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            break
        s = theta_new - theta
        yv = g_new - g
        sy = s @ yv
        if sy > 1e-10 * np.linalg.norm(s) * np.linalg.norm(yv):
            S.append(s); Y.append(yv); RHO.append(1.0 / sy)
            if len(S) > memory:
                S.pop(0); Y.pop(0); RHO.pop(0)
        improvement = f - f_new
        theta, f, g = theta_new, f_new, g_new
        if improvement <= tol * max(1.0, abs(f)):
            break
    return theta, False


def _train_adam(obj, theta, f0, g, lr, max_iter, tol):
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    best_f, best_theta = f0, theta.copy()
    stall = 0
    f_prev = f0
    for t in range(1, max_iter + 1):
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        mhat = m / (1.0 - beta1 ** t)
        vhat = v / (1.0 - beta2 ** t)
        theta = theta - lr * mhat / (np.sqrt(vhat) + eps)
        f, g = obj(theta)
        if not (np.isfinite(f) and np.all(np.isfinite(g))):
            return best_theta, True
        if f < best_f:
            best_f, best_theta = f, theta.copy()
        if abs(f_prev - f) <= tol * max(1.0, abs(f)):
            stall += 1
            if stall >= 5:
                break
        else:
            stall = 0
        f_prev = f
    return best_theta, False


def train(net: SmallNet, X: np.ndarray, y: np.ndarray, cfg: TrainConfig,
          rng: np.random.Generator | None = None) -> SmallNet:
    """Train a copy of the net on (X, y), leaving the input net untouched.

    The quasi-Newton solver only takes monotone steps, so the returned loss
    never exceeds the starting loss; adam returns its best iterate. Both
    solvers are deterministic, rng is accepted only for signature stability.

    Raises TrainingError (carrying the last finite iterate in .last_net) if
    the objective turns non-finite.
    """
    X, y = _check_data(net, X, y)
    solver = cfg.solver
    if solver == "auto":
        solver = select_solver(net.k, net.d, X.shape[0])

    k, d, act = net.k, net.d, net.activation

    def obj(theta):
        return _objective(theta, X, y, k, d, act, cfg.reg_l1, cfg.reg_l2)

    theta0 = _pack(net)
    f0, g0 = obj(theta0)
    if not (np.isfinite(f0) and np.all(np.isfinite(g0))):
        raise TrainingError("objective is non-finite at the starting point",
                            last_net=net.copy())

    if solver == "quasi_newton":
        theta, blew_up = _train_quasi_newton(obj, theta0, f0, g0,
                                             cfg.max_epochs, cfg.tol)
    else:
        theta, blew_up = _train_adam(obj, theta0, f0, g0, cfg.learning_rate,
                                     cfg.max_epochs, cfg.tol)
    result = _unpack(theta, k, d, act)
    if blew_up:
        raise TrainingError("loss became non-finite during training",
                            last_net=result)
    return result


def donate_weights(old: SmallNet, new_k: int, rng: np.random.Generator) -> SmallNet:
    """Resize a net to new_k neurons, reusing the old weights.

    Growing appends neurons with weights drawn from a zero-mean Gaussian with
    variance 0.01 (W1 row first, then b1, then w2); all old neurons are copied
    verbatim. Shrinking removes the neuron with the smallest |w2|, lowest
    index on ties. b2 is preserved either way.
    """
    if new_k < 1:
        raise ValueError("new_k must be at least 1")
    W1, b1, w2 = old.W1.copy(), old.b1.copy(), old.w2.copy()
    while W1.shape[0] < new_k:
        W1 = np.vstack([W1, rng.normal(0.0, 0.1, size=(1, old.d))])
        b1 = np.append(b1, rng.normal(0.0, 0.1))
        w2 = np.append(w2, rng.normal(0.0, 0.1))
    while W1.shape[0] > new_k:
        drop = int(np.argmin(np.abs(w2)))
        W1 = np.delete(W1, drop, axis=0)
        b1 = np.delete(b1, drop)
        w2 = np.delete(w2, drop)
    return SmallNet(W1, b1, w2, old.b2, old.activation)
