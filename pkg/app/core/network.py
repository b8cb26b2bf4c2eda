"""
Fully connected ReLU network ``f(x) = sqrt(m) W_L s(W_{L-1} ... s(W_1 x))``.

Provides:
- Block-symmetric initialization (f(x; theta0) = 0 on coordinate-duplicated contexts)
- Forward pass and per-sample parameter gradients by hand-written backpropagation
- TrainNN: regularized gradient descent towards the rewards, anchored at theta0

Parameters are flattened W_1 row-major, then W_2, ..., W_L row-major. ``p`` is the
actual scalar count ``m*d + m^2*(L-2) + m``.
"""
import hashlib
import logging
import math
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np

from app.core.exceptions import ConfigError, InputError, RunAbortedError
from app.core.seeding import substream
from app.schemas.experiment import NetworkConfig, TrainMode

logger = logging.getLogger(__name__)


class NetworkParams:
    """Layer weights theta = (W_1, ..., W_L) plus the frozen initialization theta0."""

    def __init__(self, weights: Sequence[np.ndarray], theta0: Sequence[np.ndarray], seed: int = 0):
        self.weights: List[np.ndarray] = [np.array(w, dtype=np.float64) for w in weights]
        frozen = []
        for w in theta0:
            w = np.array(w, dtype=np.float64)
            w.setflags(write=False)
            frozen.append(w)
        self.theta0: Tuple[np.ndarray, ...] = tuple(frozen)
        self.seed = seed

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def width(self) -> int:
        return self.weights[0].shape[0]

    @property
    def depth(self) -> int:
        return len(self.weights)

    @property
    def param_count(self) -> int:
        return sum(w.size for w in self.weights)

    def flat(self) -> np.ndarray:
        return np.concatenate([w.reshape(-1) for w in self.weights])

    def flat_theta0(self) -> np.ndarray:
        return np.concatenate([w.reshape(-1) for w in self.theta0])

    def with_flat(self, theta: np.ndarray) -> "NetworkParams":
        """New params with the same theta0 and weights taken from ``theta``."""
        theta = np.asarray(theta, dtype=np.float64)
        if theta.size != self.param_count:
            raise InputError(f"expected {self.param_count} parameters, got {theta.size}", field="theta")
        weights, offset = [], 0
        for w in self.weights:
            weights.append(theta[offset:offset + w.size].reshape(w.shape).copy())
            offset += w.size
        return NetworkParams(weights, self.theta0, seed=self.seed)

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.weights, self.theta0, seed=self.seed)

    def at_init(self) -> "NetworkParams":
        """Params reset to theta0."""
        return NetworkParams(self.theta0, self.theta0, seed=self.seed)

    def fingerprint(self) -> str:
        """Digest of the current weights; equal weights give equal fingerprints."""
        return hashlib.blake2b(self.flat().tobytes(), digest_size=16).hexdigest()

    def save(self, path: Union[str, Path]) -> Path:
        """Write ``.npz`` with header (d, m, L, seed), theta and theta0 as float64."""
        path = Path(path)
        header = np.array([self.input_dim, self.width, self.depth, self.seed], dtype=np.int64)
        np.savez(path, header=header, theta=self.flat(), theta0=self.flat_theta0())
        return path if path.suffix == ".npz" else path.with_suffix(path.suffix + ".npz")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "NetworkParams":
        with np.load(Path(path)) as data:
            d, m, L, seed = (int(v) for v in data["header"])
            shapes = _layer_shapes(d, m, L)
            template = NetworkParams([np.zeros(s) for s in shapes], [np.zeros(s) for s in shapes], seed)
            theta0 = template.with_flat(data["theta0"]).weights
            params = NetworkParams(theta0, theta0, seed).with_flat(data["theta"])
        return params


def _layer_shapes(d: int, m: int, L: int) -> List[Tuple[int, int]]:
    return [(m, d)] + [(m, m)] * (L - 2) + [(1, m)]


# =============================================================================
# Initialization
# =============================================================================

def init_symmetric(config: NetworkConfig, rng_seed: int) -> NetworkParams:
    """Block-symmetric initialization.

    Hidden layers are ``[[W, 0], [0, W]]`` with ``W_ij ~ N(0, 4/m)``; the output
    layer is ``(w^T, -w^T)`` with ``w_i ~ N(0, 2/m)``.
    """
    d, m, L = config.input_dim, config.width, config.depth
    if d % 2 or m % 2:
        raise ConfigError(f"input_dim ({d}) and width ({m}) must both be even", field="width")
    if L < 2:
        raise ConfigError(f"depth must be at least 2, got {L}", field="depth")

    rng = substream(rng_seed, "init")
    half_m = m // 2
    weights = []
    for rows, cols in _layer_shapes(d, m, L)[:-1]:
        block = rng.normal(0.0, math.sqrt(4.0 / m), size=(half_m, cols // 2))
        W = np.zeros((rows, cols))
        W[:half_m, :cols // 2] = block
        W[half_m:, cols // 2:] = block
        weights.append(W)
    w = rng.normal(0.0, math.sqrt(2.0 / m), size=half_m)
    weights.append(np.concatenate([w, -w]).reshape(1, m))
    return NetworkParams(weights, weights, seed=rng_seed)


# =============================================================================
# Forward / backward
# =============================================================================

def _as_batch(params: NetworkParams, x: np.ndarray) -> Tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x.reshape(1, -1) if single else x
    if X.ndim != 2 or X.shape[1] != params.input_dim:
        raise InputError(
            f"context has dimension {X.shape[-1]}, network expects {params.input_dim}", field="x"
        )
    if not np.all(np.isfinite(X)):
        raise InputError("context contains non-finite entries", field="x")
    return X, single


def _forward_pass(weights: Sequence[np.ndarray], X: np.ndarray):
    """Returns outputs (n,), hidden pre-activations and layer inputs."""
    pre, acts = [], [X]
    h = X
    for W in weights[:-1]:
        z = h @ W.T
        pre.append(z)
        h = np.maximum(z, 0.0)
        acts.append(h)
    sqrt_m = math.sqrt(weights[0].shape[0])
    out = sqrt_m * (h @ weights[-1].T)[:, 0]
    return out, pre, acts


def forward(params: NetworkParams, x: np.ndarray) -> Union[float, np.ndarray]:
    """Network output for one context (d,) or a batch (n, d)."""
    X, single = _as_batch(params, x)
    out, _, _ = _forward_pass(params.weights, X)
    return float(out[0]) if single else out


def grad_params(params: NetworkParams, x: np.ndarray) -> np.ndarray:
    """Gradient features ``phi = grad_theta f(x) / sqrt(m)``.

    Returns shape (p,) for one context or (n, p) for a batch. The ReLU derivative
    at exactly zero is taken as zero.
    """
    X, single = _as_batch(params, x)
    weights = params.weights
    n = X.shape[0]
    sqrt_m = math.sqrt(params.width)
    _, pre, acts = _forward_pass(weights, X)

    blocks = [None] * len(weights)
    blocks[-1] = sqrt_m * acts[-1]
    delta = sqrt_m * np.broadcast_to(weights[-1], (n, params.width))
    for layer in range(len(weights) - 2, -1, -1):
        delta = delta * (pre[layer] > 0.0)
        blocks[layer] = np.einsum("ni,nj->nij", delta, acts[layer]).reshape(n, -1)
        if layer > 0:
            delta = delta @ weights[layer]
    phi = np.concatenate(blocks, axis=1) / sqrt_m
    return phi[0] if single else phi


# =============================================================================
# Training
# =============================================================================

def _loss_and_gradient(
    weights: Sequence[np.ndarray],
    theta0: Sequence[np.ndarray],
    X: np.ndarray,
    r: np.ndarray,
    data_scale: float,
    reg_coef: float,
) -> Tuple[float, List[np.ndarray]]:
    """``data_scale * sum (f - r)^2 / 2 + reg_coef * ||theta - theta0||^2 / 2`` and its gradient."""
    grads = [reg_coef * (w - w0) for w, w0 in zip(weights, theta0)]
    reg = 0.5 * reg_coef * sum(float(np.sum((w - w0) ** 2)) for w, w0 in zip(weights, theta0))
    if X.shape[0] == 0:
        return reg, grads

    sqrt_m = math.sqrt(weights[0].shape[0])
    out, pre, acts = _forward_pass(weights, X)
    res = data_scale * (out - r)
    loss = 0.5 * data_scale * float(np.sum((out - r) ** 2)) + reg

    grads[-1] = grads[-1] + sqrt_m * (res @ acts[-1]).reshape(1, -1)
    delta = sqrt_m * np.outer(res, weights[-1][0])
    for layer in range(len(weights) - 2, -1, -1):
        delta = delta * (pre[layer] > 0.0)
        grads[layer] = grads[layer] + delta.T @ acts[layer]
        if layer > 0:
            delta = delta @ weights[layer]
    return loss, grads


def training_loss(config: NetworkConfig, params: NetworkParams, contexts, rewards) -> float:
    """Full TrainNN objective ``sum (f - r)^2 / 2 + m*lambda*||theta - theta0||^2 / 2``."""
    X, r = _training_arrays(params, contexts, rewards)
    loss, _ = _loss_and_gradient(
        params.weights, params.theta0, X, r, 1.0, config.width * config.reg_lambda
    )
    return loss


def _training_arrays(params: NetworkParams, contexts, rewards) -> Tuple[np.ndarray, np.ndarray]:
    r = np.asarray(rewards, dtype=np.float64).reshape(-1)
    if len(contexts) != r.shape[0]:
        raise InputError(
            f"{len(contexts)} contexts but {r.shape[0]} rewards", field="rewards"
        )
    if r.shape[0] == 0:
        return np.zeros((0, params.input_dim)), r
    X, _ = _as_batch(params, np.asarray(contexts, dtype=np.float64).reshape(r.shape[0], -1))
    return X, r


def train_with_history(
    config: NetworkConfig,
    params: NetworkParams,
    contexts,
    rewards,
    rng_seed: int,
) -> Tuple[NetworkParams, List[float]]:
    """TrainNN returning the objective value before every step as well."""
    X, r = _training_arrays(params, contexts, rewards)
    n = X.shape[0]
    J = config.gd_steps
    start = params.weights if config.warm_start else params.theta0
    if J == 0 or n == 0:
        return NetworkParams(start if J == 0 else params.theta0, params.theta0, seed=params.seed), []

    weights = [np.array(w) for w in start]
    eta = config.step_size
    reg_full = config.width * config.reg_lambda
    history: List[float] = []

    if config.train_mode == TrainMode.FULL_GRADIENT:
        for _ in range(J):
            loss, grads = _loss_and_gradient(weights, params.theta0, X, r, 1.0, reg_full)
            _check_finite(loss)
            history.append(loss)
            for w, g in zip(weights, grads):
                w -= eta * g
        increases = sum(1 for a, b in zip(history, history[1:]) if b > a)
        if increases:
            logger.warning("full-gradient loss increased on %d of %d steps", increases, J - 1)
    else:
        # Each step descends a minibatch estimate of L(theta)/n.
        rng = substream(rng_seed, "sgd")
        batch = min(config.sgd_batch_size, n)
        for _ in range(J):
            idx = rng.choice(n, size=batch, replace=False) if batch < n else np.arange(n)
            loss, grads = _loss_and_gradient(
                weights, params.theta0, X[idx], r[idx], 1.0 / batch, reg_full / n
            )
            _check_finite(loss)
            history.append(loss)
            for w, g in zip(weights, grads):
                w -= eta * g

    trained = NetworkParams(weights, params.theta0, seed=params.seed)
    if not all(np.all(np.isfinite(w)) for w in trained.weights):
        raise RunAbortedError("training produced non-finite parameters")
    return trained, history


def train_nn(
    config: NetworkConfig,
    params: NetworkParams,
    contexts,
    rewards,
    rng_seed: int = 0,
) -> NetworkParams:
    """TrainNN: ``J`` gradient steps on the regularized squared loss.

    Starts from theta0 (or from ``params`` when ``config.warm_start``). An empty
    training set returns theta0, the minimizer of the remaining regularizer.
    """
    trained, _ = train_with_history(config, params, contexts, rewards, rng_seed)
    return trained


def _check_finite(loss: float) -> None:
    if not math.isfinite(loss):
        raise RunAbortedError(f"training loss diverged ({loss})")


def param_count(input_dim: int, width: int, depth: int) -> int:
    """``m*d + m^2*(L-2) + m``, the number of scalars in theta."""
    return width * input_dim + width * width * (depth - 2) + width
