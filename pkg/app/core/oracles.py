"""
Numerical self-checks behind the ``grad-check`` and ``oracle-check`` commands.

- grad-check: analytic gradient features of random networks and training-loss
  gradients against central finite differences, coordinate by coordinate
- oracle-check: Sherman-Morrison inverse and determinant-lemma log-determinant
  against direct factorizations, closed-form kernel expectations against Monte
  Carlo over a grid of covariances, and the NTK diagonal on unit contexts
"""
import logging
import math
from typing import Callable, List, Sequence, Tuple

import numpy as np

from app.core.covariance import CovarianceState
from app.core.environments import prepare_arms
from app.core.network import (
    NetworkParams,
    _forward_pass,
    _loss_and_gradient,
    grad_params,
    init_symmetric,
)
from app.core.ntk import ntk_gram, ntk_mc_oracle, relu_expectations
from app.core.seeding import substream, substream_seed
from app.schemas.diagnostics import CheckReport, CheckResult
from app.schemas.experiment import NetworkConfig

logger = logging.getLogger(__name__)

GRAD_TOLERANCE = 1e-4
GRAD_FLOOR = 1e-5  # smaller magnitudes are compared absolutely
FD_EPSILON = 1e-5
GRAD_NETS = 50
INVERSE_TOLERANCE = 1e-6
LOGDET_TOLERANCE = 1e-6
MC_SAMPLES = 1_000_000
MC_SIGMAS = 3.0
KERNEL_RHOS: Sequence[float] = tuple(round(0.1 * k, 1) for k in range(-9, 10))
KERNEL_SCALES: Sequence[float] = (0.5, 1.0, 2.0)

# (raw d, m, L) for the loss-gradient checks; the network sees 2*d after symmetrization
GRAD_SHAPES: Sequence[Tuple[int, int, int]] = ((2, 4, 2), (3, 6, 3), (2, 8, 3))


def coordinate_errors(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    """Per-coordinate relative error, ``|a - n| / max(|a|, |n|, GRAD_FLOOR)``."""
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), GRAD_FLOOR)
    return np.abs(analytic - numeric) / scale


def _perturbed_network(d: int, m: int, L: int, seed: int) -> NetworkParams:
    config = NetworkConfig(input_dim=2 * d, width=m, depth=L)
    params = init_symmetric(config, seed)
    noise = substream(seed, "perturb").normal(0.0, 0.1, size=params.param_count)
    return params.with_flat(params.flat() + noise)


def _contexts(d: int, n: int, seed: int) -> np.ndarray:
    return prepare_arms(substream(seed, "contexts").standard_normal((n, d)))


def random_shape(seed: int) -> Tuple[int, int, int]:
    """(raw d, m, L) with ``2d <= 10``, even ``m <= 16`` and ``L`` in {2, 3}."""
    rng = substream(seed, "shape")
    return int(rng.integers(1, 6)), 2 * int(rng.integers(1, 9)), int(rng.integers(2, 4))


def _activation_pattern(weights: Sequence[np.ndarray], X: np.ndarray) -> np.ndarray:
    _, pre, _ = _forward_pass(weights, X)
    return np.concatenate([(z > 0.0).ravel() for z in pre])


def central_differences(params: NetworkParams, X: np.ndarray,
                        objective: Callable[[List[np.ndarray]], float]) -> Tuple[np.ndarray, np.ndarray]:
    """Central differences of ``objective`` in every coordinate of theta.

    Also returns a mask of the coordinates whose steps keep every ReLU on the same
    side of its kink; the others have no meaningful finite difference.
    """
    theta = params.flat()
    base = _activation_pattern(params.weights, X)
    numeric = np.empty_like(theta)
    smooth = np.ones(theta.size, dtype=bool)
    for i in range(theta.size):
        plus, minus = theta.copy(), theta.copy()
        plus[i] += FD_EPSILON
        minus[i] -= FD_EPSILON
        w_plus, w_minus = params.with_flat(plus).weights, params.with_flat(minus).weights
        numeric[i] = (objective(w_plus) - objective(w_minus)) / (2 * FD_EPSILON)
        smooth[i] = (np.array_equal(_activation_pattern(w_plus, X), base)
                     and np.array_equal(_activation_pattern(w_minus, X), base))
    return numeric, smooth


def _gradient_result(name: str, analytic: np.ndarray, numeric: np.ndarray, smooth: np.ndarray) -> CheckResult:
    errors = coordinate_errors(analytic[smooth], numeric[smooth])
    error = float(errors.max()) if errors.size else 0.0
    skipped = int((~smooth).sum())
    return CheckResult(
        name=name,
        passed=error <= GRAD_TOLERANCE,
        max_error=error,
        tolerance=GRAD_TOLERANCE,
        detail=f"{skipped} coordinate(s) at a ReLU kink skipped" if skipped else None,
    )


# =============================================================================
# grad-check
# =============================================================================

def check_feature_gradient(d: int, m: int, L: int, seed: int) -> CheckResult:
    """``sqrt(m) * phi(x)`` against central differences of ``f(x; theta)``."""
    params = _perturbed_network(d, m, L, seed)
    X = _contexts(d, 1, seed)
    analytic = grad_params(params, X[0]) * math.sqrt(m)
    numeric, smooth = central_differences(params, X, lambda w: float(_forward_pass(w, X)[0][0]))
    return _gradient_result(f"feature-gradient d={2 * d} m={m} L={L}", analytic, numeric, smooth)


def check_loss_gradient(d: int, m: int, L: int, seed: int, lam: float = 0.01) -> CheckResult:
    """Gradient of the regularized training loss against central differences."""
    params = _perturbed_network(d, m, L, seed)
    X = _contexts(d, 8, seed)
    r = substream(seed, "rewards").uniform(0.0, 1.0, size=X.shape[0])
    reg = m * lam

    def loss_at(weights: List[np.ndarray]) -> float:
        value, _ = _loss_and_gradient(weights, params.theta0, X, r, 1.0, reg)
        return value

    _, grads = _loss_and_gradient(params.weights, params.theta0, X, r, 1.0, reg)
    analytic = np.concatenate([g.reshape(-1) for g in grads])
    numeric, smooth = central_differences(params, X, loss_at)
    return _gradient_result(f"loss-gradient d={2 * d} m={m} L={L}", analytic, numeric, smooth)


def run_grad_check(seed: int = 0, n_nets: int = GRAD_NETS) -> CheckReport:
    checks: List[CheckResult] = []
    for index in range(n_nets):
        net_seed = substream_seed(seed, "grad-check", index)
        checks.append(check_feature_gradient(*random_shape(net_seed), net_seed))
    for index, (d, m, L) in enumerate(GRAD_SHAPES):
        checks.append(check_loss_gradient(d, m, L, substream_seed(seed, "grad-check-loss", index)))
    _log_report("grad-check", checks)
    return CheckReport(checks=checks)


# =============================================================================
# oracle-check
# =============================================================================

def check_sherman_morrison(seed: int, dim: int = 100, n_updates: int = 1000, lam: float = 0.5) -> List[CheckResult]:
    """Maintained inverse and log-determinant of a random feature stream (no refresh)."""
    cov = CovarianceState(dim, lam, refresh_interval=n_updates + 1)
    rng = substream(seed, "sherman-morrison")
    for _ in range(n_updates):
        cov.rank_one_update(rng.standard_normal(dim) / math.sqrt(dim))
    residual = cov.inverse_residual()
    inverse_error = float(np.max(np.abs(np.linalg.inv(cov.Z) - cov.Z_inv)))
    logdet_error = abs(cov.logdet - cov.direct_logdet())
    return [
        CheckResult(name=f"sherman-morrison inverse p={dim} updates={n_updates}",
                    passed=inverse_error <= INVERSE_TOLERANCE,
                    max_error=inverse_error, tolerance=INVERSE_TOLERANCE,
                    detail=f"max |Z Z_inv - I| = {residual:.3e}"),
        CheckResult(name=f"determinant-lemma logdet p={dim} updates={n_updates}",
                    passed=logdet_error <= LOGDET_TOLERANCE,
                    max_error=logdet_error, tolerance=LOGDET_TOLERANCE),
    ]


def kernel_z_score(a: float, b: float, rho: float, n_samples: int, seed: int) -> float:
    """Largest deviation of Monte Carlo from the closed forms, in standard errors."""
    c = rho * math.sqrt(a * b)
    e_val, e_der = relu_expectations(a, b, c)
    est = ntk_mc_oracle(np.array([[a, c], [c, b]]), n_samples, seed)
    return max(abs(float(e_val) - est.e_val) / max(est.se_val, 1e-300),
               abs(float(e_der) - est.e_der) / max(est.se_der, 1e-300))


def check_kernel_expectations(seed: int, rhos: Sequence[float] = KERNEL_RHOS,
                              scales: Sequence[float] = KERNEL_SCALES,
                              n_samples: int = MC_SAMPLES) -> List[CheckResult]:
    """Closed-form ReLU expectations against Monte Carlo, one result per (a, b).

    A grid point outside ``MC_SIGMAS`` standard errors is redrawn once with an
    independent seed; it passes only if the redraw agrees.
    """
    checks = []
    for a in scales:
        for b in scales:
            worst, redrawn = 0.0, 0
            for rho in rhos:
                z = kernel_z_score(a, b, rho, n_samples, substream_seed(seed, "mc", f"{a:g}", f"{b:g}", f"{rho:g}"))
                if z > MC_SIGMAS:
                    redrawn += 1
                    z = kernel_z_score(a, b, rho, n_samples, substream_seed(seed, "mc-redraw", f"{a:g}", f"{b:g}", f"{rho:g}"))
                worst = max(worst, z)
            checks.append(CheckResult(
                name=f"kernel expectations a={a:g} b={b:g} ({len(rhos)} correlations)",
                passed=worst <= MC_SIGMAS,
                max_error=worst,
                tolerance=MC_SIGMAS,
                detail=f"{redrawn} point(s) redrawn" if redrawn else None,
            ))
    return checks


def check_ntk_diagonal(seed: int, depth: int = 3) -> CheckResult:
    """On unit contexts every diagonal entry of ``H`` equals ``(depth + 1) / 2``."""
    ntk = ntk_gram(_contexts(3, 12, seed), depth)
    error = float(np.max(np.abs(np.diag(ntk.H) - (depth + 1) / 2.0)))
    return CheckResult(name=f"ntk diagonal L={depth}", passed=error <= 1e-10, max_error=error, tolerance=1e-10)


def run_oracle_check(seed: int = 0) -> CheckReport:
    checks: List[CheckResult] = []
    checks.extend(check_sherman_morrison(substream_seed(seed, "oracle", "covariance")))
    checks.extend(check_kernel_expectations(substream_seed(seed, "oracle", "kernel")))
    checks.append(check_ntk_diagonal(substream_seed(seed, "oracle", "ntk")))
    _log_report("oracle-check", checks)
    return CheckReport(checks=checks)


def _log_report(suite: str, checks: List[CheckResult]) -> None:
    for check in checks:
        level = logging.INFO if check.passed else logging.ERROR
        logger.log(level, "%s: %s max_error=%.3e tolerance=%.3e %s",
                   suite, check.name, check.max_error, check.tolerance, "ok" if check.passed else "FAILED")
