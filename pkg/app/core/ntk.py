"""
Neural tangent kernel diagnostics.

Provides:
- NTK gram matrix of a ReLU network through the closed-form arc-cosine recursion
- Monte Carlo estimates of the same Gaussian expectations (verification oracle)
- Positive-definiteness check of the gram matrix
- Effective dimension ``log det(I + H/lambda) / log(1 + n/lambda)``

Depth convention: a network with ``L`` layers runs ``L - 1`` recursion steps, so
``L = 2`` applies exactly one.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence, Tuple

import numpy as np
from scipy import linalg

from app.core.config import settings
from app.core.exceptions import ConfigError, InputError, NumericalError

logger = logging.getLogger(__name__)


@dataclass
class NtkMatrix:
    """Gram matrix ``H = (H_tilde^(L) + Sigma^(L)) / 2`` on a context set."""
    H: np.ndarray
    sigma_L: np.ndarray
    min_eig: float
    eigenvalues: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.H.shape[0]


@dataclass(frozen=True)
class EffectiveDimension:
    d_tilde: float
    lam: float
    n_contexts: int


@dataclass(frozen=True)
class MonteCarloEstimate:
    """``2E[s(u)s(v)]`` and ``2E[s'(u)s'(v)]`` with their standard errors."""
    e_val: float
    e_der: float
    se_val: float
    se_der: float


# =============================================================================
# Closed forms
# =============================================================================

def relu_expectations(a, b, c) -> Tuple[np.ndarray, np.ndarray]:
    """Closed forms for ``(u, v) ~ N(0, [[a, c], [c, b]])``.

    Returns ``2E[s(u)s(v)] = sqrt(ab) (sqrt(1 - rho^2) + rho (pi - arccos rho)) / pi``
    and ``2E[s'(u)s'(v)] = (pi - arccos rho) / pi``. ``rho`` is clamped to [-1, 1].
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    scale = np.sqrt(a * b)
    with np.errstate(divide="ignore", invalid="ignore"):
        rho = np.where(scale > 0, c / np.where(scale > 0, scale, 1.0), 0.0)
    rho = np.clip(rho, -1.0, 1.0)
    angle = np.pi - np.arccos(rho)
    e_val = scale * (np.sqrt(np.maximum(1.0 - rho * rho, 0.0)) + rho * angle) / np.pi
    e_der = angle / np.pi
    # exact limits at |rho| = 1
    e_val = np.where(rho >= 1.0, scale, np.where(rho <= -1.0, 0.0, e_val))
    e_der = np.where(rho >= 1.0, 1.0, np.where(rho <= -1.0, 0.0, e_der))
    return e_val, e_der


def ntk_gram(contexts: Sequence[np.ndarray], depth: int) -> NtkMatrix:
    """NTK gram matrix of unit-norm contexts for a depth-``depth`` ReLU network."""
    if depth < 2:
        raise ConfigError(f"depth must be at least 2, got {depth}", field="depth")
    X = np.atleast_2d(np.asarray(contexts, dtype=np.float64))
    norms = np.linalg.norm(X, axis=1)
    bad = np.flatnonzero(np.abs(norms - 1.0) > settings.NTK_UNIT_TOL)
    if bad.size:
        raise InputError(
            f"{bad.size} context(s) are not unit-norm (first index {bad[0]}, norm {norms[bad[0]]:.6g}); "
            "normalize and symmetrize contexts first",
            field="contexts",
        )

    sigma = X @ X.T
    h_tilde = sigma.copy()
    for _ in range(depth - 1):
        diag = np.diag(sigma)
        e_val, e_der = relu_expectations(diag[:, None], diag[None, :], sigma)
        h_tilde = h_tilde * e_der + e_val
        sigma = e_val
    H = 0.5 * (h_tilde + sigma)
    H = 0.5 * (H + H.T)
    eigenvalues = np.linalg.eigvalsh(H)
    min_eig = float(eigenvalues[0])
    if min_eig < -settings.PSD_TOL:
        raise NumericalError(f"NTK gram matrix is not PSD (min eigenvalue {min_eig:.3e})")
    return NtkMatrix(H=H, sigma_L=sigma, min_eig=min_eig, eigenvalues=eigenvalues)


def sigma_levels(contexts: Sequence[np.ndarray], depth: int) -> list:
    """Sigma^(1), ..., Sigma^(depth) of the recursion (diagnostics and tests)."""
    X = np.atleast_2d(np.asarray(contexts, dtype=np.float64))
    sigma = X @ X.T
    levels = [sigma]
    for _ in range(depth - 1):
        diag = np.diag(sigma)
        sigma, _ = relu_expectations(diag[:, None], diag[None, :], sigma)
        levels.append(sigma)
    return levels


# =============================================================================
# Monte Carlo oracle
# =============================================================================

def ntk_mc_oracle(A: np.ndarray, n_samples: int, seed: int) -> MonteCarloEstimate:
    """Monte Carlo estimates of the two kernel expectations under ``N(0, A)``."""
    A = np.asarray(A, dtype=np.float64)
    if A.shape != (2, 2) or not np.allclose(A, A.T):
        raise InputError("A must be a symmetric 2x2 matrix", field="A")
    eigvals, eigvecs = np.linalg.eigh(A)
    if eigvals[0] < -1e-12 * max(1.0, abs(eigvals[-1])):
        raise InputError(f"A is not positive semi-definite (eigenvalue {eigvals[0]:.3e})", field="A")
    root = eigvecs * np.sqrt(np.maximum(eigvals, 0.0))

    rng = np.random.default_rng(seed)
    uv = rng.standard_normal((n_samples, 2)) @ root.T
    u, v = uv[:, 0], uv[:, 1]
    vals = 2.0 * np.maximum(u, 0.0) * np.maximum(v, 0.0)
    ders = 2.0 * ((u > 0) & (v > 0)).astype(np.float64)
    root_n = math.sqrt(n_samples)
    return MonteCarloEstimate(
        e_val=float(vals.mean()),
        e_der=float(ders.mean()),
        se_val=float(vals.std(ddof=1) / root_n),
        se_der=float(ders.std(ddof=1) / root_n),
    )


# =============================================================================
# Assumption check / effective dimension
# =============================================================================

def check_assumption1(ntk: NtkMatrix) -> Tuple[bool, float]:
    """Whether ``H`` is positive definite; diagnostic only."""
    ok = ntk.min_eig > settings.PSD_TOL
    if not ok:
        logger.info("NTK gram matrix is singular up to tolerance (min eigenvalue %.3e)", ntk.min_eig)
    return ok, ntk.min_eig


def effective_dimension(ntk: NtkMatrix, lam: float) -> EffectiveDimension:
    """``log det(I + H/lambda) / log(1 + n/lambda)`` via a Cholesky factorization."""
    if not lam > 0:
        raise ConfigError(f"lambda must be positive, got {lam}", field="lambda")
    if ntk.min_eig < -settings.PSD_TOL:
        raise NumericalError(f"NTK gram matrix is not PSD (min eigenvalue {ntk.min_eig:.3e})")
    n = ntk.n
    M = np.eye(n) + ntk.H / lam
    try:
        factor, _ = linalg.cho_factor(M, lower=True)
    except linalg.LinAlgError as exc:
        raise NumericalError(f"I + H/lambda is not positive definite: {exc}") from exc
    logdet = 2.0 * float(np.sum(np.log(np.diag(factor))))
    return EffectiveDimension(d_tilde=logdet / math.log1p(n / lam), lam=lam, n_contexts=n)


def log_det_ratio_diagnostic(logdet_gain: float, eff: EffectiveDimension, n_total: int) -> float:
    """``log(det Z_final / det lambda I) / (d_tilde * log(1 + n_total/lambda) + 1)``.

    Logged after neural runs; the bound it compares against carries a width-dependent
    residual, so it is never asserted.
    """
    return logdet_gain / (eff.d_tilde * math.log1p(n_total / eff.lam) + 1.0)


def subsample_contexts(contexts: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform subsample without replacement (all contexts when ``size`` covers them)."""
    contexts = np.asarray(contexts, dtype=np.float64)
    if contexts.shape[0] <= size:
        return contexts
    idx = np.sort(rng.choice(contexts.shape[0], size=size, replace=False))
    return contexts[idx]
