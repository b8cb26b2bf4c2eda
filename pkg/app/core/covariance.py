"""
Regularized gradient-feature covariance.

Maintains ``Z = lambda*I + sum(phi phi^T)`` together with its inverse and its
log-determinant:

- the inverse is updated with the Sherman-Morrison identity in O(p^2) per update
  (both rank-one updates are applied in place through BLAS ``dger``)
  and refreshed from a Cholesky factorization every ``refresh_interval`` updates;
- the log-determinant is updated with the matrix determinant lemma, so the
  adaptive batch trigger only ever compares log-ratios.
"""
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
from scipy import linalg
from scipy.linalg import blas

from app.core.config import settings
from app.core.exceptions import ConfigError, InputError, NumericalError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CovarianceSnapshot:
    """Log-determinant of ``Z`` recorded when a batch opens."""
    logdet_at_snapshot: float
    round_index: int


def _add_outer(matrix: np.ndarray, alpha: float, x: np.ndarray) -> None:
    """``matrix += alpha x x^T`` in place for a symmetric C-ordered ``matrix``."""
    # the transpose is the same symmetric buffer in Fortran order, so BLAS writes in place
    updated = blas.dger(alpha, x, x, a=matrix.T, overwrite_a=True)
    if not np.shares_memory(updated, matrix):
        matrix[...] = updated.T


def quadratic_norm(z_inv: np.ndarray, phi: np.ndarray) -> Union[float, np.ndarray]:
    """Return ``sqrt(phi^T Z^{-1} phi)`` for one feature (p,) or a stack (n, p)."""
    phi = np.asarray(phi, dtype=np.float64)
    if phi.ndim == 1:
        value = float(phi @ z_inv @ phi)
        return math.sqrt(max(value, 0.0))
    values = np.sum((phi @ z_inv) * phi, axis=1)
    return np.sqrt(np.maximum(values, 0.0))


class CovarianceState:
    """p x p covariance with maintained inverse and log-determinant."""

    def __init__(self, dim: int, lam: float, refresh_interval: Optional[int] = None):
        if int(dim) != dim or dim < 1:
            raise ConfigError(f"covariance dimension must be a positive integer, got {dim}", field="p")
        if not lam > 0:
            raise ConfigError(f"regularization lambda must be positive, got {lam}", field="lambda")
        self.dim = int(dim)
        self.lam = float(lam)
        self.refresh_interval = refresh_interval or settings.COV_REFRESH_INTERVAL
        self.Z = self.lam * np.eye(self.dim)
        self.Z_inv = np.eye(self.dim) / self.lam
        self.logdet = self.dim * math.log(self.lam)
        self.update_count = 0

    # ------------------------------------------------------------------ updates

    def _check_feature(self, phi: np.ndarray) -> np.ndarray:
        phi = np.asarray(phi, dtype=np.float64).reshape(-1)
        if phi.shape[0] != self.dim:
            raise InputError(
                f"feature has length {phi.shape[0]}, covariance expects {self.dim}", field="phi"
            )
        if not np.all(np.isfinite(phi)):
            raise NumericalError("feature vector contains non-finite entries", field="phi")
        return phi

    def rank_one_update(self, phi: np.ndarray) -> "CovarianceState":
        """Add ``phi phi^T`` to ``Z``; updates inverse and log-determinant in place."""
        phi = self._check_feature(phi)
        u = self.Z_inv @ phi
        gain = float(phi @ u)
        _add_outer(self.Z, 1.0, phi)
        _add_outer(self.Z_inv, -1.0 / (1.0 + gain), u)
        self.logdet += math.log1p(gain)
        self.update_count += 1
        if self.update_count % self.refresh_interval == 0:
            self.refresh_inverse()
        return self

    def refresh_inverse(self) -> None:
        """Recompute ``Z_inv`` from a Cholesky factorization of ``Z``."""
        factor = linalg.cho_factor(self.Z, lower=True)
        fresh = linalg.cho_solve(factor, np.eye(self.dim), overwrite_b=True)
        del factor
        fresh += fresh.T
        fresh *= 0.5
        # the stale inverse becomes the drift buffer
        self.Z_inv -= fresh
        drift = float(np.max(np.abs(self.Z_inv, out=self.Z_inv)))
        self.Z_inv = np.ascontiguousarray(fresh)
        logger.debug("covariance inverse refreshed after %d updates (drift %.3e)", self.update_count, drift)

    # ------------------------------------------------------------------ queries

    def mahalanobis(self, phi: np.ndarray) -> Union[float, np.ndarray]:
        """``||phi||_{Z^{-1}}`` for one feature or a stack of features."""
        phi = np.asarray(phi, dtype=np.float64)
        if phi.shape[-1] != self.dim:
            raise InputError(f"feature has length {phi.shape[-1]}, covariance expects {self.dim}", field="phi")
        if not np.all(np.isfinite(phi)):
            raise NumericalError("feature vector contains non-finite entries", field="phi")
        return quadratic_norm(self.Z_inv, phi)

    def snapshot(self, round_index: int) -> CovarianceSnapshot:
        return CovarianceSnapshot(logdet_at_snapshot=self.logdet, round_index=round_index)

    def log_ratio(self, snap: CovarianceSnapshot) -> float:
        """``log(det Z / det Z_snapshot)``."""
        return self.logdet - snap.logdet_at_snapshot

    def det_ratio_exceeds(self, snap: CovarianceSnapshot, q: float) -> bool:
        """True iff ``det(Z) > q * det(Z_snapshot)``."""
        if not q > 1:
            raise ConfigError(f"determinant ratio q must exceed 1, got {q}", field="q")
        return self.log_ratio_exceeds(snap, math.log(q))

    def log_ratio_exceeds(self, snap: CovarianceSnapshot, log_q: float) -> bool:
        """True iff ``log det(Z) - log det(Z_snapshot) > log_q``."""
        return self.log_ratio(snap) > log_q

    def logdet_gain(self) -> float:
        """``log(det Z / det(lambda I))``."""
        return self.logdet - self.dim * math.log(self.lam)

    def frozen_inverse(self) -> np.ndarray:
        """Read-only copy of the current inverse, used for scoring within a batch."""
        frozen = self.Z_inv.copy()
        frozen.setflags(write=False)
        return frozen

    # ------------------------------------------------------------------ checks

    def direct_logdet(self) -> float:
        sign, value = np.linalg.slogdet(self.Z)
        if sign <= 0:
            raise NumericalError("covariance lost positive definiteness")
        return float(value)

    def inverse_residual(self) -> float:
        """``max |Z Z_inv - I|``."""
        return float(np.max(np.abs(self.Z @ self.Z_inv - np.eye(self.dim))))

    def copy(self) -> "CovarianceState":
        clone = CovarianceState.__new__(CovarianceState)
        clone.dim = self.dim
        clone.lam = self.lam
        clone.refresh_interval = self.refresh_interval
        clone.Z = self.Z.copy()
        clone.Z_inv = self.Z_inv.copy()
        clone.logdet = self.logdet
        clone.update_count = self.update_count
        return clone

    def dump_csv(self, path: Union[str, Path]) -> Path:
        """Write ``Z`` as dense row-major CSV (debugging aid, small p only)."""
        if self.dim > settings.COV_DUMP_MAX_DIM:
            raise InputError(
                f"refusing to dump a {self.dim}x{self.dim} covariance (limit {settings.COV_DUMP_MAX_DIM})",
                field="p",
            )
        path = Path(path)
        np.savetxt(path, self.Z, delimiter=",", fmt="%.17g")
        return path


def cov_init(p: int, lam: float) -> CovarianceState:
    """``Z = lambda I``."""
    return CovarianceState(p, lam)
