"""
LinUCB baseline.

Shared-parameter ridge UCB over raw (unsymmetrized) arm contexts:
``score(x) = x^T w_hat + beta * sqrt(x^T A^{-1} x)`` with ``A = lambda I + sum x x^T``.
The ridge matrix reuses :class:`CovarianceState` for its Sherman-Morrison inverse.
"""
import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from app.core.covariance import CovarianceState
from app.core.environments import BanditEnvironment, ContextBatch
from app.core.exceptions import InputError
from app.core.policy import BanditPolicy, BatchBoundary, StepOutcome

logger = logging.getLogger(__name__)


@dataclass
class LinUcbState:
    """Ridge matrix ``A``, response vector ``b`` and the UCB constants."""
    A: CovarianceState
    bvec: np.ndarray
    lambda_lin: float
    beta_lin: float

    @classmethod
    def create(cls, dim: int, lambda_lin: float, beta_lin: float) -> "LinUcbState":
        return cls(CovarianceState(dim, lambda_lin), np.zeros(dim), lambda_lin, beta_lin)

    @property
    def w_hat(self) -> np.ndarray:
        return self.A.Z_inv @ self.bvec

    def scores(self, contexts: np.ndarray) -> np.ndarray:
        contexts = np.atleast_2d(np.asarray(contexts, dtype=np.float64))
        if contexts.shape[0] == 0:
            raise InputError("no arms offered", field="contexts")
        return contexts @ self.w_hat + self.beta_lin * self.A.mahalanobis(contexts)

    def update(self, context: np.ndarray, reward: float) -> "LinUcbState":
        self.A.rank_one_update(context)
        self.bvec += reward * np.asarray(context, dtype=np.float64)
        return self


def linucb_step(state: LinUcbState, contexts: np.ndarray) -> Tuple[int, LinUcbState]:
    """Arm with the largest ridge UCB score (lowest index on ties)."""
    return int(np.argmax(state.scores(contexts))), state


class LinUCB(BanditPolicy):
    """Fully sequential LinUCB on the raw arm contexts."""

    name = "linucb"

    def __init__(self, dim: int, lambda_lin: float, beta_lin: float):
        super().__init__()
        self.state = LinUcbState.create(dim, lambda_lin, beta_lin)
        self.t = 1

    def step(self, batch: ContextBatch, env: BanditEnvironment) -> StepOutcome:
        t = self.t
        self.boundaries.append(BatchBoundary(t - 1, t))
        action, _ = linucb_step(self.state, batch.raw_arms)
        reward = env.reward(t, action)
        self.state.update(batch.raw_arms[action], reward)
        self.t += 1
        return StepOutcome(action, reward, batch.regret(action), t - 1)
