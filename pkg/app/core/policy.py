"""
BatchNeuralUCB decision loop and its baselines.

Provides:
- Fixed and adaptive batch schemes (when a new batch may open)
- Constant and theoretical exploration coefficients
- BatchNeuralUCB: network and exploration coefficient frozen per batch, rewards
  revealed at batch close, covariance accumulated every round
- NeuralUCB: the fully sequential counterpart (retrains every round)
- Uniformly random arm selection

Scoring inside a batch uses the inverse covariance frozen when the batch opened,
while the live covariance keeps accumulating gradient features at the batch's
frozen parameters.
"""
import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np

from app.core.covariance import CovarianceSnapshot, CovarianceState, quadratic_norm
from app.core.environments import BanditEnvironment, ContextBatch
from app.core.exceptions import ConfigError, InputError, RunAbortedError
from app.core.network import NetworkParams, forward, grad_params, init_symmetric, train_nn
from app.core.seeding import substream, substream_seed
from app.schemas.experiment import BetaMode, BetaSpec, NetworkConfig

logger = logging.getLogger(__name__)


# =============================================================================
# Batch schemes
# =============================================================================

class SchemeKind(str, Enum):
    FIXED = "fixed"
    ADAPTIVE = "adaptive"


@dataclass(frozen=True)
class BatchScheme:
    """``Fixed(B)`` or ``Adaptive(B, q)``; the adaptive threshold is held as ``log q``."""
    kind: SchemeKind
    batches: int
    log_q: Optional[float] = None

    def __post_init__(self):
        if self.batches < 1:
            raise ConfigError(f"number of batches must be positive, got {self.batches}", field="B")
        if self.kind == SchemeKind.ADAPTIVE and (self.log_q is None or not 0 < self.log_q < math.inf):
            raise ConfigError(f"adaptive scheme needs a finite log_q > 0, got {self.log_q}", field="log_q")

    @classmethod
    def fixed(cls, batches: int) -> "BatchScheme":
        return cls(SchemeKind.FIXED, batches)

    @classmethod
    def adaptive(cls, batches: int, q: float) -> "BatchScheme":
        if not q > 1:
            raise ConfigError(f"adaptive scheme needs q > 1, got {q}", field="q")
        return cls(SchemeKind.ADAPTIVE, batches, math.log(q))

    @classmethod
    def adaptive_log(cls, batches: int, log_q: float) -> "BatchScheme":
        return cls(SchemeKind.ADAPTIVE, batches, float(log_q))

    def batch_length(self, horizon: int) -> int:
        """Rounds per fixed batch, ``floor(T / B)`` (at least one)."""
        return max(1, horizon // self.batches)

    def max_updates(self, horizon: int) -> int:
        return min(self.batches, horizon)

    def fixed_grid(self, horizon: int) -> List[int]:
        """Start rounds ``b * floor(T/B) + 1`` of the fixed scheme."""
        length = self.batch_length(horizon)
        return [b * length + 1 for b in range(self.max_updates(horizon))]


# =============================================================================
# Exploration coefficient
# =============================================================================

@dataclass(frozen=True)
class BetaSchedule:
    """Constant beta or the confidence-radius expression evaluated on the covariance."""
    spec: BetaSpec
    width: int
    depth: int
    reg_lambda: float
    step_size: float
    gd_steps: int

    @classmethod
    def from_config(cls, spec: BetaSpec, net: NetworkConfig) -> "BetaSchedule":
        schedule = cls(spec, net.width, net.depth, net.reg_lambda, net.step_size, net.gd_steps)
        if spec.mode == BetaMode.THEORETICAL:
            _contraction(net.step_size, net.width, net.reg_lambda)
        return schedule

    def value(self, cov: CovarianceState, t: int) -> float:
        if self.spec.mode == BetaMode.CONSTANT:
            return self.spec.beta
        return beta_theoretical(self, cov, t, self.width, self.depth, self.reg_lambda)


def _contraction(eta: float, m: int, lam: float) -> float:
    rate = eta * m * lam
    if rate >= 1.0:
        raise ConfigError(
            f"eta*m*lambda = {rate:.4g} must be below 1 for the theoretical beta", field="step_size"
        )
    return 1.0 - rate


def beta_theoretical(sched: BetaSchedule, cov: CovarianceState, t: int, m: int, L_net: int, lam: float) -> float:
    """``C1 [(nu sqrt(logdet ratio - 2 log delta) + sqrt(lam) S) + (lam + t L)(1 - eta m lam)^(J/2) sqrt(t/lam)]``."""
    spec = sched.spec
    contraction = _contraction(sched.step_size, m, lam)
    inner = cov.logdet - cov.dim * math.log(lam) - 2.0 * math.log(spec.delta)
    confidence = spec.nu * math.sqrt(max(inner, 0.0)) + math.sqrt(lam) * spec.S
    optimization = (lam + t * L_net) * contraction ** (sched.gd_steps / 2.0) * math.sqrt(t / lam)
    return spec.C1 * (confidence + optimization)


# =============================================================================
# Policy state
# =============================================================================

@dataclass
class BatchBoundary:
    batch_index: int
    t_start: int
    log_ratio_before_trigger: Optional[float] = None


@dataclass
class StepOutcome:
    action: int
    reward: float
    regret: float
    batch_index: int
    ucb_values: Optional[np.ndarray] = None


@dataclass
class PolicyState:
    """Per-run state of BatchNeuralUCB."""
    frozen_params: NetworkParams
    cov: CovarianceState
    history_contexts: np.ndarray
    history_rewards: np.ndarray
    batch_index: int = 0
    batch_start: int = 0
    cov_snapshot: Optional[CovarianceSnapshot] = None
    beta_frozen: float = 0.0
    frozen_inverse: Optional[np.ndarray] = None
    n_history: int = 0
    pending: List[Tuple[np.ndarray, float, int]] = field(default_factory=list)
    t: int = 1

    def history(self) -> Tuple[np.ndarray, np.ndarray]:
        """Revealed (context, reward) pairs, in round order."""
        return self.history_contexts[:self.n_history], self.history_rewards[:self.n_history]

    def reveal_pending(self) -> int:
        """Move held-back rewards of the closed batch into the history."""
        count = len(self.pending)
        for context, reward, _ in self.pending:
            self.history_contexts[self.n_history] = context
            self.history_rewards[self.n_history] = reward
            self.n_history += 1
        self.pending.clear()
        return count


def should_update(scheme: BatchScheme, t: int, state: PolicyState, horizon: int) -> bool:
    """Whether a new batch opens at round ``t`` (evaluated before the round's contexts)."""
    if scheme.kind == SchemeKind.FIXED:
        b = state.batch_index
        return b < scheme.max_updates(horizon) and t == b * scheme.batch_length(horizon) + 1
    if state.cov_snapshot is None:
        return True
    return state.batch_index <= scheme.batches - 1 and state.cov.log_ratio_exceeds(state.cov_snapshot, scheme.log_q)


def select_action(state: PolicyState, contexts: np.ndarray) -> Tuple[int, np.ndarray, np.ndarray]:
    """UCB argmax with the batch's frozen network, beta and inverse covariance.

    Returns the arm (lowest index on ties), all K scores and the K gradient features.
    """
    return _ucb_argmax(state.frozen_params, state.frozen_inverse, state.beta_frozen, contexts)


def _ucb_argmax(params: NetworkParams, z_inv: np.ndarray, beta: float,
                contexts: np.ndarray) -> Tuple[int, np.ndarray, np.ndarray]:
    contexts = np.atleast_2d(np.asarray(contexts, dtype=np.float64))
    if contexts.shape[0] == 0:
        raise InputError("no arms offered", field="contexts")
    phi = grad_params(params, contexts)
    scores = forward(params, contexts) + beta * quadratic_norm(z_inv, phi)
    return int(np.argmax(scores)), scores, phi


# =============================================================================
# Policies
# =============================================================================

class BanditPolicy(ABC):
    """Common interface driven by the harness."""

    name: str = "policy"

    def __init__(self):
        self.boundaries: List[BatchBoundary] = []

    @property
    def n_updates(self) -> int:
        return len(self.boundaries)

    @abstractmethod
    def step(self, batch: ContextBatch, env: BanditEnvironment) -> StepOutcome:
        """Play one round."""

    @property
    def covariance(self) -> Optional[CovarianceState]:
        """Gradient-feature covariance, for policies that keep one."""
        return None


class BatchNeuralUCB(BanditPolicy):
    """BatchNeuralUCB under a fixed or adaptive batch scheme."""

    name = "bnucb"

    def __init__(self, config: NetworkConfig, scheme: BatchScheme, beta: BetaSchedule,
                 horizon: int, seed: int):
        super().__init__()
        self.config = config
        self.scheme = scheme
        self.beta = beta
        self.horizon = horizon
        self.seed = seed
        self.theta0 = init_symmetric(config, substream_seed(seed, "network"))
        self.state = PolicyState(
            frozen_params=self.theta0,
            cov=CovarianceState(config.param_count, config.reg_lambda),
            history_contexts=np.zeros((horizon, config.input_dim)),
            history_rewards=np.zeros(horizon),
        )

    @property
    def covariance(self) -> CovarianceState:
        return self.state.cov

    def should_update(self, t: int) -> bool:
        return should_update(self.scheme, t, self.state, self.horizon)

    def open_batch(self, t: int) -> PolicyState:
        """Close the running batch, retrain from theta0 and freeze the new batch's policy."""
        state = self.state
        revealed = state.reveal_pending()
        contexts, rewards = state.history()
        train_seed = substream_seed(self.seed, "train", t)
        try:
            state.frozen_params = train_nn(self.config, state.frozen_params, contexts, rewards, train_seed)
        except RunAbortedError as exc:
            exc.round_index = t
            raise

        log_ratio = state.cov.log_ratio(state.cov_snapshot) if state.cov_snapshot is not None else None
        state.batch_index += 1
        state.batch_start = t
        state.beta_frozen = self.beta.value(state.cov, t)
        state.cov_snapshot = state.cov.snapshot(t)
        state.frozen_inverse = state.cov.frozen_inverse()
        self.boundaries.append(BatchBoundary(state.batch_index - 1, t, log_ratio))
        logger.debug(
            "batch %d opened at t=%d (revealed %d rewards, trained on %d, beta %.4g)",
            state.batch_index - 1, t, revealed, len(rewards), state.beta_frozen,
        )
        return state

    def select_action(self, contexts: np.ndarray) -> Tuple[int, np.ndarray, np.ndarray]:
        return select_action(self.state, contexts)

    def step(self, batch: ContextBatch, env: BanditEnvironment) -> StepOutcome:
        state = self.state
        t = state.t
        if self.should_update(t):
            self.open_batch(t)
        action, scores, phi = self.select_action(batch.arms)
        reward = env.reward(t, action)
        state.pending.append((batch.arms[action], reward, t))
        state.cov.rank_one_update(phi[action])
        state.t += 1
        return StepOutcome(action, reward, batch.regret(action), state.batch_index - 1, scores)


class NeuralUCB(BanditPolicy):
    """Fully sequential NeuralUCB: retrains and rescores with the live covariance every round."""

    name = "neuralucb"

    def __init__(self, config: NetworkConfig, beta: BetaSchedule, horizon: int, seed: int):
        super().__init__()
        self.config = config
        self.beta = beta
        self.seed = seed
        self.theta0 = init_symmetric(config, substream_seed(seed, "network"))
        self.params = self.theta0
        self.cov = CovarianceState(config.param_count, config.reg_lambda)
        self.contexts = np.zeros((horizon, config.input_dim))
        self.rewards = np.zeros(horizon)
        self.t = 1

    @property
    def covariance(self) -> CovarianceState:
        return self.cov

    def step(self, batch: ContextBatch, env: BanditEnvironment) -> StepOutcome:
        t = self.t
        n = t - 1
        try:
            self.params = train_nn(self.config, self.params, self.contexts[:n], self.rewards[:n],
                                   substream_seed(self.seed, "train", t))
        except RunAbortedError as exc:
            exc.round_index = t
            raise
        self.boundaries.append(BatchBoundary(t - 1, t))
        beta = self.beta.value(self.cov, t)
        action, scores, phi = _ucb_argmax(self.params, self.cov.Z_inv, beta, batch.arms)
        reward = env.reward(t, action)
        self.contexts[n] = batch.arms[action]
        self.rewards[n] = reward
        self.cov.rank_one_update(phi[action])
        self.t += 1
        return StepOutcome(action, reward, batch.regret(action), t - 1, scores)


class UniformRandom(BanditPolicy):
    """Picks an arm uniformly at random; never updates."""

    name = "uniform"

    def __init__(self, seed: int):
        super().__init__()
        self.rng = substream(seed, "uniform")
        self.t = 1

    def step(self, batch: ContextBatch, env: BanditEnvironment) -> StepOutcome:
        if not self.boundaries:
            self.boundaries.append(BatchBoundary(0, 1))
        action = int(self.rng.integers(env.n_arms))
        reward = env.reward(self.t, action)
        self.t += 1
        return StepOutcome(action, reward, batch.regret(action), 0)

    @property
    def n_updates(self) -> int:
        return 0
