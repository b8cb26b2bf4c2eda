"""Tests for the LinUCB baseline."""
import numpy as np
import pytest

from app.core.environments import BanditEnvironment, ContextBatch, RewardModel, prepare_arms
from app.core.exceptions import InputError
from app.core.linucb import LinUCB, LinUcbState, linucb_step
from app.schemas.experiment import EnvKind


@pytest.mark.unit
class TestLinUcbState:
    """Ridge estimate and scores."""

    def test_w_hat_is_ridge_solution(self, rng):
        """w_hat = (lambda I + X^T X)^{-1} X^T r."""
        state = LinUcbState.create(3, 0.5, 1.0)
        X = rng.normal(size=(25, 3))
        r = rng.uniform(size=25)
        for x, reward in zip(X, r):
            state.update(x, reward)
        expected = np.linalg.solve(0.5 * np.eye(3) + X.T @ X, X.T @ r)
        assert np.allclose(state.w_hat, expected)

    def test_scores(self, rng):
        """score = x^T w_hat + beta * sqrt(x^T A^{-1} x)."""
        state = LinUcbState.create(2, 1.0, 0.3)
        state.update(np.array([1.0, 0.0]), 2.0)
        contexts = rng.normal(size=(4, 2))
        A = np.eye(2) + np.outer([1.0, 0.0], [1.0, 0.0])
        w = np.linalg.solve(A, np.array([2.0, 0.0]))
        bonus = np.sqrt(np.einsum("ij,jk,ik->i", contexts, np.linalg.inv(A), contexts))
        assert np.allclose(state.scores(contexts), contexts @ w + 0.3 * bonus)

    def test_ties_go_to_lowest_index(self):
        """Equal scores pick arm 0."""
        action, _ = linucb_step(LinUcbState.create(2, 1.0, 1.0), np.zeros((3, 2)))
        assert action == 0

    def test_no_arms(self):
        """K = 0 is an input error."""
        with pytest.raises(InputError):
            linucb_step(LinUcbState.create(2, 1.0, 1.0), np.zeros((0, 2)))


@pytest.mark.unit
class TestLinUcbPolicy:
    """Sequential play on raw contexts."""

    def test_updates_every_round(self, cosine_env):
        """One update per round, ridge state sized to the raw contexts."""
        policy = LinUCB(cosine_env.raw_dim, 0.01, 0.1)
        for batch in cosine_env.batches:
            outcome = policy.step(batch, cosine_env)
            assert 0 <= outcome.action < cosine_env.n_arms
        assert policy.n_updates == cosine_env.horizon
        assert policy.state.A.update_count == cosine_env.horizon
        assert policy.state.bvec.shape == (cosine_env.raw_dim,)

    def test_ridge_state_matches_played_history(self, cosine_env):
        """Accumulated (context, reward) pairs reproduce the ridge estimate."""
        policy = LinUCB(cosine_env.raw_dim, 1.0, 0.0)
        chosen, rewards = [], []
        for batch in cosine_env.batches:
            outcome = policy.step(batch, cosine_env)
            chosen.append(batch.raw_arms[outcome.action])
            rewards.append(outcome.reward)
        X = np.array(chosen)
        expected = np.linalg.solve(np.eye(3) + X.T @ X, X.T @ np.array(rewards))
        assert np.allclose(policy.state.w_hat, expected)


def _linear_env(seed: int, T: int = 200, d: int = 5, K: int = 10, noise_std: float = 0.1) -> BanditEnvironment:
    """Rewards linear in the raw context, ``x^T theta* + N(0, noise_std^2)``."""
    rng = np.random.default_rng(seed)
    theta = rng.normal(size=d)
    theta /= np.linalg.norm(theta)
    raw = rng.normal(size=(T, K, d))
    batches = [ContextBatch(t + 1, prepare_arms(raw[t]), raw[t], raw[t] @ theta) for t in range(T)]
    noise = rng.normal(0.0, noise_std, size=(T, K))
    # the means live on the batches; the model only carries the arm count here
    return BanditEnvironment("linear", batches, RewardModel(kind=EnvKind.COSINE, n_arms=K), noise)


@pytest.mark.integration
class TestLinUcbOnLinearRewards:
    """Well-specified linear rewards."""

    def test_beats_uniform_and_keeps_learning(self):
        """Median regret is under half of uniform play and the second half beats the first."""
        linucb, uniform, first, second = [], [], [], []
        for seed in range(10):
            env = _linear_env(seed)
            policy = LinUCB(env.raw_dim, 1.0, 1.0)
            regrets = np.array([policy.step(batch, env).regret for batch in env.batches])
            linucb.append(regrets.sum())
            first.append(regrets[:100].sum())
            second.append(regrets[100:].sum())
            uniform.append(sum(b.optimal_mean - float(np.mean(b.means)) for b in env.batches))
        assert np.median(linucb) < 0.5 * np.median(uniform)
        assert np.median(second) < np.median(first)
