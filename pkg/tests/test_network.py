"""Tests for the ReLU network, its gradients and TrainNN."""
import math

import numpy as np
import pytest

from app.core.environments import prepare_arms
from app.core.exceptions import ConfigError, InputError, RunAbortedError
from app.core.network import (
    NetworkParams,
    forward,
    grad_params,
    init_symmetric,
    param_count,
    train_nn,
    train_with_history,
    training_loss,
)
from app.schemas.experiment import NetworkConfig, TrainMode


def _perturb(params: NetworkParams, rng: np.random.Generator, scale: float = 0.1) -> NetworkParams:
    return params.with_flat(params.flat() + rng.normal(0.0, scale, size=params.param_count))


@pytest.mark.unit
class TestInitialization:
    """Block-symmetric initialization."""

    def test_param_count(self):
        """p = m*d + m^2*(L-2) + m."""
        config = NetworkConfig(input_dim=4, width=6, depth=3)
        params = init_symmetric(config, 1)
        assert param_count(4, 6, 3) == 66
        assert config.param_count == 66
        assert params.param_count == 66
        assert params.flat().shape == (66,)

    def test_block_structure(self, small_params):
        """Hidden weights are [[W, 0], [0, W]] and the output is (w, -w)."""
        W1 = small_params.weights[0]
        assert np.array_equal(W1[:3, :2], W1[3:, 2:])
        assert not W1[:3, 2:].any() and not W1[3:, :2].any()
        w = small_params.weights[-1][0]
        assert np.array_equal(w[:3], -w[3:])

    def test_output_is_zero_on_symmetrized_contexts(self, small_params, unit_contexts):
        """f(x; theta0) = 0 whenever x = [u; u]."""
        assert np.allclose(forward(small_params, unit_contexts), 0.0, atol=1e-12)

    @pytest.mark.parametrize("seed", range(10))
    def test_output_is_zero_on_a_thousand_contexts(self, seed):
        """The symmetry holds across many random contexts and initializations."""
        contexts = prepare_arms(np.random.default_rng(seed).uniform(0.0, 1.0, size=(1000, 5)))
        params = init_symmetric(NetworkConfig(input_dim=10, width=16, depth=3), seed)
        assert np.max(np.abs(forward(params, contexts))) <= 1e-6

    def test_deep_network_output_is_zero(self, unit_contexts):
        """The symmetry survives extra hidden layers."""
        params = init_symmetric(NetworkConfig(input_dim=4, width=8, depth=4), 3)
        assert np.allclose(forward(params, unit_contexts), 0.0, atol=1e-12)

    def test_same_seed_same_weights(self, small_net_config):
        """Initialization is a function of the seed."""
        a = init_symmetric(small_net_config, 5)
        b = init_symmetric(small_net_config, 5)
        c = init_symmetric(small_net_config, 6)
        assert a.fingerprint() == b.fingerprint()
        assert a.fingerprint() != c.fingerprint()

    def test_odd_dimensions_rejected(self):
        """Odd input size cannot be split into two blocks."""
        config = NetworkConfig.model_construct(input_dim=3, width=4, depth=2)
        with pytest.raises(ConfigError):
            init_symmetric(config, 0)

    def test_odd_width_rejected_by_schema(self):
        """The schema refuses odd widths up front."""
        with pytest.raises(ValueError):
            NetworkConfig(input_dim=4, width=5, depth=2)


@pytest.mark.unit
class TestGradients:
    """Hand-written backpropagation."""

    @pytest.mark.parametrize("depth", [2, 3])
    def test_features_match_finite_differences(self, rng, depth):
        """sqrt(m) * phi equals the numerical gradient of f."""
        params = _perturb(init_symmetric(NetworkConfig(input_dim=4, width=6, depth=depth), 2), rng)
        x = rng.normal(size=4)
        x /= np.linalg.norm(x)
        analytic = grad_params(params, x) * math.sqrt(params.width)
        theta = params.flat()
        eps = 1e-6
        numeric = np.array([
            (forward(params.with_flat(theta + eps * e), x) - forward(params.with_flat(theta - eps * e), x)) / (2 * eps)
            for e in np.eye(theta.size)
        ])
        assert np.linalg.norm(analytic - numeric) <= 1e-5 * max(1.0, np.linalg.norm(numeric))

    def test_forward_by_hand(self):
        """Identity first layer and unit output on (1, -1) gives sqrt(2) * relu(1)."""
        W1 = np.array([[1.0, 0.0], [0.0, 1.0]])
        W2 = np.array([[1.0, 1.0]])
        params = NetworkParams([W1, W2], [W1, W2])
        assert forward(params, np.array([1.0, -1.0])) == pytest.approx(math.sqrt(2.0), abs=1e-15)

    def test_zero_context_has_zero_features(self, rng, small_params):
        """Every ReLU is off at x = 0, so f and phi both vanish."""
        params = _perturb(small_params, rng)
        assert forward(params, np.zeros(4)) == 0.0
        assert not grad_params(params, np.zeros(4)).any()

    def test_batch_rows_equal_single_calls(self, rng, small_params, unit_contexts):
        """A batch of contexts gives one feature row per context."""
        params = _perturb(small_params, rng)
        batch = grad_params(params, unit_contexts)
        assert batch.shape == (10, params.param_count)
        for i in (0, 4, 9):
            assert np.allclose(batch[i], grad_params(params, unit_contexts[i]))

    def test_dimension_mismatch(self, small_params):
        """Contexts must have the network's input size."""
        with pytest.raises(InputError):
            forward(small_params, np.ones(3))
        with pytest.raises(InputError):
            grad_params(small_params, np.ones((2, 5)))


@pytest.mark.unit
class TestTraining:
    """TrainNN behaviour."""

    def test_zero_steps_returns_theta0(self, small_net_config, small_params, unit_contexts, rng):
        """J = 0 leaves the initialization in place."""
        config = small_net_config.model_copy(update={"gd_steps": 0})
        trained = train_nn(config, small_params, unit_contexts, rng.uniform(size=10))
        assert trained.fingerprint() == small_params.at_init().fingerprint()

    def test_empty_history_returns_theta0(self, small_net_config, small_params):
        """No data: the regularizer alone is minimized at theta0."""
        trained = train_nn(small_net_config, small_params, np.zeros((0, 4)), np.zeros(0))
        assert trained.fingerprint() == small_params.at_init().fingerprint()

    def test_length_mismatch(self, small_net_config, small_params, unit_contexts):
        """Contexts and rewards must pair up."""
        with pytest.raises(InputError):
            train_nn(small_net_config, small_params, unit_contexts, np.zeros(3))

    def test_loss_at_init(self, small_net_config, small_params, unit_contexts, rng):
        """With f(theta0) = 0 the loss is sum r^2 / 2."""
        r = rng.uniform(size=10)
        assert training_loss(small_net_config, small_params, unit_contexts, r) == pytest.approx(0.5 * np.sum(r ** 2))

    def test_full_gradient_reduces_loss(self, small_net_config, small_params, unit_contexts, rng):
        """Small full-gradient steps lower the regularized loss."""
        r = rng.uniform(size=10)
        trained, losses = train_with_history(small_net_config, small_params, unit_contexts, r, 0)
        assert len(losses) == small_net_config.gd_steps
        final = training_loss(small_net_config, trained, unit_contexts, r)
        assert final < losses[0]

    def test_single_step_by_hand(self, small_net_config, small_params, rng):
        """One full-gradient step from theta0 is theta0 - eta (f - r) grad f."""
        config = small_net_config.model_copy(update={"gd_steps": 1})
        x = rng.normal(size=4)
        r = 0.7
        f0 = forward(small_params, x)
        grad_f = grad_params(small_params, x) * math.sqrt(small_params.width)
        expected = small_params.flat_theta0() - config.step_size * (f0 - r) * grad_f
        trained = train_nn(config, small_params, x.reshape(1, -1), [r])
        np.testing.assert_allclose(trained.flat(), expected, rtol=0, atol=1e-10)

    def test_stationary_at_theta0(self, small_net_config, small_params, unit_contexts):
        """Zero rewards on symmetrized contexts leave nothing to fit."""
        trained = train_nn(small_net_config, small_params, unit_contexts, np.zeros(10))
        np.testing.assert_allclose(trained.flat(), small_params.flat_theta0(), rtol=0, atol=1e-10)

    def test_loss_mostly_monotone(self):
        """With eta = 1e-3 at least 95% of steps do not raise the loss over 20 problems."""
        steps = kept = 0
        for problem in range(20):
            rng = np.random.default_rng(problem)
            d, m, L = int(rng.integers(2, 4)), int(rng.choice([4, 8])), int(rng.integers(2, 4))
            config = NetworkConfig(input_dim=2 * d, width=m, depth=L, reg_lambda=0.01,
                                   step_size=1e-3, gd_steps=30, train_mode=TrainMode.FULL_GRADIENT)
            contexts = prepare_arms(rng.uniform(0.0, 1.0, size=(20, d)))
            r = rng.uniform(size=20)
            params = init_symmetric(config, problem)
            trained, losses = train_with_history(config, params, contexts, r, 0)
            losses.append(training_loss(config, trained, contexts, r))
            steps += len(losses) - 1
            kept += sum(b <= a for a, b in zip(losses, losses[1:]))
        assert steps == 20 * 30
        assert kept >= 0.95 * steps

    def test_stochastic_training_is_seeded(self, small_net_config, small_params, unit_contexts, rng):
        """Minibatch order comes from the seed."""
        config = small_net_config.model_copy(update={"train_mode": TrainMode.STOCHASTIC, "sgd_batch_size": 4})
        r = rng.uniform(size=10)
        a = train_nn(config, small_params, unit_contexts, r, rng_seed=1)
        b = train_nn(config, small_params, unit_contexts, r, rng_seed=1)
        c = train_nn(config, small_params, unit_contexts, r, rng_seed=2)
        assert a.fingerprint() == b.fingerprint()
        assert a.fingerprint() != c.fingerprint()

    def test_training_restarts_from_theta0(self, small_net_config, small_params, unit_contexts, rng):
        """Without warm start the starting weights are ignored."""
        r = rng.uniform(size=10)
        once = train_nn(small_net_config, small_params, unit_contexts, r)
        twice = train_nn(small_net_config, once, unit_contexts, r)
        assert once.fingerprint() == twice.fingerprint()

    def test_warm_start_continues(self, small_net_config, small_params, unit_contexts, rng):
        """With warm start a second call keeps descending from the first result."""
        config = small_net_config.model_copy(update={"warm_start": True})
        r = rng.uniform(size=10)
        once = train_nn(config, small_params, unit_contexts, r)
        twice = train_nn(config, once, unit_contexts, r)
        assert once.fingerprint() != twice.fingerprint()
        for w0, w in zip(small_params.theta0, twice.theta0):
            assert np.array_equal(w0, w)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_aborts(self, small_net_config, small_params, unit_contexts, rng):
        """A runaway step size ends in RunAbortedError."""
        config = small_net_config.model_copy(update={"step_size": 1e6, "gd_steps": 200})
        with pytest.raises(RunAbortedError):
            train_nn(config, small_params, unit_contexts, rng.uniform(size=10))


@pytest.mark.unit
class TestPersistence:
    """Saving and loading parameters."""

    def test_save_and_load(self, tmp_path, rng, small_params):
        """Weights, theta0 and the header survive an .npz round trip."""
        params = _perturb(small_params, rng)
        path = params.save(tmp_path / "params.npz")
        loaded = NetworkParams.load(path)
        assert loaded.fingerprint() == params.fingerprint()
        assert np.array_equal(loaded.flat_theta0(), params.flat_theta0())
        assert (loaded.input_dim, loaded.width, loaded.depth, loaded.seed) == (4, 6, 2, 7)

    def test_theta0_is_read_only(self, small_params):
        """The anchor of the regularizer cannot be modified in place."""
        with pytest.raises(ValueError):
            small_params.theta0[0][0, 0] = 1.0
