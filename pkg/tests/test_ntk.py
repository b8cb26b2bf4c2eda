"""Tests for the NTK gram matrix and effective dimension."""
import math

import numpy as np
import pytest

from app.core.environments import gen_cosine, prepare_arms
from app.core.exceptions import ConfigError, InputError
from app.core.ntk import (
    check_assumption1,
    effective_dimension,
    log_det_ratio_diagnostic,
    ntk_gram,
    ntk_mc_oracle,
    relu_expectations,
    sigma_levels,
    subsample_contexts,
)
from app.core.oracles import MC_SIGMAS, check_kernel_expectations


@pytest.mark.unit
class TestReluExpectations:
    """Closed-form Gaussian expectations."""

    def test_independent_inputs(self):
        """rho = 0: 2E[s(u)s(v)] = 1/pi and 2E[s'(u)s'(v)] = 1/2."""
        e_val, e_der = relu_expectations(1.0, 1.0, 0.0)
        assert float(e_val) == pytest.approx(1.0 / math.pi)
        assert float(e_der) == pytest.approx(0.5)

    def test_identical_inputs(self):
        """rho = 1: 2E[s(u)^2] = a and 2P(u > 0) = 1."""
        e_val, e_der = relu_expectations(2.0, 2.0, 2.0)
        assert float(e_val) == pytest.approx(2.0)
        assert float(e_der) == pytest.approx(1.0)

    def test_opposite_inputs(self):
        """rho = -1: the two ReLUs are never active together."""
        e_val, e_der = relu_expectations(1.0, 1.0, -1.0)
        assert float(e_val) == pytest.approx(0.0)
        assert float(e_der) == pytest.approx(0.0)

    def test_correlation_is_clamped(self):
        """Rounding slightly beyond |rho| = 1 does not produce NaN."""
        e_val, e_der = relu_expectations(1.0, 1.0, 1.0 + 1e-12)
        assert np.isfinite(e_val) and np.isfinite(e_der)

    @pytest.mark.parametrize("a,b,rho", [(1.0, 1.0, 0.3), (2.0, 0.5, -0.4), (1.5, 1.0, 0.9)])
    def test_monte_carlo_agreement(self, a, b, rho):
        """The Monte Carlo oracle agrees within five standard errors."""
        c = rho * math.sqrt(a * b)
        e_val, e_der = relu_expectations(a, b, c)
        est = ntk_mc_oracle(np.array([[a, c], [c, b]]), 200_000, seed=17)
        assert abs(float(e_val) - est.e_val) <= 5 * est.se_val
        assert abs(float(e_der) - est.e_der) <= 5 * est.se_der

    @pytest.mark.slow
    def test_full_grid_at_three_sigma(self):
        """Every correlation in [-0.9, 0.9] over scales {0.5, 1, 2} at a million samples."""
        checks = check_kernel_expectations(seed=2024)
        assert len(checks) == 9
        for check in checks:
            assert check.passed, check
            assert check.max_error <= MC_SIGMAS

    def test_oracle_rejects_indefinite_matrix(self):
        """The sampling covariance must be PSD."""
        with pytest.raises(InputError):
            ntk_mc_oracle(np.array([[1.0, 2.0], [2.0, 1.0]]), 100, seed=0)


@pytest.mark.unit
class TestNtkGram:
    """Layerwise recursion on unit contexts."""

    @pytest.mark.parametrize("depth", [2, 3, 5])
    def test_diagonal(self, unit_contexts, depth):
        """Unit contexts give H_ii = (L + 1) / 2."""
        ntk = ntk_gram(unit_contexts, depth)
        assert np.allclose(np.diag(ntk.H), (depth + 1) / 2.0)

    def test_symmetric_psd(self, unit_contexts):
        """H is symmetric with non-negative spectrum."""
        ntk = ntk_gram(unit_contexts, 3)
        assert np.allclose(ntk.H, ntk.H.T)
        assert ntk.min_eig >= -1e-10
        assert ntk.n == 10
        assert np.allclose(np.sort(ntk.eigenvalues), np.linalg.eigvalsh(ntk.H))

    def test_two_contexts_by_hand(self):
        """One recursion step for two orthogonal unit contexts."""
        X = np.array([[1.0, 0.0], [0.0, 1.0]])
        ntk = ntk_gram(X, 2)
        # off-diagonal: Sigma2 = 1/pi, H_tilde2 = 0 * 1/2 + 1/pi
        assert ntk.H[0, 1] == pytest.approx(1.0 / math.pi)
        assert ntk.H[0, 0] == pytest.approx(1.5)

    def test_sigma_levels_keep_unit_diagonal(self, unit_contexts):
        """Sigma^(l)_ii stays 1 on unit contexts."""
        for level in sigma_levels(unit_contexts, 4):
            np.testing.assert_allclose(np.diag(level), 1.0, rtol=0, atol=1e-10)

    def test_non_unit_contexts_rejected(self):
        """Contexts must be normalized first."""
        with pytest.raises(InputError):
            ntk_gram(np.array([[2.0, 0.0], [0.0, 1.0]]), 2)

    def test_depth_below_two_rejected(self, unit_contexts):
        """A network needs at least one hidden layer."""
        with pytest.raises(ConfigError):
            ntk_gram(unit_contexts, 1)


@pytest.mark.unit
class TestAssumptionAndEffectiveDimension:
    """Positive definiteness and d_tilde."""

    def test_distinct_contexts_positive_definite(self, unit_contexts):
        """Non-parallel contexts give a positive definite gram matrix."""
        holds, min_eig = check_assumption1(ntk_gram(unit_contexts, 2))
        assert holds
        assert min_eig > 0

    def test_duplicate_contexts_singular(self, unit_contexts):
        """A repeated context makes H singular."""
        X = np.vstack([unit_contexts, unit_contexts[:1]])
        holds, min_eig = check_assumption1(ntk_gram(X, 2))
        assert not holds
        assert abs(min_eig) < 1e-8

    def test_effective_dimension_matches_eigenvalues(self, unit_contexts):
        """d_tilde = sum log(1 + mu_i / lambda) / log(1 + n / lambda)."""
        ntk = ntk_gram(unit_contexts, 2)
        lam = 0.1
        expected = np.sum(np.log1p(np.linalg.eigvalsh(ntk.H) / lam)) / math.log1p(10 / lam)
        eff = effective_dimension(ntk, lam)
        assert eff.d_tilde == pytest.approx(expected, rel=1e-9)
        assert eff.n_contexts == 10
        assert eff.d_tilde > 0

    def test_logdet_decreases_with_lambda(self, unit_contexts):
        """log det(I + H/lambda) shrinks as lambda grows."""
        ntk = ntk_gram(unit_contexts, 2)
        values = []
        for lam in (0.01, 0.1, 1.0, 10.0):
            eff = effective_dimension(ntk, lam)
            values.append(eff.d_tilde * math.log1p(ntk.n / lam))
        assert all(a > b for a, b in zip(values, values[1:]))

    def test_effective_dimension_nonincreasing_in_lambda(self):
        """d_tilde never grows along a ten-point lambda grid on cosine contexts."""
        X = subsample_contexts(gen_cosine(T=30, d=10, K=4, seed=3).all_contexts(), 50, np.random.default_rng(3))
        ntk = ntk_gram(X, 2)
        values = [effective_dimension(ntk, lam).d_tilde for lam in np.logspace(-2, 2, 10)]
        assert all(a >= b - 1e-12 for a, b in zip(values, values[1:]))
        assert values[0] > values[-1]

    @pytest.mark.parametrize("set_seed", range(20))
    def test_matches_eigendecomposition(self, set_seed):
        """Cholesky log-determinant agrees with the eigenvalue sum on random 50-context sets."""
        env = gen_cosine(T=30, d=10, K=4, seed=set_seed)
        X = subsample_contexts(env.all_contexts(), 50, np.random.default_rng(set_seed))
        ntk = ntk_gram(X, 2)
        lam = 0.1
        mu = np.linalg.eigh(ntk.H)[0]
        expected = float(np.sum(np.log1p(np.maximum(mu, 0.0) / lam))) / math.log1p(50 / lam)
        assert ntk.n == 50
        assert abs(effective_dimension(ntk, lam).d_tilde - expected) <= 1e-8

    def test_lambda_must_be_positive(self, unit_contexts):
        """lambda <= 0 is a configuration error."""
        with pytest.raises(ConfigError):
            effective_dimension(ntk_gram(unit_contexts, 2), 0.0)

    def test_diagnostic_ratio(self, unit_contexts):
        """The ratio divides the covariance gain by d_tilde log(1 + n/lambda) + 1."""
        eff = effective_dimension(ntk_gram(unit_contexts, 2), 0.5)
        ratio = log_det_ratio_diagnostic(3.0, eff, 40)
        assert ratio == pytest.approx(3.0 / (eff.d_tilde * math.log1p(80.0) + 1.0))

    def test_subsample(self, rng):
        """Subsampling draws distinct rows and keeps small sets whole."""
        X = prepare_arms(rng.uniform(size=(30, 3)))
        sub = subsample_contexts(X, 12, np.random.default_rng(0))
        assert sub.shape == (12, 6)
        assert len({row.tobytes() for row in sub}) == 12
        assert subsample_contexts(X, 50, np.random.default_rng(0)).shape == (30, 6)
