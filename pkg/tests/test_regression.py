import numpy as np
import pytest

from fbscontrol.regression import NodeBasis, NodeFit, monomial_exponents


def test_monomial_count():
    assert len(monomial_exponents(1, 2)) == 3
    assert len(monomial_exponents(2, 2)) == 6
    assert len(monomial_exponents(3, 1)) == 4


def test_degenerate_state_regresses_to_mean():
    state = np.full((50, 1), 2.5)
    nb = NodeBasis(state, degree=2)
    assert nb.n_features == 1
    target = np.arange(50.0)
    fitted = nb.fit(target)
    assert np.allclose(fitted, target.mean())


def test_fit_is_linear_in_target():
    rng = np.random.Generator(np.random.Philox(key=[3, 1]))
    state = rng.normal(size=(200, 2))
    nb = NodeBasis(state, degree=2)
    a = rng.normal(size=200)
    b = rng.normal(size=200)
    lhs = nb.fit(a + b)
    rhs = nb.fit(a) + nb.fit(b)
    assert np.abs(lhs - rhs).max() < 1e-12


def test_exact_recovery_of_basis_function():
    rng = np.random.Generator(np.random.Philox(key=[4, 1]))
    state = rng.normal(size=(300, 1))
    nb = NodeBasis(state, degree=2)
    target = 1.5 - 0.3 * state[:, 0] + 0.7 * state[:, 0] ** 2
    assert np.abs(nb.fit(target) - target).max() < 1e-10


def test_nodefit_closure_matches_at_new_points():
    rng = np.random.Generator(np.random.Philox(key=[5, 1]))
    state = rng.normal(size=(400, 1))
    nb = NodeBasis(state, degree=2)
    target = 2.0 + state[:, 0] ** 2
    coef = nb.coefficients(target)
    fit = NodeFit(nb.transform, coef)
    probe = np.linspace(-1, 1, 7)[:, None]
    assert np.abs(fit(probe) - (2.0 + probe[:, 0] ** 2)).max() < 1e-9


def test_multidim_cross_terms():
    rng = np.random.Generator(np.random.Philox(key=[6, 1]))
    state = rng.normal(size=(500, 2))
    nb = NodeBasis(state, degree=2)
    target = state[:, 0] * state[:, 1]
    assert np.abs(nb.fit(target) - target).max() < 1e-9


def test_vector_targets_share_factorization():
    rng = np.random.Generator(np.random.Philox(key=[7, 1]))
    state = rng.normal(size=(100, 1))
    nb = NodeBasis(state, degree=1)
    targets = rng.normal(size=(100, 3))
    joint = nb.fit(targets)
    for j in range(3):
        assert np.allclose(joint[:, j], nb.fit(targets[:, j]))
