"""Per-node least-squares machinery for regression Monte Carlo backward solvers.

A :class:`NodeBasis` is built from the conditioning state at one time node
(polynomial features up to a total degree, standardized per state dimension)
and can fit any number of regressands against the same factorized normal
equations. Fits are linear maps of the regressand, which is what makes
superposition tests on linear equations hold to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations_with_replacement

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

RIDGE_LAMBDA = 1e-8
_DEGENERATE_TOL = 1e-12


def monomial_exponents(n_dims: int, degree: int) -> np.ndarray:
    """Exponent rows for all monomials of total degree <= degree (intercept first)."""
    rows = [np.zeros(n_dims, dtype=int)]
    for deg in range(1, degree + 1):
        for combo in combinations_with_replacement(range(n_dims), deg):
            e = np.zeros(n_dims, dtype=int)
            for j in combo:
                e[j] += 1
            rows.append(e)
    return np.array(rows)


@dataclass
class BasisTransform:
    """Everything needed to rebuild a node's design matrix at new state values."""

    mean: np.ndarray
    scale: np.ndarray
    exponents: np.ndarray
    keep: np.ndarray  # indices of retained columns

    def design(self, state: np.ndarray) -> np.ndarray:
        state = np.atleast_2d(np.asarray(state, dtype=float))
        z = (state - self.mean) / self.scale
        cols = np.ones((state.shape[0], len(self.exponents)))
        for k, expo in enumerate(self.exponents):
            for j, e in enumerate(expo):
                if e:
                    cols[:, k] *= z[:, j] ** e
        return cols[:, self.keep]


class NodeBasis:
    """Design matrix + factorized normal equations for one node.

    Zero-variance state dimensions collapse to the intercept (their feature
    columns are dropped), so a degenerate node (e.g. the deterministic initial
    state) regresses to the plain cross-path mean.
    """

    def __init__(self, state: np.ndarray, degree: int = 2):
        state = np.atleast_2d(np.asarray(state, dtype=float))
        if state.ndim > 2:
            state = state.reshape(state.shape[0], -1)
        self.state_lo = state.min(axis=0)
        self.state_hi = state.max(axis=0)
        mean = state.mean(axis=0)
        scale = state.std(axis=0)
        scale = np.where(scale < _DEGENERATE_TOL, 1.0, scale)
        exponents = monomial_exponents(state.shape[1], degree)
        tf = BasisTransform(mean, scale, exponents, np.arange(len(exponents)))
        phi = tf.design(state)
        col_span = phi.max(axis=0) - phi.min(axis=0)
        keep = np.flatnonzero((col_span > _DEGENERATE_TOL) | (np.arange(phi.shape[1]) == 0))
        self.transform = BasisTransform(mean, scale, exponents, keep)
        self.phi = phi[:, keep]
        self.ridge_used = False
        gram = self.phi.T @ self.phi
        try:
            self._factor = cho_factor(gram)
        except LinAlgError:
            self.ridge_used = True
            self._factor = cho_factor(gram + RIDGE_LAMBDA * np.eye(gram.shape[0]))

    @property
    def n_features(self) -> int:
        return self.phi.shape[1]

    def coefficients(self, target: np.ndarray) -> np.ndarray:
        """Least-squares coefficients; target (M,) or (M, D) -> (K,) or (K, D)."""
        return cho_solve(self._factor, self.phi.T @ target)

    def fit(self, target: np.ndarray) -> np.ndarray:
        """Fitted values at the conditioning points (the regression estimate of E[target | state])."""
        return self.phi @ self.coefficients(target)


@dataclass
class NodeFit:
    """Conditional-expectation estimate reusable at new state values.

    Evaluation states are clamped to the fitting sample's range so polynomial
    extrapolation cannot blow up closure feedback in forward simulations.
    """

    transform: BasisTransform
    coef: np.ndarray
    state_lo: np.ndarray = None
    state_hi: np.ndarray = None

    def __call__(self, state: np.ndarray) -> np.ndarray:
        state = np.atleast_2d(np.asarray(state, dtype=float))
        if state.ndim > 2:
            state = state.reshape(state.shape[0], -1)
        if self.state_lo is not None:
            state = np.clip(state, self.state_lo, self.state_hi)
        return self.transform.design(state) @ self.coef


def blend_fits(new, old, theta: float):
    """Damped closure: theta * new + (1 - theta) * old (None old -> new)."""
    if old is None or theta >= 1.0:
        return new

    def blended(state):
        return theta * new(state) + (1.0 - theta) * old(state)

    return blended
