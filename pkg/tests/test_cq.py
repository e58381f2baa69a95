import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from logic.cq import (binomial_weights, cq_apply, cq_decay_constant, cq_derivative_sequence,
                      cq_partial_sum_check, cq_weights)
from logic.errors import DimensionMismatchError, InvalidOrderError, InvalidSizeError

ALPHAS = [0.25, 0.5, 0.75]


def test_weights_known_values():
    assert_array_equal(cq_weights(1.0, 4).weights, [1.0, -1.0, 0.0, 0.0])
    assert_allclose(cq_weights(0.5, 3).weights, [1.0, -0.5, -0.125], rtol=0, atol=1e-15)
    assert_allclose(cq_weights(0.25, 3).weights, [1.0, -0.25, -0.09375], rtol=0, atol=1e-15)


@pytest.mark.parametrize("alpha", [0.0, -0.5, 1.5])
def test_weights_reject_invalid_order(alpha):
    with pytest.raises(InvalidOrderError):
        cq_weights(alpha, 4)


def test_weights_reject_empty():
    with pytest.raises(InvalidSizeError):
        cq_weights(0.5, 0)


@pytest.mark.parametrize("alpha", ALPHAS)
def test_weights_sign_structure(alpha):
    b = cq_weights(alpha, 2049).weights
    assert b[0] == 1.0
    assert np.all(b[1:] < 0.0)


def test_weights_are_read_only():
    w = cq_weights(0.5, 5)
    with pytest.raises(ValueError):
        w.weights[0] = 2.0


@pytest.mark.parametrize("alpha,n_terms,tol", [(0.5, 101, 1e-13), (0.75, 1001, 1e-12),
                                               (0.25, 2049, 1e-12), (0.5, 2049, 1e-12),
                                               (0.75, 2049, 1e-12)])
def test_partial_sum_identity(alpha, n_terms, tol):
    assert cq_partial_sum_check(cq_weights(alpha, n_terms)) <= tol


def test_partial_sum_identity_backward_euler():
    assert cq_partial_sum_check(cq_weights(1.0, 11)) == 0.0


def test_apply_constant_history():
    alpha, tau, n, c = 0.5, 0.1, 5, 2.0
    w = cq_weights(alpha, 10, tau)
    shifted = binomial_weights(alpha - 1.0, n + 1)
    value = cq_apply(w, [c] * (n + 1))
    assert value == pytest.approx(tau ** -alpha * shifted[n] * c, rel=1e-13)


def test_apply_zero_and_backward_difference():
    w = cq_weights(0.5, 4, 0.25)
    assert_array_equal(cq_apply(w, np.zeros((3, 2))), [0.0, 0.0])
    v = np.array([1.0, -2.0, 3.0])
    assert_allclose(cq_apply(cq_weights(1.0, 2, 0.5), [np.zeros(3), v]), v / 0.5)


def test_apply_dimension_errors():
    w = cq_weights(0.5, 3)
    with pytest.raises(DimensionMismatchError):
        cq_apply(w, np.zeros((4, 2)))
    with pytest.raises(DimensionMismatchError):
        cq_apply(w, [np.zeros(2), np.zeros(3)])


def test_derivative_sequence_matches_apply():
    rng = np.random.default_rng(1)
    history = rng.standard_normal((9, 3))
    w = cq_weights(0.75, 9, 0.125)
    seq = cq_derivative_sequence(w, history)
    for n in range(9):
        assert_allclose(seq[n], cq_apply(w, history[:n + 1]), rtol=1e-13, atol=1e-13)


@pytest.mark.parametrize("alpha", ALPHAS)
def test_positivity(alpha):
    N, tau = 64, 1.0 / 64
    w = cq_weights(alpha, N + 1, tau)
    rng = np.random.default_rng(7)
    for _ in range(1000):
        v = np.concatenate([[0.0], rng.standard_normal(N)])
        d = cq_derivative_sequence(w, v)
        assert float(np.dot(d[1:], v[1:])) >= -1e-12 * float(np.max(np.abs(v))) ** 2


@pytest.mark.parametrize("alpha", ALPHAS)
def test_product_inequality(alpha):
    N, tau = 32, 1.0 / 32
    w = cq_weights(alpha, N + 1, tau)
    rng = np.random.default_rng(11)
    for _ in range(200):
        phi = rng.standard_normal(N + 1)
        lhs = cq_derivative_sequence(w, phi - phi[0]) * phi
        rhs = 0.5 * cq_derivative_sequence(w, phi ** 2 - phi[0] ** 2)
        assert float(np.sum(lhs[1:] - rhs[1:])) >= -1e-12 * float(np.max(phi ** 2)) * tau ** -alpha


@pytest.mark.parametrize("alpha", ALPHAS)
def test_associativity(alpha):
    N, tau = 64, 1.0 / 64
    rng = np.random.default_rng(3)
    phi = np.concatenate([[0.0], rng.standard_normal(N)])
    first_difference = np.concatenate([[0.0], np.diff(phi)]) / tau
    lower = tau ** (1.0 - alpha) * np.convolve(binomial_weights(alpha - 1.0, N + 1), first_difference)[:N + 1]
    direct = cq_derivative_sequence(cq_weights(alpha, N + 1, tau), phi)
    assert_allclose(lower, direct, rtol=1e-12, atol=1e-12 * np.abs(direct).max())


@pytest.mark.parametrize("alpha", ALPHAS)
def test_decay_constant_stable_under_refinement(alpha):
    coarse = cq_decay_constant(cq_weights(alpha, 257, 1.0 / 256))
    fine = cq_decay_constant(cq_weights(alpha, 2049, 1.0 / 2048))
    assert fine == pytest.approx(coarse, rel=1e-2)
    assert 0.0 < fine < 2.0
