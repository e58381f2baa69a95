import math

import numpy as np
import pytest

from logic.cq import cq_apply, cq_weights
from logic.errors import NonPositiveCoefficientError
from logic.examples import get_example
from logic.forward import SourceSpec, StateTrajectory, solve_forward
from logic.mesh_fem import CoefficientField, FemOperators, build_mesh, interpolate_nodal
from logic.metrics import (coefficient_difference, coefficient_error, density_is_nonnegative, state_error,
                           weighted_error)

M, N, ALPHA = 8, 8, 0.5


def _brute_force_weighted_error(q_star, q_dagger, traj, f):
    """Triple sum over m, n <= m and elements, written out with loops in 1D."""
    mesh = traj.mesh
    h, tau = 1.0 / M, traj.tau
    full = traj.full_states()
    weights = cq_weights(ALPHA, N + 1, tau)
    total = 0.0
    for m in range(1, N + 1):
        for n in range(1, m + 1):
            derivative = cq_apply(weights, [full[j] - full[0] for j in range(n + 1)])
            source = f(mesh.nodes, n * tau)
            for e in range(M):
                a, b = e, e + 1
                qd = 0.5 * (q_dagger[a] + q_dagger[b])
                qs = 0.5 * (q_star[a] + q_star[b])
                grad = (full[n][b] - full[n][a]) / h
                u_mean = 0.5 * (full[n][a] + full[n][b])
                rate_mean = 0.5 * ((source[a] - derivative[a]) + (source[b] - derivative[b]))
                density = qd * grad ** 2 + rate_mean * u_mean
                total += tau * tau * ((qd - qs) / qd) ** 2 * density * h
    return total


def _trajectory(example, q_values):
    mesh = build_mesh(1, M)
    return solve_forward(mesh, CoefficientField(mesh, q_values), example.u0, SourceSpec("point-value", example.f),
                         ALPHA, N)


@pytest.mark.parametrize("seed", range(10))
def test_weighted_error_matches_brute_force(seed):
    example = get_example("nonsmooth1d")
    mesh = build_mesh(1, M)
    rng = np.random.default_rng(seed)
    q_dagger = 1.0 + rng.random(mesh.n_nodes)
    q_star = 1.0 + rng.random(mesh.n_nodes)
    traj = _trajectory(example, q_dagger)
    value = weighted_error(CoefficientField(mesh, q_star), q_dagger, traj, example.f, ALPHA)
    expected = _brute_force_weighted_error(q_star, q_dagger, traj, example.f)
    assert value == pytest.approx(expected, rel=1e-12)


def test_weighted_error_vanishes_for_exact_coefficient():
    example = get_example("smooth1d")
    mesh = build_mesh(1, M)
    q = CoefficientField(mesh, interpolate_nodal(mesh, example.q_dagger))
    traj = _trajectory(example, q.nodal_values)
    assert weighted_error(q, example.q_dagger, traj, example.f, ALPHA) == 0.0
    assert isinstance(density_is_nonnegative(example.q_dagger, traj, example.f), bool)


def test_weighted_error_checks_inputs():
    example = get_example("smooth1d")
    mesh = build_mesh(1, M)
    traj = _trajectory(example, np.full(mesh.n_nodes, 2.0))
    q = CoefficientField(mesh, np.full(mesh.n_nodes, 2.0))
    with pytest.raises(NonPositiveCoefficientError):
        weighted_error(q, np.zeros(mesh.n_nodes), traj, None, ALPHA)
    with pytest.raises(ValueError):
        weighted_error(q, q, traj, None, 0.75)


def test_coefficient_error():
    mesh = build_mesh(2, 6)
    ops = FemOperators(mesh)
    exact = lambda x: 1.0 + x[:, 0] * x[:, 1]
    q = CoefficientField(mesh, interpolate_nodal(mesh, exact))
    assert coefficient_error(q, exact, operators=ops) == 0.0
    shifted = CoefficientField(mesh, q.nodal_values + 0.25)
    assert coefficient_error(shifted, exact, operators=ops) == pytest.approx(0.25, rel=1e-12)
    assert coefficient_error(q, exact, exact=True) < 1e-2


def test_state_error_against_own_reference():
    example = get_example("smooth1d")
    mesh = build_mesh(1, M)
    traj = _trajectory(example, np.full(mesh.n_nodes, 2.0))
    assert state_error(traj, traj) == 0.0


def test_coefficient_difference_across_meshes():
    linear = lambda x: 2.0 + x[:, 0]
    coarse, fine = build_mesh(1, 4), build_mesh(1, 8)
    q_h = CoefficientField(coarse, interpolate_nodal(coarse, linear))
    q_ref = CoefficientField(fine, interpolate_nodal(fine, linear))
    assert coefficient_difference(q_h, q_ref) == pytest.approx(0.0, abs=1e-14)
    bumped = CoefficientField(fine, q_ref.nodal_values + 0.5)
    assert coefficient_difference(q_h, bumped) == pytest.approx(0.5, rel=1e-12)


def test_coefficient_error_is_a_norm():
    mesh = build_mesh(2, 5)
    ops = FemOperators(mesh)
    zero = np.zeros(mesh.n_nodes)
    rng = np.random.default_rng(12)

    def norm(values):
        return coefficient_error(CoefficientField(mesh, values), zero, operators=ops)

    for _ in range(10):
        a = rng.uniform(-1.0, 1.0, mesh.n_nodes)
        b = rng.uniform(-1.0, 1.0, mesh.n_nodes)
        assert norm(a) > 0.0
        assert norm(a + b) <= norm(a) + norm(b) + 1e-14
        assert norm(-2.5 * a) == pytest.approx(2.5 * norm(a), rel=1e-12)
    assert norm(zero) == 0.0


def test_coefficient_error_of_sine_perturbation():
    example = get_example("smooth1d")
    mesh = build_mesh(1, 200)
    perturbed = lambda x: example.q_dagger(x) + np.sin(2.0 * np.pi * x[:, 0])
    q_star = CoefficientField(mesh, interpolate_nodal(mesh, perturbed))
    assert coefficient_error(q_star, example.q_dagger) == pytest.approx(1.0 / math.sqrt(2.0), abs=1e-4)


def test_state_error_of_unit_discrepancy():
    mesh = build_mesh(1, 300)
    states = np.random.default_rng(5).random((33, mesh.n_interior))
    reference = StateTrajectory(mesh=mesh, alpha=ALPHA, tau=1.0 / 32, states=states)
    shifted = StateTrajectory(mesh=mesh, alpha=ALPHA, tau=1.0 / 32, states=states + 1.0)
    # boundary nodes stay zero, so ||1||^2 over X_h is 1 - 4h/3 in 1D
    error = state_error(shifted, reference)
    assert error == pytest.approx(math.sqrt(1.0 - 4.0 * mesh.h / 3.0), rel=1e-12)
    assert error == pytest.approx(1.0, abs=5e-3)
