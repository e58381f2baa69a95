import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from logic.adjoint_grad import DiscreteProblem, evaluate_objective
from logic.errors import InvalidBoundsError
from logic.forward import SourceSpec
from logic.mesh_fem import CoefficientField, build_mesh, element_means
from logic.optimizer import CgControls, _free_gradient, minimize, project_box
from logic.synthdata import ObservationData


def _u0(x):
    return np.sin(np.pi * x[:, 0]) + 0.5 * np.sin(2.0 * np.pi * x[:, 0])


def _problem_with_data(q_values, M=10, N=16, gamma=0.0):
    mesh = build_mesh(1, M)
    problem = DiscreteProblem(mesh, _u0, SourceSpec(), 0.5, N, gamma)
    traj = problem.solve(CoefficientField(mesh, np.asarray(q_values, dtype=float)))
    obs = ObservationData(mesh=mesh, values=traj.states.copy(), tau=traj.tau, T0=0.0, epsilon=0.0, seed=0)
    return mesh, problem, obs


def test_project_box():
    assert_array_equal(project_box(np.array([0.1, 1.0, 9.0]), 0.5, 5.0), [0.5, 1.0, 5.0])
    with pytest.raises(InvalidBoundsError):
        project_box(np.ones(3), 2.0, 1.0)


def test_free_gradient_blocks_active_bounds():
    q = np.array([0.5, 0.5, 2.0, 5.0, 5.0])
    g = np.array([1.0, -1.0, 3.0, -2.0, 2.0])
    assert_array_equal(_free_gradient(q, g, 0.5, 5.0), [0.0, -1.0, 3.0, 0.0, 2.0])


@pytest.mark.parametrize("kwargs", [{"shrink": 1.0}, {"grad_tol": 0.0}, {"restart_every": 0}, {"max_iters": -1}])
def test_controls_validation(kwargs):
    with pytest.raises(ValueError):
        CgControls(**kwargs)


def test_exact_start_terminates_immediately():
    mesh, problem, obs = _problem_with_data(np.full(11, 1.7))
    q0 = CoefficientField(mesh, np.full(mesh.n_nodes, 1.7))
    result = minimize(q0, obs, problem, 0.5, 5.0)
    assert result.iterations == 0
    assert result.termination == "grad_tol"
    assert_array_equal(result.q_star.nodal_values, q0.nodal_values)
    assert result.records[0]["iter"] == 0


def _objective_at_constant(problem, obs, mesh, c):
    return evaluate_objective(CoefficientField(mesh, np.full(mesh.n_nodes, c)), obs, problem).total


def _scan_best_constant(problem, obs, mesh, lo, hi):
    """Best constant coefficient on a 1e-2 grid over [lo, hi], refined on a 1e-4 grid around it."""
    coarse = lo + 1e-2 * np.arange(int(round((hi - lo) / 1e-2)) + 1)
    best = coarse[int(np.argmin([_objective_at_constant(problem, obs, mesh, c) for c in coarse]))]
    fine = best + 1e-4 * np.arange(-100, 101)
    fine = fine[(fine >= lo) & (fine <= hi)]
    return float(fine[int(np.argmin([_objective_at_constant(problem, obs, mesh, c) for c in fine]))])


def test_scan_finds_the_true_constant():
    mesh, problem, obs = _problem_with_data(np.full(11, 2.0))
    assert _scan_best_constant(problem, obs, mesh, 0.5, 5.0) == pytest.approx(2.0, abs=1e-4)


def test_alternating_nodal_mode_is_invisible_to_the_data():
    # K(q) only sees element means, so +-0.25 on alternate nodes leaves every state unchanged
    mesh, problem, obs = _problem_with_data(np.full(11, 2.0), gamma=1.0)
    wiggle = CoefficientField(mesh, 2.0 + 0.25 * (-1.0) ** np.arange(mesh.n_nodes))
    value = evaluate_objective(wiggle, obs, problem)
    assert value.misfit == 0.0
    assert value.penalty > 0.0


def test_recovers_constant_coefficient():
    mesh, problem, obs = _problem_with_data(np.full(11, 2.0))
    best = _scan_best_constant(problem, obs, mesh, 0.5, 5.0)
    q0 = CoefficientField(mesh, np.ones(mesh.n_nodes))
    initial = evaluate_objective(q0, obs, problem).total
    records = []
    result = minimize(q0, obs, problem, 0.5, 5.0, CgControls(max_iters=1000), callback=records.append)
    # any constant 1e-3 away from the scan optimum fits the data worse than the reconstruction
    neighbours = [_objective_at_constant(problem, obs, mesh, best + s) for s in (-1e-3, 1e-3)]
    assert result.final.total < min(neighbours)
    assert result.final.total <= 1e-6 * initial
    assert len(records) == result.iterations + 1
    assert set(records[0]) == {"iter", "J", "misfit", "penalty", "grad_norm", "step", "restarted"}


def test_objective_history_is_monotone_and_bounds_hold():
    mesh, problem, obs = _problem_with_data(np.full(11, 2.0))
    q0 = CoefficientField(mesh, np.full(mesh.n_nodes, 1.0))
    result = minimize(q0, obs, problem, 0.5, 1.5, CgControls(max_iters=30))
    history = np.array(result.objective_history)
    assert np.all(np.diff(history) <= 0.0)
    assert result.final.total <= history[0]
    assert np.all(result.q_star.nodal_values >= 0.5) and np.all(result.q_star.nodal_values <= 1.5)
    # the true value lies above the box, so the reconstruction is pushed to the upper bound
    assert float(np.max(result.q_star.nodal_values)) == pytest.approx(1.5)


def test_penalized_run_reduces_objective():
    mesh, problem, obs = _problem_with_data(2.0 + 0.5 * np.sin(2.0 * np.pi * np.linspace(0, 1, 11)), gamma=1e-6)
    q0 = CoefficientField(mesh, np.full(mesh.n_nodes, 2.75))
    result = minimize(q0, obs, problem, 0.5, 5.0, CgControls(max_iters=20))
    assert result.termination in ("grad_tol", "step_tol", "max_iters")
    assert result.final.total < result.objective_history[0]
    assert_allclose(result.final.total, result.objective_history[-1])
