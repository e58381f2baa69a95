"""
Regularized output least-squares objective and its exact gradient, obtained from
the discrete adjoint of the CQ time stepper (discretize-then-optimize).

With the Lagrange multiplier written as tau * P^n, the adjoint levels solve, for m = N..1,

    (tau^-alpha M + K(q)) P^m = w_m M (U^m - z(t_m)) - tau^-alpha sum_{j=1}^{N-m} b_j M P^{m+j}

and the gradient is g_k = -tau sum_n int phi_k grad U^n . grad P^n + gamma (K_1 q)_k.
"""
import logging
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from logic.cq import cq_weights
from logic.forward import (TRAPEZOID, SourceSpec, StateTrajectory, factorize_system,
                           initial_state, misfit_residuals, solve_forward, source_loads)
from logic.mesh_fem import CoefficientField, FemOperators, Mesh, element_gradients

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ObjectiveValue:
    total: float
    misfit: float
    penalty: float


@dataclass(frozen=True)
class GradientField:
    values: np.ndarray  # one entry per mesh node


@dataclass(eq=False)
class DiscreteProblem:
    """
    Everything the objective needs besides q and the data: grid, initial value,
    source, fractional order, regularization weight and misfit rule. Loads and the
    projected initial value are computed once and reused by every solve.
    """
    mesh: Mesh
    u0: object
    source: SourceSpec
    alpha: float
    N: int
    gamma: float = 0.0
    T: float = 1.0
    rule: str = TRAPEZOID
    operators: Optional[FemOperators] = None
    _loads: Optional[np.ndarray] = field(default=None, repr=False)
    _u_init: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if self.operators is None:
            self.operators = FemOperators(self.mesh)

    @property
    def tau(self) -> float:
        return self.T / self.N

    @property
    def loads(self) -> np.ndarray:
        if self._loads is None:
            self._loads = source_loads(self.mesh, self.source, self.N, self.tau)
        return self._loads

    @property
    def u_init(self) -> np.ndarray:
        if self._u_init is None:
            self._u_init = initial_state(self.mesh, self.u0, self.operators)
        return self._u_init

    def solve(self, q: CoefficientField) -> StateTrajectory:
        return solve_forward(self.mesh, q, self.u_init, self.source, self.alpha, self.N, self.T,
                             operators=self.operators, loads=self.loads)

    def penalty(self, q: CoefficientField) -> float:
        v = q.nodal_values
        return 0.5 * self.gamma * float(v @ (self.operators.unit_stiffness_full @ v))

    def penalty_gradient(self, q: CoefficientField) -> np.ndarray:
        return self.gamma * (self.operators.unit_stiffness_full @ q.nodal_values)


def _objective_from_trajectory(problem: DiscreteProblem, q: CoefficientField, traj: StateTrajectory,
                               obs) -> ObjectiveValue:
    w, r = misfit_residuals(traj, obs, problem.rule)
    active = np.flatnonzero(w)
    misfit = 0.5 * traj.tau * float(np.dot(w[active], problem.operators.l2_norm_sq(r[active])))
    penalty = problem.penalty(q)
    return ObjectiveValue(total=misfit + penalty, misfit=misfit, penalty=penalty)


def evaluate_objective(q: CoefficientField, obs, problem: DiscreteProblem) -> ObjectiveValue:
    """
    J(q) = (tau/2) sum_n w_n ||U^n(q) - z(t_n)||^2 + (gamma/2) ||grad q||^2.

    Args:
        q: Coefficient to evaluate.
        obs: Observations on the problem's space-time grid.
        problem: Forward model, regularization weight and misfit rule.

    Returns:
        The total together with its misfit and penalty parts.
    """
    return _objective_from_trajectory(problem, q, problem.solve(q), obs)


def solve_adjoint(q: CoefficientField, traj: StateTrajectory, obs, problem: DiscreteProblem) -> np.ndarray:
    """
    Backward recursion for the adjoint levels, driven by the weighted residuals.

    Args:
        q: Coefficient the trajectory was computed with.
        traj: Forward states for q.
        obs: Observations on the same grid.
        problem: The problem that produced traj.

    Returns:
        Adjoint levels P^0..P^N (P^0 unused, zero) as an (N + 1, n_interior) array.
    """
    ops = problem.operators
    weights = cq_weights(problem.alpha, problem.N + 1, problem.tau)
    lu = factorize_system(ops, q, weights)
    w, r = misfit_residuals(traj, obs, problem.rule)
    b = weights.weights
    N = problem.N
    adjoint = np.zeros_like(traj.states)
    drive = (ops.mass @ (w[:, None] * r).T).T
    for m in range(N, 0, -1):
        history = b[1:N - m + 1] @ adjoint[m + 1:N + 1]
        rhs = drive[m] - weights.scale * (ops.mass @ history)
        adjoint[m] = lu.solve(rhs)
    return adjoint


def misfit_sensitivity(mesh: Mesh, tau: float, states: np.ndarray, adjoint: np.ndarray) -> np.ndarray:
    """-tau sum_{n>=1} int phi_k grad U^n . grad P^n, element-wise with phi_k integrated as |T|/(d+1)."""
    grad_u = element_gradients(mesh, mesh.extend_by_zero(states[1:]))
    grad_p = element_gradients(mesh, mesh.extend_by_zero(adjoint[1:]))
    per_element = np.einsum('ned,ned->e', grad_u, grad_p) * mesh.measures / (mesh.dim + 1)
    nodal = np.bincount(mesh.elements.ravel(), weights=np.repeat(per_element, mesh.dim + 1),
                        minlength=mesh.n_nodes)
    return -tau * nodal


def value_and_gradient(q: CoefficientField, obs, problem: DiscreteProblem) -> Tuple[ObjectiveValue, GradientField]:
    traj = problem.solve(q)
    value = _objective_from_trajectory(problem, q, traj, obs)
    adjoint = solve_adjoint(q, traj, obs, problem)
    g = misfit_sensitivity(problem.mesh, problem.tau, traj.states, adjoint) + problem.penalty_gradient(q)
    return value, GradientField(g)


def gradient(q: CoefficientField, obs, problem: DiscreteProblem) -> GradientField:
    return value_and_gradient(q, obs, problem)[1]


def directional_derivative_fd(q: CoefficientField, direction: np.ndarray, obs, problem: DiscreteProblem,
                              eps: float = 1e-5) -> float:
    """Central difference (J(q + eps d) - J(q - eps d)) / (2 eps)."""
    plus = CoefficientField(q.mesh, q.nodal_values + eps * direction)
    minus = CoefficientField(q.mesh, q.nodal_values - eps * direction)
    return (evaluate_objective(plus, obs, problem).total - evaluate_objective(minus, obs, problem).total) / (2.0 * eps)
