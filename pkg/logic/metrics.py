"""
Error measures for reconstructions and states, including the weighted coefficient
error whose density is q_dagger |grad u|^2 + (f - D_t^alpha u) u accumulated in time.
"""
import logging
import math
from dataclasses import dataclass, asdict
from typing import Callable, Optional, Union, Dict, Any

import numpy as np

from logic.cq import cq_derivative_sequence, cq_weights
from logic.errors import MeshMismatchError, NonPositiveCoefficientError
from logic.forward import StateTrajectory
from logic.mesh_fem import (CoefficientField, FemOperators, Mesh, element_gradients, element_means, evaluate_p1,
                            interpolate_nodal, l2_error)
from logic.synthdata import restrict_trajectory

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ErrorReport:
    e_q: float
    e_u: float
    weighted_err: float
    alpha: float
    eps: float
    gamma: float
    h: float
    tau: float
    density_nonnegative: bool = True

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _nodal(mesh: Mesh, q: Union[CoefficientField, Callable, np.ndarray]) -> np.ndarray:
    if isinstance(q, CoefficientField):
        if not q.mesh.same_as(mesh):
            raise MeshMismatchError("Coefficient fields live on different meshes")
        return q.nodal_values
    if callable(q):
        return interpolate_nodal(mesh, q)
    return np.asarray(q, dtype=float)


def coefficient_error(q_star: CoefficientField, q_dagger, mesh: Optional[Mesh] = None,
                      exact: bool = False, operators: Optional[FemOperators] = None) -> float:
    """
    ||q_star - I_h q_dagger||_L2 with the full-node mass matrix.

    Args:
        q_star: Reconstructed coefficient.
        q_dagger: Exact coefficient as a callable, a CoefficientField or a nodal array.
        mesh: Mesh to measure on, q_star's by default.
        exact: With a callable q_dagger, integrate the difference to q_dagger itself by
            Gauss quadrature instead of using its interpolant.
        operators: Reused FEM operators, optional.

    Returns:
        The L2 norm of the difference.
    """
    mesh = mesh if mesh is not None else q_star.mesh
    if exact and callable(q_dagger):
        return l2_error(mesh, q_star.nodal_values, q_dagger)
    diff = q_star.nodal_values - _nodal(mesh, q_dagger)
    mass = operators.mass_full if operators is not None else FemOperators(mesh).mass_full
    return math.sqrt(max(float(diff @ (mass @ diff)), 0.0))


def state_error(traj: StateTrajectory, reference: StateTrajectory,
                operators: Optional[FemOperators] = None) -> float:
    """(tau sum_{n=1}^N ||U^n - u(t_n)||^2)^(1/2), the reference restricted to the trajectory's grid."""
    ref = restrict_trajectory(reference, traj.mesh, traj.N)
    ops = operators if operators is not None else FemOperators(traj.mesh)
    diff = traj.states[1:] - ref[1:]
    return math.sqrt(traj.tau * float(np.sum(ops.l2_norm_sq(diff))))


def weight_density(q_dagger_nodal: np.ndarray, traj_dagger: StateTrajectory,
                   f_nodal: np.ndarray) -> np.ndarray:
    """
    Element values of q_dagger |grad u(t_n)|^2 + (f(t_n) - D^alpha(u(t_n) - u_0)) u(t_n),
    shape (N, n_elements) for n = 1..N. D^alpha is the CQ derivative of the trajectory.
    """
    mesh = traj_dagger.mesh
    full = traj_dagger.full_states()
    weights = cq_weights(traj_dagger.alpha, traj_dagger.N + 1, traj_dagger.tau)
    derivative = cq_derivative_sequence(weights, full - full[0])
    grad_sq = np.sum(element_gradients(mesh, full[1:]) ** 2, axis=-1)
    q_bar = element_means(mesh, q_dagger_nodal)
    u_bar = element_means(mesh, full[1:])
    rate_bar = element_means(mesh, f_nodal[1:] - derivative[1:])
    return q_bar * grad_sq + rate_bar * u_bar


def _nodal_source(mesh: Mesh, f, N: int, tau: float) -> np.ndarray:
    f_nodal = np.zeros((N + 1, mesh.n_nodes))
    if f is not None:
        for n in range(1, N + 1):
            f_nodal[n] = np.asarray(f(mesh.nodes, n * tau), dtype=float)
    return f_nodal


def _checked_dagger(mesh: Mesh, q_dagger, traj_dagger: StateTrajectory, alpha: float) -> np.ndarray:
    if abs(alpha - traj_dagger.alpha) > 1e-15:
        raise ValueError(f"Trajectory was computed with alpha={traj_dagger.alpha}, not {alpha}")
    qd = _nodal(mesh, q_dagger)
    if np.min(qd) <= 0.0:
        raise NonPositiveCoefficientError("Exact coefficient must be positive for the weighted error")
    return qd


def weighted_error(q_star: CoefficientField, q_dagger, traj_dagger: StateTrajectory,
                   f: Optional[Callable[[np.ndarray, float], np.ndarray]], alpha: float) -> float:
    """
    tau^2 sum_{m=1}^N sum_{n=1}^m int ((q_dagger - q_star)/q_dagger)^2 rho_n dx, with rho_n
    from weight_density and the coefficient ratio taken from element means.
    """
    mesh = traj_dagger.mesh
    qd = _checked_dagger(mesh, q_dagger, traj_dagger, alpha)
    N, tau = traj_dagger.N, traj_dagger.tau
    density = weight_density(qd, traj_dagger, _nodal_source(mesh, f, N, tau))
    qd_bar = element_means(mesh, qd)
    ratio = (qd_bar - element_means(mesh, _nodal(mesh, q_star))) / qd_bar
    per_level = density @ (ratio ** 2 * mesh.measures)
    # level n appears in the inner sums for m = n..N
    multiplicity = N - np.arange(1, N + 1) + 1
    return tau * tau * float(np.dot(multiplicity, per_level))


def density_is_nonnegative(q_dagger, traj_dagger: StateTrajectory,
                           f: Optional[Callable[[np.ndarray, float], np.ndarray]]) -> bool:
    mesh = traj_dagger.mesh
    qd = _checked_dagger(mesh, q_dagger, traj_dagger, traj_dagger.alpha)
    density = weight_density(qd, traj_dagger, _nodal_source(mesh, f, traj_dagger.N, traj_dagger.tau))
    if np.any(density < 0.0):
        logger.debug(f"Weight density has negative entries (min {density.min():.3e})")
        return False
    return True


def coefficient_difference(q_h: CoefficientField, q_ref: CoefficientField) -> float:
    """
    ||q_h - q_ref||_L2 measured on the reference mesh, q_h evaluated at the reference nodes.
    Used when a reconstruction on a fine grid stands in for the exact coefficient.
    """
    if q_h.mesh.dim != q_ref.mesh.dim:
        raise MeshMismatchError("Coefficient fields live in different dimensions")
    prolonged = evaluate_p1(q_h.mesh, q_h.nodal_values, q_ref.mesh.nodes)
    return coefficient_error(CoefficientField(q_ref.mesh, prolonged), q_ref)
