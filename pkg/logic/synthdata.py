"""
Synthetic observations: a reference solve on a fine grid, relative Gaussian
noise over the observation window, and transfer to the inversion grid.
"""
import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from logic.errors import GridRatioError
from logic.examples import ExampleSpec
from logic.forward import (POINT_VALUE, TRAPEZOID, SourceSpec, StateTrajectory, solve_forward,
                           time_weights, window_start)
from logic.mesh_fem import (CoefficientField, FemOperators, Mesh, build_mesh, evaluate_p1,
                            interpolate_nodal)

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ObservationData:
    mesh: Mesh
    values: np.ndarray  # (N + 1, n_interior), z(t_n) at interior nodes
    tau: float
    T0: float
    epsilon: float
    seed: int
    delta_realized: float = 0.0

    @property
    def N(self) -> int:
        return self.values.shape[0] - 1

    @property
    def T(self) -> float:
        return self.N * self.tau


def exact_coefficient(mesh: Mesh, example: ExampleSpec) -> CoefficientField:
    return CoefficientField(mesh, interpolate_nodal(mesh, example.q_dagger))


def generate_reference(example: ExampleSpec, fine_M: int, fine_N: int, alpha: float,
                       M: Optional[int] = None, N: Optional[int] = None,
                       source_mode: str = POINT_VALUE) -> StateTrajectory:
    """Forward solve with I_h q_dagger on the fine grid; M, N name the inversion grid it must refine."""
    if M is not None and fine_M <= M:
        raise GridRatioError(f"Fine mesh M={fine_M} must be finer than inversion mesh M={M}")
    if N is not None and (fine_N < N or fine_N % N != 0):
        raise GridRatioError(f"Fine step count {fine_N} must be a multiple of inversion step count {N}")
    mesh = build_mesh(example.dim, fine_M)
    q = exact_coefficient(mesh, example)
    logger.info(f"Reference solve for {example.name}: alpha={alpha}, fine_M={fine_M}, fine_N={fine_N}")
    return solve_forward(mesh, q, example.u0, SourceSpec(source_mode, example.f), alpha, fine_N, example.T)


def add_noise(fine_traj: StateTrajectory, epsilon: float, T0: float, seed: int) -> StateTrajectory:
    """
    z = u + epsilon * S * xi on every level inside [T0, T], S = max |u| over the window,
    xi i.i.d. standard normal from numpy's PCG64 generator seeded with `seed`.
    """
    if epsilon == 0.0:
        return fine_traj
    n0 = window_start(T0, fine_traj.tau)
    window = fine_traj.states[n0:]
    scale = float(np.max(np.abs(window)))
    rng = np.random.Generator(np.random.PCG64(seed))
    noisy = fine_traj.states.copy()
    noisy[n0:] += epsilon * scale * rng.standard_normal(window.shape)
    logger.debug(f"Added noise: epsilon={epsilon}, sup|u|={scale:.4e}, seed={seed}, levels {n0}..{fine_traj.N}")
    return StateTrajectory(mesh=fine_traj.mesh, alpha=fine_traj.alpha, tau=fine_traj.tau, states=noisy)


def spatial_transfer(fine_mesh: Mesh, coarse_mesh: Mesh) -> Callable[[np.ndarray], np.ndarray]:
    """
    Map from full fine nodal values (..., n_fine) to full coarse nodal values. Nested grids
    use nodal subsampling; otherwise the fine P1 function is evaluated at the coarse nodes.
    """
    if fine_mesh.dim != coarse_mesh.dim or fine_mesh.M < coarse_mesh.M:
        raise GridRatioError(
            f"Cannot transfer from {fine_mesh.dim}D M={fine_mesh.M} to {coarse_mesh.dim}D M={coarse_mesh.M}"
        )
    Mf, Mc = fine_mesh.M, coarse_mesh.M
    if Mf % Mc == 0:
        r = Mf // Mc
        ic = np.arange(Mc + 1) * r
        if fine_mesh.dim == 1:
            index = ic
        else:
            jj, ii = np.meshgrid(ic, ic, indexing='ij')
            index = (jj * (Mf + 1) + ii).ravel()
        return lambda values: np.asarray(values)[..., index]
    logger.debug(f"Non-nested grids {Mf} -> {Mc}: using piecewise-linear evaluation")
    return lambda values: evaluate_p1(fine_mesh, values, coarse_mesh.nodes)


def restrict_trajectory(fine_traj: StateTrajectory, coarse_mesh: Mesh, coarse_N: int) -> np.ndarray:
    """Fine states sampled on the coarse space-time grid, (coarse_N + 1, coarse n_interior)."""
    if coarse_N > fine_traj.N or fine_traj.N % coarse_N != 0:
        raise GridRatioError(f"Fine step count {fine_traj.N} is not a multiple of {coarse_N}")
    stride = fine_traj.N // coarse_N
    levels = fine_traj.full_states()[::stride]
    coarse_full = spatial_transfer(fine_traj.mesh, coarse_mesh)(levels)
    return coarse_full[:, coarse_mesh.interior]


def realized_noise_level(noisy: np.ndarray, clean: np.ndarray, tau: float, T0: float,
                         operators: FemOperators) -> float:
    """(tau sum_n a_n ||z(t_n) - u(t_n)||^2)^(1/2) with trapezoid window weights."""
    w = time_weights(noisy.shape[0] - 1, tau, T0, TRAPEZOID)
    return math.sqrt(tau * float(np.dot(w, operators.l2_norm_sq(noisy - clean))))


def transfer_to_coarse(noisy_fine: StateTrajectory, coarse_mesh: Mesh, coarse_N: int, T0: float,
                       epsilon: float = 0.0, seed: int = 0,
                       clean_fine: Optional[StateTrajectory] = None,
                       operators: Optional[FemOperators] = None) -> ObservationData:
    values = restrict_trajectory(noisy_fine, coarse_mesh, coarse_N)
    tau = noisy_fine.T / coarse_N
    delta = 0.0
    if clean_fine is not None and clean_fine is not noisy_fine:
        ops = operators if operators is not None else FemOperators(coarse_mesh)
        clean = restrict_trajectory(clean_fine, coarse_mesh, coarse_N)
        delta = realized_noise_level(values, clean, tau, T0, ops)
    return ObservationData(mesh=coarse_mesh, values=values, tau=tau, T0=T0,
                           epsilon=epsilon, seed=seed, delta_realized=delta)


def build_observations(example: ExampleSpec, alpha: float, M: int, N: int, fine_M: int, fine_N: int,
                       epsilon: float, seed: int, T0: Optional[float] = None,
                       source_mode: str = POINT_VALUE, operators: Optional[FemOperators] = None):
    """
    Reference -> noise -> transfer. Pure function of its arguments.

    Args:
        example: Benchmark problem providing u0, f and q_dagger.
        alpha: Fractional order.
        M: Inversion mesh subdivisions.
        N: Inversion time steps.
        fine_M: Reference mesh subdivisions, finer than M.
        fine_N: Reference time steps, a multiple of N.
        epsilon: Relative noise level.
        seed: Seed of the noise generator.
        T0: Start of the observation window; the example's value when None.
        source_mode: How the source is sampled in time.
        operators: FEM operators of the inversion mesh, reused when given.

    Returns:
        A tuple (observations, clean fine trajectory); the latter is kept for the state error.
    """
    T0 = example.T0 if T0 is None else T0
    coarse_mesh = operators.mesh if operators is not None else build_mesh(example.dim, M)
    reference = generate_reference(example, fine_M, fine_N, alpha, M, N, source_mode)
    noisy = add_noise(reference, epsilon, T0, seed)
    obs = transfer_to_coarse(noisy, coarse_mesh, N, T0, epsilon, seed, clean_fine=reference, operators=operators)
    logger.info(f"Observations ready: eps={epsilon}, seed={seed}, delta_realized={obs.delta_realized:.4e}")
    return obs, reference
