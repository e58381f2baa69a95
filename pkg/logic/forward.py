"""
Fully discrete subdiffusion solver: P1 Galerkin in space, backward Euler
convolution quadrature in time.
"""
import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Union

import mpmath
import numpy as np
from scipy.sparse.linalg import splu
from scipy.special import erfcx, gamma

from logic.cq import CqWeights, cq_weights
from logic.errors import (DimensionMismatchError, FactorizationError, InvalidSizeError,
                          NonPositiveCoefficientError)
from logic.mesh_fem import (CoefficientField, FemOperators, Mesh, ScalarField, l2_project,
                            quadrature_points)

logger = logging.getLogger(__name__)

SpaceTimeField = Callable[[np.ndarray, float], np.ndarray]

POINT_VALUE = "point-value"
INTERVAL_AVERAGE = "interval-average"
SOURCE_MODES = (POINT_VALUE, INTERVAL_AVERAGE)

TRAPEZOID = "trapezoid"
RECTANGLE = "rectangle"
MISFIT_RULES = (TRAPEZOID, RECTANGLE)

_TIME_GAUSS = np.polynomial.legendre.leggauss(4)


@dataclass(frozen=True)
class SourceSpec:
    """f^n is f(t_n) (point-value) or the mean of f over (t_{n-1}, t_n) (interval-average)."""
    mode: str = POINT_VALUE
    f: Optional[SpaceTimeField] = None

    def __post_init__(self):
        if self.mode not in SOURCE_MODES:
            raise ValueError(f"Unknown source mode '{self.mode}', expected one of {SOURCE_MODES}")


@dataclass(frozen=True, eq=False)
class StateTrajectory:
    mesh: Mesh
    alpha: float
    tau: float
    states: np.ndarray  # (N + 1, n_interior)

    @property
    def N(self) -> int:
        return self.states.shape[0] - 1

    @property
    def T(self) -> float:
        return self.N * self.tau

    @property
    def times(self) -> np.ndarray:
        return self.tau * np.arange(self.N + 1)

    def full_states(self) -> np.ndarray:
        return self.mesh.extend_by_zero(self.states)


def source_loads(mesh: Mesh, source: SourceSpec, N: int, tau: float) -> np.ndarray:
    """Row n holds (f^n, phi_i) over interior basis functions; row 0 is unused."""
    loads = np.zeros((N + 1, mesh.n_interior))
    if source.f is None:
        return loads
    points, bary, weights = quadrature_points(mesh)
    ne, ng, dim = points.shape
    flat = points.reshape(-1, dim)

    def load_at(t: float) -> np.ndarray:
        values = np.asarray(source.f(flat, t), dtype=float).reshape(ne, ng)
        local = np.einsum('eg,gv->ev', values * weights, bary)
        full = np.bincount(mesh.elements.ravel(), weights=local.ravel(), minlength=mesh.n_nodes)
        return full[mesh.interior]

    nodes, gw = _TIME_GAUSS
    for n in range(1, N + 1):
        if source.mode == POINT_VALUE:
            loads[n] = load_at(n * tau)
        else:
            t_mid = (n - 0.5) * tau
            loads[n] = sum(0.5 * w * load_at(t_mid + 0.5 * tau * s) for s, w in zip(nodes, gw))
    return loads


def initial_state(mesh: Mesh, u0: Union[ScalarField, np.ndarray], operators: FemOperators) -> np.ndarray:
    if callable(u0):
        return l2_project(mesh, u0, operators)
    values = np.asarray(u0, dtype=float)
    if values.shape != (mesh.n_interior,):
        raise DimensionMismatchError(f"Initial state has shape {values.shape}, expected ({mesh.n_interior},)")
    return values


def factorize_system(operators: FemOperators, q: CoefficientField, weights: CqWeights):
    """Sparse LU of b_0 tau^-alpha M + K(q), shared by every time level."""
    q_min = float(np.min(q.nodal_values))
    if q_min <= 0.0:
        raise NonPositiveCoefficientError(f"Diffusion coefficient must be positive, min nodal value is {q_min}")
    system = weights.scale * weights.weights[0] * operators.mass + operators.stiffness(q)
    try:
        return splu(system.tocsc())
    except RuntimeError as e:
        raise FactorizationError(f"Sparse factorization failed: {e}") from e


def solve_forward(mesh: Mesh, q: CoefficientField, u0, source: SourceSpec, alpha: float, N: int,
                  T: float = 1.0, operators: Optional[FemOperators] = None,
                  loads: Optional[np.ndarray] = None) -> StateTrajectory:
    """
    Time stepping for tau^-alpha M sum_j b_j (U^{n-j} - U^0) + K(q) U^n = (f^n, .), n = 1..N.

    Args:
        mesh: Spatial mesh.
        q: Positive diffusion coefficient on the same mesh.
        u0: Initial value, a callable (L2-projected) or an interior nodal vector.
        source: Source term and how it is sampled in time.
        alpha: Fractional order in (0, 1].
        N: Number of time steps.
        T: Final time.
        operators: Reused mass and unit stiffness matrices, optional.
        loads: Precomputed source loads from source_loads, optional.

    Returns:
        The trajectory U^0..U^N on the interior nodes.

    Raises:
        NonPositiveCoefficientError: If q has a non-positive nodal value.
        FactorizationError: If the system cannot be factorized or the states blow up.
    """
    if N < 1:
        raise InvalidSizeError(f"Number of time steps must be >= 1, got {N}")
    tau = T / N
    weights = cq_weights(alpha, N + 1, tau)
    ops = operators if operators is not None else FemOperators(mesh)
    lu = factorize_system(ops, q, weights)
    if loads is None:
        loads = source_loads(mesh, source, N, tau)

    u_init = initial_state(mesh, u0, ops)
    b = weights.weights
    increments = np.zeros((N + 1, mesh.n_interior))  # U^n - U^0
    for n in range(1, N + 1):
        history = b[1:n] @ increments[n - 1:0:-1]
        rhs = weights.scale * (ops.mass @ (u_init - history)) + loads[n]
        increments[n] = lu.solve(rhs) - u_init

    states = increments + u_init
    if not np.all(np.isfinite(states)):
        raise FactorizationError("Forward solve produced non-finite states")
    logger.debug(f"Forward solve done: dim={mesh.dim}, M={mesh.M}, N={N}, alpha={alpha}")
    return StateTrajectory(mesh=mesh, alpha=alpha, tau=tau, states=states)


def window_start(T0: float, tau: float) -> int:
    return int(math.ceil(T0 / tau - 1e-9))


def time_weights(N: int, tau: float, T0: float = 0.0, rule: str = TRAPEZOID) -> np.ndarray:
    """
    Per-level weights of the misfit sum restricted to [T0, T]. Trapezoid: 1/2 at both window
    ends, 1 inside. Rectangle: 1 on every level n >= 1 in the window.
    """
    w = np.zeros(N + 1)
    n0 = window_start(T0, tau)
    if rule == TRAPEZOID:
        w[n0:] = 1.0
        w[n0] = 0.5
        w[N] = 0.5
    elif rule == RECTANGLE:
        w[max(n0, 1):] = 1.0
    else:
        raise ValueError(f"Unknown misfit rule '{rule}', expected one of {MISFIT_RULES}")
    return w


def misfit_residuals(traj: StateTrajectory, obs, rule: str = TRAPEZOID):
    """Time weights and residuals U^n - z(t_n); `obs` needs `.values` and `.T0`."""
    if obs.values.shape != traj.states.shape:
        raise DimensionMismatchError(
            f"Observation shape {obs.values.shape} does not match trajectory shape {traj.states.shape}"
        )
    return time_weights(traj.N, traj.tau, obs.T0, rule), traj.states - obs.values


def trajectory_misfit(traj: StateTrajectory, obs, rule: str = TRAPEZOID,
                      operators: Optional[FemOperators] = None) -> float:
    """
    (tau/2) sum_n w_n ||U^n - z(t_n)||^2_L2 over the observation window.

    Args:
        traj: Computed states.
        obs: Anything with `.values` shaped like traj.states and a window start `.T0`.
        rule: "trapezoid" or "rectangle", see time_weights.
        operators: Reused FEM operators, optional.

    Returns:
        The misfit value.
    """
    ops = operators if operators is not None else FemOperators(traj.mesh)
    w, r = misfit_residuals(traj, obs, rule)
    active = np.flatnonzero(w)
    return float(0.5 * traj.tau * np.dot(w[active], ops.l2_norm_sq(r[active])))


def mittag_leffler(alpha: float, z):
    """
    E_alpha(z) = sum_k z^k / Gamma(alpha k + 1) for real z <= 0, summed in mpmath. The
    largest term is about exp(|z|^(1/alpha)), so the working precision grows with it.
    """
    def scalar(x: float) -> float:
        if alpha == 1.0:
            return math.exp(x)
        if alpha == 0.5 and x <= 0.0:
            return float(erfcx(-x))
        size = abs(x) ** (1.0 / alpha)
        dps = int(30 + size / math.log(10.0))
        k_peak = size / alpha
        with mpmath.workdps(dps):
            zx = mpmath.mpf(x)
            total = mpmath.mpf(0)
            k = 0
            while True:
                term = zx ** k / mpmath.gamma(alpha * k + 1)
                total += term
                if k > 2 * k_peak + 10 and abs(term) < mpmath.mpf(10) ** (-25):
                    break
                k += 1
            return float(total)

    return np.vectorize(scalar, otypes=[float])(z) if np.ndim(z) else scalar(float(z))


def mittag_leffler_series(alpha: float, z: float, terms: int) -> float:
    """Plain double-precision partial sum; only trustworthy for small |z|."""
    k = np.arange(terms)
    return float(np.sum(z ** k / gamma(alpha * k + 1)))


def mittag_leffler_asymptotic(alpha: float, z: float, terms: int = 2) -> float:
    """Leading terms of E_alpha(z) ~ -sum_k z^-k / Gamma(1 - alpha k) for z -> -inf."""
    k = np.arange(1, terms + 1)
    return float(-np.sum(z ** (-k.astype(float)) / gamma(1.0 - alpha * k)))


def single_mode_solution(alpha: float, eigenvalue: float, t) -> np.ndarray:
    """Time factor E_alpha(-lambda t^alpha) of the solution started from one eigenfunction."""
    return mittag_leffler(alpha, -eigenvalue * np.asarray(t, dtype=float) ** alpha)


if __name__ == '__main__':
    from logic.mesh_fem import build_mesh
    mesh = build_mesh(1, 100)
    q = CoefficientField(mesh, np.ones(mesh.n_nodes))
    traj = solve_forward(mesh, q, lambda x: np.sin(np.pi * x[:, 0]), SourceSpec(), 0.5, 256)
    exact = single_mode_solution(0.5, np.pi ** 2, 1.0) * np.sin(np.pi * mesh.nodes[mesh.interior, 0])
    print(f"max nodal error at t=1: {np.abs(traj.states[-1] - exact).max():.3e}")
