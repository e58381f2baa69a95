"""
Projected nonlinear conjugate gradient (Polak-Ribiere+) over the nodal box c0 <= q <= c1.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Any

import numpy as np

from logic.adjoint_grad import DiscreteProblem, ObjectiveValue, evaluate_objective, value_and_gradient
from logic.errors import InvalidBoundsError, StalledError
from logic.mesh_fem import CoefficientField

logger = logging.getLogger(__name__)

IterationCallback = Callable[[Dict[str, Any]], None]


@dataclass(frozen=True)
class CgControls:
    max_iters: int = 100
    grad_tol: float = 1e-8
    step_tol: float = 1e-10
    restart_every: int = 20
    shrink: float = 0.5
    sufficient_decrease: float = 1e-4
    initial_step: float = 1.0
    max_expansion: float = 4.0
    max_backtracks: int = 40

    def __post_init__(self):
        if min(self.grad_tol, self.step_tol, self.sufficient_decrease, self.initial_step) <= 0.0:
            raise ValueError("CG tolerances and step sizes must be positive")
        if not (0.0 < self.shrink < 1.0):
            raise ValueError(f"Shrink factor must lie in (0, 1), got {self.shrink}")
        if self.max_iters < 0 or self.restart_every < 1:
            raise ValueError("max_iters must be >= 0 and restart_every >= 1")


@dataclass
class InversionResult:
    q_star: CoefficientField
    objective_history: List[float]
    iterations: int
    termination: str
    final: Optional[ObjectiveValue] = None
    records: List[Dict[str, Any]] = field(default_factory=list)


def project_box(q: np.ndarray, c0: float, c1: float) -> np.ndarray:
    """Clamps nodal values into [c0, c1]; raises InvalidBoundsError unless c0 < c1."""
    if not c0 < c1:
        raise InvalidBoundsError(f"Lower bound {c0} must be below upper bound {c1}")
    return np.clip(q, c0, c1)


def _free_gradient(q: np.ndarray, g: np.ndarray, c0: float, c1: float) -> np.ndarray:
    """Gradient with components zeroed where a bound is active and blocks descent."""
    blocked = ((q <= c0) & (g > 0.0)) | ((q >= c1) & (g < 0.0))
    return np.where(blocked, 0.0, g)


class _LineSearch:
    """Armijo backtracking along a raw direction, projecting every trial point."""

    def __init__(self, evaluate: Callable[[np.ndarray], ObjectiveValue], c0: float, c1: float,
                 controls: CgControls):
        self.evaluate = evaluate
        self.c0, self.c1 = c0, c1
        self.controls = controls

    def _accepts(self, f0: float, g: np.ndarray, q: np.ndarray, trial: np.ndarray, f_trial: float) -> bool:
        slope = float(g @ (trial - q))
        return math.isfinite(f_trial) and f_trial <= f0 + self.controls.sufficient_decrease * min(slope, 0.0)

    def search(self, q: np.ndarray, f0: float, g: np.ndarray, d: np.ndarray, step: float):
        """Returns (step, point, value) or None when every trial fails."""
        ctl = self.controls
        trial = project_box(q + step * d, self.c0, self.c1)
        value = self.evaluate(trial)
        if self._accepts(f0, g, q, trial, value.total):
            # one-sided expansion while the objective keeps improving
            limit = step * ctl.max_expansion
            while step * 2.0 <= limit:
                bigger = project_box(q + 2.0 * step * d, self.c0, self.c1)
                big_value = self.evaluate(bigger)
                if not (self._accepts(f0, g, q, bigger, big_value.total) and big_value.total < value.total):
                    break
                step, trial, value = 2.0 * step, bigger, big_value
            return step, trial, value
        for _ in range(ctl.max_backtracks):
            step *= ctl.shrink
            trial = project_box(q + step * d, self.c0, self.c1)
            value = self.evaluate(trial)
            if self._accepts(f0, g, q, trial, value.total):
                return step, trial, value
        return None


def minimize(q0: CoefficientField, obs, problem: DiscreteProblem, c0: float, c1: float,
             controls: CgControls = CgControls(),
             callback: Optional[IterationCallback] = None) -> InversionResult:
    """
    Minimizes J over the box with projected Polak-Ribiere+ conjugate gradients.

    Terminates on max_iters, on the free-gradient norm dropping below grad_tol times its
    initial value, or on a coefficient change below step_tol. A line search that finds no
    acceptable point even along the steepest-descent direction also ends the run as step_tol.

    Args:
        q0: Initial guess; it is projected onto the box first.
        obs: Observations on the problem's grid.
        problem: Forward model, regularization weight and misfit rule.
        c0: Lower bound of the admissible set.
        c1: Upper bound of the admissible set.
        controls: Tolerances and line-search constants.
        callback: Called with the record of every iteration, iteration 0 included.

    Returns:
        An InversionResult whose objective history is non-increasing.

    Raises:
        StalledError: If even the steepest-descent direction is not a descent direction.
    """
    mesh = q0.mesh
    q = project_box(q0.nodal_values.astype(float), c0, c1)

    def evaluate(values: np.ndarray) -> ObjectiveValue:
        return evaluate_objective(CoefficientField(mesh, values), obs, problem)

    value, grad = value_and_gradient(CoefficientField(mesh, q), obs, problem)
    g = _free_gradient(q, grad.values, c0, c1)
    g0_norm = float(np.linalg.norm(g))
    history = [value.total]
    records: List[Dict[str, Any]] = []

    def emit(it: int, step: float, restarted: bool):
        record = {"iter": it, "J": value.total, "misfit": value.misfit, "penalty": value.penalty,
                  "grad_norm": float(np.linalg.norm(g)), "step": step, "restarted": restarted}
        records.append(record)
        logger.debug(f"CG {record}")
        if callback:
            callback(record)

    emit(0, 0.0, False)
    if g0_norm == 0.0 or not math.isfinite(g0_norm):
        termination = "grad_tol" if g0_norm == 0.0 else "error: non-finite gradient"
        return InversionResult(CoefficientField(mesh, q), history, 0, termination, value, records)

    search = _LineSearch(evaluate, c0, c1, controls)
    d = -g
    # steps are measured in coefficient units: the first trial moves the largest entry by initial_step
    step = controls.initial_step / float(np.max(np.abs(d)))
    prev_slope = None
    termination = "max_iters"
    iterations = 0

    for it in range(1, controls.max_iters + 1):
        restarted = False
        slope = float(g @ d)
        if slope >= 0.0 or (it > 1 and (it - 1) % controls.restart_every == 0):
            d, slope, restarted = -g, float(-(g @ g)), True
            if not slope < 0.0:
                raise StalledError(f"No descent direction at iteration {it} even after restart")
        if prev_slope is not None:
            step = step * min(2.0, prev_slope / slope)
        step = min(step, (c1 - c0) / float(np.max(np.abs(d))))

        found = search.search(q, value.total, g, d, step)
        if found is None and not restarted:
            d, slope, restarted = -g, float(-(g @ g)), True
            found = search.search(q, value.total, g, d, step)
        if found is None:
            iterations = it - 1
            termination = "step_tol"
            logger.info(f"Line search exhausted at iteration {it}; treating as converged")
            break

        step, q_new, _ = found
        change = float(np.max(np.abs(q_new - q)))
        value, grad = value_and_gradient(CoefficientField(mesh, q_new), obs, problem)
        g_new = _free_gradient(q_new, grad.values, c0, c1)
        history.append(value.total)
        iterations = it

        beta = max(0.0, float(g_new @ (g_new - g)) / float(g @ g))
        d = -g_new + beta * d
        prev_slope = slope
        q, g = q_new, g_new
        emit(it, step, restarted)

        if float(np.linalg.norm(g)) <= controls.grad_tol * g0_norm:
            termination = "grad_tol"
            break
        if change <= controls.step_tol * max(1.0, float(np.max(np.abs(q)))):
            termination = "step_tol"
            break

    logger.info(f"CG finished after {iterations} iterations ({termination}), J={value.total:.6e}")
    return InversionResult(CoefficientField(mesh, q), history, iterations, termination, value, records)
