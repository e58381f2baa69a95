import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import toeplitz

from logic.errors import DimensionMismatchError, InvalidOrderError, InvalidSizeError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CqWeights:
    """
    Backward Euler convolution quadrature weights b_0..b_{n-1} of order alpha,
    i.e. the Taylor coefficients of (1 - xi)^alpha, together with the step tau.
    """
    alpha: float
    tau: float
    weights: np.ndarray

    def __post_init__(self):
        self.weights.setflags(write=False)

    def __len__(self) -> int:
        return len(self.weights)

    @property
    def scale(self) -> float:
        return self.tau ** (-self.alpha)


def binomial_weights(order: float, n_terms: int) -> np.ndarray:
    """
    Coefficients of (1 - xi)^order for any real order, via the multiplicative
    recurrence b_j = b_{j-1} (j - 1 - order) / j.
    """
    if n_terms < 1:
        raise InvalidSizeError(f"n_terms must be >= 1, got {n_terms}")
    j = np.arange(1, n_terms, dtype=float)
    b = np.empty(n_terms)
    b[0] = 1.0
    b[1:] = np.cumprod((j - 1.0 - order) / j)
    return b


def cq_weights(alpha: float, n_terms: int, tau: float = 1.0) -> CqWeights:
    """
    Builds the CQ weights for a fractional order in (0, 1].

    alpha == 1 gives the first-order backward difference [1, -1, 0, ...].

    Args:
        alpha: Fractional order, 0 < alpha <= 1.
        n_terms: Number of weights b_0..b_{n_terms-1} to generate.
        tau: Time step; only enters through CqWeights.scale.

    Returns:
        A CqWeights with read-only weights.
    """
    if not (0.0 < alpha <= 1.0):
        raise InvalidOrderError(f"Fractional order must lie in (0, 1], got {alpha}")
    if tau <= 0.0:
        raise InvalidSizeError(f"Time step must be positive, got {tau}")
    return CqWeights(alpha=float(alpha), tau=float(tau), weights=binomial_weights(alpha, n_terms))


def _as_history(history) -> np.ndarray:
    try:
        arr = np.asarray(history, dtype=float)
    except ValueError as e:
        raise DimensionMismatchError(f"History vectors have inconsistent dimensions: {e}") from e
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise DimensionMismatchError(f"History must be a sequence of vectors, got shape {arr.shape}")
    return arr


def cq_apply(weights: CqWeights, history) -> np.ndarray:
    """
    Discrete fractional derivative at the last level of `history`:
    tau^-alpha * sum_j b_j phi^{n-j}, with history = [phi^0, ..., phi^n].

    Args:
        weights: CQ weights with at least n + 1 entries.
        history: Levels phi^0..phi^n, either scalars or equally sized vectors.

    Returns:
        The derivative at level n, a scalar when the history holds scalars.
    """
    arr = _as_history(history)
    n = arr.shape[0] - 1
    if n + 1 > len(weights):
        raise DimensionMismatchError(
            f"History has {n + 1} levels but only {len(weights)} weights are available"
        )
    b = weights.weights[: n + 1]
    out = weights.scale * (b @ arr[::-1])
    return out if np.ndim(history[0]) else out[0]


def cq_derivative_sequence(weights: CqWeights, history) -> np.ndarray:
    """
    Discrete fractional derivative at every level 0..n of `history` (row n is
    cq_apply of the first n+1 rows). Evaluated as one lower-triangular Toeplitz product.
    """
    arr = _as_history(history)
    n_levels = arr.shape[0]
    if n_levels > len(weights):
        raise DimensionMismatchError(
            f"History has {n_levels} levels but only {len(weights)} weights are available"
        )
    b = weights.weights[:n_levels]
    conv = toeplitz(b, np.zeros(n_levels))
    out = weights.scale * (conv @ arr)
    return out if np.ndim(history[0]) else out[:, 0]


def cq_partial_sum_check(weights: CqWeights) -> float:
    """
    Max over m of |sum_{n<=m} b_n^(alpha) - b_m^(alpha-1)|, the shifted-order weights
    being generated independently of the ones under test.
    """
    shifted = binomial_weights(weights.alpha - 1.0, len(weights))
    residual = np.abs(np.cumsum(weights.weights) - shifted)
    return float(residual.max())


def cq_decay_constant(weights: CqWeights) -> float:
    """
    Smallest C with |tau^-alpha sum_{n<=m} b_n| <= C t_{m+1}^-alpha for all m.
    """
    m = np.arange(len(weights))
    partial = np.abs(weights.scale * np.cumsum(weights.weights))
    t_next = (m + 1) * weights.tau
    return float(np.max(partial * t_next ** weights.alpha))


if __name__ == '__main__':
    for a in (0.25, 0.5, 0.75, 1.0):
        w = cq_weights(a, 2048)
        print(f"alpha={a}: b[:4]={w.weights[:4]}, partial-sum residual={cq_partial_sum_check(w):.2e}")
