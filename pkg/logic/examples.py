"""
Catalogue of benchmark problems: closed-form initial data, source and exact
coefficient, plus the grids and bounds each problem is normally run with.

Callables are module-level functions so that configs stay picklable for the
process pool.
"""
from dataclasses import dataclass
from typing import Callable, Dict, Optional

import numpy as np

from logic.errors import ConfigError


@dataclass(frozen=True)
class ExampleSpec:
    name: str
    dim: int
    u0: Callable[[np.ndarray], np.ndarray]
    f: Optional[Callable[[np.ndarray, float], np.ndarray]]
    q_dagger: Callable[[np.ndarray], np.ndarray]
    T0: float
    c0: float = 0.5
    c1: float = 5.0
    M: int = 200
    N: int = 1024
    fine_M: int = 400
    fine_N: int = 2048
    T: float = 1.0


def _u0_smooth1d(x):
    return x[:, 0] * (1.0 - x[:, 0])


def _q_smooth1d(x):
    return 2.0 + np.sin(2.0 * np.pi * x[:, 0])


def _u0_nonsmooth1d(x):
    s = x[:, 0] * (1.0 - x[:, 0])
    return s * s


def _f_nonsmooth1d(x, t):
    s = x[:, 0] * (1.0 - x[:, 0])
    return np.exp(s) * s * t


def _q_nonsmooth1d(x):
    return 2.0 + np.minimum(0.5, np.sin(2.0 * np.pi * x[:, 0]) ** 4)


def _u0_smooth2d(x):
    return x[:, 0] * (1.0 - x[:, 0]) * np.sin(np.pi * x[:, 1])


def _q_smooth2d(x):
    return 1.0 + np.sin(np.pi * x[:, 0]) * x[:, 1] * (1.0 - x[:, 1])


EXAMPLES: Dict[str, ExampleSpec] = {
    "smooth1d": ExampleSpec("smooth1d", 1, _u0_smooth1d, None, _q_smooth1d, T0=0.75),
    "nonsmooth1d": ExampleSpec("nonsmooth1d", 1, _u0_nonsmooth1d, _f_nonsmooth1d, _q_nonsmooth1d,
                               T0=0.75, c0=1.9, c1=2.7),
    "smooth2d": ExampleSpec("smooth2d", 2, _u0_smooth2d, None, _q_smooth2d, T0=0.8,
                            M=40, N=500, fine_M=100, fine_N=2000),
}


def get_example(name: str) -> ExampleSpec:
    try:
        return EXAMPLES[name]
    except KeyError:
        raise ConfigError(f"Unknown example '{name}', expected one of {sorted(EXAMPLES)}") from None
