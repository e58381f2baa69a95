import json
import os
import logging
from typing import Dict, Any, Optional

from logic.errors import ConfigError

logger = logging.getLogger(__name__)

# Keys mirror the CLI flags (dashes become underscores). None means "use the example's default".
DEFAULT_RUN_CONFIG: Dict[str, Any] = {
    "example": "smooth1d",
    "alpha": 0.5,
    "M": None,
    "N": None,
    "fine_M": None,
    "fine_N": None,
    "eps": 0.0,
    "gamma": 1e-14,
    "T0": None,
    "seed": 0,
    "c0": None,
    "c1": None,
    "q0": None,
    "source_mode": "point-value",
    "misfit_rule": "trapezoid",
    "max_iters": 100,
    "grad_tol": 1e-8,
    "step_tol": 1e-10,
    "restart_every": 20,
}

_EPS_COLUMNS = [0.0, 1e-3, 5e-3, 1e-2, 3e-2, 5e-2]
_ALPHAS = [0.25, 0.5, 0.75]

# Paired (eps, gamma) sweeps and the published e_q rows they are compared against.
PRESETS: Dict[str, Dict[str, Any]] = {
    "table1": {
        "base": {"example": "smooth1d"},
        "axis": "eps",
        "values": _EPS_COLUMNS,
        "gammas": [1e-14, 1e-13, 3e-13, 5e-13, 1e-12, 3e-12],
        "alphas": _ALPHAS,
        "published": {
            0.25: [7.75e-3, 9.95e-3, 1.33e-2, 1.53e-2, 2.50e-2, 3.64e-2],
            0.5: [8.73e-3, 1.00e-2, 1.33e-2, 1.50e-2, 2.65e-2, 4.11e-2],
            0.75: [9.92e-3, 1.16e-2, 1.80e-2, 2.24e-2, 3.30e-2, 5.16e-2],
        },
    },
    "table2": {
        "base": {"example": "smooth1d", "eps": 1e-2, "gamma": 5e-13, "N": 1024,
                 "fine_M": 1600, "fine_N": 2048},
        "axis": "M",
        "values": [10, 20, 40, 80, 160, 320],
        "alphas": _ALPHAS,
        "reference": {"M": 800, "N": 1024},
        "published": {
            0.25: [5.39e-2, 2.74e-2, 2.33e-2, 1.46e-2, 2.04e-2, 1.15e-2],
            0.5: [5.38e-2, 2.56e-2, 2.51e-2, 1.56e-2, 1.16e-2, 6.51e-3],
            0.75: [4.61e-2, 2.57e-2, 2.26e-2, 2.41e-2, 1.14e-2, 8.00e-3],
        },
    },
    "table3": {
        "base": {"example": "smooth1d", "eps": 1e-2, "gamma": 5e-13, "M": 200,
                 "fine_M": 1600, "fine_N": 2048},
        "axis": "N",
        "values": [32, 64, 128, 256, 512, 1024],
        "alphas": _ALPHAS,
        "reference": {"M": 800, "N": 2048},
        "published": {
            0.25: [3.78e-2, 3.88e-2, 2.03e-2, 8.30e-3, 2.38e-2, 6.27e-3],
            0.5: [3.90e-2, 3.80e-2, 1.98e-2, 1.92e-2, 2.07e-2, 8.46e-3],
            0.75: [9.31e-2, 4.47e-2, 2.64e-2, 1.06e-2, 1.45e-2, 6.64e-3],
        },
    },
    "table4": {
        "base": {"example": "smooth2d"},
        "axis": "eps",
        "values": _EPS_COLUMNS,
        "gammas": [1e-14, 3e-12, 1e-11, 3e-11, 2e-10, 5e-10],
        "alphas": _ALPHAS,
        "published": {
            0.25: [1.51e-3, 1.75e-3, 2.87e-3, 3.64e-3, 5.82e-3, 7.81e-3],
            0.5: [1.61e-3, 1.86e-3, 2.80e-3, 3.62e-3, 6.58e-3, 9.57e-3],
            0.75: [1.59e-3, 2.21e-3, 3.38e-3, 4.66e-3, 1.13e-2, 1.64e-2],
        },
    },
    "table5": {
        "base": {"example": "nonsmooth1d"},
        "axis": "eps",
        "values": _EPS_COLUMNS,
        "gammas": [1e-15, 2e-13, 4e-13, 1e-12, 4e-12, 9e-12],
        "alphas": _ALPHAS,
        "published": {
            0.25: [4.36e-3, 7.91e-3, 1.28e-2, 1.56e-2, 2.21e-2, 3.02e-2],
            0.5: [6.13e-3, 6.95e-3, 1.30e-2, 1.58e-2, 2.34e-2, 2.89e-2],
            0.75: [1.04e-2, 1.14e-2, 1.44e-2, 1.54e-2, 2.18e-2, 3.23e-2],
        },
    },
    "rate": {
        "base": {"example": "smooth1d", "T0": 0.0, "N": 2048, "fine_M": 400, "fine_N": 2048},
        "alphas": [0.5],
        "epsilons": [4e-4, 1e-3, 4e-3, 1e-2, 4e-2],
    },
}


def get_preset(name: str) -> Dict[str, Any]:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(f"Unknown preset '{name}', expected one of {sorted(PRESETS)}") from None


class ConfigManager:
    """
    Manages loading and saving of run configurations.
    Handles JSON file operations; missing keys are filled from the defaults.
    """
    def __init__(self, config_path: Optional[str] = None):
        """
        Initializes the ConfigManager.

        Args:
            config_path (str): The path to the configuration file, or None for defaults only.
        """
        self.config_path = config_path
        logger.debug(f"ConfigManager initialized with path: {self.config_path}")

    def get_default_config(self) -> Dict[str, Any]:
        """
        Returns the default run configuration.

        Returns:
            A dictionary with one entry per configurable key.
        """
        return dict(DEFAULT_RUN_CONFIG)

    def load_config(self) -> Dict[str, Any]:
        """
        Loads the configuration from the JSON file, if any, on top of the defaults.
        A table or rate-study file may also carry "preset", "axis", "values", "gammas",
        "alphas", "epsilons" and "seeds"; those are passed through untouched.

        Returns:
            A dictionary containing the merged configuration.
        """
        config = self.get_default_config()
        if not self.config_path:
            return config
        if not os.path.exists(self.config_path):
            raise ConfigError(f"Config file not found: {self.config_path}")
        try:
            logger.info(f"Loading config from {self.config_path}")
            with open(self.config_path, 'r', encoding='utf-8') as f:
                loaded = json.load(f)
        except (json.JSONDecodeError, IOError) as e:
            raise ConfigError(f"Error loading {self.config_path}: {e}") from e
        if not isinstance(loaded, dict):
            raise ConfigError(f"{self.config_path} must contain a JSON object")
        config.update(loaded)
        return config

    def save_config(self, config: Dict[str, Any]) -> None:
        """
        Saves the given configuration to the JSON file.

        Args:
            config: A dictionary containing the run configuration.
        """
        logger.debug(f"Saving config to {self.config_path}")
        with open(self.config_path, 'w', encoding='utf-8') as f:
            json.dump(config, f, ensure_ascii=False, indent=2, sort_keys=True)

    @staticmethod
    def apply_overrides(config: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
        """
        Returns a copy of config with every override that is not None applied.
        """
        merged = dict(config)
        for key, value in overrides.items():
            if value is not None:
                merged[key] = value
        return merged
