"""
Experiment orchestration: single inversions, table sweeps and the noise-level rate study.

Work is split the same way for every sweep: cells are planned first (pure config dicts),
then executed serially or in a process pool, and merged in a fixed order so that repeated
invocations produce identical output.
"""
import hashlib
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from data.config_manager import DEFAULT_RUN_CONFIG, get_preset
from data.result_store import ResultStore
from logic.adjoint_grad import DiscreteProblem, evaluate_objective, gradient, directional_derivative_fd
from logic.cq import cq_partial_sum_check, cq_weights
from logic.errors import (ConfigError, GridRatioError, InsufficientPointsError, InvalidBoundsError,
                          InvalidOrderError, InversionError, InvalidSizeError)
from logic.examples import ExampleSpec, get_example
from logic.forward import (MISFIT_RULES, POINT_VALUE, SOURCE_MODES, TRAPEZOID, SourceSpec,
                           single_mode_solution, solve_forward)
from logic.mesh_fem import CoefficientField, FemOperators, build_mesh
from logic.metrics import (ErrorReport, coefficient_difference, coefficient_error, density_is_nonnegative,
                           state_error, weighted_error)
from logic.optimizer import CgControls, InversionResult, minimize
from logic.synthdata import build_observations, exact_coefficient

logger = logging.getLogger(__name__)

ProgressCallback = Callable[[int, int], None]
CellResult = Dict[str, Any]  # one CSV row; 'termination' starts with 'error:' for failed cells

RATE_GAMMA_FACTOR = 1e-4


@dataclass(frozen=True)
class InversionConfig:
    example: str
    alpha: float
    M: int
    N: int
    fine_M: int
    fine_N: int
    eps: float
    gamma: float
    T0: float
    seed: int
    c0: float
    c1: float
    q0: float
    source_mode: str = POINT_VALUE
    misfit_rule: str = TRAPEZOID
    max_iters: int = 100
    grad_tol: float = 1e-8
    step_tol: float = 1e-10
    restart_every: int = 20

    def __post_init__(self):
        spec = get_example(self.example)
        if not (0.0 < self.alpha <= 1.0):
            raise InvalidOrderError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.gamma < 0.0 or self.eps < 0.0:
            raise ConfigError(f"gamma and eps must be non-negative, got gamma={self.gamma}, eps={self.eps}")
        if self.M < 2 or self.N < 1:
            raise InvalidSizeError(f"Need M >= 2 and N >= 1, got M={self.M}, N={self.N}")
        if self.fine_M <= self.M:
            raise GridRatioError(f"fine_M={self.fine_M} must exceed M={self.M}")
        if self.fine_N < self.N or self.fine_N % self.N != 0:
            raise GridRatioError(f"fine_N={self.fine_N} must be a multiple of N={self.N}")
        if not (0.0 <= self.T0 <= spec.T):
            raise ConfigError(f"T0={self.T0} must lie in [0, {spec.T}]")
        if not (0.0 < self.c0 < self.c1):
            raise InvalidBoundsError(f"Need 0 < c0 < c1, got c0={self.c0}, c1={self.c1}")
        if not (self.c0 <= self.q0 <= self.c1):
            raise InvalidBoundsError(f"Initial guess q0={self.q0} lies outside [{self.c0}, {self.c1}]")
        if self.source_mode not in SOURCE_MODES:
            raise ConfigError(f"Unknown source_mode '{self.source_mode}', expected one of {SOURCE_MODES}")
        if self.misfit_rule not in MISFIT_RULES:
            raise ConfigError(f"Unknown misfit_rule '{self.misfit_rule}', expected one of {MISFIT_RULES}")

    @classmethod
    def from_dict(cls, raw: Dict[str, Any]) -> 'InversionConfig':
        """
        Builds a config from a merged dict. None entries take the example's defaults;
        keys that are not config fields (preset, axis, ...) are ignored.
        """
        merged = dict(DEFAULT_RUN_CONFIG)
        merged.update({k: v for k, v in raw.items() if v is not None})
        spec = get_example(merged["example"])
        for key in ("M", "N", "fine_M", "fine_N", "T0", "c0", "c1"):
            if merged.get(key) is None:
                merged[key] = getattr(spec, key)
        if merged.get("q0") is None:
            merged["q0"] = 0.5 * (merged["c0"] + merged["c1"])
        names = {f.name for f in fields(cls)}
        ignored = sorted(set(merged) - names)
        if ignored:
            logger.debug(f"Ignoring non-run keys: {ignored}")
        try:
            kwargs = {name: merged[name] for name in names}
            for key in ("M", "N", "fine_M", "fine_N", "seed", "max_iters", "restart_every"):
                kwargs[key] = int(kwargs[key])
            for key in ("alpha", "eps", "gamma", "T0", "c0", "c1", "q0", "grad_tol", "step_tol"):
                kwargs[key] = float(kwargs[key])
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"Malformed run configuration: {e}") from e
        return cls(**kwargs)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canonical.encode('utf-8')).hexdigest()[:12]

    def replace(self, **changes) -> 'InversionConfig':
        data = self.to_dict()
        data.update(changes)
        return InversionConfig.from_dict(data)

    @property
    def spec(self) -> ExampleSpec:
        return get_example(self.example)

    @property
    def controls(self) -> CgControls:
        try:
            return CgControls(max_iters=self.max_iters, grad_tol=self.grad_tol, step_tol=self.step_tol,
                              restart_every=self.restart_every)
        except ValueError as e:
            raise ConfigError(str(e)) from e


@dataclass
class RunOutcome:
    report: ErrorReport
    result: InversionResult
    row: CellResult


def _result_row(config: InversionConfig, report: ErrorReport, result: InversionResult,
                delta: float) -> CellResult:
    return {
        "alpha": config.alpha, "eps": config.eps, "gamma": config.gamma, "M": config.M, "N": config.N,
        "T0": config.T0, "seed": config.seed, "e_q": report.e_q, "e_u": report.e_u,
        "weighted_err": report.weighted_err, "iters": result.iterations, "termination": result.termination,
        "delta_realized": delta, "config_hash": config.config_hash(),
    }


def run_single(config: InversionConfig, out_dir: Optional[str] = None,
               callback: Optional[Callable[[Dict[str, Any]], None]] = None) -> RunOutcome:
    """
    Observations -> projected CG -> error measures.

    Args:
        config: Validated run configuration.
        out_dir: When given, result.json, iterations.jsonl and the observation bundle
            are written there.
        callback: Receives every optimizer iteration record.

    Returns:
        A RunOutcome with the error report, the optimizer result and the CSV row.

    Raises:
        InversionError: Any failure, re-raised with the config hash in the message.
    """
    try:
        return _run_single(config, out_dir, callback)
    except InversionError as e:
        raise type(e)(f"[config {config.config_hash()}] {e}") from e


def _run_single(config: InversionConfig, out_dir: Optional[str],
                callback: Optional[Callable[[Dict[str, Any]], None]]) -> RunOutcome:
    example = config.spec
    mesh = build_mesh(example.dim, config.M)
    ops = FemOperators(mesh)
    logger.info(f"run_single {config.config_hash()}: {example.name} alpha={config.alpha} eps={config.eps} "
                f"gamma={config.gamma} M={config.M} N={config.N} seed={config.seed}")

    obs, reference = build_observations(example, config.alpha, config.M, config.N, config.fine_M, config.fine_N,
                                        config.eps, config.seed, config.T0, config.source_mode, operators=ops)
    problem = DiscreteProblem(mesh, example.u0, SourceSpec(config.source_mode, example.f), config.alpha,
                              config.N, config.gamma, example.T, config.misfit_rule, operators=ops)
    q0 = CoefficientField(mesh, np.full(mesh.n_nodes, config.q0))
    result = minimize(q0, obs, problem, config.c0, config.c1, config.controls, callback=callback)

    traj = problem.solve(result.q_star)
    traj_dagger = problem.solve(exact_coefficient(mesh, example))
    report = ErrorReport(
        e_q=coefficient_error(result.q_star, example.q_dagger, operators=ops),
        e_u=state_error(traj, reference, ops),
        weighted_err=weighted_error(result.q_star, example.q_dagger, traj_dagger, example.f, config.alpha),
        alpha=config.alpha, eps=config.eps, gamma=config.gamma, h=mesh.h, tau=problem.tau,
        density_nonnegative=density_is_nonnegative(example.q_dagger, traj_dagger, example.f),
    )
    row = _result_row(config, report, result, obs.delta_realized)

    if out_dir:
        ResultStore.write_json(os.path.join(out_dir, "result.json"), {
            "config": config.to_dict(),
            "config_hash": config.config_hash(),
            "report": report.to_dict(),
            "J": result.final.total if result.final else None,
            "objective_history": result.objective_history,
            "iterations": result.iterations,
            "termination": result.termination,
            "delta_realized": obs.delta_realized,
            "q_star": result.q_star.nodal_values,
        })
        ResultStore.write_jsonl(os.path.join(out_dir, "iterations.jsonl"), result.records)
        ResultStore.save_observations(os.path.join(out_dir, "observations"), obs,
                                      {"example": example.name, "alpha": config.alpha,
                                       "source_mode": config.source_mode})
    return RunOutcome(report=report, result=result, row=row)


@dataclass(frozen=True)
class TableSpec:
    """
    A sweep over one axis ('eps', 'M' or 'N') with everything else taken from `base`.
    For the eps axis `gammas` pairs one regularization weight with each value.
    `reference` names grid overrides for a fine reconstruction that replaces q_dagger as
    the error target.
    """
    name: str
    base: Dict[str, Any]
    axis: str
    values: Tuple[float, ...]
    alphas: Tuple[float, ...] = (0.5,)
    gammas: Optional[Tuple[float, ...]] = None
    seeds: Tuple[int, ...] = (0,)
    reference: Optional[Dict[str, Any]] = None
    published: Dict[float, List[float]] = field(default_factory=dict)

    def __post_init__(self):
        if self.axis not in ("eps", "M", "N"):
            raise ConfigError(f"Unknown table axis '{self.axis}'")
        if not self.values:
            raise ConfigError(f"Table '{self.name}' has no axis values")
        steps = np.diff(np.asarray(self.values, dtype=float))
        if not (np.all(steps > 0) or np.all(steps < 0)):
            raise ConfigError(f"Axis values of table '{self.name}' must be strictly monotone")
        if self.gammas is not None and len(self.gammas) != len(self.values):
            raise ConfigError(f"Table '{self.name}' pairs {len(self.gammas)} gammas with {len(self.values)} values")

    @classmethod
    def from_preset(cls, name: str, overrides: Optional[Dict[str, Any]] = None) -> 'TableSpec':
        preset = get_preset(name)
        if "axis" not in preset:
            raise ConfigError(f"Preset '{name}' is not a table")
        return cls.from_dict(name, {**preset, "base": {**preset["base"], **(overrides or {})}})

    @classmethod
    def from_dict(cls, name: str, raw: Dict[str, Any]) -> 'TableSpec':
        try:
            return cls(
                name=name, base=dict(raw.get("base", {})), axis=raw["axis"],
                values=tuple(raw["values"]),
                alphas=tuple(float(a) for a in raw.get("alphas", (0.5,))),
                gammas=tuple(raw["gammas"]) if raw.get("gammas") is not None else None,
                seeds=tuple(int(s) for s in raw.get("seeds", (raw.get("base", {}).get("seed", 0),))),
                reference=raw.get("reference"),
                published={float(k): list(v) for k, v in raw.get("published", {}).items()},
            )
        except KeyError as e:
            raise ConfigError(f"Table '{name}' is missing key {e}") from e


@dataclass
class RateReport:
    rows: List[CellResult]
    slopes: Dict[float, Dict[str, float]]
    curves: Dict[str, List[Tuple[float, float]]]


def _run_cell(cell: Dict[str, Any]) -> CellResult:
    """Worker entry point; never raises so that one bad cell cannot abort a sweep."""
    config_dict = cell["config"]
    try:
        config = InversionConfig.from_dict(config_dict)
        outcome = run_single(config, cell.get("out_dir"))
        row = dict(outcome.row)
        reference = cell.get("reference")
        if reference is not None:
            dim, ref_M, ref_values = reference
            q_ref = CoefficientField(build_mesh(dim, ref_M), np.asarray(ref_values))
            row["e_q"] = coefficient_difference(outcome.result.q_star, q_ref)
        return row
    except Exception as e:
        logger.error(f"Cell {config_dict} failed: {e}", exc_info=True)
        row = {key: config_dict.get(key, "") for key in ("alpha", "eps", "gamma", "M", "N", "T0", "seed")}
        row.update({"e_q": float("nan"), "e_u": float("nan"), "weighted_err": float("nan"), "iters": 0,
                    "termination": f"error: {e}", "delta_realized": float("nan"), "config_hash": ""})
        return row


class ExperimentRunner:
    """
    Orchestrates sweeps, separating planning from execution.
    """
    def __init__(self, jobs: int = 1, out_dir: Optional[str] = None):
        if jobs < 1:
            raise ConfigError(f"--jobs must be >= 1, got {jobs}")
        self.jobs = jobs
        self.out_dir = out_dir

    def _cell_dir(self, *parts) -> Optional[str]:
        if not self.out_dir:
            return None
        return os.path.join(self.out_dir, "cells", "_".join(str(p) for p in parts))

    def plan_table(self, spec: TableSpec, references: Optional[Dict[float, Any]] = None) -> List[Dict[str, Any]]:
        """One cell per (alpha, axis value, seed). Configs are validated here, before any solve."""
        cells = []
        for alpha in spec.alphas:
            for i, value in enumerate(spec.values):
                for seed in spec.seeds:
                    config = dict(spec.base, alpha=alpha, seed=seed)
                    config[spec.axis] = value
                    if spec.gammas is not None:
                        config["gamma"] = spec.gammas[i]
                    normalized = InversionConfig.from_dict(config).to_dict()
                    cells.append({
                        "config": normalized,
                        "key": (float(alpha), float(value), int(seed)),
                        "reference": (references or {}).get(float(alpha)),
                        "out_dir": self._cell_dir(spec.name, f"a{alpha}", f"{spec.axis}{value}", f"s{seed}"),
                    })
        return cells

    def execute(self, cells: List[Dict[str, Any]],
                progress_callback: Optional[ProgressCallback] = None) -> List[CellResult]:
        """Runs every cell and returns the rows in plan order, whatever the completion order."""
        total = len(cells)
        rows: List[Optional[CellResult]] = [None] * total
        if self.jobs == 1 or total <= 1:
            for i, cell in enumerate(cells):
                rows[i] = _run_cell(cell)
                if progress_callback:
                    progress_callback(i + 1, total)
            return rows
        with ProcessPoolExecutor(max_workers=self.jobs) as pool:
            futures = {pool.submit(_run_cell, cell): i for i, cell in enumerate(cells)}
            for done, future in enumerate(as_completed(futures), start=1):
                rows[futures[future]] = future.result()
                if progress_callback:
                    progress_callback(done, total)
        return rows

    def reference_reconstructions(self, spec: TableSpec) -> Dict[float, Any]:
        """Fine-grid reconstructions, one per alpha, that stand in for q_dagger."""
        references = {}
        for alpha in spec.alphas:
            config = InversionConfig.from_dict(dict(spec.base, alpha=alpha, seed=spec.seeds[0], **spec.reference))
            logger.info(f"Computing reference reconstruction for {spec.name}, alpha={alpha}")
            outcome = run_single(config, self._cell_dir(spec.name, f"a{alpha}", "reference"))
            q_ref = outcome.result.q_star
            references[float(alpha)] = (q_ref.mesh.dim, q_ref.mesh.M, q_ref.nodal_values)
        return references

    def run_table(self, spec: TableSpec, progress_callback: Optional[ProgressCallback] = None) -> List[CellResult]:
        references = self.reference_reconstructions(spec) if spec.reference else None
        cells = self.plan_table(spec, references)
        rows = self.execute(cells, progress_callback)
        order = sorted(range(len(cells)), key=lambda i: cells[i]["key"])
        failed = sum(1 for r in rows if str(r["termination"]).startswith("error"))
        logger.info(f"Table {spec.name}: {len(rows) - failed} cells ok, {failed} failed")
        return [rows[i] for i in order]

    def run_rate_study(self, alphas: Sequence[float], epsilons: Sequence[float], seed: int = 0,
                       base: Optional[Dict[str, Any]] = None,
                       progress_callback: Optional[ProgressCallback] = None) -> RateReport:
        """
        For each alpha and noise level eps: M = round(1/sqrt(eps)), gamma = 1e-4 eps^2 and T0 = 0.
        Fits log-log slopes of e_q and e_u against eps.

        Args:
            alphas: Fractional orders to study.
            epsilons: At least four positive noise levels spanning a decade.
            seed: Noise seed shared by every cell.
            base: Run settings for every cell; the "rate" preset when None.
            progress_callback: Called as (finished cells, total cells).

        Returns:
            A RateReport with the rows, the fitted slopes per alpha and the error curves.

        Raises:
            InsufficientPointsError: If the noise levels cannot support a slope fit.
        """
        eps = sorted(float(e) for e in epsilons)
        if len(eps) < 4 or eps[0] <= 0.0 or eps[-1] / eps[0] < 10.0:
            raise InsufficientPointsError(
                f"Rate study needs at least 4 positive noise levels spanning a decade, got {list(epsilons)}"
            )
        base = dict(base or get_preset("rate")["base"])
        cells = []
        for alpha in alphas:
            for e in eps:
                config = dict(base, alpha=float(alpha), eps=e, seed=seed, T0=0.0,
                              M=max(2, int(round(1.0 / math.sqrt(e)))), gamma=RATE_GAMMA_FACTOR * e * e)
                cells.append({"config": InversionConfig.from_dict(config).to_dict(),
                              "key": (float(alpha), e, seed),
                              "out_dir": self._cell_dir("rate", f"a{alpha}", f"eps{e}")})
        rows = self.execute(cells, progress_callback)

        slopes: Dict[float, Dict[str, float]] = {}
        curves: Dict[str, List[Tuple[float, float]]] = {}
        for alpha in alphas:
            mine = [r for r in rows if r["alpha"] == float(alpha) and not str(r["termination"]).startswith("error")]
            slopes[float(alpha)] = {}
            for metric in ("e_q", "e_u"):
                points = [(float(r["eps"]), float(r[metric])) for r in mine if r[metric] > 0.0]
                curves[f"alpha{alpha}_{metric}"] = points
                slopes[float(alpha)][metric] = fit_slope(points)
            logger.info(f"Rate study alpha={alpha}: slopes {slopes[float(alpha)]}")
        return RateReport(rows=rows, slopes=slopes, curves=curves)


def fit_slope(points: Sequence[Tuple[float, float]]) -> float:
    """Least-squares slope of log(y) against log(x); nan with fewer than two points."""
    if len(points) < 2:
        return float("nan")
    x, y = np.log(np.array(points)).T
    return float(np.polyfit(x, y, 1)[0])


def run_table(spec: TableSpec, jobs: int = 1, out_dir: Optional[str] = None,
              progress_callback: Optional[ProgressCallback] = None) -> List[CellResult]:
    return ExperimentRunner(jobs, out_dir).run_table(spec, progress_callback)


def run_rate_study(alphas: Sequence[float], epsilons: Sequence[float], seed: int = 0,
                   base: Optional[Dict[str, Any]] = None, jobs: int = 1, out_dir: Optional[str] = None,
                   progress_callback: Optional[ProgressCallback] = None) -> RateReport:
    return ExperimentRunner(jobs, out_dir).run_rate_study(alphas, epsilons, seed, base, progress_callback)


def selftest() -> List[Tuple[str, bool, str]]:
    """Quick sanity checks: CQ identity, forward solve against the single-mode solution, gradient check."""
    checks = []

    residual = cq_partial_sum_check(cq_weights(0.5, 101))
    checks.append(("cq partial sums", residual <= 1e-13, f"residual {residual:.2e}"))

    mesh = build_mesh(1, 32)
    ops = FemOperators(mesh)
    traj = solve_forward(mesh, CoefficientField(mesh, np.ones(mesh.n_nodes)), lambda x: np.sin(np.pi * x[:, 0]),
                         SourceSpec(), 0.5, 128, operators=ops)
    exact = single_mode_solution(0.5, np.pi ** 2, 1.0) * np.sin(np.pi * mesh.nodes[mesh.interior, 0])
    rel = math.sqrt(float(ops.l2_norm_sq(traj.states[-1] - exact)[0] / ops.l2_norm_sq(exact)[0]))
    checks.append(("forward vs Mittag-Leffler", rel < 0.1, f"relative L2 error {rel:.2e}"))

    example = get_example("smooth1d")
    mesh = build_mesh(1, 8)
    ops = FemOperators(mesh)
    obs, _ = build_observations(example, 0.5, 8, 8, 16, 16, 0.0, 0, T0=0.0, operators=ops)
    problem = DiscreteProblem(mesh, example.u0, SourceSpec(POINT_VALUE, example.f), 0.5, 8, 1e-10, operators=ops)
    rng = np.random.Generator(np.random.PCG64(0))
    q = CoefficientField(mesh, 1.0 + rng.random(mesh.n_nodes))
    direction = rng.standard_normal(mesh.n_nodes)
    adjoint_value = float(gradient(q, obs, problem).values @ direction)
    fd_value = directional_derivative_fd(q, direction, obs, problem)
    rel = abs(adjoint_value - fd_value) / max(abs(fd_value), 1e-300)
    checks.append(("adjoint gradient vs finite differences", rel <= 1e-5,
                   f"relative error {rel:.2e}, J={evaluate_objective(q, obs, problem).total:.3e}"))

    for name, ok, detail in checks:
        logger.info(f"selftest {name}: {'ok' if ok else 'FAILED'} ({detail})")
    return checks
