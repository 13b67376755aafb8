"""Noise generation, rate regressions and the scripted numerical studies.

Every study is split into independent cells that run through joblib and are reduced in
cell order, so the output depends only on the configuration and its seeds.
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np
from joblib import Parallel, delayed

from tikhonov_hs.artifacts import read_data
from tikhonov_hs.forward_model import ForwardModel, ForwardOverflowError
from tikhonov_hs.hilbert_scale import DegenerateFitError, Grid, GridFunction, HilbertScale, SourceCondition
from tikhonov_hs.parameter_choice import (
    BalancingConfig,
    NoiseAmplification,
    ParameterGrid,
    SelectionError,
    SelectionResult,
    balancing,
    discrepancy_principle,
    leonov_heuristic,
    oracle_alpha,
    quasi_optimality_heuristic,
)
from tikhonov_hs.settings import FIGURE3_ALPHAS, ConfigError, RuleSettings, RunConfig
from tikhonov_hs.tikhonov_solver import Reconstruction, SpectralLinearProblem, TikhonovSolver

log = logging.getLogger(__name__)

CELL_ERRORS = (ForwardOverflowError, SelectionError, np.linalg.LinAlgError)

FIGURE2_RULES = (
    RuleSettings("balancing_first", c_bp=0.02),
    RuleSettings("balancing_first", c_bp=0.1),
    RuleSettings("discrepancy", c_dp=1.0),
    RuleSettings("discrepancy", c_dp=2.0),
    RuleSettings("quasi_optimality"),
    RuleSettings("oracle"),
)


@dataclass(frozen=True)
class NoiseModel:
    delta: float
    seed: int = 0

    def __post_init__(self) -> None:
        if self.delta < 0:
            raise ValueError("the noise level must be non-negative")


def make_noisy_data(y: GridFunction, model: NoiseModel) -> GridFunction:
    """y + delta xi / ||xi|| with standard Gaussian xi at every node."""
    if model.delta == 0:
        return y
    rng = np.random.default_rng(model.seed)
    grid = y.grid
    xi = rng.standard_normal(grid.n + 1)
    while grid.norm(xi) == 0:
        xi = rng.standard_normal(grid.n + 1)
    return y + GridFunction(grid, model.delta * xi / grid.norm(xi))


@dataclass(frozen=True)
class RateFit:
    c: float
    kappa: float
    residual: float
    samples: tuple[tuple[float, float], ...]

    def __call__(self, delta):
        return self.c * np.asarray(delta, dtype=float) ** self.kappa


def fit_rate(samples: Iterable[tuple[float, float]]) -> RateFit:
    """Least squares line through (log delta, log value): value ~ c delta^kappa."""
    samples = tuple((float(d), float(v)) for d, v in samples)
    if len(samples) < 3:
        raise DegenerateFitError(f"a rate fit needs at least 3 samples, got {len(samples)}")
    deltas, values = np.array(samples).T
    if np.any(deltas <= 0) or np.any(values <= 0):
        raise ValueError("rate samples must be positive")
    if np.ptp(deltas) == 0:
        raise DegenerateFitError("all samples share one noise level")
    x, y = np.log(deltas), np.log(values)
    kappa, intercept = np.polyfit(x, y, 1)
    residual = float(np.sqrt(np.mean((y - (kappa * x + intercept)) ** 2)))
    return RateFit(c=float(np.exp(intercept)), kappa=float(kappa), residual=residual, samples=samples)


def total_variation(x: GridFunction) -> float:
    return float(np.sum(np.abs(np.diff(x.values))))


def check_endpoints(grid: ParameterGrid, delta: float, b: float) -> None:
    try:
        grid.validate_endpoints(delta, b)
    except ValueError as err:
        raise ConfigError(f"grid.{err}") from None


class Benchmark:
    """A configured exponential growth (or surrogate) problem with its solver and data."""

    def __init__(self, config: RunConfig, solution: str | None = None) -> None:
        self.config = config
        self.scale: HilbertScale = config.make_scale()
        self.grid: Grid = self.scale.grid
        self.model: ForwardModel = config.make_model(self.scale)
        self.solver = TikhonovSolver(self.model, config.solver.to_solver_config())
        self.x_dag = config.make_solution(self.grid, solution)
        self.x_bar = config.make_x_bar(self.grid)
        self.parameter_grid: ParameterGrid = config.grid.to_grid()
        self.na: NoiseAmplification = config.noise_amplification()
        self._measured = read_data(config.data_path, self.grid) if config.data_path else None

    def __repr__(self) -> str:
        return f"<Benchmark: {self.config.problem}, solution={self.config.solution}, n={self.grid.n}>"

    def data(self, delta: float, seed: int) -> GridFunction:
        if self._measured is not None:
            return self._measured
        if self.x_dag is None:
            raise ConfigError("solution: required to generate data")
        return make_noisy_data(self.model.forward(self.x_dag), NoiseModel(delta, seed))

    def path(self, delta: float, seed: int) -> list[Reconstruction]:
        check_endpoints(self.parameter_grid, delta, self.na.b)
        log.info("%r: solving path for delta=%.4e seed=%d", self, delta, seed)
        return self.solver.solve_path(self.data(delta, seed), self.parameter_grid, self.x_bar)

    def minimize(self, delta: float, seed: int, alpha: float) -> Reconstruction:
        return self.solver.minimize(self.data(delta, seed), alpha, self.x_bar)


def apply_rule(
    rule: RuleSettings,
    path: Sequence[Reconstruction],
    delta: float,
    na: NoiseAmplification,
    x_dag: GridFunction | None = None,
) -> SelectionResult:
    usable = [r for r in path if r.error is None]
    if not usable:
        raise SelectionError("every reconstruction of the path failed")
    if rule.is_balancing:
        return balancing(usable, delta, rule.balancing_config(), na)
    if rule.name == "discrepancy":
        return discrepancy_principle(usable, delta, rule.c_dp)
    if rule.name == "quasi_optimality":
        return quasi_optimality_heuristic(usable)
    if rule.name == "leonov":
        return leonov_heuristic(usable, delta, na)
    if rule.name == "oracle":
        if x_dag is None:
            raise ConfigError("solution: the oracle rule needs a known solution")
        return oracle_alpha(usable, x_dag)
    raise ConfigError(f"rule.name: unknown rule {rule.name!r}")


def _parallel(jobs: int) -> Parallel:
    return Parallel(n_jobs=jobs, prefer="threads")


@dataclass(frozen=True)
class CellResult:
    c_bp: float
    delta: float
    seed: int
    alpha: float
    error: float
    status: str = "ok"

    @property
    def ok(self) -> bool:
        return self.status == "ok"


def _balancing_cell(config: RunConfig, delta: float, seed: int, c_bp_values: Sequence[float]) -> list[CellResult]:
    benchmark = Benchmark(config)
    try:
        path = [r for r in benchmark.path(delta, seed) if r.error is None]
    except CELL_ERRORS as err:
        log.warning("delta=%.4e seed=%d failed: %s", delta, seed, err)
        return [CellResult(c_bp, delta, seed, math.nan, math.nan, str(err)) for c_bp in c_bp_values]
    results = []
    for c_bp in c_bp_values:
        try:
            selection = balancing(path, delta, BalancingConfig(c_bp=c_bp), benchmark.na)
        except SelectionError as err:
            results.append(CellResult(c_bp, delta, seed, math.nan, math.nan, str(err)))
            continue
        error = selection.reconstruction.x.distance(benchmark.x_dag)
        log.info("C_BP=%g delta=%.4e: alpha=%.4e error=%.4e", c_bp, delta, selection.alpha_star, error)
        results.append(CellResult(c_bp, delta, seed, selection.alpha_star, error))
    return results


def _run_cells(
    config: RunConfig, deltas: Sequence[float], seeds: Sequence[int], c_bp_values: Sequence[float]
) -> list[CellResult]:
    if not deltas or not seeds or not c_bp_values:
        raise ValueError("noise levels, seeds and constants must be non-empty")
    if config.solution is None:
        raise ConfigError("solution: rate studies need a known solution")
    grid, b = config.grid.to_grid(), config.noise_amplification().b
    for delta in deltas:
        check_endpoints(grid, delta, b)
    cells = [(delta, seed) for delta in deltas for seed in seeds]
    results = _parallel(config.jobs)(
        delayed(_balancing_cell)(config, delta, seed, c_bp_values) for delta, seed in cells
    )
    return [result for cell in results for result in cell]


def _fit(results: Sequence[CellResult], value: str) -> RateFit | None:
    samples = [(r.delta, getattr(r, value)) for r in results if r.ok and getattr(r, value) > 0]
    try:
        return fit_rate(samples)
    except DegenerateFitError as err:
        log.warning("no rate fit: %s", err)
        return None


@dataclass(frozen=True)
class Table1Row:
    c_bp: float
    error_fit: RateFit | None
    alpha_fit: RateFit | None
    cells: int
    failed: int

    def as_row(self) -> tuple:
        nan = math.nan
        ex, ea = self.error_fit, self.alpha_fit
        return (
            self.c_bp,
            ex.c if ex else nan,
            ex.kappa if ex else nan,
            ea.c if ea else nan,
            ea.kappa if ea else nan,
            self.cells,
            self.failed,
            "ok" if ex and ea else "fit failed",
        )


@dataclass(frozen=True)
class Table1Report:
    table: tuple[Table1Row, ...]
    cells: tuple[CellResult, ...]

    header = ("c_bp", "c_x", "kappa_x", "c_alpha", "kappa_alpha", "cells", "failed", "status")
    cell_header = ("c_bp", "delta", "seed", "alpha", "error", "status")

    def rows(self) -> list[tuple]:
        return [row.as_row() for row in self.table]

    def cell_rows(self) -> list[tuple]:
        return [(c.c_bp, c.delta, c.seed, c.alpha, c.error, c.status) for c in self.cells]


def run_table1(
    c_bp_list: Sequence[float], delta_list: Sequence[float], seeds: Sequence[int], base_config: RunConfig
) -> Table1Report:
    """Balancing with each C_BP over a noise sweep, with rate fits of error and selected alpha."""
    results = _run_cells(base_config, delta_list, seeds, c_bp_list)
    table = []
    for c_bp in c_bp_list:
        mine = [r for r in results if r.c_bp == c_bp]
        table.append(
            Table1Row(
                c_bp=c_bp,
                error_fit=_fit(mine, "error"),
                alpha_fit=_fit(mine, "alpha"),
                cells=len(mine),
                failed=sum(not r.ok for r in mine),
            )
        )
    return Table1Report(table=tuple(table), cells=tuple(results))


@dataclass(frozen=True)
class RateStudyReport:
    c_bp: float
    cells: tuple[CellResult, ...]
    error_fit: RateFit | None
    alpha_fit: RateFit | None

    header = ("delta", "seed", "alpha", "error", "fitted_alpha", "fitted_error", "status")

    def rows(self) -> list[tuple]:
        nan = math.nan
        return [
            (
                c.delta,
                c.seed,
                c.alpha,
                c.error,
                float(self.alpha_fit(c.delta)) if self.alpha_fit else nan,
                float(self.error_fit(c.delta)) if self.error_fit else nan,
                c.status,
            )
            for c in self.cells
        ]


def run_rate_study(
    c_bp: float, delta_list: Sequence[float], seeds: Sequence[int], base_config: RunConfig
) -> RateStudyReport:
    results = _run_cells(base_config, delta_list, seeds, (c_bp,))
    return RateStudyReport(
        c_bp=c_bp, cells=tuple(results), error_fit=_fit(results, "error"), alpha_fit=_fit(results, "alpha")
    )


@dataclass(frozen=True)
class Marker:
    label: str
    alpha: float
    error: float
    status: str = "ok"


@dataclass(frozen=True)
class RuleComparisonReport:
    delta: float
    alphas: tuple[float, ...]
    consecutive_diff: tuple[float, ...]
    errors: tuple[float, ...]
    markers: tuple[Marker, ...]
    # balancing threshold C_BP delta / alpha^b (or beta delta / lambda(alpha)) along the path, per constant
    thresholds: tuple[tuple[str, tuple[float, ...]], ...] = ()

    @property
    def header(self) -> tuple[str, ...]:
        return ("kind", "label", "alpha", "consecutive_diff", "error", "status") + tuple(
            f"threshold_{name}" for name, _ in self.thresholds
        )

    def marker(self, label: str) -> Marker:
        return next(m for m in self.markers if m.label == label)

    def rows(self) -> list[tuple]:
        columns = [values for _, values in self.thresholds]
        curve = [
            ("curve", "", alpha, diff, error, "ok") + tuple(values[k] for values in columns)
            for k, (alpha, diff, error) in enumerate(zip(self.alphas, self.consecutive_diff, self.errors))
        ]
        blank = (math.nan,) * len(columns)
        markers = [("marker", m.label, m.alpha, math.nan, m.error, m.status) + blank for m in self.markers]
        return curve + markers


def run_rule_comparison(
    delta: float, rules: Sequence[RuleSettings], base_config: RunConfig, seed: int | None = None
) -> RuleComparisonReport:
    """One path at noise level delta, the error curves along it and the choice of every rule."""
    if not delta > 0:
        raise ValueError("the noise level must be positive")
    benchmark = Benchmark(base_config)
    if benchmark.x_dag is None:
        raise ConfigError("solution: the rule comparison needs a known solution")
    path = [r for r in benchmark.path(delta, base_config.noise.seed if seed is None else seed) if r.error is None]
    if len(path) < 2:
        raise SelectionError("too few successful reconstructions to compare rules")
    # last entry has no successor
    diffs = [path[k + 1].x.distance(path[k].x) for k in range(len(path) - 1)] + [math.nan]
    errors = [r.x.distance(benchmark.x_dag) for r in path]
    thresholds = {}
    for rule in rules:
        if rule.is_balancing:
            balancing_config = rule.balancing_config()
            name = f"C_BP={rule.c_bp:g}" if rule.c_bp is not None else f"beta={rule.beta:g}"
            thresholds[name] = tuple(balancing_config.threshold(r.alpha, delta, benchmark.na) for r in path)
    markers = []
    for rule in rules:
        try:
            selection = apply_rule(rule, path, delta, benchmark.na, benchmark.x_dag)
        except SelectionError as err:
            log.warning("%s: %s", rule.label, err)
            markers.append(Marker(rule.label, math.nan, math.nan, str(err)))
            continue
        markers.append(Marker(rule.label, selection.alpha_star, errors[selection.index]))
    return RuleComparisonReport(
        delta=delta,
        alphas=tuple(r.alpha for r in path),
        consecutive_diff=tuple(diffs),
        errors=tuple(errors),
        markers=tuple(markers),
        thresholds=tuple(thresholds.items()),
    )


@dataclass(frozen=True, eq=False)
class ContrastEntry:
    solution: str
    alpha: float
    reconstruction: Reconstruction
    error: float
    total_variation: float
    reference_variation: float


@dataclass(frozen=True)
class OversmoothingReport:
    delta: float
    entries: tuple[ContrastEntry, ...]

    header = ("solution", "alpha", "error", "total_variation", "reference_variation", "converged")

    def rows(self) -> list[tuple]:
        return [
            (e.solution, e.alpha, e.error, e.total_variation, e.reference_variation, e.reconstruction.converged)
            for e in self.entries
        ]

    def entry(self, solution: str, alpha: float) -> ContrastEntry:
        return next(e for e in self.entries if e.solution == solution and e.alpha == alpha)


def _contrast_cell(config: RunConfig, solution: str, delta: float, alphas: Sequence[float]) -> list[ContrastEntry]:
    benchmark = Benchmark(replace(config, solution=solution))
    data = benchmark.data(delta, config.noise.seed)
    reference = total_variation(benchmark.x_dag)
    entries, warm = [], None
    # largest alpha first, each solve warm started from the previous one
    for alpha in sorted(alphas, reverse=True):
        solver_config = replace(benchmark.solver.config, initial_guess=warm)
        reconstruction = benchmark.solver.minimize(data, alpha, benchmark.x_bar, solver_config)
        warm = reconstruction.x
        entries.append(
            ContrastEntry(
                solution=solution,
                alpha=alpha,
                reconstruction=reconstruction,
                error=reconstruction.x.distance(benchmark.x_dag),
                total_variation=total_variation(reconstruction.x),
                reference_variation=reference,
            )
        )
    return sorted(entries, key=lambda e: e.alpha)


def run_oversmoothing_contrast(
    delta: float,
    alphas: Sequence[float] = FIGURE3_ALPHAS,
    base_config: RunConfig | None = None,
    solutions: Sequence[str] = ("one", "parabola"),
) -> OversmoothingReport:
    """Reconstructions of the oversmoothing and the non-oversmoothing solution at fixed alphas."""
    config = base_config or RunConfig()
    if not alphas or any(alpha <= 0 for alpha in alphas):
        raise ValueError("alphas must be a non-empty list of positive values")
    results = _parallel(config.jobs)(
        delayed(_contrast_cell)(config, solution, delta, alphas) for solution in solutions
    )
    return OversmoothingReport(delta=delta, entries=tuple(e for cell in results for e in cell))


@dataclass(frozen=True)
class ScanRow:
    delta: float
    alpha: float
    error: float
    psi: float
    noise_term: float


@dataclass(frozen=True)
class ErrorScanReport:
    samples: tuple[ScanRow, ...]
    c1: float
    c1_by_delta: tuple[tuple[float, float], ...]

    header = ("delta", "alpha", "error", "psi", "noise_term", "bound")

    def rows(self) -> list[tuple]:
        return [(r.delta, r.alpha, r.error, r.psi, r.noise_term, self.c1 * r.psi + r.noise_term) for r in self.samples]


def spectral_benchmark(scale: HilbertScale, source: SourceCondition) -> SpectralLinearProblem:
    """Linear problem whose solution has x_dag - x_bar = psi(G) w with ||w|| = 1."""
    k = np.arange(1, scale.spectral_rank + 1)
    w = (-1.0) ** (k + 1) / k
    w /= np.linalg.norm(w)
    return SpectralLinearProblem(scale, source.synthesize(scale, w))


def error_decomposition_scan(
    source: SourceCondition,
    na: NoiseAmplification,
    deltas: Sequence[float],
    base_config: RunConfig | None = None,
    seed: int = 0,
) -> ErrorScanReport:
    """Errors over a (delta, alpha) mesh and the smallest c_1 with error <= c_1 psi(alpha) + delta/lambda(alpha)."""
    config = base_config or RunConfig()
    scale = HilbertScale(Grid(config.n), a=config.a)
    problem = spectral_benchmark(scale, source)
    alphas = config.grid.to_grid().alphas
    psi = source.psi(alphas, scale.a)
    rows, by_delta = [], []
    for delta in deltas:
        data = problem.noisy_data(delta, seed)
        best = 0.0
        for alpha, psi_value, reconstruction in zip(alphas, psi, problem.solve_path(data, config.grid.to_grid())):
            error = float(np.linalg.norm(scale.coefficients(reconstruction.x) - problem.x_dag_coefficients))
            noise_term = delta / float(na(alpha))
            rows.append(ScanRow(delta, float(alpha), error, float(psi_value), noise_term))
            if psi_value > 0:
                best = max(best, (error - noise_term) / psi_value)
        by_delta.append((delta, best))
    c1 = max(value for _, value in by_delta)
    return ErrorScanReport(samples=tuple(rows), c1=c1, c1_by_delta=tuple(by_delta))

