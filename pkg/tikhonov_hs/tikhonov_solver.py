import logging
import math
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Iterable, Literal

import numpy as np
import scipy.linalg
import scipy.optimize

from tikhonov_hs.forward_model import ForwardModel, ForwardOverflowError
from tikhonov_hs.hilbert_scale import GridFunction, HilbertScale

if TYPE_CHECKING:
    from tikhonov_hs.parameter_choice import ParameterGrid

log = logging.getLogger(__name__)

# relative precision of the functional value below which a full step counts as no change
ROUNDOFF = 64 * np.finfo(float).eps


@dataclass(frozen=True)
class SolverConfig:
    max_iterations: int = 200
    gradient_tolerance: float = 1e-8
    initial_guess: GridFunction | None = None
    shrink: float = 0.5
    sufficient_decrease: float = 1e-4
    min_step: float = 1e-12
    method: Literal["gauss_newton", "lbfgs"] = "gauss_newton"

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.gradient_tolerance <= 0 or self.min_step <= 0:
            raise ValueError("tolerances must be positive")
        if not 0 < self.shrink < 1 or not 0 < self.sufficient_decrease < 1:
            raise ValueError("line search parameters must lie in (0, 1)")
        if self.method not in ("gauss_newton", "lbfgs"):
            raise ValueError(f"unknown method: {self.method}")


@dataclass(frozen=True, eq=False)
class Reconstruction:
    x: GridFunction
    alpha: float
    residual_norm: float
    penalty_norm: float
    functional_value: float
    iterations: int = 0
    converged: bool = True
    history: tuple[float, ...] = field(default=(), repr=False)
    error: str | None = None


class TikhonovSolver:
    """Minimizes ||F(x) - y||^2 + alpha ||x - x_bar||_{H^1}^2 subject to x(1) = 0.

    The constraint removes the last nodal value from the unknowns; gradients are taken
    with respect to the remaining n nodal values.
    """

    def __init__(self, model: ForwardModel, config: SolverConfig | None = None) -> None:
        self.model = model
        self.scale: HilbertScale = model.scale
        self.grid = model.grid
        self.config = config or SolverConfig()

    def __repr__(self) -> str:
        return f"<TikhonovSolver: {self.model!r}, {self.config.method}>"

    def _full(self, free: np.ndarray) -> GridFunction:
        return GridFunction(self.grid, np.append(free, 0.0))

    def _check_alpha(self, alpha: float) -> None:
        if not alpha > 0:
            raise ValueError("alpha must be positive")

    def functional_value(self, x: GridFunction, y_delta: GridFunction, alpha: float, x_bar: GridFunction) -> float:
        self._check_alpha(alpha)
        residual = self.model.forward(x) - y_delta
        return residual.norm() ** 2 + alpha * self.scale.h1_penalty_norm(x - x_bar) ** 2

    def functional_gradient(
        self, x: GridFunction, y_delta: GridFunction, alpha: float, x_bar: GridFunction
    ) -> np.ndarray:
        """Partial derivatives of functional_value with respect to the free nodes t_0..t_{n-1}."""
        self._check_alpha(alpha)
        residual = self.model.forward(x) - y_delta
        misfit = self.grid.weights * self.model.derivative_adjoint(x, residual).values
        penalty = self.scale.penalty_matrix @ (x - x_bar).values
        return (2 * misfit + 2 * alpha * penalty)[:-1]

    def _gauss_newton_step(self, x: GridFunction, gradient: np.ndarray, alpha: float) -> np.ndarray:
        jacobian = self.model.jacobian(x)[:, :-1]
        normal = jacobian.T @ (self.grid.weights[:, None] * jacobian)
        normal += alpha * self.scale.penalty_matrix[:-1, :-1]
        try:
            factor = scipy.linalg.cho_factor(normal)
            return scipy.linalg.cho_solve(factor, -gradient / 2)
        except np.linalg.LinAlgError:
            log.debug("normal matrix not positive definite, using least squares")
            return np.linalg.lstsq(normal, -gradient / 2, rcond=None)[0]

    def _reconstruction(
        self,
        x: GridFunction,
        y_delta: GridFunction,
        alpha: float,
        x_bar: GridFunction,
        iterations: int,
        converged: bool,
        history: Iterable[float],
    ) -> Reconstruction:
        residual_norm = (self.model.forward(x) - y_delta).norm()
        penalty_norm = self.scale.h1_penalty_norm(x - x_bar)
        return Reconstruction(
            x=x,
            alpha=alpha,
            residual_norm=residual_norm,
            penalty_norm=penalty_norm,
            functional_value=residual_norm**2 + alpha * penalty_norm**2,
            iterations=iterations,
            converged=converged,
            history=tuple(history),
        )

    def minimize(
        self, y_delta: GridFunction, alpha: float, x_bar: GridFunction, config: SolverConfig | None = None
    ) -> Reconstruction:
        self._check_alpha(alpha)
        config = config or self.config
        start = (config.initial_guess if config.initial_guess is not None else x_bar).with_boundary_zero()
        # overflow at the starting point aborts
        value = self.functional_value(start, y_delta, alpha, x_bar)
        if config.method == "lbfgs":
            return self._minimize_lbfgs(y_delta, alpha, x_bar, config, start, [value], 0)

        x, history = start, [value]
        for iteration in range(config.max_iterations):
            gradient = self.functional_gradient(x, y_delta, alpha, x_bar)
            if np.max(np.abs(gradient)) <= config.gradient_tolerance:
                return self._reconstruction(x, y_delta, alpha, x_bar, iteration, True, history)
            step = self._gauss_newton_step(x, gradient, alpha)
            slope = float(gradient @ step)
            accepted = None
            t = 1.0
            while slope < 0 and t >= config.min_step:
                trial = self._full(x.values[:-1] + t * step)
                try:
                    trial_value = self.functional_value(trial, y_delta, alpha, x_bar)
                except ForwardOverflowError:
                    trial_value = math.inf
                if trial_value <= value + config.sufficient_decrease * t * slope or (
                    t == 1.0 and trial_value <= value + ROUNDOFF * abs(value)
                ):
                    accepted = trial, trial_value
                    break
                t *= config.shrink
            if accepted is None:
                log.warning("alpha=%.3e: line search stalled after %d iterations, switching to L-BFGS", alpha, iteration)
                return self._minimize_lbfgs(y_delta, alpha, x_bar, config, x, history, iteration)
            x, value = accepted
            history.append(value)
            log.debug("alpha=%.3e iteration=%d value=%.10e step=%.3g", alpha, iteration + 1, value, t)

        gradient = self.functional_gradient(x, y_delta, alpha, x_bar)
        converged = bool(np.max(np.abs(gradient)) <= config.gradient_tolerance)
        if not converged:
            log.warning("alpha=%.3e: no convergence in %d iterations", alpha, config.max_iterations)
        return self._reconstruction(x, y_delta, alpha, x_bar, config.max_iterations, converged, history)

    def _minimize_lbfgs(
        self,
        y_delta: GridFunction,
        alpha: float,
        x_bar: GridFunction,
        config: SolverConfig,
        start: GridFunction,
        history: list[float],
        spent: int,
    ) -> Reconstruction:
        def value_and_gradient(free: np.ndarray) -> tuple[float, np.ndarray]:
            x = self._full(free)
            try:
                return self.functional_value(x, y_delta, alpha, x_bar), self.functional_gradient(
                    x, y_delta, alpha, x_bar
                )
            except ForwardOverflowError:
                return math.inf, np.zeros_like(free)

        def record(free: np.ndarray) -> None:
            history.append(value_and_gradient(free)[0])

        remaining = max(config.max_iterations - spent, 1)
        result = scipy.optimize.minimize(
            value_and_gradient,
            start.values[:-1],
            jac=True,
            method="L-BFGS-B",
            callback=record,
            options={"maxiter": remaining, "gtol": config.gradient_tolerance, "ftol": 1e-15},
        )
        x = self._full(result.x)
        gradient = self.functional_gradient(x, y_delta, alpha, x_bar)
        converged = bool(np.max(np.abs(gradient)) <= config.gradient_tolerance)
        if not converged:
            log.warning("alpha=%.3e: L-BFGS stopped without convergence: %s", alpha, result.message)
        return self._reconstruction(x, y_delta, alpha, x_bar, spent + int(result.nit), converged, history)

    def solve_path(
        self,
        y_delta: GridFunction,
        grid: "ParameterGrid",
        x_bar: GridFunction,
        config: SolverConfig | None = None,
    ) -> list[Reconstruction]:
        """One reconstruction per grid point in increasing alpha, warm started from the largest alpha down."""
        config = config or self.config
        alphas = list(grid.alphas)
        if not alphas:
            raise ValueError("the parameter grid is empty")
        path: list[Reconstruction] = []
        warm = config.initial_guess
        for alpha in reversed(alphas):
            try:
                reconstruction = self.minimize(y_delta, alpha, x_bar, replace(config, initial_guess=warm))
            except (ForwardOverflowError, np.linalg.LinAlgError) as err:
                log.warning("alpha=%.3e failed: %s", alpha, err)
                failed = (warm if warm is not None else x_bar).with_boundary_zero()
                reconstruction = Reconstruction(
                    x=failed,
                    alpha=alpha,
                    residual_norm=math.nan,
                    penalty_norm=self.scale.h1_penalty_norm(failed - x_bar),
                    functional_value=math.nan,
                    converged=False,
                    error=str(err),
                )
                path.append(reconstruction)
                continue
            log.info(
                "alpha=%.3e residual=%.4e penalty=%.4e iterations=%d",
                alpha,
                reconstruction.residual_norm,
                reconstruction.penalty_norm,
                reconstruction.iterations,
            )
            path.append(reconstruction)
            warm = reconstruction.x
        return path[::-1]


class SpectralLinearProblem:
    """Linear model A with singular values sigma_k^a, solved in closed form.

    Tikhonov regularization with the spectral penalty ||B(x - x_bar)||^2 is diagonal in the
    cosine basis of the scale, so every reconstruction is exact. With ||xi|| = 1 the error obeys
    ||x_alpha - x_dag|| <= ||w|| alpha^{p/(2a+2)} + delta / alpha^{a/(2a+2)} whenever
    x_dag - x_bar = B^{-p} w.
    """

    def __init__(
        self,
        scale: HilbertScale,
        x_dag_coefficients: np.ndarray,
        x_bar_coefficients: np.ndarray | None = None,
    ) -> None:
        self.scale = scale
        self.x_dag_coefficients = np.asarray(x_dag_coefficients, dtype=float)
        if self.x_dag_coefficients.shape != (scale.spectral_rank,):
            raise ValueError(f"expected {scale.spectral_rank} coefficients")
        self.x_bar_coefficients = (
            np.zeros(scale.spectral_rank)
            if x_bar_coefficients is None
            else np.asarray(x_bar_coefficients, dtype=float)
        )
        self.operator_values = scale.singular_values**scale.a

    @property
    def x_dag(self) -> GridFunction:
        return self.scale.synthesize(self.x_dag_coefficients)

    def noisy_data(self, delta: float, seed: int) -> np.ndarray:
        if delta < 0:
            raise ValueError("the noise level must be non-negative")
        exact = self.operator_values * self.x_dag_coefficients
        if delta == 0:
            return exact
        rng = np.random.default_rng(seed)
        xi = rng.standard_normal(self.scale.spectral_rank)
        while not np.any(xi):
            xi = rng.standard_normal(self.scale.spectral_rank)
        return exact + delta * xi / np.linalg.norm(xi)

    def minimize(self, data: np.ndarray, alpha: float) -> Reconstruction:
        if not alpha > 0:
            raise ValueError("alpha must be positive")
        s, b2 = self.operator_values, self.scale.b_values**2
        coefficients = (s * data + alpha * b2 * self.x_bar_coefficients) / (s**2 + alpha * b2)
        residual_norm = float(np.linalg.norm(s * coefficients - data))
        penalty_norm = float(np.linalg.norm(self.scale.b_values * (coefficients - self.x_bar_coefficients)))
        return Reconstruction(
            x=self.scale.synthesize(coefficients),
            alpha=float(alpha),
            residual_norm=residual_norm,
            penalty_norm=penalty_norm,
            functional_value=residual_norm**2 + alpha * penalty_norm**2,
        )

    def solve_path(self, data: np.ndarray, grid: "ParameterGrid") -> list[Reconstruction]:
        return [self.minimize(data, alpha) for alpha in grid.alphas]
