import logging
import math
from dataclasses import dataclass
from typing import Self

import numpy as np

from tikhonov_hs.hilbert_scale import Grid, GridFunction, HilbertScale

log = logging.getLogger(__name__)

EXPONENT_LIMIT = 700.0


class ForwardOverflowError(OverflowError):
    pass


class ForwardModel:
    """Common interface of the forward operators the solver can work with."""

    name = "abstract"

    def __init__(self, scale: HilbertScale) -> None:
        self.scale = scale

    @property
    def grid(self) -> Grid:
        return self.scale.grid

    def __repr__(self) -> str:
        return f"<{type(self).__name__}: n={self.grid.n}>"

    def forward(self, x: GridFunction) -> GridFunction:
        raise NotImplementedError

    def derivative_apply(self, x: GridFunction, h: GridFunction) -> GridFunction:
        raise NotImplementedError

    def derivative_adjoint(self, x: GridFunction, g: GridFunction) -> GridFunction:
        raise NotImplementedError

    def jacobian(self, x: GridFunction) -> np.ndarray:
        """Dense matrix of h -> F'(x)h on nodal values."""
        raise NotImplementedError


class ExponentialGrowthModel(ForwardModel):
    """F(x)(t) = exp(int_0^t x), the solution of y' = x y, y(0) = 1."""

    name = "exp_growth"

    def _exponent(self, x: GridFunction) -> np.ndarray:
        exponent = self.scale.apply_J(x).values
        peak = float(np.max(exponent))
        if peak > EXPONENT_LIMIT:
            raise ForwardOverflowError(f"exponent {peak:.1f} exceeds {EXPONENT_LIMIT:.0f}")
        return exponent

    def forward(self, x: GridFunction) -> GridFunction:
        return GridFunction(self.grid, np.exp(self._exponent(x)))

    def derivative_apply(self, x: GridFunction, h: GridFunction) -> GridFunction:
        return self.forward(x) * self.scale.apply_J(h)

    def derivative_adjoint(self, x: GridFunction, g: GridFunction) -> GridFunction:
        return self.scale.apply_J_adjoint(self.forward(x) * g)

    def jacobian(self, x: GridFunction) -> np.ndarray:
        return self.forward(x).values[:, None] * self.scale.integration_matrix

    def invert(self, y: GridFunction) -> GridFunction:
        """Pre-image x = y'/y of strictly positive data, by central differences."""
        if np.any(y.values <= 0):
            raise ValueError("data must be strictly positive to be inverted")
        derivative = np.gradient(np.log(y.values), self.grid.nodes, edge_order=2)
        return GridFunction(self.grid, derivative)


class LinearSurrogateModel(ForwardModel):
    """F replaced by the integration operator J itself."""

    name = "linear_surrogate"

    def forward(self, x: GridFunction) -> GridFunction:
        return self.scale.apply_J(x)

    def derivative_apply(self, x: GridFunction, h: GridFunction) -> GridFunction:
        return self.scale.apply_J(h)

    def derivative_adjoint(self, x: GridFunction, g: GridFunction) -> GridFunction:
        return self.scale.apply_J_adjoint(g)

    def jacobian(self, x: GridFunction) -> np.ndarray:
        return np.array(self.scale.integration_matrix)


MODELS: dict[str, type[ForwardModel]] = {
    ExponentialGrowthModel.name: ExponentialGrowthModel,
    LinearSurrogateModel.name: LinearSurrogateModel,
}


def make_model(problem: str, scale: HilbertScale) -> ForwardModel:
    try:
        return MODELS[problem](scale)
    except KeyError:
        raise ValueError(f"unknown problem: {problem}") from None


def constant_solution(grid: Grid) -> GridFunction:
    return GridFunction.constant(grid, 1.0)


def parabola_solution(grid: Grid) -> GridFunction:
    return GridFunction.from_callable(grid, lambda t: -((t - 0.5) ** 2) + 0.25)


SOLUTIONS = {
    "one": constant_solution,
    "parabola": parabola_solution,
}


@dataclass(frozen=True)
class NonlinearityProfile:
    a: float
    r: float
    k0: float
    K0: float
    c_a: float
    C_a: float

    def __post_init__(self) -> None:
        if not 0 < self.r < 1:
            raise ValueError("the ball radius must lie in (0, 1)")
        if not 0 < self.k0 <= self.K0:
            raise ValueError("multiplier bounds must satisfy 0 < k0 <= K0")
        if not 0 < self.c_a <= self.C_a:
            raise ValueError("chain constants must satisfy 0 < c_a <= C_a")

    @classmethod
    def from_solution(cls, x_dag: GridFunction, r: float = 0.5, a: float = 1.0) -> Self:
        size = x_dag.norm()
        k0, K0 = math.exp(-size), math.exp(size)
        return cls(a=a, r=r, k0=k0, K0=K0, c_a=k0 / (1 + r), C_a=K0 / (1 - r))


@dataclass(frozen=True)
class TccReport:
    lhs: float
    mid: float
    rhs_lower: float
    rhs_upper: float
    image: float


def tcc_report(
    model: ExponentialGrowthModel, x: GridFunction, x_dag: GridFunction, profile: NonlinearityProfile
) -> TccReport:
    difference = x - x_dag
    image = model.forward(x) - model.forward(x_dag)
    remainder = image - model.derivative_apply(x_dag, difference)
    # ||.||_{-1} = ||J .|| holds exactly for the integration operator
    weak = model.scale.apply_J(difference).norm()
    return TccReport(
        lhs=remainder.norm(),
        mid=difference.norm() * image.norm(),
        rhs_lower=profile.c_a * weak,
        rhs_upper=profile.C_a * weak,
        image=image.norm(),
    )


def explosion_sequence(grid: Grid, n: int, delta: float) -> GridFunction:
    """Pre-image of F(1) + delta sin(nt): stays delta-close in data, unbounded as n grows."""
    if n < 0 or delta <= 0:
        raise ValueError("need n >= 0 and delta > 0")
    t = grid.nodes
    return GridFunction(grid, (np.exp(t) + n * delta * np.cos(n * t)) / (np.exp(t) + delta * np.sin(n * t)))
