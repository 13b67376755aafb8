import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Literal, Self

import numpy as np

log = logging.getLogger(__name__)

# relative to the largest coefficient; below it a coefficient counts as numerical noise
NOISE_FLOOR = 1e-10
MIN_FIT_COEFFICIENTS = 8
TAIL_TOLERANCE = 0.01


class GridMismatchError(ValueError):
    pass


class SpectralTailError(ValueError):
    pass


class DegenerateFitError(ValueError):
    pass


@dataclass(frozen=True)
class Grid:
    """Uniform grid t_0=0 < ... < t_n=1 with trapezoid quadrature."""

    n: int = 1000

    def __post_init__(self) -> None:
        if not isinstance(self.n, int) or self.n < 1:
            raise ValueError("the grid needs at least one interval")

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @cached_property
    def nodes(self) -> np.ndarray:
        nodes = np.linspace(0.0, 1.0, self.n + 1)
        nodes.flags.writeable = False
        return nodes

    @cached_property
    def weights(self) -> np.ndarray:
        weights = np.full(self.n + 1, self.h)
        weights[0] = weights[-1] = self.h / 2
        weights.flags.writeable = False
        return weights

    def inner(self, u: np.ndarray, v: np.ndarray) -> float:
        return float(np.dot(self.weights * u, v))

    def norm(self, u: np.ndarray) -> float:
        return math.sqrt(max(self.inner(u, u), 0.0))


class GridFunction:
    """Nodal values of an element of L^2(0,1) on a grid."""

    __array_priority__ = 1000

    def __init__(self, grid: Grid, values) -> None:
        values = np.array(values, dtype=float)
        if values.shape != (grid.n + 1,):
            raise GridMismatchError(f"expected {grid.n + 1} values, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("values must be finite")
        values.flags.writeable = False
        self._grid = grid
        self._values = values

    @classmethod
    def from_callable(cls, grid: Grid, fn: Callable[[np.ndarray], np.ndarray]) -> Self:
        return cls(grid, np.broadcast_to(fn(grid.nodes), grid.nodes.shape))

    @classmethod
    def constant(cls, grid: Grid, value: float) -> Self:
        return cls(grid, np.full(grid.n + 1, float(value)))

    @classmethod
    def zeros(cls, grid: Grid) -> Self:
        return cls.constant(grid, 0.0)

    @property
    def grid(self) -> Grid:
        return self._grid

    @property
    def values(self) -> np.ndarray:
        return self._values

    def __repr__(self) -> str:
        return f"<GridFunction: n={self._grid.n}, norm={self.norm():.6g}>"

    def __len__(self) -> int:
        return len(self._values)

    def _other_values(self, other) -> np.ndarray | float:
        if isinstance(other, GridFunction):
            if other.grid != self._grid:
                raise GridMismatchError("the functions live on different grids")
            return other.values
        return float(other)

    def __add__(self, other) -> "GridFunction":
        return GridFunction(self._grid, self._values + self._other_values(other))

    __radd__ = __add__

    def __sub__(self, other) -> "GridFunction":
        return GridFunction(self._grid, self._values - self._other_values(other))

    def __rsub__(self, other) -> "GridFunction":
        return GridFunction(self._grid, self._other_values(other) - self._values)

    def __mul__(self, other) -> "GridFunction":
        return GridFunction(self._grid, self._values * self._other_values(other))

    __rmul__ = __mul__

    def __neg__(self) -> "GridFunction":
        return GridFunction(self._grid, -self._values)

    def inner(self, other: "GridFunction") -> float:
        return self._grid.inner(self._values, self._other_values(other))

    def norm(self) -> float:
        return self._grid.norm(self._values)

    def distance(self, other: "GridFunction") -> float:
        return self._grid.norm(self._values - self._other_values(other))

    def with_boundary_zero(self) -> "GridFunction":
        values = self._values.copy()
        values[-1] = 0.0
        return GridFunction(self._grid, values)


@dataclass(frozen=True)
class SourceCondition:
    kind: Literal["holder", "logarithmic", "none"] = "holder"
    p: float = 0.5
    mu: float = 1.0
    k_const: float = 1.0

    def __post_init__(self) -> None:
        if self.kind == "holder" and not 0 < self.p <= 1:
            raise ValueError("a holder source condition needs 0 < p <= 1")
        if self.kind == "logarithmic" and (self.mu <= 0 or self.k_const <= 0):
            raise ValueError("a logarithmic source condition needs mu > 0 and K > 0")
        if self.kind not in ("holder", "logarithmic", "none"):
            raise ValueError(f"unknown source condition: {self.kind}")

    def psi(self, t, a: float) -> np.ndarray:
        """Index function of the source condition evaluated at t > 0 (eigenvalues of G or alpha)."""
        t = np.asarray(t, dtype=float)
        if self.kind == "holder":
            return t ** (self.p / (2 * a + 2))
        if self.kind == "logarithmic":
            small = np.minimum(t, math.exp(-1.0))
            return self.k_const * np.log(1.0 / small) ** (-self.mu)
        raise ValueError("no index function for source kind none")

    def synthesize(self, scale: "HilbertScale", w: np.ndarray) -> np.ndarray:
        """Spectral coefficients of psi(G) w for coefficients w of the source element."""
        return self.psi(scale.g_values, scale.a) * np.asarray(w, dtype=float)


class HilbertScale:
    """Hilbert scale generated by B = (J*J)^{-1/2} for the integration operator J on [0,1].

    The singular system of J is taken analytically: sigma_k = 1/((k-1/2)pi),
    u_k(t) = sqrt(2) cos((k-1/2)pi t), v_k(t) = sqrt(2) sin((k-1/2)pi t), so that
    J u_k = sigma_k v_k and B u_k = u_k / sigma_k. Only the first ``spectral_rank``
    pairs are retained.
    """

    def __init__(self, grid: Grid, a: float = 1.0, spectral_rank: int | None = None) -> None:
        if a <= 0:
            raise ValueError("the degree of ill-posedness must be positive")
        rank = spectral_rank if spectral_rank is not None else max(1, grid.n // 10)
        if not 1 <= rank <= grid.n:
            raise ValueError("the spectral rank must lie in [1, n]")
        self.grid = grid
        self.a = float(a)
        self.spectral_rank = rank

    def __repr__(self) -> str:
        return f"<HilbertScale: n={self.grid.n}, a={self.a}, K={self.spectral_rank}>"

    @cached_property
    def frequencies(self) -> np.ndarray:
        return (np.arange(1, self.spectral_rank + 1) - 0.5) * math.pi

    @cached_property
    def singular_values(self) -> np.ndarray:
        return 1.0 / self.frequencies

    @cached_property
    def b_values(self) -> np.ndarray:
        return self.frequencies

    @cached_property
    def g_values(self) -> np.ndarray:
        # eigenvalues of G = B^{-(2a+2)}
        return self.b_values ** (-(2 * self.a + 2))

    @cached_property
    def eigenfunctions(self) -> np.ndarray:
        basis = math.sqrt(2.0) * np.cos(np.outer(self.frequencies, self.grid.nodes))
        basis.flags.writeable = False
        return basis

    @cached_property
    def right_singular_functions(self) -> np.ndarray:
        basis = math.sqrt(2.0) * np.sin(np.outer(self.frequencies, self.grid.nodes))
        basis.flags.writeable = False
        return basis

    @cached_property
    def integration_matrix(self) -> np.ndarray:
        """Dense matrix of the cumulative trapezoid rule, row i integrates up to t_i."""
        n, h = self.grid.n, self.grid.h
        matrix = np.tril(np.full((n + 1, n + 1), h))
        np.fill_diagonal(matrix, h / 2)
        matrix[:, 0] = h / 2
        matrix[0, 0] = 0.0
        matrix.flags.writeable = False
        return matrix

    @cached_property
    def penalty_matrix(self) -> np.ndarray:
        """Gram matrix W + D^T D of the discrete H^1 norm (forward differences)."""
        n, h = self.grid.n, self.grid.h
        matrix = np.diag(self.grid.weights.copy())
        main = np.full(n + 1, 2.0 / h)
        main[0] = main[-1] = 1.0 / h
        matrix += np.diag(main) - np.diag(np.full(n, 1.0 / h), 1) - np.diag(np.full(n, 1.0 / h), -1)
        matrix.flags.writeable = False
        return matrix

    def _check(self, x: GridFunction) -> None:
        if x.grid != self.grid:
            raise GridMismatchError(f"expected a function on n={self.grid.n}, got n={x.grid.n}")

    def apply_J(self, h: GridFunction) -> GridFunction:
        self._check(h)
        v = h.values
        increments = self.grid.h / 2 * (v[1:] + v[:-1])
        return GridFunction(self.grid, np.concatenate(([0.0], np.cumsum(increments))))

    def apply_J_adjoint(self, g: GridFunction) -> GridFunction:
        # W^{-1} J^T W g, the adjoint of apply_J in the trapezoid inner product.
        # It matches the integral of g over [t, 1] only to O(h): g = 1 gives 1 - h/2 at t_0 and h/2 at t_n.
        self._check(g)
        h = self.grid.h
        u = self.grid.weights * g.values
        tail = np.concatenate((np.cumsum(u[::-1])[::-1][1:], [0.0]))
        transposed = h / 2 * u + h * tail
        transposed[0] = h / 2 * tail[0]
        return GridFunction(self.grid, transposed / self.grid.weights)

    def coefficients(self, x: GridFunction) -> np.ndarray:
        self._check(x)
        return self.eigenfunctions @ (self.grid.weights * x.values)

    def synthesize(self, coefficients: np.ndarray) -> GridFunction:
        coefficients = np.asarray(coefficients, dtype=float)
        if coefficients.shape != (self.spectral_rank,):
            raise ValueError(f"expected {self.spectral_rank} coefficients")
        return GridFunction(self.grid, coefficients @ self.eigenfunctions)

    def norm_tau(self, x: GridFunction, tau: float) -> float:
        coefficients = self.coefficients(x)
        if tau > 0:
            energy = x.norm() ** 2
            tail = energy - float(np.sum(coefficients**2))
            if energy > 0 and tail > TAIL_TOLERANCE * energy:
                raise SpectralTailError(
                    f"spectral truncation loses {tail / energy:.1%} of the energy, norm of order {tau} is unreliable"
                )
        return math.sqrt(float(np.sum(self.b_values ** (2 * tau) * coefficients**2)))

    def h1_penalty_norm(self, x: GridFunction) -> float:
        self._check(x)
        v = x.values
        derivative = np.diff(v) / self.grid.h
        return math.sqrt(self.grid.inner(v, v) + self.grid.h * float(np.dot(derivative, derivative)))

    def auxiliary_element(self, x_dag: GridFunction, x_bar: GridFunction, alpha: float) -> GridFunction:
        """x_dag - alpha (G + alpha I)^{-1} (x_dag - x_bar), computed spectrally.

        The part of x_dag - x_bar outside the retained modes sees G = 0 and is removed entirely.
        """
        if alpha <= 0:
            raise ValueError("alpha must be positive")
        difference = x_dag - x_bar
        coefficients = self.coefficients(difference)
        retained = self.synthesize(coefficients)
        outside = difference - retained
        filtered = self.synthesize(alpha / (self.g_values + alpha) * coefficients)
        return x_dag - filtered - outside

    def estimate_smoothness(self, x: GridFunction) -> float:
        """Fit |<x,u_k>| ~ b_k^{-p-1/2} and return p."""
        amplitudes = np.abs(self.coefficients(x))
        peak = float(amplitudes.max(initial=0.0))
        if peak == 0.0:
            raise DegenerateFitError("the function has no spectral content")
        usable = amplitudes > NOISE_FLOOR * peak
        if int(usable.sum()) < MIN_FIT_COEFFICIENTS:
            raise DegenerateFitError(
                f"only {int(usable.sum())} usable coefficients, need {MIN_FIT_COEFFICIENTS}"
            )
        slope, _ = np.polyfit(np.log(self.b_values[usable]), np.log(amplitudes[usable]), 1)
        p = -float(slope) - 0.5
        log.debug("smoothness fit over %d coefficients: p=%.4f", int(usable.sum()), p)
        return p
