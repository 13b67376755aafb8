import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Any, Callable, Literal, Self, Sequence

import numpy as np
import scipy.optimize

from tikhonov_hs.hilbert_scale import GridFunction, SourceCondition
from tikhonov_hs.tikhonov_solver import Reconstruction

log = logging.getLogger(__name__)

IndexFunction = Callable[[np.ndarray], np.ndarray]
Variant = Literal["first", "standard", "third"]

POINTS_PER_DECADE = 200
INFIMUM_RANGE = (1e-40, 1e10)
# 1e-3 relative in alpha, measured in log10(alpha)
INFIMUM_XATOL = 1e-3 / math.log(10)


class SelectionError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseAmplification:
    """lambda(alpha) = alpha^b / kappa."""

    b: float
    kappa: float = 1.0

    def __post_init__(self) -> None:
        if self.b <= 0:
            raise ValueError("the exponent b must be positive")
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")

    @classmethod
    def from_chain(cls, a: float, c_a: float | None = None) -> Self:
        kappa = 1.0 if c_a is None else max(1.0, 2.0 / c_a)
        return cls(b=a / (2 * a + 2), kappa=kappa)

    def __call__(self, alpha):
        return np.asarray(alpha, dtype=float) ** self.b / self.kappa


def lambda_fn(alpha: float, na: NoiseAmplification) -> float:
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    return float(na(alpha))


def beta_min(q: float, b: float) -> float:
    if q <= 1 or b <= 0:
        raise ValueError("need q > 1 and b > 0")
    return 1.0 + q ** (-b)


@dataclass(frozen=True)
class ParameterGrid:
    alpha0: float = 1e-11
    q: float = 10 ** (1 / 32)
    count: int = 321
    c_e: float | None = None
    c_f: float | None = None
    c_g: float | None = None

    def __post_init__(self) -> None:
        if self.alpha0 <= 0:
            raise ValueError("alpha0 must be positive")
        if self.q <= 1:
            raise ValueError("the spacing q must be greater than 1")
        if self.count < 1:
            raise ValueError("the grid needs at least one point")

    @classmethod
    def covering(cls, alpha_min: float, alpha_max: float, q: float) -> Self:
        count = int(math.floor(math.log(alpha_max / alpha_min) / math.log(q) + 1e-9)) + 1
        return cls(alpha0=alpha_min, q=q, count=count)

    @cached_property
    def alphas(self) -> np.ndarray:
        alphas = self.alpha0 * self.q ** np.arange(self.count)
        alphas.flags.writeable = False
        return alphas

    def __len__(self) -> int:
        return self.count

    def validate_endpoints(self, delta: float, b: float) -> None:
        """alpha_0 <= c_e delta^{1/b} and c_f <= alpha_N <= c_g, for the bounds that are set."""
        alpha_n = float(self.alphas[-1])
        if self.c_e is not None and self.alpha0 > self.c_e * delta ** (1 / b):
            raise ValueError(f"c_e: alpha0={self.alpha0:.3e} exceeds c_e*delta^(1/b)={self.c_e * delta ** (1 / b):.3e}")
        if self.c_f is not None and alpha_n < self.c_f:
            raise ValueError(f"c_f: alpha_N={alpha_n:.3e} is below c_f={self.c_f:.3e}")
        if self.c_g is not None and alpha_n > self.c_g:
            raise ValueError(f"c_g: alpha_N={alpha_n:.3e} is above c_g={self.c_g:.3e}")


@dataclass(frozen=True)
class BalancingConfig:
    beta: float | None = None
    gamma: float = 1.0
    variant: Variant = "first"
    c_bp: float | None = None

    def __post_init__(self) -> None:
        if (self.beta is None) == (self.c_bp is None):
            raise ValueError("exactly one of beta and c_bp must be given")
        if self.beta is not None and self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.c_bp is not None and self.c_bp <= 0:
            raise ValueError("c_bp must be positive")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if self.variant not in ("first", "standard", "third"):
            raise ValueError(f"unknown balancing variant: {self.variant}")

    def threshold(self, alpha: float, delta: float, na: NoiseAmplification) -> float:
        if self.c_bp is not None:
            return self.c_bp * delta / alpha**na.b
        return self.beta * delta / float(na(alpha))

    def check(self, alphas: Sequence[float], na: NoiseAmplification) -> None:
        if self.beta is None or len(alphas) < 2:
            return
        q = alphas[1] / alphas[0]
        if self.beta <= beta_min(q, na.b):
            raise ValueError(f"beta={self.beta} must exceed 1 + q^(-b) = {beta_min(q, na.b):.6f}")

    def max_gamma(self, q: float, b: float) -> float:
        """Largest tuning parameter for which the oracle set is contained in the balancing sets."""
        if self.beta is None:
            raise ValueError("the gamma bound needs beta")
        return min(self.beta / beta_min(q, b) - 1.0, 1.0)


@dataclass(frozen=True)
class Comparison:
    i: int
    j: int
    lhs: float
    rhs: float
    passed: bool


@dataclass(frozen=True, eq=False)
class SelectionResult:
    alpha_star: float
    index: int
    rule: str
    trace: tuple[Comparison, ...]
    terminated_at_N: bool
    alphas: tuple[float, ...]
    reconstruction: Reconstruction | None = None

    def to_record(self) -> dict[str, Any]:
        return {
            "rule": self.rule,
            "alphas": list(self.alphas),
            "alpha_star": self.alpha_star,
            "index": self.index,
            "terminated_at_N": self.terminated_at_N,
            "comparisons": [
                {"i": c.i, "j": c.j, "lhs": c.lhs, "rhs": c.rhs, "passed": c.passed} for c in self.trace
            ],
        }


class _Distances:
    def __init__(self, path: Sequence[Reconstruction]) -> None:
        self._path = path
        self._cache: dict[tuple[int, int], float] = {}

    def __call__(self, i: int, j: int) -> float:
        key = (min(i, j), max(i, j))
        if key not in self._cache:
            self._cache[key] = self._path[i].x.distance(self._path[j].x)
        return self._cache[key]


def _require(path: Sequence[Reconstruction], minimum: int = 1) -> tuple[float, ...]:
    if len(path) < minimum:
        raise SelectionError(f"the rule needs at least {minimum} reconstructions, got {len(path)}")
    return tuple(float(r.alpha) for r in path)


def _result(
    path: Sequence[Reconstruction], index: int, rule: str, trace: list[Comparison], alphas: tuple[float, ...]
) -> SelectionResult:
    log.debug("%s selected alpha=%.4e (index %d of %d)", rule, alphas[index], index, len(alphas) - 1)
    return SelectionResult(
        alpha_star=alphas[index],
        index=index,
        rule=rule,
        trace=tuple(trace),
        terminated_at_N=index == len(alphas) - 1,
        alphas=alphas,
        reconstruction=path[index],
    )


def balancing_first(
    path: Sequence[Reconstruction], delta: float, config: BalancingConfig, na: NoiseAmplification
) -> SelectionResult:
    """Largest alpha_k whose consecutive differences all stay below the thresholds, scanning up from k=0."""
    alphas = _require(path)
    config.check(alphas, na)
    distance = _Distances(path)
    trace: list[Comparison] = []
    k = 0
    for j in range(1, len(path)):
        lhs, rhs = distance(j, j - 1), config.threshold(alphas[j - 1], delta, na)
        trace.append(Comparison(j - 1, j, lhs, rhs, lhs <= rhs))
        if lhs > rhs:
            break
        k = j
    return _result(path, k, "balancing_first", trace, alphas)


def balancing_standard(
    path: Sequence[Reconstruction], delta: float, config: BalancingConfig, na: NoiseAmplification
) -> SelectionResult:
    alphas = _require(path)
    config.check(alphas, na)
    distance = _Distances(path)
    trace: list[Comparison] = []
    for k in range(len(path) - 1, -1, -1):
        for j in range(k):
            lhs, rhs = distance(k, j), config.threshold(alphas[j], delta, na)
            trace.append(Comparison(j, k, lhs, rhs, lhs <= rhs))
            if lhs > rhs:
                break
        else:
            return _result(path, k, "balancing_standard", trace, alphas)
    raise AssertionError("k = 0 always belongs to the balancing set")


def balancing_third(
    path: Sequence[Reconstruction], delta: float, config: BalancingConfig, na: NoiseAmplification
) -> SelectionResult:
    alphas = _require(path)
    config.check(alphas, na)
    distance = _Distances(path)
    trace: list[Comparison] = []
    k = 0
    for m in range(1, len(path)):
        violated = False
        for i in range(m):
            lhs, rhs = distance(i, m), config.threshold(alphas[i], delta, na)
            trace.append(Comparison(i, m, lhs, rhs, lhs <= rhs))
            if lhs > rhs:
                violated = True
                break
        if violated:
            break
        k = m
    return _result(path, k, "balancing_third", trace, alphas)


BALANCING_RULES = {
    "first": balancing_first,
    "standard": balancing_standard,
    "third": balancing_third,
}


def balancing(
    path: Sequence[Reconstruction], delta: float, config: BalancingConfig, na: NoiseAmplification
) -> SelectionResult:
    return BALANCING_RULES[config.variant](path, delta, config, na)


def balancing_set(
    path: Sequence[Reconstruction],
    delta: float,
    config: BalancingConfig,
    na: NoiseAmplification,
    variant: Variant | None = None,
) -> list[int]:
    """Every index of the balancing set by exhaustive scan; the standard set may have gaps."""
    alphas = _require(path)
    distance = _Distances(path)
    variant = variant or config.variant
    count = len(path)

    def ok(i: int, j: int) -> bool:
        return distance(i, j) <= config.threshold(alphas[i], delta, na)

    if variant == "first":
        members, prefix = [], True
        for k in range(count):
            prefix = prefix and (k == 0 or ok(k - 1, k))
            if prefix:
                members.append(k)
        return members
    if variant == "standard":
        return [k for k in range(count) if all(ok(j, k) for j in range(k))]
    if variant == "third":
        members, prefix = [], True
        for k in range(count):
            prefix = prefix and all(ok(i, k) for i in range(k))
            if prefix:
                members.append(k)
        return members
    raise ValueError(f"unknown balancing variant: {variant}")


def oracle_set(
    phi: IndexFunction, delta: float, grid: ParameterGrid | Sequence[float], gamma: float, na: NoiseAmplification
) -> list[float]:
    """{alpha in grid : phi(alpha) <= gamma delta / lambda(alpha)}."""
    alphas = np.asarray(grid.alphas if isinstance(grid, ParameterGrid) else grid, dtype=float)
    inside = np.asarray(phi(alphas)) <= gamma * delta / na(alphas)
    return [float(alpha) for alpha in alphas[inside]]


def discrepancy_principle(path: Sequence[Reconstruction], delta: float, c_dp: float) -> SelectionResult:
    """Grid point whose residual is closest to c_dp*delta from below, larger alpha on ties."""
    alphas = _require(path)
    if c_dp <= 0:
        raise ValueError("c_dp must be positive")
    target = c_dp * delta
    trace: list[Comparison] = []
    best = None
    for k, reconstruction in enumerate(path):
        passed = reconstruction.residual_norm <= target
        trace.append(Comparison(k, k, reconstruction.residual_norm, target, passed))
        if passed and (best is None or reconstruction.residual_norm >= path[best].residual_norm):
            best = k
    if best is None:
        smallest = min(r.residual_norm for r in path)
        raise SelectionError(f"residual target unreachable: smallest residual {smallest:.4e} above {target:.4e}")
    return _result(path, best, "discrepancy", trace, alphas)


def quasi_optimality_heuristic(path: Sequence[Reconstruction]) -> SelectionResult:
    """alpha_k minimizing ||x_{k+1} - x_k||; needs no noise level."""
    alphas = _require(path, 2)
    distance = _Distances(path)
    differences = [distance(k, k + 1) for k in range(len(path) - 1)]
    smallest = min(differences)
    best = max(k for k, d in enumerate(differences) if d == smallest)
    trace = [Comparison(k, k + 1, d, smallest, k == best) for k, d in enumerate(differences)]
    return _result(path, best, "quasi_optimality", trace, alphas)


def leonov_heuristic(path: Sequence[Reconstruction], delta: float, na: NoiseAmplification) -> SelectionResult:
    """alpha_{i-1} minimizing ||x_i - x_{i-1}|| + delta / lambda(alpha_{i-1})."""
    alphas = _require(path, 2)
    distance = _Distances(path)
    scores = [distance(i, i - 1) + delta / float(na(alphas[i - 1])) for i in range(1, len(path))]
    smallest = min(scores)
    best = max(k for k, s in enumerate(scores) if s == smallest)
    trace = [Comparison(k, k + 1, s, smallest, k == best) for k, s in enumerate(scores)]
    return _result(path, best, "leonov", trace, alphas)


def oracle_alpha(path: Sequence[Reconstruction], x_dag: GridFunction) -> SelectionResult:
    alphas = _require(path)
    errors = [r.x.distance(x_dag) for r in path]
    smallest = min(errors)
    best = max(k for k, e in enumerate(errors) if e == smallest)
    trace = [Comparison(k, k, e, smallest, k == best) for k, e in enumerate(errors)]
    return _result(path, best, "oracle", trace, alphas)


def a_priori_alpha(delta: float, a: float, source: SourceCondition) -> float:
    if not delta > 0:
        raise ValueError("the noise level must be positive")
    if source.kind == "holder":
        return delta ** ((2 * a + 2) / (a + source.p))
    if source.kind == "logarithmic":
        return delta
    raise ValueError("an a priori choice needs a source condition")


@dataclass(frozen=True)
class ErrorConstant:
    tau_opt: float
    c_h: float
    c2: float


def error_constant(variant: Variant, q: float, b: float, gamma: float = 1.0) -> ErrorConstant:
    """Error constant c_2 = q^b (gamma + c_h) / gamma at the smallest admissible tau_L."""
    if q <= 1 or b <= 0:
        raise ValueError("need q > 1 and b > 0")
    if not 0 < gamma <= 1:
        raise ValueError("gamma must lie in (0, 1]")
    shrink = q ** (-b)
    tau = (gamma + 1) * (1 + shrink)
    if variant == "first":
        c_h = 1 + tau / (1 - shrink)
    elif variant in ("standard", "third"):
        c_h = 1 + tau
    else:
        raise ValueError(f"unknown balancing variant: {variant}")
    return ErrorConstant(tau_opt=tau, c_h=c_h, c2=q**b * (gamma + c_h) / gamma)


def lepskii_constant(q: float, b: float) -> ErrorConstant:
    """The classical grid independent choice tau_L = 4 for the standard variant."""
    if q <= 1 or b <= 0:
        raise ValueError("need q > 1 and b > 0")
    return ErrorConstant(tau_opt=4.0, c_h=5.0, c2=6 * q**b)


def oracle_lemma_constant(b: float, c: float, d: float, d_factor: float) -> float:
    if d_factor < 1:
        raise ValueError("the spacing factor must be at least 1")
    return d_factor**b * (1 + max(c, d))


def bound_infimum(
    phi: IndexFunction,
    delta: float,
    na: NoiseAmplification,
    alpha_range: tuple[float, float] | None = None,
) -> float:
    """inf of phi(alpha) + delta/lambda(alpha) over alpha_range (all alpha > 0 by default)."""
    low, high = (math.log10(v) for v in (alpha_range or INFIMUM_RANGE))
    if low > high:
        raise ValueError("empty alpha range")

    def bound(log_alpha):
        alpha = 10.0 ** np.asarray(log_alpha, dtype=float)
        return np.asarray(phi(alpha), dtype=float) + delta / na(alpha)

    logs = np.linspace(low, high, max(int(math.ceil((high - low) * POINTS_PER_DECADE)) + 1, 2))
    values = bound(logs)
    best = int(np.argmin(values))
    left, right = logs[max(best - 1, 0)], logs[min(best + 1, len(logs) - 1)]
    refined = scipy.optimize.minimize_scalar(
        lambda s: float(bound(s)), bounds=(left, right), method="bounded", options={"xatol": INFIMUM_XATOL}
    )
    return float(min(values[best], refined.fun))


def quasi_optimality_check(
    selection: SelectionResult,
    x_dag: GridFunction,
    phi: IndexFunction,
    delta: float,
    na: NoiseAmplification,
    c2: float,
    alpha_range: tuple[float, float] | None = None,
) -> bool:
    if selection.reconstruction is None:
        raise ValueError("the selection carries no reconstruction")
    error = selection.reconstruction.x.distance(x_dag)
    bound = c2 * bound_infimum(phi, delta, na, alpha_range)
    log.debug("%s: error %.4e against bound %.4e", selection.rule, error, bound)
    return error <= bound
