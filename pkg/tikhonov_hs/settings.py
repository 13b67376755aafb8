import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping, Self

import yaml

from tikhonov_hs.forward_model import MODELS, SOLUTIONS, ForwardModel, make_model
from tikhonov_hs.hilbert_scale import Grid, GridFunction, HilbertScale
from tikhonov_hs.parameter_choice import BalancingConfig, NoiseAmplification, ParameterGrid, beta_min
from tikhonov_hs.tikhonov_solver import SolverConfig

log = logging.getLogger(__name__)

FEATURED_DELTA = 0.0179
DEFAULT_DELTAS = tuple(FEATURED_DELTA * 2.0**-i for i in range(8))
DEFAULT_C_BP = (0.02, 0.05, 0.1)
FIGURE3_ALPHAS = (9.52e-9, 2.44e-7, 2.12e-5, 1.60e-4)

BALANCING_RULES = ("balancing_first", "balancing_standard", "balancing_third")
RULES = BALANCING_RULES + ("discrepancy", "quasi_optimality", "leonov", "oracle")
EXPERIMENTS = ("single", "path", "table1")


class ConfigError(ValueError):
    pass


def _number(value: Any, name: str, optional: bool = False) -> float | None:
    if value is None and optional:
        return None
    if isinstance(value, bool):
        raise ConfigError(f"{name}: expected a number, got {value!r}")
    try:
        number = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name}: expected a number, got {value!r}") from None
    if not math.isfinite(number):
        raise ConfigError(f"{name}: must be finite")
    return number


def _integer(value: Any, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{name}: expected an integer, got {value!r}")
    return value


def _coerce(instance, name: str, value: Any) -> None:
    object.__setattr__(instance, name, value)


@dataclass(frozen=True)
class GridSettings:
    alpha0: float = 1e-11
    q: float = 10 ** (1 / 32)
    count: int = 321
    c_e: float | None = None
    c_f: float | None = None
    c_g: float | None = None

    def __post_init__(self) -> None:
        for name in ("alpha0", "q"):
            _coerce(self, name, _number(getattr(self, name), name))
        for name in ("c_e", "c_f", "c_g"):
            _coerce(self, name, _number(getattr(self, name), name, optional=True))
            if getattr(self, name) is not None and getattr(self, name) <= 0:
                raise ConfigError(f"{name}: must be positive")
        _integer(self.count, "count")
        if self.alpha0 <= 0:
            raise ConfigError("alpha0: must be positive")
        if self.q <= 1:
            raise ConfigError("q: must be greater than 1")
        if self.count < 2:
            raise ConfigError("count: the grid needs at least two points")

    def to_grid(self) -> ParameterGrid:
        return ParameterGrid(self.alpha0, self.q, self.count, self.c_e, self.c_f, self.c_g)


@dataclass(frozen=True)
class RuleSettings:
    name: str = "balancing_first"
    c_bp: float | None = 0.1
    beta: float | None = None
    gamma: float = 1.0
    c_dp: float = 1.0

    def __post_init__(self) -> None:
        if self.name not in RULES:
            raise ConfigError(f"name: unknown rule {self.name!r}, expected one of {', '.join(RULES)}")
        _coerce(self, "c_bp", _number(self.c_bp, "c_bp", optional=True))
        _coerce(self, "beta", _number(self.beta, "beta", optional=True))
        _coerce(self, "gamma", _number(self.gamma, "gamma"))
        _coerce(self, "c_dp", _number(self.c_dp, "c_dp"))
        if self.c_dp <= 0:
            raise ConfigError("c_dp: must be positive")
        if not 0 < self.gamma <= 1:
            raise ConfigError("gamma: must lie in (0, 1]")
        if self.is_balancing:
            if (self.c_bp is None) == (self.beta is None):
                raise ConfigError("c_bp: give exactly one of c_bp and beta")
            try:
                self.balancing_config()
            except ValueError as err:
                raise ConfigError(f"{'c_bp' if self.beta is None else 'beta'}: {err}") from None

    @property
    def is_balancing(self) -> bool:
        return self.name in BALANCING_RULES

    @property
    def label(self) -> str:
        if self.is_balancing:
            return f"{self.name} C_BP={self.c_bp:g}" if self.c_bp is not None else f"{self.name} beta={self.beta:g}"
        if self.name == "discrepancy":
            return f"discrepancy C_DP={self.c_dp:g}"
        return self.name

    def balancing_config(self) -> BalancingConfig:
        variant = self.name.removeprefix("balancing_")
        return BalancingConfig(beta=self.beta, gamma=self.gamma, variant=variant, c_bp=self.c_bp)


@dataclass(frozen=True)
class NoiseSettings:
    deltas: tuple[float, ...] = DEFAULT_DELTAS
    seed: int = 0
    replicates: int = 1

    def __post_init__(self) -> None:
        if not isinstance(self.deltas, (tuple, list)) or not self.deltas:
            raise ConfigError("deltas: expected a non-empty list of noise levels")
        deltas = tuple(_number(delta, "deltas") for delta in self.deltas)
        if any(delta < 0 for delta in deltas):
            raise ConfigError("deltas: noise levels must be non-negative")
        _coerce(self, "deltas", deltas)
        _integer(self.seed, "seed")
        if _integer(self.replicates, "replicates") < 1:
            raise ConfigError("replicates: must be at least 1")

    @property
    def seeds(self) -> tuple[int, ...]:
        return tuple(self.seed + i for i in range(self.replicates))


@dataclass(frozen=True)
class SolverSettings:
    max_iterations: int = 200
    gradient_tolerance: float = 1e-12
    method: str = "gauss_newton"

    def __post_init__(self) -> None:
        _integer(self.max_iterations, "max_iterations")
        _coerce(self, "gradient_tolerance", _number(self.gradient_tolerance, "gradient_tolerance"))
        try:
            self.to_solver_config()
        except ValueError as err:
            raise ConfigError(f"method: {err}") from None

    def to_solver_config(self) -> SolverConfig:
        return SolverConfig(
            max_iterations=self.max_iterations,
            gradient_tolerance=self.gradient_tolerance,
            method=self.method,
        )


SECTIONS: dict[str, type] = {
    "grid": GridSettings,
    "rule": RuleSettings,
    "noise": NoiseSettings,
    "solver": SolverSettings,
}


@dataclass(frozen=True)
class RunConfig:
    problem: str = "exp_growth"
    solution: str | None = "one"
    n: int = 1000
    a: float = 1.0
    x_bar: float = 0.0
    grid: GridSettings = field(default_factory=GridSettings)
    rule: RuleSettings = field(default_factory=RuleSettings)
    noise: NoiseSettings = field(default_factory=NoiseSettings)
    solver: SolverSettings = field(default_factory=SolverSettings)
    output_dir: str = "out"
    jobs: int = 1
    alpha: float | None = None
    experiment: str = "path"
    data_path: str | None = None
    c_bp_values: tuple[float, ...] = DEFAULT_C_BP

    def __post_init__(self) -> None:
        if self.problem not in MODELS:
            raise ConfigError(f"problem: unknown problem {self.problem!r}, expected one of {', '.join(MODELS)}")
        if self.solution is not None and self.solution not in SOLUTIONS:
            raise ConfigError(f"solution: unknown solution {self.solution!r}, expected one of {', '.join(SOLUTIONS)}")
        if self.solution is None and self.data_path is None:
            raise ConfigError("solution: required unless data_path is given")
        if self.solution is None and self.rule.name == "oracle":
            raise ConfigError("solution: the oracle rule needs a known solution")
        if _integer(self.n, "n") < 2:
            raise ConfigError("n: the grid needs at least two intervals")
        _coerce(self, "a", _number(self.a, "a"))
        _coerce(self, "x_bar", _number(self.x_bar, "x_bar"))
        _coerce(self, "alpha", _number(self.alpha, "alpha", optional=True))
        if self.a <= 0:
            raise ConfigError("a: must be positive")
        if self.rule.beta is not None:
            b = self.a / (2 * self.a + 2)
            bound = beta_min(self.grid.q, b)
            if self.rule.beta <= bound:
                raise ConfigError(f"rule.beta: must exceed 1 + q^(-b) = {bound:.6f} for this grid")
            if self.rule.is_balancing:
                gamma = self.rule.balancing_config().max_gamma(self.grid.q, b)
                if self.rule.gamma > gamma:
                    raise ConfigError(f"rule.gamma: must not exceed beta / (1 + q^(-b)) - 1 = {gamma:.6f}")
        if self.alpha is not None and self.alpha <= 0:
            raise ConfigError("alpha: must be positive")
        if _integer(self.jobs, "jobs") == 0:
            raise ConfigError("jobs: must be non-zero")
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"experiment: unknown experiment {self.experiment!r}, expected one of {', '.join(EXPERIMENTS)}")
        if self.experiment == "single" and self.alpha is None:
            raise ConfigError("alpha: required for a single solve")
        if not isinstance(self.c_bp_values, (tuple, list)) or not self.c_bp_values:
            raise ConfigError("c_bp_values: expected a non-empty list")
        values = tuple(_number(value, "c_bp_values") for value in self.c_bp_values)
        if any(value <= 0 for value in values):
            raise ConfigError("c_bp_values: constants must be positive")
        _coerce(self, "c_bp_values", values)
        if not isinstance(self.output_dir, str) or not self.output_dir:
            raise ConfigError("output_dir: expected a directory path")

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any] | None) -> Self:
        return _build(cls, data or {}, "")

    def to_mapping(self) -> dict[str, Any]:
        return _plain(asdict(self))

    def with_overrides(self, seed: int | None = None, out: str | None = None, jobs: int | None = None) -> Self:
        config = self
        if seed is not None:
            config = replace(config, noise=replace(config.noise, seed=seed))
        if out is not None:
            config = replace(config, output_dir=out)
        if jobs is not None:
            config = replace(config, jobs=jobs)
        return config

    @property
    def delta(self) -> float:
        return self.noise.deltas[0]

    def make_scale(self) -> HilbertScale:
        return HilbertScale(Grid(self.n), a=self.a)

    def make_model(self, scale: HilbertScale | None = None) -> ForwardModel:
        return make_model(self.problem, scale or self.make_scale())

    def make_solution(self, grid: Grid, solution: str | None = None) -> GridFunction | None:
        name = solution or self.solution
        return SOLUTIONS[name](grid) if name is not None else None

    def make_x_bar(self, grid: Grid) -> GridFunction:
        return GridFunction.constant(grid, self.x_bar)

    def noise_amplification(self) -> NoiseAmplification:
        return NoiseAmplification.from_chain(self.a)


def _plain(value: Any) -> Any:
    if isinstance(value, dict):
        return {key: _plain(item) for key, item in value.items()}
    if isinstance(value, (tuple, list)):
        return [_plain(item) for item in value]
    return value


def _build(cls: type, data: Any, prefix: str):
    if not isinstance(data, Mapping):
        raise ConfigError(f"{prefix.rstrip('.') or 'config'}: expected a mapping")
    known = {f.name for f in fields(cls)}
    unknown = sorted(str(key) for key in data if key not in known)
    if unknown:
        raise ConfigError(f"{prefix}{unknown[0]}: unknown field")
    kwargs = {}
    for name, value in data.items():
        if cls is RunConfig and name in SECTIONS:
            kwargs[name] = _build(SECTIONS[name], value or {}, f"{prefix}{name}.")
        elif isinstance(value, list):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except ConfigError as err:
        raise ConfigError(f"{prefix}{err}") from None


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    path = Path(path)
    try:
        with path.open(encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except OSError as err:
        raise ConfigError(f"{path}: cannot read config ({err.strerror or err})") from None
    except yaml.YAMLError as err:
        raise ConfigError(f"{path}: invalid YAML ({err})") from None
    log.debug("loaded config from %s", path)
    return RunConfig.from_mapping(data)
