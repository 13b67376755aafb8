import json
import math

import numpy as np
import pytest

from tikhonov_hs.hilbert_scale import Grid, GridFunction, HilbertScale, SourceCondition
from tikhonov_hs.parameter_choice import (
    BalancingConfig,
    NoiseAmplification,
    ParameterGrid,
    SelectionError,
    a_priori_alpha,
    balancing,
    balancing_first,
    balancing_set,
    balancing_standard,
    balancing_third,
    beta_min,
    bound_infimum,
    discrepancy_principle,
    error_constant,
    lambda_fn,
    leonov_heuristic,
    lepskii_constant,
    oracle_alpha,
    oracle_lemma_constant,
    oracle_set,
    quasi_optimality_check,
    quasi_optimality_heuristic,
)
from tikhonov_hs.tikhonov_solver import Reconstruction, SpectralLinearProblem

GRID = Grid(8)


def reconstruction(values, alpha: float, residual: float = 0.0) -> Reconstruction:
    return Reconstruction(
        x=GridFunction(GRID, values),
        alpha=float(alpha),
        residual_norm=residual,
        penalty_norm=0.0,
        functional_value=residual**2,
    )


def distances(path) -> np.ndarray:
    count = len(path)
    return np.array([[path[i].x.distance(path[j].x) for j in range(count)] for i in range(count)])


def random_path(rng, alphas) -> list[Reconstruction]:
    x = np.zeros(GRID.n + 1)
    path = []
    for alpha in alphas:
        x = x + rng.exponential(1.0) * rng.standard_normal(GRID.n + 1) / 3
        path.append(reconstruction(x, alpha))
    return path


class TestNoiseAmplification:
    def test_from_chain(self):
        na = NoiseAmplification.from_chain(1.0, c_a=0.5)
        assert na.b == pytest.approx(0.25)
        assert na.kappa == pytest.approx(4.0)
        assert NoiseAmplification.from_chain(1.0, c_a=4.0).kappa == 1.0

    def test_lambda(self):
        na = NoiseAmplification(b=0.25, kappa=2.0)
        assert lambda_fn(16.0, na) == pytest.approx(1.0)
        with pytest.raises(ValueError):
            lambda_fn(0.0, na)

    def test_beta_min(self):
        assert beta_min(16.0, 0.25) == pytest.approx(1.5)
        with pytest.raises(ValueError):
            beta_min(1.0, 0.25)


class TestParameterGrid:
    def test_alphas(self):
        grid = ParameterGrid(alpha0=1e-12, q=10**0.25, count=45)
        assert len(grid.alphas) == 45
        assert grid.alphas[0] == pytest.approx(1e-12)
        assert grid.alphas[-1] == pytest.approx(1e-1)
        assert np.allclose(grid.alphas[1:] / grid.alphas[:-1], 10**0.25)

    def test_covering(self):
        grid = ParameterGrid.covering(1e-24, 10.0, 10**0.25)
        assert grid.alphas[0] == pytest.approx(1e-24)
        assert grid.alphas[-1] == pytest.approx(10.0)

    @pytest.mark.parametrize("kwargs", [{"alpha0": 0.0}, {"q": 1.0}, {"count": 0}])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            ParameterGrid(**kwargs)

    def test_validate_endpoints(self):
        grid = ParameterGrid(alpha0=1e-12, q=10.0, count=12, c_e=1.0, c_f=1e-2, c_g=1.0)
        grid.validate_endpoints(delta=1e-2, b=0.25)
        with pytest.raises(ValueError, match="^c_e: alpha0"):
            grid.validate_endpoints(delta=1e-4, b=0.25)
        with pytest.raises(ValueError, match="^c_g:"):
            ParameterGrid(alpha0=1e-12, q=10.0, count=14, c_g=1.0).validate_endpoints(1e-2, 0.25)
        with pytest.raises(ValueError, match="^c_f:"):
            ParameterGrid(alpha0=1e-12, q=10.0, count=12, c_f=1e5).validate_endpoints(1e-2, 0.25)


class TestBalancingConfig:
    def test_exactly_one_constant(self):
        with pytest.raises(ValueError):
            BalancingConfig()
        with pytest.raises(ValueError):
            BalancingConfig(beta=3.0, c_bp=0.1)

    def test_gamma(self):
        with pytest.raises(ValueError):
            BalancingConfig(beta=3.0, gamma=1.5)

    def test_beta_bound(self):
        grid = ParameterGrid(alpha0=1.0, q=16.0, count=4)
        path = [reconstruction(np.zeros(GRID.n + 1), alpha) for alpha in grid.alphas]
        na = NoiseAmplification(b=0.25)
        with pytest.raises(ValueError, match="beta"):
            balancing_first(path, 1.0, BalancingConfig(beta=1.5), na)

    def test_threshold(self):
        na = NoiseAmplification(b=0.25, kappa=2.0)
        assert BalancingConfig(c_bp=0.1).threshold(16.0, 1.0, na) == pytest.approx(0.05)
        assert BalancingConfig(beta=3.0).threshold(16.0, 1.0, na) == pytest.approx(3.0)

    def test_max_gamma(self):
        assert BalancingConfig(beta=3.0).max_gamma(16.0, 0.25) == pytest.approx(1.0)
        assert BalancingConfig(beta=2.25).max_gamma(16.0, 0.25) == pytest.approx(0.5)


class TestBalancing:
    @pytest.fixture
    def grid(self) -> ParameterGrid:
        return ParameterGrid(alpha0=1.0, q=10**0.25, count=31)

    @pytest.fixture
    def na(self) -> NoiseAmplification:
        return NoiseAmplification(b=0.25)

    def brute_force(self, path, delta, config, na, variant) -> int:
        d = distances(path)
        threshold = [config.threshold(r.alpha, delta, na) for r in path]
        count = len(path)
        if variant == "first":
            members = [k for k in range(count) if all(d[j - 1, j] <= threshold[j - 1] for j in range(1, k + 1))]
        elif variant == "standard":
            members = [k for k in range(count) if all(d[j, k] <= threshold[j] for j in range(k))]
        else:
            members = [
                k
                for k in range(count)
                if all(d[i, j] <= threshold[i] for j in range(1, k + 1) for i in range(j))
            ]
        return max(members)

    def test_brute_force(self, grid, na, rng):
        rules = {"first": balancing_first, "standard": balancing_standard, "third": balancing_third}
        for _ in range(1000):
            count = int(rng.integers(1, 31))
            path = random_path(rng, grid.alphas[:count])
            delta = rng.uniform(0.05, 2.0)
            config = BalancingConfig(beta=3.0)
            for variant, rule in rules.items():
                expected = self.brute_force(path, delta, config, na, variant)
                selection = rule(path, delta, config, na)
                assert selection.index == expected
                assert selection.alpha_star == path[expected].alpha
                assert max(balancing_set(path, delta, config, na, variant)) == expected

    def test_set_inclusions(self, na, rng):
        grid = ParameterGrid(alpha0=1e-10, q=10**0.25, count=31)
        q_b = grid.q**-na.b
        for _ in range(1000):
            gamma = rng.uniform(0.1, 1.0)
            beta = (gamma + 1) * (1 + q_b)
            config = BalancingConfig(beta=beta, gamma=gamma)
            delta = 10 ** rng.uniform(-3, 0)
            c, s = rng.uniform(0.1, 10.0), rng.uniform(0.05, 0.5)

            def phi(alpha):
                return c * np.asarray(alpha) ** s

            path = []
            for alpha in grid.alphas:
                bound = phi(alpha) + delta / na(alpha)
                direction = rng.standard_normal(GRID.n + 1)
                direction /= GRID.norm(direction)
                path.append(reconstruction(rng.uniform(0.0, 1.0) * bound * direction, alpha))

            oracle = {float(a) for a in oracle_set(phi, delta, grid, gamma, na)}
            third = {path[k].alpha for k in balancing_set(path, delta, config, na, "third")}
            first = {path[k].alpha for k in balancing_set(path, delta, config, na, "first")}
            standard = {path[k].alpha for k in balancing_set(path, delta, config, na, "standard")}
            assert oracle <= third <= first
            assert third <= standard

    def test_larger_constant_larger_alpha(self, grid, na, rng):
        for _ in range(100):
            path = random_path(rng, grid.alphas)
            small = balancing_first(path, 0.5, BalancingConfig(c_bp=0.5), na)
            large = balancing_first(path, 0.5, BalancingConfig(c_bp=2.0), na)
            assert small.alpha_star <= large.alpha_star

    def test_no_violation_terminates_at_end(self, grid, na):
        path = [reconstruction(np.zeros(GRID.n + 1), alpha) for alpha in grid.alphas]
        for variant in ("first", "standard", "third"):
            selection = balancing(path, 1e-3, BalancingConfig(beta=3.0, variant=variant), na)
            assert selection.terminated_at_N
            assert selection.index == len(path) - 1

    def test_single_point(self, na):
        path = [reconstruction(np.ones(GRID.n + 1), 1e-3)]
        assert balancing_first(path, 1.0, BalancingConfig(beta=3.0), na).index == 0

    def test_empty_path(self, na):
        with pytest.raises(SelectionError):
            balancing_first([], 1.0, BalancingConfig(beta=3.0), na)

    def test_to_record(self, grid, na, rng):
        path = random_path(rng, grid.alphas[:10])
        selection = balancing_third(path, 1.0, BalancingConfig(c_bp=0.5), na)
        record = json.loads(json.dumps(selection.to_record()))
        assert record["rule"] == "balancing_third"
        assert record["alpha_star"] == selection.alpha_star
        assert len(record["alphas"]) == 10
        assert all({"i", "j", "lhs", "rhs", "passed"} <= set(c) for c in record["comparisons"])


class TestHeuristics:
    def test_discrepancy(self):
        residuals = [0.1, 0.5, 0.9, 1.5, 2.5]
        path = [reconstruction(np.zeros(GRID.n + 1), 10.0**k, r) for k, r in enumerate(residuals)]
        assert discrepancy_principle(path, 1.0, 1.0).index == 2
        assert discrepancy_principle(path, 1.0, 2.0).index == 3

    def test_discrepancy_ties_prefer_larger_alpha(self):
        path = [reconstruction(np.zeros(GRID.n + 1), 10.0**k, 0.5) for k in range(3)]
        assert discrepancy_principle(path, 1.0, 1.0).index == 2

    def test_discrepancy_unreachable(self):
        path = [reconstruction(np.zeros(GRID.n + 1), 10.0**k, 2.0) for k in range(3)]
        with pytest.raises(SelectionError, match="residual target unreachable"):
            discrepancy_principle(path, 1.0, 1.0)

    def test_quasi_optimality(self):
        offsets = [0.0, 1.0, 1.5, 1.6, 3.0]
        path = [reconstruction(np.full(GRID.n + 1, o), 10.0**k) for k, o in enumerate(offsets)]
        assert quasi_optimality_heuristic(path).index == 2

    def test_quasi_optimality_ties_prefer_larger_alpha(self):
        path = [reconstruction(np.full(GRID.n + 1, float(k)), 10.0**k) for k in range(4)]
        assert quasi_optimality_heuristic(path).index == 2

    def test_quasi_optimality_needs_two(self):
        with pytest.raises(SelectionError):
            quasi_optimality_heuristic([reconstruction(np.zeros(GRID.n + 1), 1.0)])

    def test_leonov(self):
        offsets = [0.0, 1.0, 1.5, 1.6, 3.0]
        path = [reconstruction(np.full(GRID.n + 1, o), 10.0**k) for k, o in enumerate(offsets)]
        na = NoiseAmplification(b=0.25)
        assert leonov_heuristic(path, 1e-12, na).index == 2
        assert leonov_heuristic(path, 10.0, na).index == 3

    def test_oracle(self):
        x_dag = GridFunction.constant(GRID, 1.6)
        offsets = [0.0, 1.0, 1.5, 1.8, 3.0]
        path = [reconstruction(np.full(GRID.n + 1, o), 10.0**k) for k, o in enumerate(offsets)]
        assert oracle_alpha(path, x_dag).index == 2


class TestConstants:
    def test_first_variant(self):
        constant = error_constant("first", q=4.0, b=0.5, gamma=1.0)
        assert constant.tau_opt == pytest.approx(3.0)
        assert constant.c2 == pytest.approx(16.0)

    @pytest.mark.parametrize("variant", ["standard", "third"])
    @pytest.mark.parametrize("q", [1.5, 4.0, 100.0])
    def test_standard_variant(self, variant, q):
        b = 0.25
        assert error_constant(variant, q=q, b=b).c2 == pytest.approx(2 * (2 * q**b + 1))

    def test_limit(self):
        assert error_constant("standard", q=1 + 1e-12, b=0.25).c2 == pytest.approx(6.0, rel=1e-9)

    def test_lepskii(self):
        assert lepskii_constant(16.0, 0.25).c2 == pytest.approx(12.0)

    def test_oracle_lemma(self):
        assert oracle_lemma_constant(0.5, 2.0, 3.0, 4.0) == pytest.approx(8.0)

    def test_invalid(self):
        with pytest.raises(ValueError):
            error_constant("first", q=1.0, b=0.25)
        with pytest.raises(ValueError):
            error_constant("fourth", q=2.0, b=0.25)

    def test_a_priori(self):
        source = SourceCondition("holder", p=0.5)
        assert a_priori_alpha(1e-3, 1.0, source) == pytest.approx(1e-3 ** (8 / 3))
        assert math.log(a_priori_alpha(0.5, 1.0, source)) / math.log(0.5) == pytest.approx(8 / 3)


class TestQuasiOptimality:
    def test_bound_infimum(self):
        na = NoiseAmplification(b=0.25)
        s, b, delta = 0.125, 0.25, 1e-3

        def phi(alpha):
            return np.asarray(alpha) ** s

        best = (b * delta / s) ** (1 / (s + b))
        expected = best**s + delta / best**b
        assert bound_infimum(phi, delta, na) == pytest.approx(expected, rel=1e-6)

    @pytest.mark.parametrize("variant", ["first", "standard", "third"])
    def test_synthetic(self, variant, problem: SpectralLinearProblem):
        a, p = 1.0, 0.5
        na = NoiseAmplification.from_chain(a)
        grid = ParameterGrid.covering(1e-24, 10.0, 10**0.25)
        gamma = 1.0
        constant = error_constant(variant, grid.q, na.b, gamma)
        config = BalancingConfig(beta=constant.tau_opt, gamma=gamma, variant=variant)

        def phi(alpha):
            return np.asarray(alpha) ** (p / (2 * a + 2))

        for delta in (1e-1, 1e-2, 1e-3, 1e-4, 1e-5):
            path = problem.solve_path(problem.noisy_data(delta, seed=11), grid)
            selection = balancing(path, delta, config, na)
            assert quasi_optimality_check(selection, problem.x_dag, phi, delta, na, constant.c2)

    @pytest.fixture
    def problem(self) -> SpectralLinearProblem:
        scale = HilbertScale(Grid(400), a=1.0, spectral_rank=40)
        w = np.ones(scale.spectral_rank) / np.sqrt(scale.spectral_rank)
        return SpectralLinearProblem(scale, SourceCondition("holder", p=0.5).synthesize(scale, w))

    def test_oracle_lemma_bound(self):
        na = NoiseAmplification(b=0.25)
        s, d = 0.125, 10**0.25

        def phi(alpha):
            return np.asarray(alpha, dtype=float) ** s

        alphas = 1e-30 * d ** np.arange(200)
        for delta in np.logspace(-8, -1, 15):
            below = phi(alphas) <= delta / na(alphas)
            alpha = float(alphas[below][-1])
            assert phi(alpha) <= delta / na(alpha)
            assert delta / na(d * alpha) <= phi(d * alpha)
            constant = oracle_lemma_constant(na.b, 1.0, 1.0, d)
            assert phi(alpha) + delta / na(alpha) <= constant * bound_infimum(phi, delta, na)

    def test_rate_transfer(self, problem: SpectralLinearProblem):
        na = NoiseAmplification.from_chain(1.0)
        s, b = 0.125, na.b
        grid = ParameterGrid.covering(1e-24, 10.0, 10**0.25)
        constant = error_constant("first", grid.q, b)
        config = BalancingConfig(beta=constant.tau_opt, variant="first")
        best = (b / s) ** (1 / (s + b))
        rate_constant = best**s + best**-b
        for m in range(4, 17, 2):
            delta = 2.0**-m
            path = problem.solve_path(problem.noisy_data(delta, seed=m), grid)
            error = balancing(path, delta, config, na).reconstruction.x.distance(problem.x_dag)
            assert error <= constant.c2 * rate_constant * delta ** (s / (s + b))

    def test_restricted_infimum(self, problem: SpectralLinearProblem):
        na = NoiseAmplification.from_chain(1.0)
        delta = 1e-2

        def phi(alpha):
            return np.asarray(alpha, dtype=float) ** 0.125

        grid = ParameterGrid.covering(1e-24, 1e-12, 10**0.25)
        alpha_n = float(grid.alphas[-1])
        alpha_range = (float(grid.alphas[0]), alpha_n)
        restricted = bound_infimum(phi, delta, na, alpha_range)
        assert restricted == pytest.approx(float(phi(alpha_n)) + delta / float(na(alpha_n)), rel=1e-6)
        assert restricted > bound_infimum(phi, delta, na)
        constant = error_constant("first", grid.q, na.b)
        config = BalancingConfig(beta=constant.tau_opt, variant="first")
        selection = balancing(problem.solve_path(problem.noisy_data(delta, seed=3), grid), delta, config, na)
        assert quasi_optimality_check(selection, problem.x_dag, phi, delta, na, constant.c2, alpha_range)
        with pytest.raises(ValueError):
            bound_infimum(phi, delta, na, (1e-2, 1e-4))
