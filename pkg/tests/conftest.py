import numpy as np
import pytest

from tikhonov_hs.forward_model import ExponentialGrowthModel, LinearSurrogateModel
from tikhonov_hs.hilbert_scale import Grid, HilbertScale
from tikhonov_hs.settings import GridSettings, NoiseSettings, RunConfig


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240917)


@pytest.fixture
def grid() -> Grid:
    return Grid(200)


@pytest.fixture
def scale(grid: Grid) -> HilbertScale:
    return HilbertScale(grid, a=1.0)


@pytest.fixture
def small_scale() -> HilbertScale:
    return HilbertScale(Grid(32), a=1.0)


@pytest.fixture
def exp_model(scale: HilbertScale) -> ExponentialGrowthModel:
    return ExponentialGrowthModel(scale)


@pytest.fixture
def surrogate(scale: HilbertScale) -> LinearSurrogateModel:
    return LinearSurrogateModel(scale)


@pytest.fixture
def small_config(tmp_path) -> RunConfig:
    return RunConfig(
        n=64,
        grid=GridSettings(alpha0=1e-7, q=10**0.5, count=12),
        noise=NoiseSettings(deltas=(0.0179, 0.0179 / 4, 0.0179 / 16)),
        output_dir=str(tmp_path / "out"),
    )
