import numpy as np
import pytest

from classes import ModelConfig
from make_synthetic_panel import simulate_panel, write_fixture
from model_core import ObservationPanel, StationSet


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="slow 표시된 테스트도 실행")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="--runslow 가 필요합니다")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def three_stations():
    return StationSet.from_coords(["A", "B", "C"], [[0.0, 0.0], [10.0, 0.0], [0.0, 15.0]])


@pytest.fixture
def quick_model():
    return ModelConfig(iterations=24, burn_in=4, seed=7)


@pytest.fixture
def small_panel():
    """n=3, T=24, 결측 약 20% 인 합성 패널"""
    sim = simulate_panel(3, 24, missing_rate=0.2, seed=3)
    y = np.where(sim.mask, sim.y, np.nan)
    panel = ObservationPanel(y=y, mask=sim.mask, t_index=sim.t_index, site_ids=sim.stations.ids)
    return sim.stations, panel


@pytest.fixture
def fixture_files(tmp_path):
    """4개 관측소 (마지막 1개는 held-out), 2주 (336시간) 합성 fixture"""
    sim = simulate_panel(4, 336, missing_rate=0.1, held_out=1, seed=11)
    paths = write_fixture(tmp_path / "fixture", sim)
    return sim, paths
