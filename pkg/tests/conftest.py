import numpy as np
import pytest
from dotenv import load_dotenv

from pedorigin.heatmap import Dataset, GridSpec, HeatmapSample
from pedorigin.ingest import Origin, Pedestrian, Source, TrajectorySet
from pedorigin.scenario import Rect, ScenarioConfig, build_corridor, build_tjunction

# Load env vars from a .env file
load_dotenv()


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running reproduction checks")


@pytest.fixture
def default_config():
    return ScenarioConfig(name="240-240-240")


@pytest.fixture
def tjunction(default_config):
    return build_tjunction(default_config)


@pytest.fixture
def corridor():
    return build_corridor(2.0, 6.0)


def make_trajset(tracks: dict, fps: float = 16.0, name: str = "toy", source=Source.EXPERIMENTAL):
    """
    tracks: id -> (origin, first_frame, list of (x, y)).
    """
    pedestrians = {}
    for pid, (origin, first, points) in tracks.items():
        frames = np.arange(first, first + len(points))
        pedestrians[pid] = Pedestrian(origin, frames, np.array(points, dtype=float).reshape(-1, 2))
    return TrajectorySet(fps=fps, pedestrians=pedestrians, source=source, name=name)


def make_dataset(grids, labels, run_name: str = "run", h: float = 0.1):
    """
    grids: list of (ny, nx) arrays; labels: list of (n_left, n_right).
    """
    ny, nx = np.asarray(grids[0]).shape if grids else (1, 1)
    spec = GridSpec(nx, ny, h, Rect(-nx * h / 2, -ny * h, nx * h, ny * h))
    samples = [
        HeatmapSample(np.asarray(g, dtype=float), n_left, n_right, frame, Source.SIMULATED, run_name)
        for frame, (g, (n_left, n_right)) in enumerate(zip(grids, labels))
    ]
    return Dataset(spec, samples)


@pytest.fixture
def trajset_factory():
    return make_trajset


@pytest.fixture
def dataset_factory():
    return make_dataset


@pytest.fixture
def origin():
    return Origin
