import math

import numpy as np
import pytest

from conftest import make_trajset
from pedorigin.analysis import (
    average_voronoi_map,
    fundamental_diagram,
    mean_speed,
    spearman,
    voronoi_density,
    write_fd_csv,
)
from pedorigin.exceptions import UndefinedDensity
from pedorigin.ingest import Origin, concat_trajsets
from pedorigin.scenario import Rect

AREA = Rect(0.0, 0.0, 2.4, 2.0)
REGION = Rect(-1.0, -1.0, 4.4, 4.0)


def test_single_pedestrian_fills_area():
    assert voronoi_density([(1.0, 1.0)], AREA) == pytest.approx(1 / 4.8)


def test_two_symmetric_pedestrians():
    assert voronoi_density([(0.6, 1.0), (1.8, 1.0)], AREA) == pytest.approx(2 / 4.8)


def test_density_converges_under_refinement():
    positions = [(0.5, 0.5), (1.7, 1.2), (1.0, 1.8), (2.9, 0.3)]
    coarse = voronoi_density(positions, AREA, 0.05, REGION)
    fine = voronoi_density(positions, AREA, 0.025, REGION)
    assert fine == pytest.approx(coarse, rel=0.02)


def test_density_translation_invariant():
    positions = np.array([(0.513, 0.497), (1.7071, 1.2237), (1.0193, 1.8119)])
    base = voronoi_density(positions, AREA, 0.05, REGION)
    moved = voronoi_density(positions + (3.0, -2.0), AREA.translated(3.0, -2.0), 0.05, REGION.translated(3.0, -2.0))
    assert moved == pytest.approx(base, abs=1e-9)


def test_uniform_grid_of_pedestrians():
    xs = (np.arange(7) + 0.5) * AREA.w / 7
    ys = (np.arange(6) + 0.5) * AREA.h / 6
    positions = np.array([(x, y) for x in xs for y in ys])
    density = voronoi_density(positions, AREA, 0.05)
    assert density == pytest.approx(len(positions) / AREA.area, rel=0.05)


def test_density_without_pedestrians():
    with pytest.raises(UndefinedDensity):
        voronoi_density([], AREA)


def _walker(first: int = 0, frames: int = 5, step: float = 0.05):
    return make_trajset({1: (Origin.LEFT, first, [(0.5 + step * k, 1.0) for k in range(frames)])})


def test_mean_speed_central_and_one_sided():
    trajset = _walker()
    assert mean_speed(trajset, 2, AREA) == pytest.approx(0.8)
    assert mean_speed(trajset, 0, AREA) == pytest.approx(0.8)
    assert mean_speed(trajset, 4, AREA) == pytest.approx(0.8)


def test_mean_speed_static_and_outside():
    assert mean_speed(_walker(step=0.0), 2, AREA) == 0.0
    assert mean_speed(_walker(), 2, Rect(5.0, 5.0, 1.0, 1.0)) is None
    assert mean_speed(_walker(), 99, AREA) is None


def test_fundamental_diagram():
    points = fundamental_diagram(_walker(), AREA, area_id=3)
    assert [p.frame for p in points] == [0, 1, 2, 3, 4]
    assert all(p.area_id == 3 for p in points)
    assert all(p.density == pytest.approx(1 / 4.8) for p in points)
    assert all(p.speed == pytest.approx(0.8) for p in points)


def test_spearman():
    assert math.isnan(spearman(fundamental_diagram(_walker(frames=2), AREA, 0)))
    points = fundamental_diagram(_walker(), AREA, 0)
    rising = [p.__class__(p.frame, p.frame + 1.0, 10.0 - p.frame, 0) for p in points]
    assert spearman(rising) == pytest.approx(-1.0)


def test_average_map_of_static_pedestrian():
    region = Rect(0.0, 0.0, 1.0, 1.0)
    trajset = make_trajset({1: (Origin.RIGHT, 0, [(0.5, 0.5)] * 5)})
    result = average_voronoi_map(trajset, region, 0.1)
    assert result.n_frames == 5
    assert result.field.values.shape == (10, 10)
    np.testing.assert_allclose(result.field.values, 1.0)


def test_average_map_over_concatenation_is_frame_weighted():
    region = Rect(0.0, 0.0, 1.0, 1.0)
    first = make_trajset({1: (Origin.LEFT, 0, [(0.25, 0.5)] * 2)}, name="a")
    second = make_trajset({1: (Origin.LEFT, 0, [(0.25, 0.5)] * 3), 2: (Origin.RIGHT, 0, [(0.75, 0.5)] * 3)}, name="b")
    a = average_voronoi_map(first, region, 0.1)
    b = average_voronoi_map(second, region, 0.1)
    both = average_voronoi_map(concat_trajsets(first, second), region, 0.1)
    assert both.n_frames == 5
    expected = (2 * a.field.values + 3 * b.field.values) / 5
    np.testing.assert_allclose(both.field.values, expected, atol=1e-12)


def test_average_map_without_frames(caplog):
    result = average_voronoi_map(make_trajset({}), Rect(0.0, 0.0, 1.0, 1.0), 0.1)
    assert result.n_frames == 0
    assert not result.field.values.any()
    assert "Voronoi map is empty" in caplog.text


def test_write_fd_csv(tmp_path):
    path = tmp_path / "fd.csv"
    write_fd_csv(fundamental_diagram(_walker(frames=2), AREA, 1), path)
    lines = path.read_text().splitlines()
    assert lines[0] == "frame,area_id,density,speed"
    assert len(lines) == 3
    assert lines[1].startswith("0,1,")
