import math
from fractions import Fraction

import numpy as np
import pytest

from conftest import make_dataset, make_trajset
from pedorigin.exceptions import DatasetFormatError, GridMismatchError, ValidationError
from pedorigin.heatmap import (
    build_dataset,
    check_compatible,
    count_origins,
    dedup_consecutive,
    default_equal_cap,
    distribution_report,
    feature_matrix,
    frame_positions,
    gaussian_heatmap,
    label_frame,
    label_matrix,
    read_dataset,
    rebalance_equal,
    serialize_dataset,
    write_dataset,
)
from pedorigin.ingest import Origin
from pedorigin.scenario import Rect

AREA = Rect(-1.2, 4.4, 2.4, 1.0)
LEFT, RIGHT, UNKNOWN = Origin.LEFT, Origin.RIGHT, Origin.UNKNOWN


def test_empty_heatmap_is_zero():
    grid = gaussian_heatmap([], AREA, 0.1, 0.7)
    assert grid.shape == (10, 24)
    assert not grid.any()


def test_single_pedestrian_at_cell_center():
    center = (AREA.x0 + 0.05 + 0.1 * 7, AREA.y0 + 0.05 + 0.1 * 3)
    grid = gaussian_heatmap([center], AREA, 0.1, 0.7)
    assert grid[3, 7] == pytest.approx(1 / (2 * math.pi * 0.7**2))
    assert grid.max() == grid[3, 7]


def test_mirror_symmetric_pair_gives_mirror_symmetric_grid():
    grid = gaussian_heatmap([(-0.5, 4.7), (0.5, 4.7)], AREA, 0.1, 0.7)
    np.testing.assert_allclose(grid, grid[:, ::-1], atol=1e-12)


def test_far_pedestrians_are_ignored_and_mass_is_bounded():
    positions = [(0.0, 4.9), (0.3, 4.5), (5.0, 0.0)]
    grid = gaussian_heatmap(positions, AREA, 0.1, 0.7)
    assert grid.sum() * 0.1**2 <= 2.0
    np.testing.assert_array_equal(grid, gaussian_heatmap(positions[:2], AREA, 0.1, 0.7))


def test_translation_invariance():
    positions = np.array([(0.0, 4.9), (0.3, 4.5), (-1.0, 5.2)])
    shift = np.array([3.0, -2.0])
    moved = gaussian_heatmap(positions + shift, AREA.translated(*shift), 0.1, 0.7)
    np.testing.assert_allclose(moved, gaussian_heatmap(positions, AREA, 0.1, 0.7), atol=1e-12)


def test_labels():
    entries = [((0.0, 4.5), LEFT), ((0.5, 4.6), LEFT), ((-0.5, 4.8), RIGHT), ((0.1, 4.9), UNKNOWN), ((0.0, 2.0), RIGHT)]
    assert count_origins(entries, AREA) == (2, 1)
    assert label_frame(entries, AREA) == (Fraction(2, 3), Fraction(1, 3))
    assert label_frame(entries[3:], AREA) is None
    assert label_frame([entries[0], entries[2]], AREA) == (Fraction(1, 2), Fraction(1, 2))


def test_frame_positions():
    trajset = make_trajset({1: (LEFT, 5, [(0, 0), (0, 0.1)]), 2: (RIGHT, 6, [(1, 1)])})
    assert frame_positions(trajset, 0) == []
    single = frame_positions(trajset, 5)
    assert len(single) == 1 and single[0][1] == LEFT
    assert len(frame_positions(trajset, 6)) == 2


def _walker_set(frames: int, first: int = 0, name: str = "toy"):
    left = [(-0.3, 4.5 + 0.01 * k) for k in range(frames)]
    right = [(0.3, 4.5 + 0.01 * k) for k in range(frames)]
    return make_trajset({1: (LEFT, first, left), 2: (RIGHT, first, right)}, name=name)


def test_build_dataset_in_frame_order():
    dataset = build_dataset([_walker_set(3, first=5)], AREA)
    assert [s.frame for s in dataset.samples] == [5, 6, 7]
    assert dataset.grid.n_features == 240
    assert dataset.grid.area.as_tuple() == pytest.approx((-1.2, -1.0, 2.4, 1.0))


def test_build_dataset_stride():
    dataset = build_dataset([_walker_set(10)], AREA, frame_stride=2)
    assert [s.frame for s in dataset.samples] == [0, 2, 4, 6, 8]


def test_build_dataset_empty_and_inconsistent():
    assert len(build_dataset([], AREA)) == 0
    with pytest.raises(ValidationError, match="inconsistent area geometry"):
        build_dataset([_walker_set(2), _walker_set(2)], [AREA, Rect(-1.2, 3.4, 2.4, 2.0)])


def _grid(value: float):
    return np.full((2, 3), value)


def test_dedup_keeps_changes_only():
    a, b = _grid(1.0), _grid(2.0)
    dataset = make_dataset([a, a, b, a], [(1, 1)] * 4)
    kept = dedup_consecutive(dataset)
    assert [s.frame for s in kept.samples] == [0, 2, 3]
    assert [s.frame for s in dedup_consecutive(kept).samples] == [0, 2, 3]


def test_dedup_retains_exactly_sixty_of_hundred():
    grids = []
    for k in range(100):
        grids.append(grids[-1] if 0 < k <= 40 else _grid(float(k)))
    kept = dedup_consecutive(make_dataset(grids, [(1, 2)] * 100))
    assert len(kept) == 60


def test_dedup_is_per_run():
    first = make_dataset([_grid(1.0)], [(1, 1)], run_name="a")
    second = make_dataset([_grid(1.0)], [(1, 1)], run_name="b")
    first.samples.extend(second.samples)
    assert len(dedup_consecutive(first)) == 2


def test_rebalance_caps_equal_labels():
    labels = [(1, 1)] * 30 + [(2, 1)] * 4
    dataset = make_dataset([_grid(float(k)) for k in range(34)], labels)
    kept = rebalance_equal(dataset, 10)
    assert sum(s.is_equal_split for s in kept.samples) == 10
    assert sum(not s.is_equal_split for s in kept.samples) == 4
    assert [s.frame for s in kept.samples if s.is_equal_split] == list(range(0, 30, 3))


def test_rebalance_keeps_exactly_cap():
    dataset = make_dataset([_grid(0.0)] * 1759, [(1, 1)] * 1759)
    assert len(rebalance_equal(dataset, 887)) == 887
    assert len(rebalance_equal(dataset, 2000)) == 1759
    assert len(rebalance_equal(dataset, 0)) == 0


def test_default_cap_is_second_most_frequent_label():
    labels = [(1, 1)] * 5 + [(1, 0)] * 3 + [(0, 1)] * 2
    dataset = make_dataset([_grid(0.0)] * 10, labels)
    assert default_equal_cap(dataset) == 3


def test_distribution_report():
    dataset = make_dataset([_grid(0.0)] * 3, [(1, 1), (1, 1), (1, 0)])
    rows = distribution_report(dataset)
    assert rows == [(Fraction(1, 2), Fraction(1, 2), 2), (Fraction(1), Fraction(0), 1)]
    assert distribution_report(make_dataset([], [])) == []


def test_matrices():
    dataset = make_dataset([_grid(1.0), _grid(2.0)], [(3, 1), (0, 2)])
    assert feature_matrix(dataset).shape == (2, 6)
    np.testing.assert_allclose(label_matrix(dataset), [[75.0, 25.0], [0.0, 100.0]])
    np.testing.assert_allclose(label_matrix(dataset).sum(axis=1), 100.0)


def test_dataset_file_round_trip(tmp_path):
    dataset = build_dataset([_walker_set(4, name="run_a")], AREA)
    first = tmp_path / "first.csv"
    second = tmp_path / "second.csv"
    write_dataset(dataset, first)
    loaded = read_dataset(first)
    write_dataset(loaded, second)
    assert first.read_text() == second.read_text()
    assert loaded.grid.matches(dataset.grid)
    assert loaded.samples[0].label == dataset.samples[0].label


def test_dataset_header_without_sigma(tmp_path):
    dataset = make_dataset([_grid(1.0)], [(1, 1)])
    lines = serialize_dataset(dataset).splitlines()
    lines[0] = lines[0].replace(" sigma=0.7", "")
    path = tmp_path / "old.csv"
    path.write_text("\n".join(lines) + "\n")
    assert read_dataset(path).grid.sigma == 0.7


def test_malformed_dataset_row(tmp_path):
    path = tmp_path / "bad.csv"
    dataset = make_dataset([_grid(1.0)], [(1, 1)])
    path.write_text(serialize_dataset(dataset) + "run,1,Simulated,1,1,0.5\n")
    with pytest.raises(DatasetFormatError) as info:
        read_dataset(path)
    assert info.value.line_number == 3


def test_grid_mismatch():
    one = make_dataset([_grid(1.0)], [(1, 1)])
    other = make_dataset([np.zeros((4, 3))], [(1, 1)])
    check_compatible(one.grid, one.grid)
    with pytest.raises(GridMismatchError):
        check_compatible(one.grid, other.grid)
