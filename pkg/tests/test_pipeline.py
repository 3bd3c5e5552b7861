import math
from fractions import Fraction

import numpy as np
import pytest

from conftest import make_dataset
from pedorigin.exceptions import GridMismatchError, ValidationError
from pedorigin.forest import ForestParams, predict_many
from pedorigin.heatmap import feature_matrix
from pedorigin.pipeline import (
    E_MAX,
    REPORT_COLUMNS,
    Mode,
    error_by_label,
    format_report_table,
    normalize_predictions,
    predict_distribution,
    relative_error,
    run_experiment,
    shuffle_split,
    split_indices,
    train_origin_models,
    write_error_by_label_csv,
    write_predictions_csv,
    write_report_csv,
)

SMALL = ForestParams(n_trees=5, min_leaf=2)


def _dataset(n=30, seed=0, shape=(2, 3), run_name="run"):
    rng = np.random.default_rng(seed)
    labels = [tuple(int(v) for v in rng.integers(0, 4, size=2)) for _ in range(n)]
    labels = [(a, b) if a + b else (1, 1) for a, b in labels]
    grids = [rng.uniform(0, 1, size=shape) + 0.1 * a for a, _ in labels]
    return make_dataset(grids, labels, run_name=run_name)


def test_split_sizes_and_partition():
    train, test = split_indices(10, 0.8, seed=4)
    assert len(train) == 8 and len(test) == 2
    assert sorted(np.concatenate([train, test]).tolist()) == list(range(10))


def test_split_is_deterministic():
    first = split_indices(50, seed=7)
    second = split_indices(50, seed=7)
    np.testing.assert_array_equal(first[0], second[0])
    np.testing.assert_array_equal(first[1], second[1])


def test_split_needs_enough_samples():
    with pytest.raises(ValidationError, match="too few samples"):
        split_indices(4)
    with pytest.raises(ValidationError):
        split_indices(10, train_fraction=1.0)


def test_shuffle_split_datasets():
    train, test = shuffle_split(_dataset(), seed=1)
    assert (len(train), len(test)) == (24, 6)
    assert {s.frame for s in train.samples}.isdisjoint({s.frame for s in test.samples})


def test_normalize_predictions():
    np.testing.assert_allclose(normalize_predictions([[30, 90]]), [[25, 75]])
    np.testing.assert_allclose(normalize_predictions([[0, 0]]), [[50, 50]])
    np.testing.assert_allclose(normalize_predictions([[-10, 50]]), [[0, 100]])
    np.testing.assert_allclose(normalize_predictions([[120, -5]]), [[100, 0]])


def test_normalized_pairs_sum_to_hundred():
    raw = np.random.default_rng(0).uniform(-20, 120, size=(10_000, 2))
    out = normalize_predictions(raw)
    assert out.min() >= 0 and out.max() <= 100
    np.testing.assert_allclose(out.sum(axis=1), 100.0, atol=1e-9)


def test_relative_error():
    assert E_MAX == pytest.approx(141.4214, abs=1e-4)
    assert relative_error((50, 50), (50, 50)) == 0.0
    assert relative_error((100, 0), (0, 100)) == pytest.approx(100.0)
    assert relative_error((100, 0), (50, 50)) == pytest.approx(50.0)


def test_single_origin_training_predicts_that_origin():
    grids = [np.random.default_rng(k).uniform(size=(2, 3)) for k in range(12)]
    dataset = make_dataset(grids, [(3, 0)] * 12)
    models = train_origin_models(dataset, SMALL)
    assert predict_distribution(models, grids[0]) == pytest.approx((100.0, 0.0))


def test_origin_models_predict_complementary_shares():
    dataset = _dataset(n=50, seed=3)
    X = feature_matrix(dataset)

    exact = train_origin_models(dataset, ForestParams(n_trees=1, mtry=6, min_leaf=1, bootstrap=False))
    totals = predict_many(exact[0], X) + predict_many(exact[1], X)
    np.testing.assert_allclose(totals, 100.0, atol=1e-9)

    bagged = train_origin_models(dataset, ForestParams(n_trees=20, min_leaf=2))
    totals = predict_many(bagged[0], X) + predict_many(bagged[1], X)
    assert totals.mean() == pytest.approx(100.0, abs=5.0)


def test_train_needs_samples():
    with pytest.raises(ValidationError):
        train_origin_models(make_dataset([], []), SMALL)


def test_run_experiment_sim_mode():
    report = run_experiment(Mode.SIM, _dataset(), n_runs=3, base_seed=10, params=SMALL)
    assert len(report.runs) == 3
    for k, run in enumerate(report.runs):
        assert (run.run, run.seed) == (k, 10 + k)
        assert (run.n_train, run.n_test) == (24, 6)
        assert 0 <= run.mean_error <= 100
        train_idx, test_idx = split_indices(30, seed=run.seed)
        np.testing.assert_array_equal(run.test_indices, test_idx)
        assert not set(run.test_indices.tolist()) & set(train_idx.tolist())
        assert run.holdout_mean_error is None


def test_run_experiment_is_deterministic():
    first = run_experiment("exp", _dataset(), n_runs=2, params=SMALL)
    second = run_experiment("exp", _dataset(), n_runs=2, params=SMALL)
    for a, b in zip(first.runs, second.runs):
        np.testing.assert_array_equal(a.errors, b.errors)
        assert a.oob_r2_left == b.oob_r2_left


def test_separate_test_set_ignored_outside_hybrid(caplog):
    report = run_experiment(Mode.SIM, _dataset(), _dataset(n=10, seed=1), n_runs=1, params=SMALL)
    assert report.runs[0].n_test == 6
    assert "ignored" in caplog.text


def test_hybrid_mode_tests_on_whole_experimental_set():
    report = run_experiment(Mode.HYBRID, _dataset(), _dataset(n=12, seed=1, run_name="exp"), n_runs=2, params=SMALL)
    for run in report.runs:
        assert (run.n_train, run.n_test) == (24, 12)
        np.testing.assert_array_equal(run.test_indices, np.arange(12))
        assert run.holdout_mean_error is not None
    assert "Holdout mean error" in format_report_table(report)


def test_hybrid_mode_requirements():
    with pytest.raises(ValidationError):
        run_experiment(Mode.HYBRID, _dataset(), n_runs=1, params=SMALL)
    with pytest.raises(GridMismatchError):
        run_experiment(Mode.HYBRID, _dataset(), _dataset(n=10, shape=(3, 3)), n_runs=1, params=SMALL)


def test_run_count_checked():
    with pytest.raises(ValidationError):
        run_experiment(Mode.SIM, _dataset(), n_runs=0, params=SMALL)


def test_error_by_label():
    dataset = make_dataset([np.zeros((1, 1))] * 3, [(1, 1), (1, 0), (2, 2)])
    rows = error_by_label(dataset, np.array([10.0, 40.0, 20.0]))
    assert rows == [(Fraction(1, 2), Fraction(1, 2), 2, 15.0), (Fraction(1), Fraction(0), 1, 40.0)]
    with pytest.raises(ValidationError):
        error_by_label(dataset, np.array([1.0]))


def test_report_files(tmp_path):
    params = ForestParams(n_trees=2, min_leaf=2, bootstrap=False)
    report = run_experiment(Mode.SIM, _dataset(), n_runs=2, params=params)
    path = tmp_path / "report.csv"
    write_report_csv(report, path)
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(REPORT_COLUMNS)
    assert len(lines) == 3
    cells = lines[1].split(",")
    assert cells[:5] == ["sim", "0", "0", "24", "6"]
    assert cells[7:] == ["", "", "", ""]

    table = format_report_table(report)
    assert "Run 1" in table and "Run 2" in table
    assert "OOB R^2 left" in table


def test_label_and_prediction_files(tmp_path):
    dataset = _dataset()
    models = train_origin_models(dataset, SMALL)
    errors = write_predictions_csv(models, dataset, tmp_path / "predictions.csv")
    lines = (tmp_path / "predictions.csv").read_text().splitlines()
    assert lines[0] == "run_name,frame,true_left,true_right,pred_left,pred_right,error"
    assert len(lines) == 31
    rows = error_by_label(dataset, errors)
    write_error_by_label_csv(rows, tmp_path / "labels.csv")
    label_lines = (tmp_path / "labels.csv").read_text().splitlines()
    assert label_lines[0] == "left,right,count,mean_error"
    assert sum(int(line.split(",")[2]) for line in label_lines[1:]) == 30
    assert all(not math.isnan(e) for e in errors)
