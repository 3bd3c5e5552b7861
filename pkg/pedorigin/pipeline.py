"""
Experiment protocol: shuffle split, one forest per origin, normalized
predictions, relative-error evaluation over several seeded runs, and the
three dataset modes (simulated, experimental, hybrid).
"""

import dataclasses
import logging
import math
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from pathlib import Path

import numpy as np

from pedorigin._helpers import _fmt, _half_up
from pedorigin.exceptions import ValidationError
from pedorigin.forest import Forest, ForestParams, fit_forest, oob_scores, predict_many
from pedorigin.heatmap import Dataset, check_compatible, feature_matrix, label_matrix

logger = logging.getLogger(__name__)

E_MAX = math.sqrt(2 * 100.0**2)
TRAIN_FRACTION = 0.8
MIN_SPLIT_SAMPLES = 5
ORIGIN_TAGS = {"left": 1, "right": 2}

REPORT_COLUMNS = (
    "mode",
    "run",
    "seed",
    "n_train",
    "n_test",
    "mean_error",
    "stdev_error",
    "oob_r2_left",
    "oob_r2_right",
    "holdout_mean_error",
    "holdout_stdev_error",
)


class Mode(str, Enum):
    SIM = "sim"
    EXP = "exp"
    HYBRID = "hybrid"


@dataclass(eq=False)
class EvalRun:
    run: int
    seed: int
    n_train: int
    n_test: int
    mean_error: float
    stdev_error: float
    oob_r2_left: float
    oob_r2_right: float
    holdout_mean_error: float | None = None
    holdout_stdev_error: float | None = None
    test_indices: np.ndarray = field(default=None, repr=False)
    errors: np.ndarray = field(default=None, repr=False)


@dataclass(eq=False)
class EvalReport:
    mode: Mode
    runs: list[EvalRun]


def split_indices(n: int, train_fraction: float = TRAIN_FRACTION, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    if n < MIN_SPLIT_SAMPLES:
        raise ValidationError(f"too few samples: {n} (need at least {MIN_SPLIT_SAMPLES})", field="dataset")
    if not 0 < train_fraction < 1:
        raise ValidationError("train_fraction must lie strictly between 0 and 1", field="train_fraction")
    permutation = np.random.default_rng(seed).permutation(n)
    n_train = _half_up(train_fraction * n)
    return permutation[:n_train], permutation[n_train:]


def shuffle_split(dataset: Dataset, train_fraction: float = TRAIN_FRACTION, seed: int = 0) -> tuple[Dataset, Dataset]:
    """
    Uniform random permutation by seed; the first round(train_fraction * n)
    samples train, the rest test.
    """
    train_idx, test_idx = split_indices(len(dataset), train_fraction, seed)
    return dataset.subset(train_idx), dataset.subset(test_idx)


def _origin_seed(seed: int, origin: str) -> int:
    state = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, ORIGIN_TAGS[origin]])
    return int(state.generate_state(1, dtype=np.uint64)[0])


def train_origin_models(train: Dataset, params: ForestParams | None = None) -> tuple[Forest, Forest]:
    """
    Fits one forest on the left percentages and one on the right
    percentages of the same heatmaps.
    """
    params = params or ForestParams()
    if not len(train):
        raise ValidationError("cannot train on an empty dataset", field="train")
    X = feature_matrix(train)
    Y = label_matrix(train)
    left = fit_forest(X, Y[:, 0], dataclasses.replace(params, seed=_origin_seed(params.seed, "left")))
    right = fit_forest(X, Y[:, 1], dataclasses.replace(params, seed=_origin_seed(params.seed, "right")))
    return left, right


def normalize_predictions(raw: np.ndarray) -> np.ndarray:
    """
    Clamps raw (left, right) pairs to [0, 100] and scales each pair to sum to
    100; a pair that clamps to (0, 0) becomes (50, 50).
    """
    clamped = np.clip(np.asarray(raw, dtype=float).reshape(-1, 2), 0.0, 100.0)
    total = clamped.sum(axis=1)
    out = np.full_like(clamped, 50.0)
    positive = total > 0
    out[positive] = 100.0 * clamped[positive] / total[positive, None]
    return out


def predict_distributions(models: tuple[Forest, Forest], X: np.ndarray) -> np.ndarray:
    left, right = models
    raw = np.column_stack([predict_many(left, X), predict_many(right, X)])
    return normalize_predictions(raw)


def predict_distribution(models: tuple[Forest, Forest], values) -> tuple[float, float]:
    x = np.asarray(values, dtype=float).ravel()
    p_left, p_right = predict_distributions(models, x[None, :])[0]
    return float(p_left), float(p_right)


def relative_errors(y: np.ndarray, y_hat: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=float).reshape(-1, 2)
    y_hat = np.asarray(y_hat, dtype=float).reshape(-1, 2)
    return 100.0 * np.hypot(*(y - y_hat).T) / E_MAX


def relative_error(y, y_hat) -> float:
    """
    Euclidean distance between two distributions in percent of the largest
    possible distance, sqrt(2 * 100^2).
    """
    return float(relative_errors(y, y_hat)[0])


def _oob_r2(forest: Forest, X: np.ndarray, y: np.ndarray) -> float:
    if not forest.bootstrap:
        return float("nan")
    return oob_scores(forest, X, y)[1]


def _evaluate(models: tuple[Forest, Forest], test: Dataset) -> np.ndarray:
    return relative_errors(label_matrix(test), predict_distributions(models, feature_matrix(test)))


def run_once(
    mode: Mode,
    train_source: Dataset,
    test_source: Dataset,
    run: int,
    base_seed: int,
    params: ForestParams,
) -> EvalRun:
    """
    One seeded run: split, train both forests, score the test set.
    """
    seed = base_seed + run
    train_idx, rest_idx = split_indices(len(train_source), TRAIN_FRACTION, seed)
    train = train_source.subset(train_idx)
    if mode == Mode.HYBRID:
        test_idx = np.arange(len(test_source))
        test = test_source
    else:
        test_idx = rest_idx
        test = test_source.subset(rest_idx)

    models = train_origin_models(train, dataclasses.replace(params, seed=seed))
    X_train = feature_matrix(train)
    Y_train = label_matrix(train)
    errors = _evaluate(models, test)

    result = EvalRun(
        run=run,
        seed=seed,
        n_train=len(train),
        n_test=len(test),
        mean_error=float(errors.mean()) if len(errors) else float("nan"),
        stdev_error=float(errors.std()) if len(errors) else float("nan"),
        oob_r2_left=_oob_r2(models[0], X_train, Y_train[:, 0]),
        oob_r2_right=_oob_r2(models[1], X_train, Y_train[:, 1]),
        test_indices=test_idx,
        errors=errors,
    )
    if mode == Mode.HYBRID:
        holdout = _evaluate(models, train_source.subset(rest_idx))
        result.holdout_mean_error = float(holdout.mean())
        result.holdout_stdev_error = float(holdout.std())

    logger.info(
        "%s run %d (seed %d): mean error %.2f%%, stdev %.2f%% on %d test samples",
        mode.value, run, seed, result.mean_error, result.stdev_error, result.n_test,
    )
    return result


def run_experiment(
    mode: Mode | str,
    train_source: Dataset,
    test_source: Dataset | None = None,
    n_runs: int = 5,
    base_seed: int = 0,
    params: ForestParams | None = None,
    jobs: int = 1,
) -> EvalReport:
    """
    Runs n_runs seeded evaluations with seeds base_seed + run. In sim and exp
    mode the test samples are the 20 % split off the source; in hybrid mode
    the forests train on 80 % of the simulated source and are tested on the
    whole experimental dataset.
    """
    mode = Mode(mode)
    params = params or ForestParams()
    params.validate()
    if n_runs < 1:
        raise ValidationError("n_runs must be at least 1", field="n_runs")
    if test_source is None:
        if mode == Mode.HYBRID:
            raise ValidationError("hybrid mode needs an experimental test dataset", field="test_source")
        test_source = train_source
    check_compatible(train_source.grid, test_source.grid)
    if mode != Mode.HYBRID and test_source is not train_source:
        logger.warning("%s mode splits the training dataset; the separate test dataset is ignored", mode.value)
        test_source = train_source

    arguments = [(mode, train_source, test_source, run, base_seed, params) for run in range(n_runs)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as executor:
            runs = list(executor.map(run_once, *zip(*arguments)))
    else:
        runs = [run_once(*args) for args in arguments]
    return EvalReport(mode, runs)


def error_by_label(test: Dataset, errors: np.ndarray) -> list[tuple[Fraction, Fraction, int, float]]:
    """
    Mean relative error and sample count per true origin distribution,
    labels in ascending order.
    """
    if len(test) != len(errors):
        raise ValidationError("one error per test sample is required", field="errors")
    grouped = defaultdict(list)
    for sample, error in zip(test.samples, errors):
        grouped[sample.label].append(float(error))
    return [(left, right, len(grouped[(left, right)]), float(np.mean(grouped[(left, right)]))) for left, right in sorted(grouped)]


def _percent(value: float | None) -> str:
    if value is None or math.isnan(value):
        return "-"
    return f"{value:.2f}%"


def _ratio(value: float) -> str:
    return "-" if math.isnan(value) else f"{value:.4f}"


def format_report_table(report: EvalReport) -> str:
    """
    Rows are the error statistics, columns the runs.
    """
    rows = [
        ("Mean Euclidean error", [_percent(r.mean_error) for r in report.runs]),
        ("Stdev Euclidean error", [_percent(r.stdev_error) for r in report.runs]),
        ("Accuracy", [_percent(100.0 - r.mean_error) for r in report.runs]),
        ("OOB R^2 left", [_ratio(r.oob_r2_left) for r in report.runs]),
        ("OOB R^2 right", [_ratio(r.oob_r2_right) for r in report.runs]),
    ]
    if report.mode == Mode.HYBRID:
        rows.append(("Holdout mean error", [_percent(r.holdout_mean_error) for r in report.runs]))
        rows.append(("Holdout stdev error", [_percent(r.holdout_stdev_error) for r in report.runs]))

    label_width = max(len(label) for label, _ in rows) + 2
    header = f"{'mode ' + report.mode.value:<{label_width}}" + "".join(f"{'Run ' + str(r.run + 1):>10}" for r in report.runs)
    lines = [header]
    for label, cells in rows:
        lines.append(f"{label:<{label_width}}" + "".join(f"{cell:>10}" for cell in cells))
    return "\n".join(lines)


def _csv_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return "" if math.isnan(value) else _fmt(value)
    return str(value)


def write_report_csv(report: EvalReport, path: str | Path) -> None:
    lines = [",".join(REPORT_COLUMNS)]
    for r in report.runs:
        values = [
            report.mode.value,
            r.run,
            r.seed,
            r.n_train,
            r.n_test,
            r.mean_error,
            r.stdev_error,
            r.oob_r2_left,
            r.oob_r2_right,
            r.holdout_mean_error,
            r.holdout_stdev_error,
        ]
        lines.append(",".join(_csv_value(v) for v in values))
    Path(path).write_text("\n".join(lines) + "\n")


def write_error_by_label_csv(rows: list[tuple[Fraction, Fraction, int, float]], path: str | Path) -> None:
    lines = ["left,right,count,mean_error"]
    for left, right, count, error in rows:
        lines.append(f"{_fmt(float(left))},{_fmt(float(right))},{count},{_fmt(error)}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_predictions_csv(models: tuple[Forest, Forest], dataset: Dataset, path: str | Path) -> np.ndarray:
    """
    Applies the model pair to every sample and writes one row per sample.
    Returns the relative errors.
    """
    truth = label_matrix(dataset)
    predicted = predict_distributions(models, feature_matrix(dataset))
    errors = relative_errors(truth, predicted)
    lines = ["run_name,frame,true_left,true_right,pred_left,pred_right,error"]
    for sample, y, y_hat, error in zip(dataset.samples, truth, predicted, errors):
        lines.append(
            f"{sample.run_name},{sample.frame},{_fmt(y[0])},{_fmt(y[1])},{_fmt(y_hat[0])},{_fmt(y_hat[1])},{_fmt(error)}"
        )
    Path(path).write_text("\n".join(lines) + "\n")
    return errors
