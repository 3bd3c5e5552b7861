import numpy as np
import pytest
import yaml

from conftest import make_dataset
from pedorigin import __version__
from pedorigin.cli import build_parser, main
from pedorigin.heatmap import read_dataset, write_dataset
from pedorigin.ingest import Origin, read_trajectories

RAW_TRACKS = """# id frame x y
1 0 -3.0 1.2
1 1 -0.3 4.5
1 2 -0.3 4.8
1 3 -0.3 5.1
2 0 3.0 1.2
2 1 0.3 4.5
2 2 0.3 4.8
2 3 0.3 5.1
"""


def _dataset_file(path, n=20, shape=(2, 3), seed=0):
    rng = np.random.default_rng(seed)
    labels = [(int(k % 3) + 1, int(k % 2) + 1) for k in range(n)]
    write_dataset(make_dataset([rng.uniform(size=shape) for _ in range(n)], labels), path)
    return path


def test_parser_version(capsys):
    with pytest.raises(SystemExit):
        build_parser().parse_args(["--version"])
    assert __version__ in capsys.readouterr().out


def test_simulate_without_agents(tmp_path, caplog):
    out = tmp_path / "sim"
    assert main(["simulate", "--preset", "240-240-240", "--agents", "0", "--out", str(out)]) == 0
    trajset = read_trajectories(out / "240-240-240_seed0.txt")
    assert not trajset.pedestrians
    assert "no agents to simulate" in caplog.text
    manifest = yaml.safe_load((out / "manifest.yaml").read_text())
    assert manifest["command"] == "simulate"
    assert manifest["argv"] == ["simulate", "--preset", "240-240-240", "--agents", "0", "--out", str(out)]


def test_ingest_and_featurize(tmp_path, capsys):
    raw = tmp_path / "raw.dat"
    raw.write_text(RAW_TRACKS)
    runs = tmp_path / "runs"
    runs.mkdir()
    out = runs / "run.txt"
    assert main(["ingest", "--in", str(raw), "--preset", "240-240-240", "--out", str(out)]) == 0
    trajset = read_trajectories(out)
    assert trajset.pedestrians[1].origin == Origin.LEFT
    assert trajset.pedestrians[2].origin == Origin.RIGHT
    assert trajset.metadata["config_name"] == "240-240-240"
    assert (runs / "run.txt.manifest.yaml").exists()

    dataset_path = tmp_path / "dataset.csv"
    assert main(["featurize", "--in", str(runs), "--out", str(dataset_path)]) == 0
    assert "3 heatmaps from 1 runs" in capsys.readouterr().out
    dataset = read_dataset(dataset_path)
    assert [s.frame for s in dataset.samples] == [1, 2, 3]
    assert all(s.is_equal_split for s in dataset.samples)


def test_ingest_malformed_file(tmp_path, capsys):
    raw = tmp_path / "raw.dat"
    raw.write_text("1 0 abc 1.0\n")
    assert main(["ingest", "--in", str(raw), "--out", str(tmp_path / "out.txt")]) == 1
    assert "non-numeric x" in capsys.readouterr().err


def test_featurize_needs_scenario(tmp_path, capsys):
    raw = tmp_path / "raw.dat"
    raw.write_text(RAW_TRACKS)
    runs = tmp_path / "runs"
    runs.mkdir()
    assert main(["ingest", "--in", str(raw), "--out", str(runs / "run.txt")]) == 0
    assert main(["featurize", "--in", str(runs), "--out", str(tmp_path / "d.csv")]) == 1
    assert "no scenario recorded" in capsys.readouterr().err


def test_report_distributions(tmp_path, capsys):
    path = _dataset_file(tmp_path / "dataset.csv")
    assert main(["report", "distributions", "--in", str(path)]) == 0
    out = capsys.readouterr().out
    assert "# Heatmaps" in out
    assert "total" in out


def test_curate(tmp_path, capsys):
    path = _dataset_file(tmp_path / "dataset.csv")
    out = tmp_path / "curated.csv"
    assert main(["curate", "--in", str(path), "--dedup", "--cap-equal", "1", "--out", str(out)]) == 0
    curated = read_dataset(out)
    assert sum(s.is_equal_split for s in curated.samples) == 1


def test_train_predict_evaluate(tmp_path, capsys):
    dataset = _dataset_file(tmp_path / "dataset.csv")
    model = tmp_path / "model.txt"
    forest = ["--trees", "3", "--min-leaf", "2"]
    assert main(["train", "--in", str(dataset), *forest, "--out", str(model)]) == 0
    assert "OOB R^2" in capsys.readouterr().out
    assert (tmp_path / "model.txt.manifest.yaml").exists()

    predictions = tmp_path / "predictions.csv"
    assert main(["predict", "--model", str(model), "--in", str(dataset), "--out", str(predictions)]) == 0
    assert len(predictions.read_text().splitlines()) == 21

    report = tmp_path / "report.csv"
    by_label = tmp_path / "labels.csv"
    args = ["evaluate", "--mode", "sim", "--train", str(dataset), "--runs", "2", *forest]
    assert main([*args, "--out", str(report), "--by-label", str(by_label)]) == 0
    assert "Run 2" in capsys.readouterr().out
    assert len(report.read_text().splitlines()) == 3
    assert by_label.read_text().startswith("left,right,count,mean_error")


def test_evaluate_hybrid_grid_mismatch(tmp_path, capsys):
    train = _dataset_file(tmp_path / "sim.csv")
    test = _dataset_file(tmp_path / "exp.csv", shape=(3, 3))
    args = ["evaluate", "--mode", "hybrid", "--train", str(train), "--test", str(test), "--trees", "2"]
    assert main(args) == 1
    assert "grid metadata mismatch" in capsys.readouterr().err


def test_missing_input_file(tmp_path):
    assert main(["report", "distributions", "--in", str(tmp_path / "missing.csv")]) == 2
