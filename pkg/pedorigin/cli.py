"""
Command-line front end. Every command reads and writes plain files:
trajectories -> dataset -> model -> report.
"""

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from itertools import repeat
from pathlib import Path

import yaml
from dotenv import load_dotenv

from pedorigin import __version__
from pedorigin._config import log_level
from pedorigin.analysis import (
    DEFAULT_H_V,
    average_voronoi_map,
    fundamental_diagram,
    spearman,
    write_fd_csv,
)
from pedorigin.exceptions import PedOriginError, ValidationError
from pedorigin.floorfield import FieldParams, travel_time_field, wall_distance, write_grid_csv
from pedorigin.forest import ForestParams, oob_scores, save_models, load_models
from pedorigin.heatmap import (
    DEFAULT_CELL,
    DEFAULT_SIGMA,
    build_dataset,
    dedup_consecutive,
    default_equal_cap,
    distribution_report,
    feature_matrix,
    format_distribution_table,
    label_matrix,
    read_dataset,
    rebalance_equal,
    write_dataset,
)
from pedorigin.ingest import (
    DEFAULT_EXPERIMENT_FPS,
    Source,
    assign_origins,
    fetch_archive,
    fetch_default_archive,
    read_trajectories,
    translate,
    write_trajectories,
)
from pedorigin.pipeline import (
    Mode,
    error_by_label,
    format_report_table,
    run_experiment,
    train_origin_models,
    write_error_by_label_csv,
    write_predictions_csv,
    write_report_csv,
)
from pedorigin.scenario import (
    OBSERVATION_AREA_DEPTHS,
    Rect,
    ScenarioConfig,
    build_tjunction,
    export_geometry,
    load_scenario_config,
    preset_by_name,
    scenario_config_from_dict,
    scenario_config_to_dict,
    scenario_presets,
)
from pedorigin.simulator import SimParams, run_simulation

logger = logging.getLogger(__name__)

TRAJECTORY_GLOB = "*.txt"
FD_REGION_MARGIN = 1.0


def _write_manifest(
    args: argparse.Namespace, argv: list[str], out: Path, outputs: list[Path], started: datetime
) -> Path:
    """
    Records how an output was produced next to it: <out>.manifest.yaml for
    files, <dir>/manifest.yaml for directories.
    """
    path = out / "manifest.yaml" if out.is_dir() else out.with_name(out.name + ".manifest.yaml")
    settings = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k != "func"}
    manifest = {
        "tool": "pedorigin",
        "version": __version__,
        "command": args.command,
        "argv": list(argv),
        "settings": settings,
        "outputs": [str(p) for p in outputs],
        "started": started.isoformat(),
        "finished": datetime.now(timezone.utc).isoformat(),
    }
    with open(path, "w") as f:
        yaml.safe_dump(manifest, f, sort_keys=False)
    return path


def _configs(args: argparse.Namespace) -> list[ScenarioConfig]:
    if args.config:
        return [load_scenario_config(args.config)]
    names = args.preset or []
    if not names:
        raise ValidationError("either --preset or --config is required", field="preset")
    if "all" in names:
        return scenario_presets(args.middle)
    return [preset_by_name(name, args.middle) for name in names]


def _split_cycle(text: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ValidationError(f"--split-left must be a comma-separated list of fractions, got '{text}'", field="split_left")
    if not values:
        raise ValidationError("--split-left needs at least one value", field="split_left")
    return values


def _shift(text: str) -> tuple[float, float]:
    try:
        dx, dy = (float(v) for v in text.split(","))
    except ValueError:
        raise ValidationError(f"--shift must read DX,DY, got '{text}'", field="shift")
    return dx, dy


def _simulate_and_write(config: ScenarioConfig, params: SimParams, out_dir: Path) -> Path:
    trajset = run_simulation(config, params)
    path = out_dir / f"{trajset.name}.txt"
    write_trajectories(trajset, path)
    return path


def cmd_simulate(args: argparse.Namespace) -> list[Path]:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    splits = _split_cycle(args.split_left)
    params = SimParams(field=FieldParams(w_obs=args.obstacle_weight))
    params.validate()

    runs = []
    for config in _configs(args):
        for _ in range(args.runs):
            index = len(runs)
            runs.append(
                config.replace(
                    agent_count=args.agents,
                    split_left=splits[index % len(splits)],
                    seed=args.seed + index,
                )
            )

    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as executor:
            paths = list(executor.map(_simulate_and_write, runs, repeat(params), repeat(out_dir)))
    else:
        paths = [_simulate_and_write(config, params, out_dir) for config in runs]
    for path in paths:
        print(path)
    return paths


def cmd_ingest(args: argparse.Namespace) -> list[Path]:
    trajset = read_trajectories(args.input, units=args.units, fps=args.fps)
    trajset = trajset.replace(source=Source.EXPERIMENTAL, name=Path(args.input).stem)
    if args.shift:
        trajset = translate(trajset, *_shift(args.shift))

    scenario = None
    if args.preset or args.config:
        config = _configs(args)[0]
        scenario = build_tjunction(config)
        trajset = trajset.replace(
            metadata={**trajset.metadata, "config_name": config.name, "scenario": scenario_config_to_dict(config)}
        )
    else:
        logger.warning("no scenario given; origins are split at x = 0 and featurize will need a scenario")
    trajset = assign_origins(trajset, scenario, args.epsilon_x)

    out = Path(args.out)
    sidecar = write_trajectories(trajset, out)
    logger.info("ingested %d pedestrians from %s", len(trajset.pedestrians), args.input)
    return [out, sidecar]


def cmd_fetch(args: argparse.Namespace) -> list[Path]:
    if args.url:
        paths = fetch_archive(args.url, args.out)
    else:
        paths = fetch_default_archive(args.out)
    for path in paths:
        print(path)
    return paths


def cmd_geometry(args: argparse.Namespace) -> list[Path]:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for config in _configs(args):
        scenario = build_tjunction(config)
        geometry = out_dir / f"{config.name}.geometry.json"
        geometry.write_text(json.dumps(export_geometry(scenario), indent=2) + "\n")

        travel = out_dir / f"{config.name}.travel_time.csv"
        field = travel_time_field(scenario, args.obstacle_weight, args.cell)
        write_grid_csv(field, travel, comment=f"travel time to the target for {config.name}")

        walls = out_dir / f"{config.name}.wall_distance.csv"
        write_grid_csv(wall_distance(scenario, args.cell), walls, comment=f"wall distance (m) for {config.name}")
        written.extend([geometry, travel, walls])
    return written


def _scenario_from_metadata(trajset, path: Path) -> ScenarioConfig:
    data = trajset.metadata.get("scenario")
    if not data:
        raise ValidationError(
            f"{path}: no scenario recorded in the metadata sidecar; ingest it with --preset or --config",
            field="scenario",
        )
    return scenario_config_from_dict(data)


def _trajectory_files(directory: str) -> list[Path]:
    files = sorted(Path(directory).glob(TRAJECTORY_GLOB))
    if not files:
        raise ValidationError(f"no trajectory files ({TRAJECTORY_GLOB}) in {directory}", field="in")
    return files


def cmd_featurize(args: argparse.Namespace) -> list[Path]:
    depth = OBSERVATION_AREA_DEPTHS[args.area]
    trajsets = []
    areas = []
    for path in _trajectory_files(args.input):
        trajset = read_trajectories(path)
        config = _scenario_from_metadata(trajset, path).replace(obs_area_depth=depth)
        trajsets.append(trajset)
        areas.append(build_tjunction(config).observation_area)

    dataset = build_dataset(trajsets, areas, args.cell, args.sigma, args.stride)
    write_dataset(dataset, args.out)
    print(f"{len(dataset)} heatmaps from {len(trajsets)} runs")
    return [Path(args.out)]


def cmd_curate(args: argparse.Namespace) -> list[Path]:
    dataset = read_dataset(args.input)
    before = len(dataset)
    if args.dedup:
        dataset = dedup_consecutive(dataset)
    if args.cap_equal is not None:
        cap = default_equal_cap(dataset) if args.cap_equal == "auto" else int(args.cap_equal)
        dataset = rebalance_equal(dataset, cap)
    write_dataset(dataset, args.out)
    print(f"kept {len(dataset)} of {before} heatmaps")
    return [Path(args.out)]


def _forest_params(args: argparse.Namespace) -> ForestParams:
    params = ForestParams(n_trees=args.trees, mtry=args.mtry, min_leaf=args.min_leaf, seed=args.seed)
    params.validate()
    return params


def cmd_train(args: argparse.Namespace) -> list[Path]:
    dataset = read_dataset(args.input)
    models = train_origin_models(dataset, _forest_params(args))
    save_models(models, args.out)

    X = feature_matrix(dataset)
    Y = label_matrix(dataset)
    for tag, forest, column in (("left", models[0], 0), ("right", models[1], 1)):
        mse, r2 = oob_scores(forest, X, Y[:, column])
        print(f"{tag}: OOB MSE {mse:.3f}, OOB R^2 {r2:.4f}")
    return [Path(args.out)]


def cmd_evaluate(args: argparse.Namespace) -> list[Path]:
    train = read_dataset(args.train)
    test = read_dataset(args.test) if args.test else None
    report = run_experiment(
        args.mode,
        train,
        test,
        n_runs=args.runs,
        base_seed=args.seed,
        params=_forest_params(args),
        jobs=args.jobs,
    )
    print(format_report_table(report))
    written = []
    if args.out:
        write_report_csv(report, args.out)
        written.append(Path(args.out))
    if args.by_label:
        first = report.runs[0]
        source = test if report.mode == Mode.HYBRID else train
        rows = error_by_label(source.subset(first.test_indices), first.errors)
        write_error_by_label_csv(rows, args.by_label)
        written.append(Path(args.by_label))
    return written


def cmd_predict(args: argparse.Namespace) -> list[Path]:
    models = load_models(args.model)
    dataset = read_dataset(args.input)
    errors = write_predictions_csv(models, dataset, args.out)
    if len(errors):
        print(f"mean error {errors.mean():.2f}% over {len(errors)} heatmaps")
    return [Path(args.out)]


def cmd_analyze(args: argparse.Namespace) -> list[Path]:
    trajset = read_trajectories(args.input)
    config = _configs(args)[0] if (args.preset or args.config) else _scenario_from_metadata(trajset, Path(args.input))
    scenario = build_tjunction(config)

    if args.kind == "voronoi":
        region = scenario.measurement_areas[args.area_id - 1] if args.area_id else scenario.bounds
        voronoi = average_voronoi_map(trajset, region, args.cell, walkable=scenario)
        write_grid_csv(voronoi.field, args.out, comment=f"average Voronoi density over {voronoi.n_frames} frames")
        print(f"averaged {voronoi.n_frames} frames")
    else:
        if not args.area_id:
            raise ValidationError("fd needs --area-id 1, 2 or 3", field="area_id")
        area = scenario.measurement_areas[args.area_id - 1]
        region = Rect(
            area.x0 - FD_REGION_MARGIN,
            area.y0 - FD_REGION_MARGIN,
            area.w + 2 * FD_REGION_MARGIN,
            area.h + 2 * FD_REGION_MARGIN,
        )
        points = fundamental_diagram(trajset, area, args.area_id, args.cell, region, walkable=scenario)
        write_fd_csv(points, args.out)
        print(f"{len(points)} points, Spearman(density, speed) = {spearman(points):.3f}")
    return [Path(args.out)]


def cmd_report(args: argparse.Namespace) -> list[Path]:
    dataset = read_dataset(args.input)
    print(format_distribution_table(distribution_report(dataset)))
    return []


def _add_scenario_options(parser: argparse.ArgumentParser, required: bool = False) -> None:
    group = parser.add_mutually_exclusive_group(required=required)
    group.add_argument("--preset", action="append", help="preset name such as 240-50-240, or 'all'; repeatable")
    group.add_argument("--config", help="YAML scenario config")
    parser.add_argument(
        "--middle",
        choices=["corridor", "entrance"],
        default="corridor",
        help="read the middle preset number as corridor or entrance width",
    )


def _add_forest_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--trees", type=int, default=50)
    parser.add_argument("--mtry", type=int, default=None, help="features tried per split (default ceil(p/3))")
    parser.add_argument("--min-leaf", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pedorigin", description="Pedestrian origin-distribution inference")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v for INFO, -vv for DEBUG")
    parser.add_argument("--jobs", type=int, default=1, help="worker processes for independent runs")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="simulate T-junction runs")
    _add_scenario_options(sim, required=True)
    sim.add_argument("--agents", type=int, default=300)
    sim.add_argument("--split-left", default="0.5", help="fraction of agents starting left; a comma list cycles per run")
    sim.add_argument("--runs", type=int, default=1, help="runs per scenario")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--obstacle-weight", type=float, default=FieldParams.w_obs)
    sim.add_argument("--out", required=True, help="output directory")
    sim.set_defaults(func=cmd_simulate)

    ing = sub.add_parser("ingest", help="normalize an experiment trajectory file")
    ing.add_argument("--in", dest="input", required=True)
    ing.add_argument("--units", choices=["cm", "m"], default="m")
    ing.add_argument("--fps", type=float, default=DEFAULT_EXPERIMENT_FPS)
    ing.add_argument("--shift", help="DX,DY added to every position, in meters")
    ing.add_argument("--epsilon-x", type=float, default=0.1)
    _add_scenario_options(ing)
    ing.add_argument("--out", required=True)
    ing.set_defaults(func=cmd_ingest)

    fet = sub.add_parser("fetch", help="download the experiment trajectory archive")
    fet.add_argument("--url", help="archive URL (default: $PEDORIGIN_DATA_URL)")
    fet.add_argument("--out", required=True, help="output directory")
    fet.set_defaults(func=cmd_fetch)

    geo = sub.add_parser("geometry", help="export geometry and navigation grids")
    _add_scenario_options(geo, required=True)
    geo.add_argument("--cell", type=float, default=FieldParams.h)
    geo.add_argument("--obstacle-weight", type=float, default=FieldParams.w_obs)
    geo.add_argument("--out", required=True, help="output directory")
    geo.set_defaults(func=cmd_geometry)

    fea = sub.add_parser("featurize", help="build the heatmap dataset")
    fea.add_argument("--in", dest="input", required=True, help="directory of trajectory files")
    fea.add_argument("--area", type=int, choices=sorted(OBSERVATION_AREA_DEPTHS), default=1)
    fea.add_argument("--sigma", type=float, default=DEFAULT_SIGMA)
    fea.add_argument("--cell", type=float, default=DEFAULT_CELL)
    fea.add_argument("--stride", type=int, default=1)
    fea.add_argument("--out", required=True)
    fea.set_defaults(func=cmd_featurize)

    cur = sub.add_parser("curate", help="dedup and rebalance a dataset")
    cur.add_argument("--in", dest="input", required=True)
    cur.add_argument("--dedup", action="store_true")
    cur.add_argument("--cap-equal", help="cap for 50/50 samples, or 'auto' for the second most frequent label count")
    cur.add_argument("--out", required=True)
    cur.set_defaults(func=cmd_curate)

    tra = sub.add_parser("train", help="train the left/right forests")
    tra.add_argument("--in", dest="input", required=True)
    _add_forest_options(tra)
    tra.add_argument("--out", required=True, help="model file")
    tra.set_defaults(func=cmd_train)

    eva = sub.add_parser("evaluate", help="seeded train/test evaluation")
    eva.add_argument("--mode", choices=[m.value for m in Mode], required=True)
    eva.add_argument("--train", required=True)
    eva.add_argument("--test")
    eva.add_argument("--runs", type=int, default=5)
    _add_forest_options(eva)
    eva.add_argument("--out", help="report CSV")
    eva.add_argument("--by-label", help="per-label error CSV for the first run")
    eva.set_defaults(func=cmd_evaluate)

    pre = sub.add_parser("predict", help="apply a trained model to a dataset")
    pre.add_argument("--model", required=True)
    pre.add_argument("--in", dest="input", required=True)
    pre.add_argument("--out", required=True)
    pre.set_defaults(func=cmd_predict)

    ana = sub.add_parser("analyze", help="Voronoi density map or fundamental diagram")
    ana.add_argument("kind", choices=["voronoi", "fd"])
    ana.add_argument("--in", dest="input", required=True)
    ana.add_argument("--area-id", type=int, choices=[1, 2, 3])
    ana.add_argument("--cell", type=float, default=DEFAULT_H_V)
    _add_scenario_options(ana)
    ana.add_argument("--out", required=True)
    ana.set_defaults(func=cmd_analyze)

    rep = sub.add_parser("report", help="print dataset summaries")
    rep.add_argument("kind", choices=["distributions"])
    rep.add_argument("--in", dest="input", required=True)
    rep.set_defaults(func=cmd_report)

    return parser


def _configure_logging(verbose: int) -> None:
    if verbose >= 2:
        level = "DEBUG"
    elif verbose == 1:
        level = "INFO"
    else:
        level = log_level()
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv: list[str] | None = None) -> int:
    load_dotenv()
    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_logging(args.verbose)

    started = datetime.now(timezone.utc)
    try:
        outputs = args.func(args)
        out = getattr(args, "out", None)
        if out and outputs:
            _write_manifest(args, argv if argv is not None else sys.argv[1:], Path(out), outputs, started)
    except (PedOriginError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0
