import argparse
import logging
from pathlib import Path
from typing import Callable, Dict, Optional, Sequence

import numpy as np

from app.core.config import dump_config, load_config_file, resolve_run_config, settings
from app.core.errors import ConfigurationError, SGCNError
from app.db.checkpoint import load_checkpoint
from app.models.weights import ModelWeights
from app.schemas.all_schemas import COMMANDS, MetricsReport, RunConfig
from app.services.evaluation import evaluate_best_of_k
from app.services.ingest import (
    leave_one_out_split,
    load_scene_file,
    load_scene_tables,
    observation_window,
    reconstruct_positions,
    subsample,
)
from app.services.reports import (
    write_matrix_blocks,
    write_metrics_csv,
    write_prediction_csv,
    write_summary,
    write_sweep_csv,
)
from app.services.representation import predict_distribution, sample_displacements
from app.services.training import train

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 2


def _common_flags() -> argparse.ArgumentParser:
    # default=None везде: флаг перекрывает файл только если он задан
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="flat key = value config file")
    common.add_argument("--data-root", dest="data_root", default=None)
    common.add_argument("--scenes", default=None, help="comma-separated scene names")
    common.add_argument("--holdout", default=None)
    common.add_argument("--epochs", type=int, default=None)
    common.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    common.add_argument("--lr", type=float, default=None)
    common.add_argument("--xi", type=float, default=None)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--num-samples", dest="num_samples", type=int, default=None)
    common.add_argument("--out", default=None)
    common.add_argument("--jobs", type=int, default=None)
    common.add_argument("--t-obs", dest="t_obs", type=int, default=None)
    common.add_argument("--t-pred", dest="t_pred", type=int, default=None)
    common.add_argument("--embed-dim", dest="embed_dim", type=int, default=None)
    common.add_argument("--train-fraction", dest="train_fraction", type=float, default=None)
    common.add_argument("--max-test-windows", dest="max_test_windows", type=int, default=None)
    common.add_argument("--checkpoint", default=None)
    common.add_argument("--scene-file", dest="scene_file", default=None)
    common.add_argument("--field-order", dest="field_order", default=None)
    common.add_argument("--xis", default=None, help="comma-separated xi values for sweep-xi")
    common.add_argument("--no-interaction", dest="interaction", action="store_const", const=False, default=None)
    common.add_argument("--no-motion-tendency", dest="motion_tendency", action="store_const", const=False,
                        default=None)
    common.add_argument("--no-zero-softmax", dest="zero_softmax", action="store_const", const=False, default=None)
    common.add_argument("--dump-raw", dest="dump_raw", action="store_const", const=True, default=None,
                        help="dump-graphs: also write dense attention scores")
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sgcn", description=settings.PROJECT_NAME)
    sub = parser.add_subparsers(dest="command", required=True)
    common = _common_flags()
    helps = {
        "train": "train on every scene except the holdout",
        "eval": "best-of-K ADE/FDE on the holdout scene",
        "predict": "export the predicted distribution for a scene file",
        "dump-graphs": "export the learned sparse adjacencies for a scene file",
        "sweep-xi": "train and evaluate one model per threshold",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    file_values = load_config_file(args.config) if args.config is not None else {}
    return resolve_run_config(args.command, file_values, flags)


def _prepare_out(config: RunConfig) -> Path:
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved_config.txt").write_text(dump_config(config))
    return out


def _require_data_root(config: RunConfig) -> Path:
    if config.data_root is None:
        raise ConfigurationError("no data root: pass --data-root or set SGCN_DATA_ROOT")
    return config.data_root


def _split(config: RunConfig):
    tables = load_scene_tables(_require_data_root(config), config.scenes, config.field_order)
    return leave_one_out_split(tables, config.holdout, config.t_obs, config.t_pred)


def _checkpoint_path(config: RunConfig) -> Path:
    return config.checkpoint if config.checkpoint is not None else Path(config.out) / "checkpoint.txt"


def _load_weights(config: RunConfig) -> ModelWeights:
    path = _checkpoint_path(config)
    loaded = load_checkpoint(path, expected=config.model_part())
    logger.info("loaded %s (epoch %d)", path, loaded.epoch)
    return loaded.weights


def _observed_scene(config: RunConfig):
    if config.scene_file is None:
        raise ConfigurationError(f"{config.command} needs --scene-file")
    table = load_scene_file(config.scene_file, field_order=config.field_order)
    return observation_window(table, config.t_obs)


def _print_metrics(report: MetricsReport) -> None:
    print(f"ADE={report.ade:.4f} FDE={report.fde:.4f} "
          f"(best-of-{report.num_samples}, {report.num_windows} windows, {report.num_pedestrians} pedestrians)")


def cmd_train(config: RunConfig) -> int:
    out = _prepare_out(config)
    split = _split(config)
    split.train_scenes = subsample(split.train_scenes, config.train_fraction, seed=config.seed)
    result = train(config, split, out_dir=out)
    logger.info("trained %d steps, final nll %.4f", len(result.loss_curve),
                result.loss_curve[-1].nll if result.loss_curve else float("nan"))
    return EXIT_OK


def cmd_eval(config: RunConfig) -> int:
    out = _prepare_out(config)
    weights = _load_weights(config)
    split = _split(config)
    test_scenes = subsample(split.test_scenes, limit=config.max_test_windows, seed=config.seed)
    report = evaluate_best_of_k(weights, test_scenes, config.model_part(), config.num_samples,
                                config.seed, config.jobs)
    write_metrics_csv(report, out / "metrics.csv")
    write_summary(report, out / "summary.txt", split.holdout_name, str(_checkpoint_path(config)))
    _print_metrics(report)
    return EXIT_OK


def cmd_predict(config: RunConfig) -> int:
    out = _prepare_out(config)
    weights = _load_weights(config)
    scene = _observed_scene(config)
    prediction = predict_distribution(weights, scene.displacements_obs, config.model_part())
    displacements = sample_displacements(prediction.params, config.num_samples, np.random.default_rng(config.seed))
    samples = np.stack([reconstruct_positions(d, scene.last_observed) for d in displacements])
    path = write_prediction_csv(out / "prediction.csv", scene, prediction.params, samples)
    logger.info("prediction for %d pedestrians written to %s", scene.num_pedestrians, path)
    return EXIT_OK


def cmd_dump_graphs(config: RunConfig) -> int:
    out = _prepare_out(config)
    weights = _load_weights(config)
    scene = _observed_scene(config)
    prediction = predict_distribution(weights, scene.displacements_obs, config.model_part(),
                                      keep_dense=config.dump_raw)
    graphs = prediction.graphs
    peds, steps = list(scene.pedestrian_ids), list(range(scene.t_obs))

    a_spa, a_tmp = graphs.spatial.normalized.data, graphs.temporal.normalized.data
    write_matrix_blocks(out / "adjacency_spatial.txt", "spatial adjacency, rows influence columns",
                        [(f"t={t}", a_spa[t]) for t in steps], peds, peds)
    write_matrix_blocks(out / "adjacency_temporal.txt", "temporal adjacency, rows influence columns",
                        [(f"pedestrian={p}", a_tmp[n]) for n, p in enumerate(peds)], steps, steps)

    if config.dump_raw and graphs.dense is not None:
        write_matrix_blocks(out / "attention_spatial.txt", "dense spatial attention",
                            [(f"t={t}", graphs.dense.spatial.data[t]) for t in steps], peds, peds)
        write_matrix_blocks(out / "attention_temporal.txt", "dense temporal attention",
                            [(f"pedestrian={p}", graphs.dense.temporal.data[n]) for n, p in enumerate(peds)],
                            steps, steps)
    logger.info("adjacencies for %d pedestrians written to %s", scene.num_pedestrians, out)
    return EXIT_OK


def cmd_sweep(config: RunConfig) -> int:
    out = _prepare_out(config)
    split = _split(config)
    train_scenes = subsample(split.train_scenes, config.train_fraction, seed=config.seed)
    test_scenes = subsample(split.test_scenes, limit=config.max_test_windows, seed=config.seed)
    split.train_scenes = train_scenes

    rows = []
    for xi in config.xis:
        run = config.model_copy(update={"xi": xi})
        result = train(run, split, out_dir=out / f"xi_{xi:g}")
        report = evaluate_best_of_k(result.weights, test_scenes, run.model_part(), run.num_samples,
                                    run.seed, run.jobs)
        logger.info("xi=%g: ADE=%.4f FDE=%.4f", xi, report.ade, report.fde)
        rows.append((xi, report))
    write_sweep_csv(out / "sweep.csv", rows)
    return EXIT_OK


HANDLERS: Dict[str, Callable[[RunConfig], int]] = {
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "dump-graphs": cmd_dump_graphs,
    "sweep-xi": cmd_sweep,
}


def run(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = config_from_args(args)
        return HANDLERS[config.command](config)
    except SGCNError as exc:
        logger.error("error: %s", exc)
        return EXIT_ERROR
