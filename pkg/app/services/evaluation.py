import logging
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Sequence, Tuple

import numpy as np

from app.core.errors import ConfigurationError, DimensionError
from app.models.distribution import BiGaussianParams
from app.models.scene import TrajectoryScene
from app.models.weights import ModelWeights
from app.schemas.all_schemas import MetricsReport, ModelConfig, SceneMetrics
from app.services.ingest import reconstruct_positions
from app.services.representation import predict_distribution, sample_displacements

logger = logging.getLogger(__name__)


def _check_shapes(pred: np.ndarray, gt: np.ndarray) -> None:
    if pred.shape != gt.shape:
        raise DimensionError(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")


def ade(pred, gt) -> float:
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    _check_shapes(pred, gt)
    return float(np.mean(np.linalg.norm(pred - gt, axis=-1)))


def fde(pred, gt) -> float:
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    _check_shapes(pred, gt)
    return float(np.mean(np.linalg.norm(pred[-1] - gt[-1], axis=-1)))


def best_of_k(samples: np.ndarray, gt: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Per pedestrian, pick the sample with the lowest ADE.

    ``samples`` is [K, T_pred, N, 2] in absolute positions; returns per-pedestrian
    (ade, fde) of the selected samples, each of shape [N].
    """
    if samples.shape[1:] != gt.shape:
        raise DimensionError(f"samples {samples.shape} do not match ground truth {gt.shape}")
    dist = np.linalg.norm(samples - gt[None], axis=-1)  # [K, T, N]
    per_sample_ade = dist.mean(axis=1)  # [K, N]
    best = np.argmin(per_sample_ade, axis=0)
    peds = np.arange(gt.shape[1])
    return per_sample_ade[best, peds], dist[best, -1, peds]


def evaluate_prediction(params: BiGaussianParams, scene: TrajectoryScene, num_samples: int,
                        rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    displacements = sample_displacements(params, num_samples, rng)
    origin = scene.last_observed
    samples = np.stack([reconstruct_positions(d, origin) for d in displacements])
    return best_of_k(samples, scene.positions_fut)


def evaluate_best_of_k(weights: ModelWeights, test_scenes: Sequence[TrajectoryScene], config: ModelConfig,
                       num_samples: int = 20, seed: int = 0, jobs: int = 1) -> MetricsReport:
    """
    Best-of-K ADE/FDE in meters, averaged over every pedestrian of every window.
    Each window draws from its own generator seeded by (seed, window index), so the
    result does not depend on ``jobs``.
    """
    if num_samples < 1:
        raise ConfigurationError(f"num_samples must be >= 1, got {num_samples}")
    started = time.perf_counter()

    def run(item):
        index, scene = item
        prediction = predict_distribution(weights, scene.displacements_obs, config)
        rng = np.random.default_rng([seed, index])
        return evaluate_prediction(prediction.params, scene, num_samples, rng)

    items = list(enumerate(test_scenes))
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run, items))
    else:
        results = [run(item) for item in items]

    rows = []
    for (index, scene), (ade_n, fde_n) in zip(items, results):
        rows.append(SceneMetrics(
            index=index,
            scene=scene.name,
            start_frame=scene.start_frame,
            num_pedestrians=scene.num_pedestrians,
            ade=float(ade_n.mean()),
            fde=float(fde_n.mean()),
        ))

    all_ade = np.concatenate([r[0] for r in results]) if results else np.zeros(0)
    all_fde = np.concatenate([r[1] for r in results]) if results else np.zeros(0)
    report = MetricsReport(
        ade=float(all_ade.mean()) if all_ade.size else 0.0,
        fde=float(all_fde.mean()) if all_fde.size else 0.0,
        num_windows=len(rows),
        num_pedestrians=int(all_ade.size),
        num_samples=num_samples,
        wall_clock_s=time.perf_counter() - started,
        scenes=rows,
    )
    if not rows:
        logger.warning("evaluation ran on an empty test set")
    logger.info("best-of-%d over %d windows: ADE=%.4f FDE=%.4f", num_samples, report.num_windows, report.ade, report.fde)
    return report
