import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from app.autodiff import ops
from app.autodiff.tensor import Tape, Tensor, as_tensor
from app.core.errors import ConfigurationError, DimensionError, NumericError
from app.db.checkpoint import save_checkpoint
from app.models.distribution import BiGaussianParams
from app.models.scene import DatasetSplit, TrajectoryScene
from app.models.weights import ModelWeights, init_weights
from app.schemas.all_schemas import LossRecord, ModelConfig, TrainConfig
from app.services.reports import LossLogWriter
from app.services.representation import predict_distribution

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)
SIGMA_FLOOR = 1e-8
RHO_LIMIT = 1.0 - 1e-6


def nll_loss(params: BiGaussianParams, gt_displacements) -> Tensor:
    """
    Bi-variate normal negative log-likelihood, summed over future steps and averaged
    over pedestrians. |rho| is clamped to 1 - 1e-6 and sigma floored at 1e-8.
    """
    gt = as_tensor(gt_displacements)
    if gt.shape != params.mu.shape:
        raise DimensionError(f"ground truth {gt.shape} does not match predicted means {params.mu.shape}")

    sigma = ops.clip(params.sigma, SIGMA_FLOOR, None)
    rho = ops.clip(params.rho, -RHO_LIMIT, RHO_LIMIT)
    sx, sy = sigma[:, :, 0], sigma[:, :, 1]
    zx = (gt[:, :, 0] - params.mu[:, :, 0]) / sx
    zy = (gt[:, :, 1] - params.mu[:, :, 1]) / sy
    one_minus_rho2 = 1.0 - rho * rho

    z = zx * zx + zy * zy - 2.0 * rho * zx * zy
    per_point = LOG_2PI + ops.log(sx) + ops.log(sy) + 0.5 * ops.log(one_minus_rho2) + z / (2.0 * one_minus_rho2)
    return ops.sum(per_point) / float(params.num_pedestrians)


@dataclass
class AdamState:
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(params: Dict[str, Tensor], grads: Dict[str, np.ndarray], state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    """In-place Adam update with bias correction."""
    state.step += 1
    bc1 = 1.0 - beta1 ** state.step
    bc2 = 1.0 - beta2 ** state.step

    for name, param in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(param.data)
            state.v[name] = np.zeros_like(param.data)
        m, v = state.m[name], state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        param.data -= (lr / bc1) * m / (np.sqrt(v / bc2) + eps)
    return state


def learning_rate(config: TrainConfig, epoch: int) -> float:
    return config.lr * config.lr_decay_factor ** (epoch // config.lr_decay_interval)


def scene_loss(weights: ModelWeights, scene: TrajectoryScene, config: ModelConfig) -> Tensor:
    try:
        prediction = predict_distribution(weights, scene.displacements_obs, config)
        return nll_loss(prediction.params, scene.displacements_fut())
    except NumericError as exc:
        raise NumericError(
            f"non-finite loss on scene {scene.name} (start frame {scene.start_frame}, "
            f"{scene.num_pedestrians} pedestrians {list(scene.pedestrian_ids)}): {exc}"
        ) from exc


@dataclass
class TrainResult:
    weights: ModelWeights
    loss_curve: List[LossRecord]
    checkpoint_path: Optional[Path] = None


def train(config: TrainConfig, split: DatasetSplit, out_dir: Optional[Path] = None,
          initial_weights: Optional[ModelWeights] = None) -> TrainResult:
    """
    Adam over gradient-accumulation batches of ``batch_size`` scenes; every scene keeps
    its own pedestrian count. The step-decay schedule and a seeded shuffle make
    runs repeatable.
    """
    scenes = split.train_scenes
    if not scenes:
        raise ConfigurationError(f"training set is empty (holdout {split.holdout_name})")

    model_config = config.model_part()
    weights = initial_weights or init_weights(model_config, seed=config.seed)
    params = weights.named_parameters()
    state = AdamState()
    rng = np.random.default_rng(config.seed)

    log_writer = LossLogWriter(out_dir / "loss_log.csv") if out_dir is not None else None
    curve: List[LossRecord] = []
    step = 0
    try:
        for epoch in range(config.epochs):
            lr = learning_rate(config, epoch)
            order = rng.permutation(len(scenes))
            epoch_losses = []
            for start in range(0, len(order), config.batch_size):
                batch = order[start:start + config.batch_size]
                weights.zero_grad()
                total = 0.0
                for idx in batch:
                    with Tape() as tape:
                        loss = scene_loss(weights, scenes[idx], model_config)
                    tape.backward(loss)
                    total += loss.item()

                # среднее по сценам окна накопления
                grads = {name: g / len(batch) for name, g in weights.grads().items()}
                adam_step(params, grads, state, lr)

                record = LossRecord(epoch=epoch, step=step, nll=total / len(batch), lr=lr)
                curve.append(record)
                epoch_losses.append(record.nll)
                if log_writer is not None:
                    log_writer.write(record)
                step += 1

            logger.info("epoch %d/%d: nll=%.4f lr=%g", epoch + 1, config.epochs, float(np.mean(epoch_losses)), lr)
            if out_dir is not None and (epoch + 1) % config.checkpoint_interval == 0 and epoch + 1 < config.epochs:
                save_checkpoint(out_dir / f"checkpoint_epoch{epoch + 1}.txt", weights, model_config, epoch + 1)
    finally:
        if log_writer is not None:
            log_writer.close()

    weights.zero_grad()
    checkpoint_path = None
    if out_dir is not None:
        checkpoint_path = save_checkpoint(out_dir / "checkpoint.txt", weights, model_config, config.epochs)
        logger.info("checkpoint written to %s", checkpoint_path)
    return TrainResult(weights=weights, loss_curve=curve, checkpoint_path=checkpoint_path)
