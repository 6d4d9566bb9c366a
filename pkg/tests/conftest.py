from pathlib import Path
from typing import Iterable, Tuple

import numpy as np
import pytest

from app.models.scene import DatasetSplit, RawTrajectoryTable, TrajectoryScene
from app.models.weights import init_weights
from app.schemas.all_schemas import ModelConfig, TrainConfig
from app.services.ingest import to_displacements

FIXTURE_DIR = Path(__file__).resolve().parent.parent / "data" / "fixtures"


def make_table(rows: Iterable[Tuple[int, int, float, float]], name: str = "SYN") -> RawTrajectoryTable:
    """Table from (frame, pedestrian, x, y) tuples, sorted the way the loader sorts."""
    rows = sorted(rows, key=lambda r: (r[0], r[1]))
    frames = np.array([r[0] for r in rows], dtype=np.int64)
    peds = np.array([r[1] for r in rows], dtype=np.int64)
    positions = np.array([[r[2], r[3]] for r in rows], dtype=np.float64).reshape(-1, 2)
    return RawTrajectoryTable(name, frames, peds, positions)


def linear_scene(velocities, t_obs: int, t_pred: int, start=None, name: str = "LIN") -> TrajectoryScene:
    """Constant-velocity pedestrians; ``velocities`` is [N, 2] per-step displacement."""
    velocities = np.asarray(velocities, dtype=np.float64)
    n = velocities.shape[0]
    start = np.zeros((n, 2)) if start is None else np.asarray(start, dtype=np.float64)
    steps = np.arange(t_obs + t_pred, dtype=np.float64)[:, None, None]
    path = start[None] + steps * velocities[None]
    scene = TrajectoryScene(
        name=name,
        start_frame=0,
        pedestrian_ids=tuple(range(1, n + 1)),
        positions_obs=path[:t_obs].copy(),
        positions_fut=path[t_obs:].copy(),
    )
    return to_displacements(scene)


@pytest.fixture
def fixture_dir() -> Path:
    return FIXTURE_DIR


@pytest.fixture
def tiny_config() -> ModelConfig:
    """Small enough for finite differences over every parameter."""
    return ModelConfig(t_obs=4, t_pred=3, embed_dim=8, asym_layers=2, tcn_layers=2, xi=0.5)


@pytest.fixture
def tiny_weights(tiny_config):
    return init_weights(tiny_config, seed=0)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def random_scene(rng) -> TrajectoryScene:
    """N=3 random walk with T_obs=4, T_pred=3."""
    path = np.cumsum(rng.normal(scale=0.3, size=(7, 3, 2)), axis=0)
    scene = TrajectoryScene(
        name="RND",
        start_frame=0,
        pedestrian_ids=(1, 2, 3),
        positions_obs=path[:4].copy(),
        positions_fut=path[4:].copy(),
    )
    return to_displacements(scene)


@pytest.fixture
def overfit_split() -> DatasetSplit:
    """Two constant-velocity scenes sharing one walking speed."""
    velocity = [[0.4, 0.1], [0.4, 0.1]]
    scenes = [
        linear_scene(velocity, 4, 3, start=[[0.0, 0.0], [1.0, 2.0]], name="A"),
        linear_scene(velocity, 4, 3, start=[[5.0, 1.0], [-2.0, 0.5]], name="B"),
    ]
    return DatasetSplit(holdout_name="NONE", train_scenes=scenes)


@pytest.fixture
def overfit_config() -> TrainConfig:
    return TrainConfig(
        t_obs=4, t_pred=3, embed_dim=16, asym_layers=2, tcn_layers=2, xi=0.5,
        epochs=400, batch_size=2, lr=0.01, lr_decay_interval=300, seed=0,
    )
