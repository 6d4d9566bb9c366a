from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from app.core.errors import DataError


@dataclass(frozen=True)
class RawTrajectoryTable:
    """Rows of (frame_id, pedestrian_id, x, y), sorted by (frame_id, pedestrian_id)."""

    name: str
    frames: np.ndarray
    pedestrian_ids: np.ndarray
    positions: np.ndarray

    def __len__(self) -> int:
        return int(self.frames.shape[0])

    def shifted(self, frame_offset: int) -> "RawTrajectoryTable":
        return RawTrajectoryTable(self.name, self.frames + frame_offset, self.pedestrian_ids.copy(), self.positions.copy())


@dataclass(frozen=True)
class TrajectoryScene:
    """One window: N pedestrians present at every observed and future frame."""

    name: str
    start_frame: int
    pedestrian_ids: Tuple[int, ...]
    positions_obs: np.ndarray  # [T_obs, N, 2]
    positions_fut: Optional[np.ndarray] = None  # [T_pred, N, 2]
    displacements_obs: Optional[np.ndarray] = None  # [T_obs, N, 2]

    @property
    def num_pedestrians(self) -> int:
        return len(self.pedestrian_ids)

    @property
    def t_obs(self) -> int:
        return int(self.positions_obs.shape[0])

    @property
    def t_pred(self) -> int:
        return 0 if self.positions_fut is None else int(self.positions_fut.shape[0])

    @property
    def last_observed(self) -> np.ndarray:
        return self.positions_obs[-1]

    def displacements_fut(self) -> np.ndarray:
        """Per-step deltas of the future, the first one taken from the last observed position."""
        if self.positions_fut is None:
            raise DataError(f"scene {self.name}@{self.start_frame} has no future positions")
        path = np.concatenate([self.positions_obs[-1:], self.positions_fut], axis=0)
        return np.diff(path, axis=0)


@dataclass
class DatasetSplit:
    holdout_name: str
    train_scenes: List[TrajectoryScene] = field(default_factory=list)
    test_scenes: List[TrajectoryScene] = field(default_factory=list)
