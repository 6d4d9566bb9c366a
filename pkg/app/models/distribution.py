from dataclasses import dataclass

import numpy as np

from app.autodiff.tensor import Tensor


@dataclass(frozen=True)
class BiGaussianParams:
    """Displacement-space bi-variate normal per future step and pedestrian."""

    mu: Tensor  # [T_pred, N, 2]
    sigma: Tensor  # [T_pred, N, 2], > 0
    rho: Tensor  # [T_pred, N], |rho| < 1

    @property
    def t_pred(self) -> int:
        return int(self.mu.shape[0])

    @property
    def num_pedestrians(self) -> int:
        return int(self.mu.shape[1])

    @classmethod
    def from_arrays(cls, mu, sigma, rho) -> "BiGaussianParams":
        return cls(Tensor(mu), Tensor(sigma), Tensor(rho))

    def mean_path(self, last_observed: np.ndarray) -> np.ndarray:
        """Absolute positions reached by following the mean displacements."""
        return last_observed[None] + np.cumsum(self.mu.data, axis=0)
