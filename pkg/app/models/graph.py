from dataclasses import dataclass

import numpy as np

from app.autodiff.tensor import Tensor


@dataclass(frozen=True)
class GraphInputs:
    spatial_nodes: np.ndarray  # [T_obs, N, 2]
    temporal_nodes: np.ndarray  # [N, T_obs, 2], transposed view of spatial_nodes
    spatial_edge_init: np.ndarray  # [N, N] all ones
    temporal_edge_init: np.ndarray  # [T_obs, T_obs] upper triangular incl. diagonal

    @classmethod
    def from_nodes(cls, nodes: np.ndarray) -> "GraphInputs":
        t_obs, n = nodes.shape[0], nodes.shape[1]
        return cls(
            spatial_nodes=nodes,
            temporal_nodes=nodes.transpose(1, 0, 2),
            spatial_edge_init=np.ones((n, n), dtype=bool),
            temporal_edge_init=np.triu(np.ones((t_obs, t_obs), dtype=bool)),
        )

    @property
    def t_obs(self) -> int:
        return int(self.spatial_nodes.shape[0])

    @property
    def num_pedestrians(self) -> int:
        return int(self.spatial_nodes.shape[1])


@dataclass(frozen=True)
class DenseScores:
    spatial: Tensor  # [T_obs, N, N]
    temporal: Tensor  # [N, T_obs, T_obs]


@dataclass(frozen=True)
class SparseAdjacency:
    """Entry (i, j) of a slice reads as the influence of node i on node j."""

    normalized: Tensor
    mask: np.ndarray
    raw: Tensor

    @property
    def shape(self):
        return self.normalized.shape
