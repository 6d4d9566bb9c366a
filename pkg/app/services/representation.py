from dataclasses import dataclass
from typing import Union

import numpy as np

from app.autodiff import ops
from app.autodiff.tensor import Tensor, as_tensor
from app.core.errors import DimensionError
from app.models.distribution import BiGaussianParams
from app.models.weights import BranchWeights, ModelWeights, TcnWeights
from app.schemas.all_schemas import ModelConfig
from app.services.graph import SparseGraphs, embed_nodes, learn_sparse_graphs, positional_encoding
from app.services.ingest import reconstruct_positions

RngLike = Union[int, np.random.Generator, None]


@dataclass(frozen=True)
class Prediction:
    params: BiGaussianParams
    graphs: SparseGraphs


def gcn_layer(a, h: Tensor, w: Tensor, slope: Tensor) -> Tensor:
    """H' = PReLU(Aᵀ H W): every receiver j sums A[i, j] * H[i] over its influencers i."""
    a = as_tensor(a)
    if a.shape[-1] != a.shape[-2] or a.shape[-1] != h.shape[-2]:
        raise DimensionError(f"gcn: adjacency {a.shape} does not match node features {h.shape}")
    return ops.prelu(a.mT @ h @ w, slope)


def initial_features(nodes: np.ndarray, weights: BranchWeights):
    """Embedded node attributes: [T_obs, N, D] for the spatial GCN, [N, T_obs, D] for the temporal one."""
    h0_spa = embed_nodes(nodes, weights.embed_spa_w, weights.embed_spa_b)
    encoding = positional_encoding(nodes.shape[0], weights.embed_tmp_w.shape[1])
    h0_tmp = embed_nodes(np.ascontiguousarray(nodes.transpose(1, 0, 2)), weights.embed_tmp_w,
                         weights.embed_tmp_b, encoding)
    return h0_spa, h0_tmp


def interaction_tendency_branch(a_spa, a_tmp, h0_spa: Tensor, weights: BranchWeights) -> Tensor:
    """Spatial GCN per time step, then temporal GCN per pedestrian; returns [T_obs, N, D]."""
    spatial = gcn_layer(a_spa, h0_spa, weights.spa1, weights.slope_spa1)
    temporal = gcn_layer(a_tmp, spatial.swapaxes(0, 1), weights.tmp1, weights.slope_tmp1)
    return temporal.swapaxes(0, 1)


def tendency_interaction_branch(a_spa, a_tmp, h0_tmp: Tensor, weights: BranchWeights) -> Tensor:
    """Temporal GCN first, then spatial; returns [T_obs, N, D]."""
    temporal = gcn_layer(a_tmp, h0_tmp, weights.tmp2, weights.slope_tmp2)
    return gcn_layer(a_spa, temporal.swapaxes(0, 1), weights.spa2, weights.slope_spa2)


def fuse_branches(h_itf: Tensor, h_tif: Tensor) -> Tensor:
    if h_itf.shape != h_tif.shape:
        raise DimensionError(f"branch outputs differ in shape: {h_itf.shape} vs {h_tif.shape}")
    return h_itf + h_tif


def tcn_head(h: Tensor, weights: TcnWeights) -> BiGaussianParams:
    """
    Time steps are conv channels: layer 1 maps T_obs -> T_pred, later layers are residual.
    Kernels span 1 pedestrian x S features, so pedestrians never mix here.
    """
    x = h
    for layer, (w, b, slope) in enumerate(zip(weights.conv_w, weights.conv_b, weights.slopes)):
        y = ops.prelu(ops.conv2d_zero_pad(x, w, b), slope)
        x = y if layer == 0 else y + x
    raw = x @ weights.out_w + weights.out_b  # [T_pred, N, 5]
    return BiGaussianParams(
        mu=raw[:, :, 0:2],
        sigma=ops.exp(raw[:, :, 2:4]),
        rho=ops.tanh(raw[:, :, 4]),
    )


def predict_distribution(weights: ModelWeights, displacements_obs: np.ndarray, config: ModelConfig,
                         keep_dense: bool = False) -> Prediction:
    """Full forward pass: displacements [T_obs, N, 2] -> bi-Gaussian over [T_pred, N] displacements."""
    nodes = np.asarray(displacements_obs, dtype=np.float64)
    if nodes.ndim != 3 or nodes.shape[0] != config.t_obs or nodes.shape[2] != 2:
        raise DimensionError(f"expected displacements [{config.t_obs}, N, 2], got {nodes.shape}")

    graphs = learn_sparse_graphs(nodes, weights.spatial, weights.temporal, config, keep_dense)
    a_spa, a_tmp = graphs.spatial.normalized, graphs.temporal.normalized
    h0_spa, h0_tmp = initial_features(nodes, weights.branches)

    h = fuse_branches(
        interaction_tendency_branch(a_spa, a_tmp, h0_spa, weights.branches),
        tendency_interaction_branch(a_spa, a_tmp, h0_tmp, weights.branches),
    )
    return Prediction(params=tcn_head(h, weights.tcn), graphs=graphs)


def sample_displacements(params: BiGaussianParams, num_samples: int, rng: RngLike = None) -> np.ndarray:
    """[K, T_pred, N, 2] draws via the Cholesky factor of [[sx², r sx sy], [r sx sy, sy²]]."""
    generator = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    mu, sigma, rho = params.mu.data, params.sigma.data, params.rho.data
    z = generator.standard_normal(size=(num_samples,) + mu.shape)
    dx = mu[..., 0] + sigma[..., 0] * z[..., 0]
    dy = mu[..., 1] + sigma[..., 1] * (rho * z[..., 0] + np.sqrt(1.0 - rho * rho) * z[..., 1])
    return np.stack([dx, dy], axis=-1)


def sample_trajectory(params: BiGaussianParams, last_observed: np.ndarray, rng_seed: RngLike = None) -> np.ndarray:
    """One sampled future [T_pred, N, 2] in absolute positions."""
    displacements = sample_displacements(params, 1, rng_seed)[0]
    return reconstruct_positions(displacements, np.asarray(last_observed, dtype=np.float64))
