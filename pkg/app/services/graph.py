"""
Sparse directed graph learning: self-attention scores, spatial-temporal fusion,
asymmetric convolutions, thresholded masks and Zero-Softmax normalization.

Slices are read row-to-column: entry (i, j) is the influence of node i on node j.
"""
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from app.autodiff import ops
from app.autodiff.tensor import Tensor, as_tensor
from app.core.errors import ConfigurationError, DimensionError
from app.models.graph import DenseScores, GraphInputs, SparseAdjacency
from app.models.weights import SparseGraphWeights
from app.schemas.all_schemas import ModelConfig

ZERO_SOFTMAX_EPS = 1e-12


@dataclass(frozen=True)
class SparseGraphs:
    spatial: SparseAdjacency  # [T_obs, N, N]
    temporal: SparseAdjacency  # [N, T_obs, T_obs]
    dense: Optional[DenseScores] = None


def positional_encoding(length: int, dim: int) -> np.ndarray:
    """Fixed sinusoidal table [length, dim]: sin on even columns, cos on odd ones."""
    positions = np.arange(length)[:, None]
    rates = np.power(10000.0, -(np.arange(0, dim, 2) / dim))
    table = np.zeros((length, dim))
    table[:, 0::2] = np.sin(positions * rates)
    table[:, 1::2] = np.cos(positions * rates[: dim // 2])
    return table


def embed_nodes(nodes, w: Tensor, b: Optional[Tensor] = None,
                position_encoding: Optional[np.ndarray] = None) -> Tensor:
    nodes = as_tensor(nodes)
    if nodes.shape[-1] != 2:
        raise DimensionError(f"node attributes must be 2-d coordinates, got last extent {nodes.shape[-1]}")
    out = nodes @ w
    if b is not None:
        out = out + b
    if position_encoding is not None:
        # строки кодировки - по шагу времени (предпоследняя ось)
        out = out + Tensor(position_encoding)
    return out


def attention_scores(e: Tensor, w_q: Tensor, w_k: Tensor, scale: Optional[float] = None,
                     mask: Optional[np.ndarray] = None) -> Tensor:
    """Row-stochastic Softmax(Q Kᵀ / scale) over the last axis, optionally restricted to ``mask``."""
    q = e @ w_q
    k = e @ w_k
    if scale is None:
        scale = float(np.sqrt(w_q.shape[-1]))
    logits = (q @ k.mT) / scale
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), logits.shape)
    return ops.softmax_lastdim(logits, mask)


def fuse_spatial_temporal(stacked: Tensor, kernels: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """1x1 convolution mixing the time slices at every (i, j); no activation."""
    channels = stacked.shape[0]
    if kernels.shape != (channels, channels, 1, 1):
        raise ConfigurationError(
            f"fusion kernels must be [{channels}, {channels}, 1, 1] for {channels} time slices, got {kernels.shape}"
        )
    return ops.conv2d_zero_pad(stacked, kernels, bias)


def asymmetric_conv_features(r_hat: Tensor, row_w: Sequence[Tensor], row_b: Sequence[Tensor],
                             col_w: Sequence[Tensor], col_b: Sequence[Tensor],
                             slopes: Sequence[Tensor]) -> Tensor:
    """F(l) = PReLU(conv_1xS(F(l-1)) + conv_Sx1(F(l-1))), F(0) = r_hat; shape preserved."""
    features = r_hat
    for kr, br, kc, bc, slope in zip(row_w, row_b, col_w, col_b, slopes):
        row = ops.conv2d_zero_pad(features, kr, br)
        col = ops.conv2d_zero_pad(features, kc, bc)
        features = ops.prelu(row + col, slope)
    return features


def sparse_mask(features, xi: float) -> np.ndarray:
    """M = 1{sigmoid(F) >= xi}; a constant for differentiation."""
    if not (0.0 <= xi <= 1.0):
        raise ConfigurationError(f"threshold xi must be in [0, 1], got {xi}")
    f = as_tensor(features).data
    if xi == 0.0:
        return np.ones(f.shape, dtype=bool)
    if xi == 1.0:
        # sigmoid конечного F всегда < 1
        return np.zeros(f.shape, dtype=bool)
    # sigmoid(F) >= xi  <=>  F >= logit(xi), без округления сигмоиды в 0/1
    return f >= np.log(xi / (1.0 - xi))


def _identity_like(shape) -> np.ndarray:
    return np.broadcast_to(np.eye(shape[-1], dtype=bool), shape)


def sparse_adjacency(mask: np.ndarray, r_hat: Tensor) -> Tensor:
    """A = min(M + I, 1) * R_hat per slice."""
    if mask.shape != r_hat.shape:
        raise DimensionError(f"mask shape {mask.shape} != scores shape {r_hat.shape}")
    keep = np.logical_or(mask, _identity_like(mask.shape))
    return r_hat * Tensor(keep.astype(np.float64))


def zero_softmax(x, eps: float = ZERO_SOFTMAX_EPS, axis: int = -1) -> Tensor:
    """y_i = (exp(x_i) - 1)^2 / (sum_j (exp(x_j) - 1)^2 + eps); zeros stay exact zeros."""
    shifted = ops.expm1(as_tensor(x))
    numerator = shifted * shifted
    return numerator / (ops.sum(numerator, axis=axis, keepdims=True) + eps)


def _normalize(raw: Tensor, config: ModelConfig, allowed: Optional[np.ndarray] = None) -> Tensor:
    if config.zero_softmax:
        return zero_softmax(raw)
    # вариант без Zero-Softmax: обычный softmax снова делает матрицу плотной
    return ops.softmax_lastdim(raw, allowed)


def _identity_adjacency(shape) -> SparseAdjacency:
    eye = np.ascontiguousarray(_identity_like(shape))
    return SparseAdjacency(normalized=Tensor(eye.astype(np.float64)), mask=eye.copy(), raw=Tensor(eye.astype(np.float64)))


def build_sparse_spatial_graph(inputs: GraphInputs, weights: SparseGraphWeights, config: ModelConfig,
                               dense_out: Optional[list] = None) -> SparseAdjacency:
    """Sparse Directed Interaction: Â_spa of shape [T_obs, N, N]."""
    t_obs, n = inputs.t_obs, inputs.num_pedestrians
    if not config.interaction:
        return _identity_adjacency((t_obs, n, n))

    embedded = embed_nodes(inputs.spatial_nodes, weights.embed_w, weights.embed_b)
    dense = attention_scores(embedded, weights.query_w, weights.key_w)
    if dense_out is not None:
        dense_out.append(dense)
    fused = fuse_spatial_temporal(dense, weights.fusion_w, weights.fusion_b)
    features = asymmetric_conv_features(
        fused, weights.row_w, weights.row_b, weights.col_w, weights.col_b, weights.slopes
    )
    mask = sparse_mask(features, config.xi)
    raw = sparse_adjacency(mask, fused)
    return SparseAdjacency(normalized=_normalize(raw, config), mask=mask, raw=raw)


def build_sparse_temporal_graph(inputs: GraphInputs, weights: SparseGraphWeights, config: ModelConfig,
                                dense_out: Optional[list] = None) -> SparseAdjacency:
    """Motion Tendency: upper-triangular Â_tmp of shape [N, T_obs, T_obs], no fusion step."""
    t_obs, n = inputs.t_obs, inputs.num_pedestrians
    if not config.motion_tendency:
        return _identity_adjacency((n, t_obs, t_obs))

    encoding = positional_encoding(t_obs, weights.embed_w.shape[1])
    embedded = embed_nodes(inputs.temporal_nodes, weights.embed_w, weights.embed_b, encoding)
    allowed = np.broadcast_to(inputs.temporal_edge_init, (n, t_obs, t_obs))
    dense = attention_scores(embedded, weights.query_w, weights.key_w, mask=allowed)
    if dense_out is not None:
        dense_out.append(dense)

    # N меняется от сцены к сцене: пешеходы идут в батч, канал один
    features = asymmetric_conv_features(
        dense.reshape(n, 1, t_obs, t_obs), weights.row_w, weights.row_b, weights.col_w, weights.col_b, weights.slopes
    ).reshape(n, t_obs, t_obs)
    mask = sparse_mask(features, config.xi)
    raw = sparse_adjacency(mask, dense)
    return SparseAdjacency(normalized=_normalize(raw, config, np.ascontiguousarray(allowed)), mask=mask, raw=raw)


def learn_sparse_graphs(nodes: np.ndarray, spatial_weights: SparseGraphWeights,
                        temporal_weights: SparseGraphWeights, config: ModelConfig,
                        keep_dense: bool = False) -> SparseGraphs:
    inputs = GraphInputs.from_nodes(nodes)
    dense_spa, dense_tmp = [], []
    spatial = build_sparse_spatial_graph(inputs, spatial_weights, config, dense_spa)
    temporal = build_sparse_temporal_graph(inputs, temporal_weights, config, dense_tmp)
    dense = None
    if keep_dense and dense_spa and dense_tmp:
        dense = DenseScores(spatial=dense_spa[0], temporal=dense_tmp[0])
    return SparseGraphs(spatial=spatial, temporal=temporal, dense=dense)
