from dataclasses import dataclass, fields, is_dataclass
from typing import Dict, Iterator, Optional, Tuple

import numpy as np

from app.autodiff.tensor import Tensor
from app.schemas.all_schemas import ModelConfig

PRELU_INIT = 0.25
NUM_GAUSSIAN_OUTPUTS = 5


@dataclass
class SparseGraphWeights:
    """Embedding, attention and asymmetric-conv weights of one graph branch."""

    embed_w: Tensor
    embed_b: Tensor
    query_w: Tensor
    key_w: Tensor
    row_w: Tuple[Tensor, ...]
    row_b: Tuple[Tensor, ...]
    col_w: Tuple[Tensor, ...]
    col_b: Tuple[Tensor, ...]
    slopes: Tuple[Tensor, ...]
    # только у пространственной ветки
    fusion_w: Optional[Tensor] = None
    fusion_b: Optional[Tensor] = None


@dataclass
class BranchWeights:
    embed_spa_w: Tensor
    embed_spa_b: Tensor
    embed_tmp_w: Tensor
    embed_tmp_b: Tensor
    spa1: Tensor
    tmp1: Tensor
    spa2: Tensor
    tmp2: Tensor
    slope_spa1: Tensor
    slope_tmp1: Tensor
    slope_spa2: Tensor
    slope_tmp2: Tensor


@dataclass
class TcnWeights:
    conv_w: Tuple[Tensor, ...]
    conv_b: Tuple[Tensor, ...]
    slopes: Tuple[Tensor, ...]
    out_w: Tensor
    out_b: Tensor


@dataclass
class ModelWeights:
    spatial: SparseGraphWeights
    temporal: SparseGraphWeights
    branches: BranchWeights
    tcn: TcnWeights

    def named_parameters(self) -> Dict[str, Tensor]:
        return dict(_walk(self, ""))

    def parameters(self):
        return list(self.named_parameters().values())

    def zero_grad(self) -> None:
        for param in self.parameters():
            param.zero_grad()

    def grads(self) -> Dict[str, np.ndarray]:
        return {
            name: np.zeros_like(p.data) if p.grad is None else p.grad
            for name, p in self.named_parameters().items()
        }


def _walk(node, prefix: str) -> Iterator[Tuple[str, Tensor]]:
    if isinstance(node, Tensor):
        yield prefix, node
    elif isinstance(node, tuple):
        for i, item in enumerate(node):
            yield from _walk(item, f"{prefix}.{i}")
    elif is_dataclass(node):
        for f in fields(node):
            value = getattr(node, f.name)
            if value is not None:
                yield from _walk(value, f"{prefix}.{f.name}" if prefix else f.name)


class _Init:
    def __init__(self, rng: np.random.Generator):
        self.rng = rng

    def glorot(self, shape, fan_in: int, fan_out: int) -> Tensor:
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return Tensor(self.rng.uniform(-limit, limit, size=shape), requires_grad=True)

    def linear(self, n_in: int, n_out: int) -> Tensor:
        return self.glorot((n_in, n_out), n_in, n_out)

    def conv(self, c_out: int, c_in: int, kh: int, kw: int) -> Tensor:
        return self.glorot((c_out, c_in, kh, kw), c_in * kh * kw, c_out * kh * kw)

    @staticmethod
    def zeros(*shape) -> Tensor:
        return Tensor(np.zeros(shape), requires_grad=True)

    @staticmethod
    def slope() -> Tensor:
        return Tensor(np.full((1,), PRELU_INIT), requires_grad=True)


def _graph_weights(init: _Init, config: ModelConfig, channels: int, with_fusion: bool) -> SparseGraphWeights:
    d, s, layers = config.embed_dim, config.kernel_size, config.asym_layers
    fusion_w = fusion_b = None
    if with_fusion:
        # 1x1 слияние стартует с тождества
        fusion_w = Tensor(np.eye(channels)[:, :, None, None], requires_grad=True)
        fusion_b = init.zeros(channels)
    return SparseGraphWeights(
        embed_w=init.linear(2, d),
        embed_b=init.zeros(d),
        query_w=init.linear(d, d),
        key_w=init.linear(d, d),
        row_w=tuple(init.conv(channels, channels, 1, s) for _ in range(layers)),
        row_b=tuple(init.zeros(channels) for _ in range(layers)),
        col_w=tuple(init.conv(channels, channels, s, 1) for _ in range(layers)),
        col_b=tuple(init.zeros(channels) for _ in range(layers)),
        slopes=tuple(init.slope() for _ in range(layers)),
        fusion_w=fusion_w,
        fusion_b=fusion_b,
    )


def init_weights(config: ModelConfig, seed: int = 0) -> ModelWeights:
    init = _Init(np.random.default_rng(seed))
    d, s = config.embed_dim, config.kernel_size
    t_obs, t_pred = config.t_obs, config.t_pred

    spatial = _graph_weights(init, config, channels=t_obs, with_fusion=True)
    # у временной ветки N переменное, поэтому один канал и N в батче
    temporal = _graph_weights(init, config, channels=1, with_fusion=False)

    branches = BranchWeights(
        embed_spa_w=init.linear(2, d),
        embed_spa_b=init.zeros(d),
        embed_tmp_w=init.linear(2, d),
        embed_tmp_b=init.zeros(d),
        spa1=init.linear(d, d),
        tmp1=init.linear(d, d),
        spa2=init.linear(d, d),
        tmp2=init.linear(d, d),
        slope_spa1=init.slope(),
        slope_tmp1=init.slope(),
        slope_spa2=init.slope(),
        slope_tmp2=init.slope(),
    )

    conv_w = [init.conv(t_pred, t_obs, 1, s)]
    conv_w += [init.conv(t_pred, t_pred, 1, s) for _ in range(config.tcn_layers - 1)]
    tcn = TcnWeights(
        conv_w=tuple(conv_w),
        conv_b=tuple(init.zeros(t_pred) for _ in range(config.tcn_layers)),
        slopes=tuple(init.slope() for _ in range(config.tcn_layers)),
        out_w=init.linear(d, NUM_GAUSSIAN_OUTPUTS),
        out_b=init.zeros(NUM_GAUSSIAN_OUTPUTS),
    )
    return ModelWeights(spatial=spatial, temporal=temporal, branches=branches, tcn=tcn)
