"""Class attention layer: one 1x1 filter per class, then per-class vectorization."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .extractor import glorot_bound
from .tensor import Tensor, getitem, reshape


@dataclass
class ClassAttentionParams:
    filters: Tensor  # 1 x 1 x K x N, no bias

    def __post_init__(self):
        if self.filters.ndim != 4 or self.filters.shape[:2] != (1, 1):
            raise DimensionError(f"attention filters must be 1x1xKxN, got {self.filters.shape}")

    @property
    def channels(self) -> int:
        return self.filters.shape[2]

    @property
    def n_classes(self) -> int:
        return self.filters.shape[3]


def init_attention(channels: int, n_classes: int, seed) -> ClassAttentionParams:
    rng = np.random.default_rng(seed)
    bound = glorot_bound(channels, n_classes)
    w = rng.uniform(-bound, bound, (1, 1, channels, n_classes))
    return ClassAttentionParams(Tensor(w, requires_grad=True))


def attention_maps(features: Tensor, params: ClassAttentionParams) -> Tensor:
    """``M[..., l] = sum_k w[k, l] * X[..., k]``, summed over k in ascending order.

    ``features`` is ``W x W x K`` or ``B x W x W x K``; the result swaps K for N.
    """
    X = features.data
    w = params.filters.data[0, 0]
    K, N = w.shape
    if X.shape[-1] != K:
        raise DimensionError(f"features have {X.shape[-1]} channels, filters expect {K}")
    out = np.zeros(X.shape[:-1] + (N,))
    for k in range(K):
        out += X[..., k:k + 1] * w[k]

    def bw(g):
        spatial = tuple(range(X.ndim - 1))
        dX = g @ w.T if features.requires_grad else None
        dw = np.tensordot(X, g, axes=(spatial, spatial))[None, None] \
            if params.filters.requires_grad else None
        return dX, dw

    return Tensor._from_op(out, (features, params.filters), bw, "attention_maps")


def vectorize(maps: Tensor) -> list[Tensor]:
    """Split ``W x W x N`` maps into N row-major vectors of length W^2.

    For a batch ``B x W x W x N`` each vector is ``B x W^2``. Vector ``l`` is
    meant for recurrent time step ``l`` and nothing else.
    """
    if maps.ndim not in (3, 4) or maps.shape[-2] != maps.shape[-3]:
        raise DimensionError(f"expected square attention maps, got {maps.shape}")
    W, N = maps.shape[-2], maps.shape[-1]
    lead = maps.shape[:-3]
    return [reshape(getitem(maps, (..., l)), lead + (W * W,)) for l in range(N)]
