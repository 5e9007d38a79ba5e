"""VGG-style dense feature extractor.

Blocks of 3x3 convolutions (stride 1, ReLU) separated by 2x2 max pools.
Pools after the trailing blocks are dropped and the last block is dilated,
so the output keeps a finer grid while each final-block filter spans the
same input extent it would have had behind the dropped pool.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .tensor import ConvSpec, Tensor, conv2d, maxpool2d, relu


@dataclass(frozen=True)
class ExtractorConfig:
    blocks: tuple[tuple[int, int], ...]
    pool_after_block: tuple[bool, ...]
    last_block_dilation: int = 2
    input_size: int = 64
    in_channels: int = 3

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple((int(n), int(f)) for n, f in self.blocks))
        object.__setattr__(self, "pool_after_block", tuple(bool(p) for p in self.pool_after_block))
        self.validate()

    def validate(self) -> None:
        if not self.blocks:
            raise ConfigError("extractor needs at least one block")
        if len(self.pool_after_block) != len(self.blocks):
            raise ConfigError("pool_after_block must have one flag per block")
        if any(n < 1 or f < 1 for n, f in self.blocks):
            raise ConfigError(f"block sizes must be positive: {self.blocks}")
        if self.last_block_dilation < 1 or self.input_size < 1 or self.in_channels < 1:
            raise ConfigError("dilation, input size and channels must be positive")
        for b in range(1, len(self.blocks)):
            if self.pool_after_block[b - 1] and self.blocks[b][1] != 2 * self.blocks[b - 1][1]:
                raise ConfigError(
                    f"block {b} must have twice the filters of block {b - 1} after a pool "
                    f"({self.blocks[b][1]} vs {self.blocks[b - 1][1]})")
        if self.input_size % (2 ** self.num_pools):
            raise ConfigError(
                f"input size {self.input_size} not divisible by 2^{self.num_pools}")

    @property
    def num_pools(self) -> int:
        return sum(self.pool_after_block)

    @property
    def output_size(self) -> int:
        return self.input_size // 2 ** self.num_pools

    @property
    def output_channels(self) -> int:
        return self.blocks[-1][1]

    def dilation_of(self, block: int) -> int:
        return self.last_block_dilation if block == len(self.blocks) - 1 else 1

    @classmethod
    def desk(cls, input_size: int = 64) -> "ExtractorConfig":
        """3 blocks of two convs (8/16/32 filters), pools after blocks 1-2, dilated block 3."""
        return cls(((2, 8), (2, 16), (2, 32)), (True, True, False), 2, input_size)

    @classmethod
    def vgg_lite(cls, input_size: int = 64) -> "ExtractorConfig":
        """Five-block VGG-16 layout at 1/8 width, final two pools dropped."""
        return cls(((2, 8), (2, 16), (3, 32), (3, 64), (3, 64)),
                   (True, True, True, False, False), 2, input_size)


def layer_names(config: ExtractorConfig) -> list[tuple[str, int, int, int]]:
    """``(prefix, c_in, c_out, dilation)`` for every conv layer, in order."""
    out = []
    c_in = config.in_channels
    for b, (n_convs, filters) in enumerate(config.blocks):
        for c in range(n_convs):
            out.append((f"extractor.block{b}.conv{c}", c_in, filters, config.dilation_of(b)))
            c_in = filters
    return out


def glorot_bound(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def init_extractor(config: ExtractorConfig, seed: int | np.random.Generator
                   ) -> dict[str, Tensor]:
    """Glorot-uniform kernels and zero biases, reproducible from ``seed``."""
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}
    for prefix, c_in, c_out, _ in layer_names(config):
        bound = glorot_bound(9 * c_in, 9 * c_out)
        params[prefix + ".w"] = Tensor(rng.uniform(-bound, bound, (3, 3, c_in, c_out)),
                                       requires_grad=True)
        params[prefix + ".b"] = Tensor(np.zeros(c_out), requires_grad=True)
    return params


def extract_features(image: Tensor, config: ExtractorConfig, params: dict[str, Tensor]
                     ) -> Tensor:
    """Map ``S x S x C`` (or a batch) to dense features ``W x W x K``."""
    size = image.shape[-2]
    if image.shape[-3] != image.shape[-2]:
        raise ConfigError(f"extractor expects square images, got {image.shape}")
    if size % (2 ** config.num_pools):
        raise ConfigError(f"image extent {size} not divisible by 2^{config.num_pools}")
    h = image
    layers = iter(layer_names(config))
    for b, (n_convs, _) in enumerate(config.blocks):
        for _ in range(n_convs):
            prefix, _, _, d = next(layers)
            h = relu(conv2d(h, params[prefix + ".w"], ConvSpec(3, 3, 1, d, d),
                            params[prefix + ".b"]))
        if config.pool_after_block[b]:
            h = maxpool2d(h, 2, 2)
    return h


@dataclass
class ReceptiveField:
    """Receptive-field bookkeeping: total extent and input-pixel jump per step."""

    extent: int = 1
    jump: int = 1
    spans: list[int] = field(default_factory=list)

    def conv(self, kernel: int, stride: int = 1, dilation: int = 1) -> None:
        span = dilation * (kernel - 1) * self.jump
        self.spans.append(span)
        self.extent += span
        self.jump *= stride

    def pool(self, window: int = 2, stride: int = 2) -> None:
        self.extent += (window - 1) * self.jump
        self.jump *= stride


def receptive_field(config: ExtractorConfig, dilate_last: bool = True,
                    pools: tuple[bool, ...] | None = None) -> ReceptiveField:
    """Trace receptive-field arithmetic through the conv/pool stack.

    ``spans`` records, per conv layer, how many input pixels its taps cover
    beyond the centre.
    """
    rf = ReceptiveField()
    pools = config.pool_after_block if pools is None else pools
    for b, (n_convs, _) in enumerate(config.blocks):
        d = config.dilation_of(b) if dilate_last else 1
        for _ in range(n_convs):
            rf.conv(3, 1, d)
        if pools[b]:
            rf.pool()
    return rf
