"""Full network: extractor -> class attention -> recurrent sub-network -> per-class heads.

``kind`` selects the sub-network:

* ``bilstm``       forward and backward peephole LSTM streams (the full model)
* ``lstm``         forward stream only
* ``independent``  no recurrence; a shared tanh layer applied to each class
                   vector on its own, so class ``l`` sees only ``v_l``
"""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attention import ClassAttentionParams, attention_maps, init_attention, vectorize
from .bilstm import (HeadParams, LSTMCellParams, bilstm_run, class_head, init_cell, init_head,
                     run_stream, INIT_RANGE)
from .errors import DataError, DimensionError
from .extractor import ExtractorConfig, extract_features, init_extractor
from .tensor import Tensor, affine, as_tensor, read_tensor, stack, tanh, write_tensor

KINDS = ("bilstm", "lstm", "independent")


@dataclass(frozen=True)
class ModelConfig:
    extractor: ExtractorConfig = field(default_factory=ExtractorConfig.desk)
    n_classes: int = 4
    hidden: int = 64
    kind: str = "bilstm"
    class_names: tuple[str, ...] | None = None  # time-step order; informational

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}; choose from {KINDS}")
        if self.n_classes < 1 or self.hidden < 1:
            raise ValueError("n_classes and hidden must be positive")
        if self.class_names is not None and len(self.class_names) != self.n_classes:
            raise ValueError(f"{len(self.class_names)} class names for {self.n_classes} classes")

    @property
    def feature_dim(self) -> int:
        return self.extractor.output_size ** 2


class Model:
    def __init__(self, config: ModelConfig, params: dict[str, Tensor]):
        self.config = config
        self.params = params

    # -- construction ---------------------------------------------------------

    @classmethod
    def init(cls, config: ModelConfig, seed: int) -> "Model":
        rng = np.random.default_rng(seed)
        params = init_extractor(config.extractor, rng)
        att = init_attention(config.extractor.output_channels, config.n_classes, rng)
        params["attention.w"] = att.filters
        d, h, n = config.feature_dim, config.hidden, config.n_classes
        if config.kind == "independent":
            params["dense.W"] = Tensor(rng.uniform(-INIT_RANGE, INIT_RANGE, (h, d)),
                                       requires_grad=True)
            params["dense.b"] = Tensor(rng.uniform(-INIT_RANGE, INIT_RANGE, h),
                                       requires_grad=True)
            head = init_head(n, h, rng)
        else:
            streams = ("fwd", "bwd") if config.kind == "bilstm" else ("fwd",)
            for s in streams:
                for name, t in init_cell(h, d, rng).named().items():
                    params[f"lstm.{s}.{name}"] = t
            head = init_head(n, h * len(streams), rng)
        params["head.w"] = head.weights
        params["head.b"] = head.biases
        return cls(config, params)

    # -- views onto the parameter table ---------------------------------------

    def _cell(self, stream: str) -> LSTMCellParams:
        prefix = f"lstm.{stream}."
        return LSTMCellParams(**{k[len(prefix):]: v for k, v in self.params.items()
                                 if k.startswith(prefix)})

    @property
    def attention(self) -> ClassAttentionParams:
        return ClassAttentionParams(self.params["attention.w"])

    @property
    def head(self) -> HeadParams:
        return HeadParams(self.params["head.w"], self.params["head.b"])

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    # -- forward --------------------------------------------------------------

    def attention_maps(self, images) -> Tensor:
        features = extract_features(as_tensor(images), self.config.extractor, self.params)
        return attention_maps(features, self.attention)

    def forward(self, images, return_maps: bool = False):
        """Class probabilities ``N`` for one image or ``B x N`` for a batch."""
        images = as_tensor(images)
        size = self.config.extractor.input_size
        if images.shape[-3:] != (size, size, self.config.extractor.in_channels):
            raise DimensionError(f"model expects {size}x{size}x"
                                 f"{self.config.extractor.in_channels} images, got {images.shape}")
        maps = self.attention_maps(images)
        v = vectorize(maps)
        head, kind = self.head, self.config.kind
        if kind == "bilstm":
            pairs = bilstm_run(self._cell("fwd"), self._cell("bwd"), v, self.config.n_classes)
            probs = [class_head(h, hr, head, l) for l, (h, hr) in enumerate(pairs)]
        elif kind == "lstm":
            hs = run_stream(self._cell("fwd"), v)
            probs = [class_head(h, None, head, l) for l, h in enumerate(hs)]
        else:
            W, b = self.params["dense.W"], self.params["dense.b"]
            probs = [class_head(tanh(affine(vl, W, b)), None, head, l) for l, vl in enumerate(v)]
        out = stack(probs, axis=-1)
        return (out, maps) if return_maps else out

    def predict(self, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
        images = np.asarray(images, dtype=np.float64)
        single = images.ndim == 3
        if single:
            images = images[None]
        chunks = [self.forward(Tensor(images[i:i + batch_size])).data
                  for i in range(0, len(images), batch_size)]
        out = np.concatenate(chunks, axis=0)
        return out[0] if single else out

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for k, t in self.params.items():
            t.data[...] = arrays[k]


# -- checkpoint files ----------------------------------------------------------------

_KIND_CODE = {k: i for i, k in enumerate(KINDS)}


def _meta_tables(config: ModelConfig) -> dict[str, np.ndarray]:
    ex = config.extractor
    table = {
        "meta.kind": np.array([_KIND_CODE[config.kind]], dtype=float),
        "meta.blocks": np.array(ex.blocks, dtype=float),
        "meta.pools": np.array(ex.pool_after_block, dtype=float),
        "meta.dilation": np.array([ex.last_block_dilation], dtype=float),
        "meta.input_size": np.array([ex.input_size], dtype=float),
        "meta.in_channels": np.array([ex.in_channels], dtype=float),
        "meta.hidden": np.array([config.hidden], dtype=float),
        "meta.n_classes": np.array([config.n_classes], dtype=float),
    }
    if config.class_names is not None:
        # newline-joined UTF-8 bytes, one byte per entry
        raw = "\n".join(config.class_names).encode("utf-8")
        table["meta.class_names"] = np.frombuffer(raw, dtype=np.uint8).astype(float)
    return table


def write_table(fh, table: dict[str, np.ndarray]) -> None:
    """Named-tensor table: u64 entry count, then (u64 name length, utf-8 name, tensor)."""
    fh.write(len(table).to_bytes(8, "little"))
    for name, arr in table.items():
        raw = name.encode("utf-8")
        fh.write(len(raw).to_bytes(8, "little"))
        fh.write(raw)
        write_tensor(fh, arr)


def read_table(fh) -> dict[str, np.ndarray]:
    count = int.from_bytes(fh.read(8), "little")
    table = {}
    for _ in range(count):
        n = int.from_bytes(fh.read(8), "little")
        name = fh.read(n).decode("utf-8")
        table[name] = read_tensor(fh)
    return table


def checkpoint_bytes(model: Model, arrays: dict[str, np.ndarray] | None = None) -> bytes:
    table = _meta_tables(model.config)
    table.update(arrays if arrays is not None else model.state_arrays())
    buf = io.BytesIO()
    write_table(buf, table)
    return buf.getvalue()


def save_checkpoint(path, model: Model, arrays: dict[str, np.ndarray] | None = None) -> None:
    Path(path).write_bytes(checkpoint_bytes(model, arrays))


def load_checkpoint(path) -> Model:
    try:
        with open(path, "rb") as fh:
            table = read_table(fh)
    except FileNotFoundError:
        raise DataError(f"checkpoint not found: {path}") from None
    except (DimensionError, struct.error, UnicodeDecodeError) as exc:
        raise DataError(f"checkpoint {path} is truncated or corrupt: {exc}") from None
    try:
        ex = ExtractorConfig(
            blocks=tuple(tuple(int(x) for x in row) for row in table["meta.blocks"]),
            pool_after_block=tuple(bool(x) for x in table["meta.pools"]),
            last_block_dilation=int(table["meta.dilation"][0]),
            input_size=int(table["meta.input_size"][0]),
            in_channels=int(table["meta.in_channels"][0]))
        names = None
        if "meta.class_names" in table:
            raw = table["meta.class_names"].astype(np.uint8).tobytes()
            names = tuple(raw.decode("utf-8").split("\n"))
        config = ModelConfig(ex, int(table["meta.n_classes"][0]), int(table["meta.hidden"][0]),
                             KINDS[int(table["meta.kind"][0])], names)
    except KeyError as exc:
        raise DataError(f"checkpoint {path} lacks metadata entry {exc}") from None
    except (ValueError, IndexError) as exc:
        raise DataError(f"checkpoint {path} has invalid metadata: {exc}") from None
    model = Model.init(config, 0)
    for name, t in model.params.items():
        if name not in table or table[name].shape != t.shape:
            raise DimensionError(f"checkpoint entry {name} missing or mis-shaped")
        t.data[...] = table[name]
    return model
