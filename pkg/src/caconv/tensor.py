"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every operation records its parents and a closure mapping the output
gradient to parent gradients. :func:`backward` walks the tape in reverse
topological order, accumulates into leaf ``grad`` buffers, and frees the
graph afterwards.

Spatial tensors use channels-last layout: ``H x W x C`` for a single image
and ``B x H x W x C`` for a batch.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import BinaryIO, Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, NumericError, UsageError

DTYPE = np.float64


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.isfinite(arr).all():
        raise NumericError(f"non-finite values in {what}")


class Tensor:
    """An n-dimensional real array that can take part in differentiation."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=DTYPE)
        _check_finite(arr, name or "tensor input")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if requires_grad else None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    # -- construction helpers -------------------------------------------------

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: Sequence["Tensor"], backward: Callable,
                 what: str) -> "Tensor":
        _check_finite(data, what)
        out = cls.__new__(cls)
        out.data = data
        out.name = None
        out.grad = None
        out.requires_grad = any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    # -- introspection --------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- operators ------------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None) -> "Tensor":
        return sum_(self, axis)

    def mean(self, axis=None) -> "Tensor":
        return mean(self, axis)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def backward(self) -> None:
        backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# -- autodiff driver -------------------------------------------------------------


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``grad`` of every tensor that ``loss`` depends on.

    Leaf gradients accumulate; call ``zero_grad`` between steps. The recorded
    graph is released once the pass completes.
    """
    if loss.data.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise UsageError("loss does not depend on any tensor requiring grad")
    order = _topological_order(loss)
    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += g
            continue
        node.grad = g
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in pending:
                pending[key] = pending[key] + pg
            else:
                pending[key] = pg
    for node in order:
        node._parents = ()
        node._backward = None


# -- elementwise and shape ops --------------------------------------------------


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._from_op(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor._from_op(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor._from_op(a.data * b.data, (a, b), bw, "mul")


def square(a: Tensor) -> Tensor:
    def bw(g):
        return (2.0 * a.data * g,)

    return Tensor._from_op(a.data * a.data, (a,), bw, "square")


def matmul(a, b) -> Tensor:
    """Matrix product for 1-D and 2-D operands (numpy ``@`` semantics)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim not in (1, 2) or b.ndim not in (1, 2):
        raise DimensionError("matmul supports 1-D and 2-D operands only")
    if a.shape[-1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch {a.shape} @ {b.shape}")

    def bw(g):
        ad, bd = a.data, b.data
        if ad.ndim == 1 and bd.ndim == 1:
            return g * bd, g * ad
        if ad.ndim == 1:
            return bd @ g, np.outer(ad, g)
        if bd.ndim == 1:
            return np.outer(g, bd), ad.T @ g
        return g @ bd.T, ad.T @ g

    return Tensor._from_op(a.data @ b.data, (a, b), bw, "matmul")


def affine(x, weight, bias) -> Tensor:
    """``weight @ x + bias`` for a vector, or row-wise for a batch of vectors."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if weight.ndim != 2 or bias.shape != (weight.shape[0],):
        raise DimensionError(f"affine weight {weight.shape} / bias {bias.shape} mismatch")
    if x.ndim not in (1, 2) or x.shape[-1] != weight.shape[1]:
        raise DimensionError(f"affine input {x.shape} does not match weight {weight.shape}")
    wd = weight.data

    def bw(g):
        if x.ndim == 1:
            return wd.T @ g, np.outer(g, x.data), g
        return g @ wd, g.T @ x.data, g.sum(axis=0)

    out = x.data @ wd.T + bias.data
    return Tensor._from_op(out, (x, weight, bias), bw, "affine")


def sum_(a: Tensor, axis=None) -> Tensor:
    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return Tensor._from_op(np.asarray(a.data.sum(axis=axis)), (a,), bw, "sum")


def mean(a: Tensor, axis=None) -> Tensor:
    count = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum_(a, axis), 1.0 / float(count))


def reshape(a: Tensor, shape) -> Tensor:
    def bw(g):
        return (g.reshape(a.shape),)

    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(str(exc)) from None
    return Tensor._from_op(out, (a,), bw, "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    inverse = None if axes is None else np.argsort(axes)

    def bw(g):
        return (np.transpose(g, inverse),)

    return Tensor._from_op(np.transpose(a.data, axes), (a,), bw, "transpose")


def getitem(a: Tensor, idx) -> Tensor:
    # basic (non-repeating) indexing only
    def bw(g):
        full = np.zeros_like(a.data)
        full[idx] += g
        return (full,)

    return Tensor._from_op(np.array(a.data[idx]), (a,), bw, "getitem")


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise DimensionError(f"concat non-axis dims differ: {ref} vs {t.shape}")
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=ax))

    return Tensor._from_op(np.concatenate([t.data for t in tensors], axis=ax), tensors, bw,
                           "concat")


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if len({t.shape for t in tensors}) != 1:
        raise DimensionError("stack needs equal shapes")

    def bw(g):
        return tuple(np.moveaxis(g, axis, 0))

    return Tensor._from_op(np.stack([t.data for t in tensors], axis=axis), tensors, bw, "stack")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    y = _sigmoid(a.data)

    def bw(g):
        return (g * y * (1.0 - y),)

    return Tensor._from_op(y, (a,), bw, "sigmoid")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)

    def bw(g):
        return (g * (1.0 - y * y),)

    return Tensor._from_op(y, (a,), bw, "tanh")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0

    def bw(g):
        return (g * mask,)

    return Tensor._from_op(np.where(mask, a.data, 0.0), (a,), bw, "relu")


# -- spatial ops ------------------------------------------------------------------


@dataclass(frozen=True)
class ConvSpec:
    kernel_h: int
    kernel_w: int
    stride: int = 1
    padding: int = 0
    dilation: int = 1

    def __post_init__(self):
        if min(self.kernel_h, self.kernel_w, self.stride, self.dilation) < 1 or self.padding < 0:
            raise DimensionError(f"invalid conv spec {self}")

    @property
    def extent_h(self) -> int:
        return self.dilation * (self.kernel_h - 1) + 1

    @property
    def extent_w(self) -> int:
        return self.dilation * (self.kernel_w - 1) + 1

    def output_size(self, h: int, w: int) -> tuple[int, int]:
        ph, pw = h + 2 * self.padding, w + 2 * self.padding
        if self.extent_h > ph or self.extent_w > pw:
            raise DimensionError(
                f"kernel extent {self.extent_h}x{self.extent_w} exceeds padded input {ph}x{pw}")
        return (ph - self.extent_h) // self.stride + 1, (pw - self.extent_w) // self.stride + 1


def _as_batch(x: np.ndarray, what: str) -> tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise DimensionError(f"{what} expects HxWxC or BxHxWxC input, got shape {x.shape}")


def conv2d(x: Tensor, kernels: Tensor, spec: ConvSpec | None = None, bias: Tensor | None = None
           ) -> Tensor:
    """Cross-correlate ``x`` with ``kernels`` of shape ``k_h x k_w x C_in x C_out``.

    Accumulates one matrix product per kernel tap, so taps that are exactly
    zero contribute exactly nothing.
    """
    x, kernels = as_tensor(x), as_tensor(kernels)
    if kernels.ndim != 4:
        raise DimensionError(f"kernels must be k_h x k_w x C_in x C_out, got {kernels.shape}")
    kh, kw, cin, cout = kernels.shape
    if spec is None:
        spec = ConvSpec(kh, kw)
    if (spec.kernel_h, spec.kernel_w) != (kh, kw):
        raise DimensionError(f"spec kernel {spec.kernel_h}x{spec.kernel_w} != weights {kh}x{kw}")
    xb, squeeze = _as_batch(x.data, "conv2d")
    B, H, W, C = xb.shape
    if C != cin:
        raise DimensionError(f"input has {C} channels, kernels expect {cin}")
    if bias is not None and bias.shape != (cout,):
        raise DimensionError(f"bias shape {bias.shape} != ({cout},)")
    Ho, Wo = spec.output_size(H, W)
    p, s, d = spec.padding, spec.stride, spec.dilation
    xp = np.pad(xb, ((0, 0), (p, p), (p, p), (0, 0))) if p else xb
    K = kernels.data

    def tap(arr, i, j):
        r0, c0 = i * d, j * d
        return arr[:, r0:r0 + s * (Ho - 1) + 1:s, c0:c0 + s * (Wo - 1) + 1:s, :]

    M = B * Ho * Wo
    out = np.zeros((M, cout))
    for i in range(kh):
        for j in range(kw):
            out += tap(xp, i, j).reshape(M, C) @ K[i, j]
    if bias is not None:
        out += bias.data
    out = out.reshape(B, Ho, Wo, cout)

    def bw(g):
        gb = g[None] if squeeze else g
        g2 = gb.reshape(M, cout)
        dxp = np.zeros_like(xp) if x.requires_grad else None
        dK = np.zeros_like(K) if kernels.requires_grad else None
        for i in range(kh):
            for j in range(kw):
                if dK is not None:
                    dK[i, j] = tap(xp, i, j).reshape(M, C).T @ g2
                if dxp is not None:
                    tap(dxp, i, j)[...] += (g2 @ K[i, j].T).reshape(B, Ho, Wo, C)
        dx = None
        if dxp is not None:
            dx = dxp[:, p:p + H, p:p + W, :] if p else dxp
            dx = dx[0] if squeeze else dx
        grads = [dx, dK]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return tuple(grads)

    parents = (x, kernels) if bias is None else (x, kernels, bias)
    return Tensor._from_op(out[0] if squeeze else out, parents, bw, "conv2d")


def maxpool2d(x: Tensor, window: int = 2, stride: int = 2) -> Tensor:
    """Max over ``window x window`` cells; ties go to the first cell in row-major order."""
    x = as_tensor(x)
    xb, squeeze = _as_batch(x.data, "maxpool2d")
    B, H, W, C = xb.shape
    if window < 1 or stride < 1 or window > H or window > W:
        raise DimensionError(f"pool window {window} invalid for {H}x{W} input")
    Ho, Wo = (H - window) // stride + 1, (W - window) // stride + 1
    views = sliding_window_view(xb, (window, window), axis=(1, 2))[:, ::stride, ::stride]
    views = views[:, :Ho, :Wo].reshape(B, Ho, Wo, C, window * window)
    arg = views.argmax(axis=-1)
    out = np.take_along_axis(views, arg[..., None], axis=-1)[..., 0]

    def bw(g):
        gb = g[None] if squeeze else g
        dx = np.zeros_like(xb)
        for i in range(window):
            for j in range(window):
                routed = np.where(arg == i * window + j, gb, 0.0)
                dx[:, i:i + stride * (Ho - 1) + 1:stride, j:j + stride * (Wo - 1) + 1:stride] += routed
        return (dx[0] if squeeze else dx,)

    return Tensor._from_op(out[0] if squeeze else out, (x,), bw, "maxpool2d")


# -- serialization ----------------------------------------------------------------


def write_tensor(fh: BinaryIO, arr) -> None:
    """Rank and extents as little-endian u64, then row-major little-endian f64."""
    arr = np.asarray(arr.data if isinstance(arr, Tensor) else arr, dtype=DTYPE)
    fh.write(struct.pack("<Q", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_tensor(fh: BinaryIO) -> np.ndarray:
    head = fh.read(8)
    if len(head) != 8:
        raise DimensionError("truncated tensor header")
    (rank,) = struct.unpack("<Q", head)
    dims = struct.unpack(f"<{rank}Q", fh.read(8 * rank))
    count = int(np.prod(dims)) if rank else 1
    raw = fh.read(8 * count)
    if len(raw) != 8 * count:
        raise DimensionError("truncated tensor payload")
    return np.frombuffer(raw, dtype="<f8").astype(DTYPE).reshape(dims)
