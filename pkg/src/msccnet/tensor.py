"""Minimal dense float64 tensor with tape-free reverse-mode differentiation.

Every op returns a new :class:`Tensor` whose ``_backward`` closure maps the
upstream gradient to one gradient per parent.  :meth:`Tensor.backward` walks
the graph in reverse topological order, so each node is visited exactly once
and gradients of tensors used several times are summed.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .exceptions import ContractError

MAX_NDIM = 5

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference, optimizer updates)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > MAX_NDIM:
            raise ContractError(f"tensor rank {arr.ndim} exceeds {MAX_NDIM}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = "leaf"

    # construction helpers -------------------------------------------------
    @classmethod
    def _make(cls, data, parents: Sequence["Tensor"], backward: Callable, op: str) -> "Tensor":
        out = cls.__new__(cls)
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > MAX_NDIM:
            raise ContractError(f"{op}: result rank {arr.ndim} exceeds {MAX_NDIM}")
        out.data = arr
        out.grad = None
        out.op = op
        needs = _grad_enabled and any(p.requires_grad for p in parents)
        out.requires_grad = needs
        out._parents = tuple(parents) if needs else ()
        out._backward = backward if needs else None
        return out

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

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def __len__(self) -> int:
        return self.data.shape[0]

    # differentiation ------------------------------------------------------
    def backward(self) -> None:
        """Populate ``.grad`` on every leaf that requires gradients.

        Gradients accumulate additively into existing ``.grad`` buffers.
        """
        if self.data.size != 1:
            raise ContractError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise ContractError("backward() on a tensor that does not require grad")

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # operator sugar -------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def zeros(*shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


def ones(*shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=requires_grad)


def ones_like(x: Tensor) -> Tensor:
    return Tensor(np.ones_like(x.data))


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ContractError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# elementwise ----------------------------------------------------------------
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._make(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor._make(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._make(a.data * b.data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a, b)
    out = a.data / b.data

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._make(out, (a, b), backward, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return Tensor._make(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        return (g * exponent * a.data ** (exponent - 1),)

    return Tensor._make(a.data**exponent, (a,), backward, "pow")


_ELEMENTWISE = {"add": add, "sub": sub, "mul": mul, "div": div}


def elementwise(kind: str, a, b) -> Tensor:
    """Broadcasting binary op selected by name (``add``, ``sub``, ``mul``, ``div``)."""
    try:
        fn = _ELEMENTWISE[kind]
    except KeyError:
        raise ContractError(f"unknown elementwise op {kind!r}") from None
    return fn(a, b)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return Tensor._make(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    return Tensor._make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return Tensor._make(a.data * mask, (a,), lambda g: (g * mask,), "relu")


# reductions and shape ops ---------------------------------------------------
def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor._make(out, (a,), backward, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    return tsum(a, axes, keepdims) * (1.0 / count)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ContractError(f"cannot reshape {a.shape} to {tuple(shape)}") from None
    return Tensor._make(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inverse = np.argsort(axes)
    return Tensor._make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),), "transpose")


def swapaxes_last(a) -> Tensor:
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, tuple(axes))


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return Tensor._make(a.data[idx], (a,), backward, "getitem")


def concat(tensors: Iterable, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise ContractError(f"concat: {exc}") from None
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor._make(out, ts, backward, "concat")


# contractions ---------------------------------------------------------------
def matmul(a, b) -> Tensor:
    """Batched matrix product over the last two axes (leading axes broadcast)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ContractError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ContractError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ContractError(f"matmul batch extents differ: {a.shape} @ {b.shape}") from None
    out = np.matmul(a.data, b.data)

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return Tensor._make(out, (a, b), backward, "matmul")


# normalizers ----------------------------------------------------------------
def _check_finite(op: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise ContractError(f"{op}: non-finite input")


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    _check_finite("softmax", a.data)
    if not -a.ndim <= axis < a.ndim:
        raise ContractError(f"softmax axis {axis} invalid for shape {a.shape}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._make(out, (a,), backward, "softmax")


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    _check_finite("log_softmax", a.data)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return Tensor._make(out, (a,), backward, "log_softmax")


def cross_entropy(logits, target: np.ndarray, axis: int = 1) -> Tensor:
    """Mean negative log-likelihood of integer ``target`` under softmax(logits).

    ``target`` has the logits' shape with ``axis`` removed.
    """
    logits = as_tensor(logits)
    _check_finite("cross_entropy", logits.data)
    axis = axis % logits.ndim
    k = logits.shape[axis]
    target = np.asarray(target)
    expected = logits.shape[:axis] + logits.shape[axis + 1 :]
    if target.shape != expected:
        raise ContractError(f"cross_entropy: target shape {target.shape} != {expected}")
    if target.size and (target.min() < 0 or target.max() >= k):
        raise ContractError(f"cross_entropy: target values outside [0, {k})")
    target = target.astype(np.intp)
    shifted = logits.data - logits.data.max(axis=axis, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    picked = np.take_along_axis(logp, np.expand_dims(target, axis), axis=axis)
    n = target.size
    loss = -picked.sum() / n

    def backward(g):
        grad = np.exp(logp)
        onehot = np.zeros_like(grad)
        np.put_along_axis(onehot, np.expand_dims(target, axis), 1.0, axis=axis)
        return (g * (grad - onehot) / n,)

    return Tensor._make(loss, (logits,), backward, "cross_entropy")


# spatial ops ----------------------------------------------------------------
def _as_batched(x: Tensor, op: str) -> tuple[Tensor, bool]:
    if x.ndim == 3:
        return reshape(x, (1,) + x.shape), True
    if x.ndim == 4:
        return x, False
    raise ContractError(f"{op}: expected [C,h,w] or [B,C,h,w], got {x.shape}")


def conv2d(x, kernel, bias=None, stride: int = 1, pad: int = 0) -> Tensor:
    """2D cross-correlation (no kernel flip) of ``x`` with ``kernel[C_out, C_in, kh, kw]``.

    ``x`` is ``[C_in, h, w]`` or batched ``[B, C_in, h, w]``; output keeps the
    same batching.  Output extent is ``floor((h + 2*pad - kh) / stride) + 1``.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    xb, squeeze = _as_batched(x, "conv2d")
    if kernel.ndim != 4:
        raise ContractError(f"conv2d kernel must be [C_out,C_in,kh,kw], got {kernel.shape}")
    B, C, H, W = xb.shape
    O, Ck, kh, kw = kernel.shape
    if Ck != C:
        raise ContractError(f"conv2d: input has {C} channels, kernel expects {Ck}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ContractError(f"conv2d: kernel extents must be odd, got {kh}x{kw}")
    if stride < 1 or pad < 0:
        raise ContractError("conv2d: stride must be >= 1 and pad >= 0")
    Hp, Wp = H + 2 * pad, W + 2 * pad
    if kh > Hp or kw > Wp:
        raise ContractError(f"conv2d: kernel {kh}x{kw} larger than padded input {Hp}x{Wp}")
    Ho = (Hp - kh) // stride + 1
    Wo = (Wp - kw) // stride + 1
    wmat = kernel.data.reshape(O, C * kh * kw)
    parents = [xb, kernel]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (O,):
            raise ContractError(f"conv2d bias shape {bias.shape} != ({O},)")
        parents.append(bias)

    pointwise = kh == 1 and kw == 1 and stride == 1 and pad == 0
    if pointwise:
        xflat = xb.data.reshape(B, C, H * W)
        out = np.matmul(wmat, xflat).reshape(B, O, Ho, Wo)
        cols = None
    else:
        xp = np.pad(xb.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else xb.data
        win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :Ho, :Wo]
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B * Ho * Wo, C * kh * kw)
        out = (cols @ wmat.T).reshape(B, Ho, Wo, O).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)

    def backward(g):
        gx = gw = gb = None
        if pointwise:
            gflat = g.reshape(B, O, H * W)
            if kernel.requires_grad:
                gw = np.einsum("bop,bcp->oc", gflat, xflat).reshape(kernel.shape)
            if xb.requires_grad:
                gx = np.matmul(wmat.T, gflat).reshape(xb.shape)
        else:
            gf = g.transpose(0, 2, 3, 1).reshape(B * Ho * Wo, O)
            if kernel.requires_grad:
                gw = (gf.T @ cols).reshape(kernel.shape)
            if xb.requires_grad:
                dcols = (gf @ wmat).reshape(B, Ho, Wo, C, kh, kw)
                dxp = np.zeros((B, C, Hp, Wp))
                for i in range(kh):
                    for j in range(kw):
                        dxp[:, :, i : i + stride * (Ho - 1) + 1 : stride, j : j + stride * (Wo - 1) + 1 : stride] += (
                            dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                        )
                gx = dxp[:, :, pad : pad + H, pad : pad + W]
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        grads = (gx, gw) if bias is None else (gx, gw, gb)
        return grads

    result = Tensor._make(out, parents, backward, "conv2d")
    return reshape(result, result.shape[1:]) if squeeze else result


def avg_pool2d(x, factor: int) -> Tensor:
    """Non-overlapping ``factor x factor`` mean pooling over the last two axes."""
    x = as_tensor(x)
    if factor < 1:
        raise ContractError("avg_pool2d factor must be >= 1")
    if factor == 1:
        return x
    *lead, H, W = x.shape
    if H % factor or W % factor:
        raise ContractError(f"avg_pool2d: {H}x{W} not divisible by {factor}")
    out = x.data.reshape(*lead, H // factor, factor, W // factor, factor).mean(axis=(-3, -1))

    def backward(g):
        up = np.repeat(np.repeat(g, factor, axis=-2), factor, axis=-1)
        return (up / (factor * factor),)

    return Tensor._make(out, (x,), backward, "avg_pool2d")


def bilinear_matrix(n_in: int, factor: int) -> np.ndarray:
    """1D interpolation matrix ``[n_in*factor, n_in]`` with half-pixel centers."""
    n_out = n_in * factor
    A = np.zeros((n_out, n_in))
    for o in range(n_out):
        src = max((o + 0.5) / factor - 0.5, 0.0)
        i0 = min(int(np.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        lam = src - i0
        A[o, i0] += 1.0 - lam
        A[o, i1] += lam
    return A


def upsample_bilinear(x, factor: int) -> Tensor:
    """Bilinear upsampling of the last two axes by an integer factor (align_corners=False)."""
    x = as_tensor(x)
    if not isinstance(factor, (int, np.integer)) or factor < 1:
        raise ContractError(f"upsample factor must be an integer >= 1, got {factor!r}")
    if x.ndim < 2:
        raise ContractError("upsample_bilinear needs at least two spatial axes")
    if factor == 1:
        return x
    Ah = bilinear_matrix(x.shape[-2], factor)
    Aw = bilinear_matrix(x.shape[-1], factor)
    out = np.matmul(np.matmul(Ah, x.data), Aw.T)

    def backward(g):
        return (np.matmul(np.matmul(Ah.T, g), Aw),)

    return Tensor._make(out, (x,), backward, "upsample_bilinear")
