"""Dense float64 arrays with reverse-mode automatic differentiation.

Every tensor in this package -- model inputs, parameters, intermediates --
is a :class:`DiffArray` wrapping a float64 ndarray.  Operations record a
graph of parent links plus backward closures (a tape in reverse
topological order); :func:`backward` on a scalar loss replays it and
accumulates gradients into every tracked ancestor.

Conventions:

- float64 everywhere; the tight gradient-check tolerances in the test
  suite depend on it
- first-order gradients only; calling backward twice without zeroing
  accumulates
- elementwise ops broadcast by numpy rules; gradients of broadcast
  operands are summed back down to the operand shape
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import (
    ConfigError,
    ContractError,
    DataError,
    DimensionError,
    NumericError,
)

Array = np.ndarray


class DiffArray:
    """A float64 array that can participate in gradient tracking.

    ``grad`` stays ``None`` until a backward pass reaches this node;
    repeated backward passes accumulate into it.
    """

    __slots__ = ("values", "grad", "requires_grad", "_parents", "_backprop")

    def __init__(self, values, requires_grad: bool = False):
        self.values: Array = np.asarray(values, dtype=np.float64)
        self.grad: Array | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[DiffArray, ...] = ()
        self._backprop: Callable[[Array], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    def __repr__(self) -> str:
        return f"DiffArray(shape={self.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.values.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    # operator sugar; scalars and ndarrays are lifted to untracked arrays
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

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def swapaxes(self, a: int, b: int):
        return swapaxes(self, a, b)


def parameter(values) -> DiffArray:
    """A tracked leaf array (model weight)."""
    return DiffArray(values, requires_grad=True)


def _lift(x) -> DiffArray:
    return x if isinstance(x, DiffArray) else DiffArray(x)


def _node(values: Array, parents: Sequence[DiffArray], backprop) -> DiffArray:
    out = DiffArray(values)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backprop = backprop
    return out


def _accum(node: DiffArray, g: Array) -> None:
    if not node.requires_grad:
        return
    if node.grad is None:
        node.grad = np.array(np.broadcast_to(g, node.values.shape))
    else:
        node.grad += g


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    """Sum a broadcast gradient back down to the operand's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_broadcast(a: DiffArray, b: DiffArray, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(
            f"{op}: shapes {a.shape} and {b.shape} are not broadcast-compatible"
        ) from None


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> DiffArray:
    a, b = _lift(a), _lift(b)
    _check_broadcast(a, b, "add")
    out = a.values + b.values

    def backprop(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _node(out, (a, b), backprop)


def sub(a, b) -> DiffArray:
    a, b = _lift(a), _lift(b)
    _check_broadcast(a, b, "sub")
    out = a.values - b.values

    def backprop(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(-g, b.shape))

    return _node(out, (a, b), backprop)


def mul(a, b) -> DiffArray:
    """Elementwise (Hadamard) product with broadcasting."""
    a, b = _lift(a), _lift(b)
    _check_broadcast(a, b, "mul")
    out = a.values * b.values

    def backprop(g):
        _accum(a, _unbroadcast(g * b.values, a.shape))
        _accum(b, _unbroadcast(g * a.values, b.shape))

    return _node(out, (a, b), backprop)


def div(a, b) -> DiffArray:
    a, b = _lift(a), _lift(b)
    _check_broadcast(a, b, "div")
    out = a.values / b.values

    def backprop(g):
        _accum(a, _unbroadcast(g / b.values, a.shape))
        _accum(b, _unbroadcast(-g * a.values / (b.values * b.values), b.shape))

    return _node(out, (a, b), backprop)


def scale(x, factor: float) -> DiffArray:
    """Multiply by a python scalar."""
    x = _lift(x)
    factor = float(factor)
    out = x.values * factor

    def backprop(g):
        _accum(x, g * factor)

    return _node(out, (x,), backprop)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> DiffArray:
    """Matrix product; inputs need >= 2 dims, leading dims broadcast."""
    a, b = _lift(a), _lift(b)
    if a.values.ndim < 2 or b.values.ndim < 2:
        raise DimensionError(
            f"matmul: operands need at least 2 dims, got {a.shape} @ {b.shape}"
        )
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(
            f"matmul: inner dimensions differ, got {a.shape} @ {b.shape}"
        )
    out = a.values @ b.values

    def backprop(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g @ np.swapaxes(b.values, -1, -2), a.shape))
        if b.requires_grad:
            if b.values.ndim == 2:
                # collapse stacked dims into one BLAS call
                k = a.shape[-1]
                n = g.shape[-1]
                _accum(b, a.values.reshape(-1, k).T @ g.reshape(-1, n))
            else:
                _accum(b, _unbroadcast(np.swapaxes(a.values, -1, -2) @ g, b.shape))

    return _node(out, (a, b), backprop)


def conv1d(x, kernels, padding: str = "same", groups: int = 1) -> DiffArray:
    """Grouped 1-D cross-correlation along the last axis.

    Parameters
    ----------
    x : DiffArray or array, shape [..., C_in, L]
    kernels : DiffArray or array, shape [C_out, C_in // groups, K]
    padding : "same" (output length == L, stride 1) or "valid"
    groups : channel groups; groups == C_in gives a depthwise convolution
    """
    x, k = _lift(x), _lift(kernels)
    if x.values.ndim < 2:
        raise DimensionError(f"conv1d: input needs (channels, length) dims, got {x.shape}")
    if k.values.ndim != 3:
        raise DimensionError(f"conv1d: kernels need (C_out, C_in/groups, K) dims, got {k.shape}")
    c_in, length = x.shape[-2], x.shape[-1]
    c_out, c_in_g, ksize = k.shape
    if groups < 1 or c_in % groups or c_out % groups:
        raise ConfigError(
            f"conv1d: groups={groups} must divide input channels {c_in} "
            f"and output channels {c_out}"
        )
    if c_in_g != c_in // groups:
        raise DimensionError(
            f"conv1d: kernel shape {k.shape} inconsistent with {c_in} input "
            f"channels split into {groups} groups"
        )
    if padding == "same":
        total = ksize - 1
    elif padding == "valid":
        total = 0
    else:
        raise ConfigError(f"conv1d: unknown padding mode {padding!r}")
    if ksize > length + total:
        raise DimensionError(
            f"conv1d: kernel size {ksize} exceeds padded length {length + total}"
        )
    left = total // 2
    l_out = length + total - ksize + 1
    batch = x.shape[:-2]
    c_out_g = c_out // groups
    single_lane = c_in_g == 1 and c_out_g == 1  # one kernel tap per group
    pointwise = ksize == 1 and groups == 1

    xg = x.values.reshape((-1, groups, c_in_g, length))
    if total:
        xg = np.pad(xg, ((0, 0), (0, 0), (0, 0), (left, total - left)))
    kg = k.values.reshape(groups, c_out_g, c_in_g, ksize)

    if single_lane:
        taps = kg.reshape(groups, ksize)
        xf = xg.reshape(-1, groups, length + total)
        y = np.zeros((xf.shape[0], groups, l_out))
        for dk in range(ksize):
            y += xf[..., dk : dk + l_out] * taps[:, dk][:, None]
        out = y.reshape(batch + (c_out, l_out))
    elif pointwise:
        k2 = kg.reshape(c_out, c_in)
        out = np.matmul(k2, xg.reshape(-1, c_in, length)).reshape(batch + (c_out, l_out))
    else:
        y = np.zeros((xg.shape[0], groups, c_out_g, l_out))
        for dk in range(ksize):
            y += np.einsum("bgcl,goc->bgol", xg[..., dk : dk + l_out], kg[..., dk])
        out = y.reshape(batch + (c_out, l_out))

    def backprop(g):
        if single_lane:
            gg = g.reshape((-1, groups, l_out))
            xf = xg.reshape(-1, groups, length + total)
            taps = kg.reshape(groups, ksize)
            if x.requires_grad:
                dxp = np.zeros_like(xf)
                for dk in range(ksize):
                    dxp[..., dk : dk + l_out] += gg * taps[:, dk][:, None]
                if total:
                    dxp = dxp[..., left : left + length]
                _accum(x, dxp.reshape(x.shape))
            if k.requires_grad:
                dk_arr = np.zeros((groups, ksize))
                for dk in range(ksize):
                    dk_arr[:, dk] = np.sum(gg * xf[..., dk : dk + l_out], axis=(0, 2))
                _accum(k, dk_arr.reshape(k.shape))
            return
        if pointwise:
            gg = g.reshape((-1, c_out, l_out))
            xf = xg.reshape(-1, c_in, length)
            k2 = kg.reshape(c_out, c_in)
            if x.requires_grad:
                _accum(x, np.matmul(k2.T, gg).reshape(x.shape))
            if k.requires_grad:
                dk2 = np.matmul(gg, xf.transpose(0, 2, 1)).sum(axis=0)
                _accum(k, dk2.reshape(k.shape))
            return
        gg = g.reshape((-1, groups, c_out_g, l_out))
        if x.requires_grad:
            dxp = np.zeros_like(xg)
            for dk in range(ksize):
                dxp[..., dk : dk + l_out] += np.einsum("bgol,goc->bgcl", gg, kg[..., dk])
            if total:
                dxp = dxp[..., left : left + length]
            _accum(x, dxp.reshape(x.shape))
        if k.requires_grad:
            dk_arr = np.zeros_like(kg)
            for dk in range(ksize):
                dk_arr[..., dk] = np.einsum("bgcl,bgol->goc", xg[..., dk : dk + l_out], gg)
            _accum(k, dk_arr.reshape(k.shape))

    return _node(out, (x, k), backprop)


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(x, shape) -> DiffArray:
    x = _lift(x)
    out = x.values.reshape(shape)

    def backprop(g):
        _accum(x, g.reshape(x.shape))

    return _node(out, (x,), backprop)


def swapaxes(x, a: int, b: int) -> DiffArray:
    x = _lift(x)
    out = np.swapaxes(x.values, a, b)

    def backprop(g):
        _accum(x, np.swapaxes(g, a, b))

    return _node(out, (x,), backprop)


def concat(parts: Sequence, axis: int = -1) -> DiffArray:
    parts = [_lift(p) for p in parts]
    if not parts:
        raise ContractError("concat: need at least one array")
    out = np.concatenate([p.values for p in parts], axis=axis)
    ax = axis % out.ndim
    sizes = [p.shape[ax] for p in parts]
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    def backprop(g):
        for p, s0, s1 in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[ax] = slice(int(s0), int(s1))
                _accum(p, g[tuple(sl)])

    return _node(out, tuple(parts), backprop)


# ---------------------------------------------------------------------------
# reductions and elementwise nonlinearities


def _expand_reduced(g: Array, shape: tuple[int, ...], axis, keepdims: bool) -> Array:
    if axis is None:
        return np.broadcast_to(g, shape)
    axes = axis if isinstance(axis, tuple) else (axis,)
    if not keepdims:
        for ax in sorted(a % len(shape) for a in axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def reduce_sum(x, axis=None, keepdims: bool = False) -> DiffArray:
    x = _lift(x)
    out = np.sum(x.values, axis=axis, keepdims=keepdims)

    def backprop(g):
        _accum(x, _expand_reduced(g, x.shape, axis, keepdims))

    return _node(out, (x,), backprop)


def reduce_mean(x, axis=None, keepdims: bool = False) -> DiffArray:
    x = _lift(x)
    out = np.mean(x.values, axis=axis, keepdims=keepdims)
    count = x.values.size if axis is None else x.values.size // out.size if out.size else 1

    def backprop(g):
        _accum(x, _expand_reduced(g / count, x.shape, axis, keepdims))

    return _node(out, (x,), backprop)


def sqrt(x) -> DiffArray:
    x = _lift(x)
    out = np.sqrt(x.values)

    def backprop(g):
        _accum(x, g * 0.5 / out)

    return _node(out, (x,), backprop)


def absolute(x) -> DiffArray:
    """|x| with subgradient 0 at exact zeros."""
    x = _lift(x)
    out = np.abs(x.values)

    def backprop(g):
        _accum(x, g * np.sign(x.values))

    return _node(out, (x,), backprop)


def clamp_min(x, floor: float) -> DiffArray:
    """max(x, floor); clamped coordinates get zero gradient."""
    x = _lift(x)
    floor = float(floor)
    out = np.maximum(x.values, floor)

    def backprop(g):
        _accum(x, g * (x.values > floor))

    return _node(out, (x,), backprop)


def silu(x) -> DiffArray:
    """Smooth ramp activation x * sigmoid(x)."""
    x = _lift(x)
    with np.errstate(over="ignore"):
        sig = 1.0 / (1.0 + np.exp(-x.values))
    out = x.values * sig

    def backprop(g):
        _accum(x, g * sig * (1.0 + x.values * (1.0 - sig)))

    return _node(out, (x,), backprop)


# ---------------------------------------------------------------------------
# backward pass


def backward(loss: DiffArray) -> None:
    """Populate grads of every tracked node reachable from a scalar loss."""
    if loss.values.size != 1:
        raise ContractError(f"backward: loss must be scalar, got shape {loss.shape}")
    topo: list[DiffArray] = []
    visited: set[int] = set()
    stack: list[tuple[DiffArray, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    _accum(loss, np.ones_like(loss.values))
    for node in reversed(topo):
        if node._backprop is not None and node.grad is not None:
            node._backprop(node.grad)


def zero_grads(params: Sequence[DiffArray]) -> None:
    for p in params:
        p.grad = None


# ---------------------------------------------------------------------------
# Adam optimizer


@dataclass
class AdamState:
    """Per-parameter moment buffers plus optimizer hyperparameters."""

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: list[Array] = field(default_factory=list)
    second_moment: list[Array] = field(default_factory=list)


def adam_step(params: Sequence[DiffArray], grads: Sequence[Array], state: AdamState) -> None:
    """One in-place Adam update with bias correction.

    Aborts (raising :class:`NumericError`, parameters untouched) if any
    gradient contains non-finite values.
    """
    params = list(params)
    grads = [np.asarray(g, dtype=np.float64) for g in grads]
    if len(params) != len(grads):
        raise ContractError(f"adam_step: {len(params)} params but {len(grads)} grads")
    for p, g in zip(params, grads):
        if g.shape != p.shape:
            raise DimensionError(f"adam_step: grad shape {g.shape} != param shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError("adam_step: non-finite gradient, update aborted")
    if not state.first_moment:
        state.first_moment = [np.zeros_like(p.values) for p in params]
        state.second_moment = [np.zeros_like(p.values) for p in params]
    if len(state.first_moment) != len(params):
        raise ContractError("adam_step: state was initialized for a different parameter set")

    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.values -= state.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)


def clip_global_norm(grads: Sequence[Array], max_norm: float) -> float:
    """Scale grads in place so their joint L2 norm is at most max_norm."""
    total = 0.0
    for g in grads:
        total += float(np.sum(g * g))
    norm = float(np.sqrt(total))
    if norm > max_norm and norm > 0.0:
        factor = max_norm / norm
        for g in grads:
            g *= factor
    return norm


# ---------------------------------------------------------------------------
# named-array container (checkpoints)

_MAGIC = b"FTMX"
CONTAINER_VERSION = 1


def save_arrays(path, arrays: dict[str, Array], metadata: dict | None = None) -> None:
    """Write named float64 arrays plus a JSON metadata blob.

    Binary layout: magic, u32 version, u32 metadata length + UTF-8 JSON,
    u32 entry count, then per entry: u16 name length + name, u8 ndim,
    u32 dims, little-endian float64 payload.  Round trips bit-exactly.
    """
    meta = json.dumps(metadata or {}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", CONTAINER_VERSION))
        f.write(struct.pack("<I", len(meta)))
        f.write(meta)
        f.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            a = np.ascontiguousarray(arr, dtype="<f8")
            nb = name.encode("utf-8")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<B", a.ndim))
            if a.ndim:
                f.write(struct.pack(f"<{a.ndim}I", *a.shape))
            f.write(a.tobytes())


def load_arrays(path) -> tuple[dict[str, Array], dict]:
    """Inverse of :func:`save_arrays`."""
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != _MAGIC:
        raise DataError(f"{path}: not a ftmixer checkpoint (bad magic)")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != CONTAINER_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    (meta_len,) = struct.unpack_from("<I", raw, 8)
    off = 12
    metadata = json.loads(raw[off : off + meta_len].decode("utf-8"))
    off += meta_len
    (count,) = struct.unpack_from("<I", raw, off)
    off += 4
    arrays: dict[str, Array] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", raw, off)
        off += 2
        name = raw[off : off + name_len].decode("utf-8")
        off += name_len
        (ndim,) = struct.unpack_from("<B", raw, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", raw, off) if ndim else ()
        off += 4 * ndim
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(raw, dtype="<f8", count=n, offset=off).reshape(shape)
        off += 8 * n
        arrays[name] = arr.astype(np.float64)  # own, writeable copy
    return arrays, metadata
