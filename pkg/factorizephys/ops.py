"""
Differentiable operations over ``Tensor``.

Each function computes its forward result with numpy, checks it is finite and
records a backward closure on the active tape. Broadcasting is limited to a
size-1 operand against a full tensor and to the bias add inside ``conv3d``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Any, Dict, Optional, Sequence, Tuple, Union

import numpy as np

from factorizephys.autodiff import Tensor, record
from factorizephys.errors import ConfigError, ShapeError, SignalError

Scalar = Union[int, float]
Operand = Union[Tensor, Scalar]

PADDING_MODES = ("same", "valid")
IN_EPS = 1e-5


@dataclass(frozen=True)
class ConvSpec:
    """
    Geometry of a 3D convolution over ``(N, C, T, H, W)`` input.

    Attributes:
        in_channels: Input channel count.
        out_channels: Output channel count.
        kernel: ``(k_t, k_h, k_w)``.
        stride: ``(s_t, s_h, s_w)``.
        temporal_padding: ``"same"`` or ``"valid"``.
        spatial_padding: ``"same"`` or ``"valid"``.
        bias: Whether a per-output-channel bias is added.
    """

    in_channels: int
    out_channels: int
    kernel: Tuple[int, int, int] = (1, 1, 1)
    stride: Tuple[int, int, int] = (1, 1, 1)
    temporal_padding: str = "same"
    spatial_padding: str = "valid"
    bias: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "kernel", tuple(int(k) for k in self.kernel))
        object.__setattr__(self, "stride", tuple(int(s) for s in self.stride))
        if self.in_channels < 1 or self.out_channels < 1:
            raise ConfigError(f"channel counts must be >= 1, got {self.in_channels}->{self.out_channels}")
        if len(self.kernel) != 3 or len(self.stride) != 3:
            raise ConfigError(f"kernel and stride need three entries, got {self.kernel} and {self.stride}")
        if min(self.kernel) < 1 or min(self.stride) < 1:
            raise ConfigError(f"kernel and stride entries must be >= 1, got {self.kernel} and {self.stride}")
        for mode in (self.temporal_padding, self.spatial_padding):
            if mode not in PADDING_MODES:
                raise ConfigError(f"padding must be one of {PADDING_MODES}, got {mode!r}")

    @property
    def weight_shape(self) -> Tuple[int, int, int, int, int]:
        return (self.out_channels, self.in_channels, *self.kernel)

    @property
    def param_count(self) -> int:
        return int(np.prod(self.weight_shape)) + (self.out_channels if self.bias else 0)

    @property
    def fan_in(self) -> int:
        return self.in_channels * int(np.prod(self.kernel))

    def _modes(self) -> Tuple[str, str, str]:
        return (self.temporal_padding, self.spatial_padding, self.spatial_padding)

    def output_shape(self, t: int, h: int, w: int) -> Tuple[int, int, int]:
        """
        Output ``(T, H, W)`` for an input extent.

        Raises:
            ShapeError: If any output axis would be shorter than 1.
        """
        out = tuple(
            _out_len(n, k, s, mode)
            for n, k, s, mode in zip((t, h, w), self.kernel, self.stride, self._modes())
        )
        if min(out) < 1:
            raise ShapeError(f"conv3d {self.kernel}/{self.stride} on extent {(t, h, w)} gives output {out}")
        return out

    def pads(self, t: int, h: int, w: int) -> Tuple[Tuple[int, int], ...]:
        return tuple(
            _pad_amounts(n, k, s, mode)
            for n, k, s, mode in zip((t, h, w), self.kernel, self.stride, self._modes())
        )

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["kernel"] = list(self.kernel)
        data["stride"] = list(self.stride)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ConvSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown conv keys: {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(f"invalid conv spec {data}: {exc}") from exc


def _out_len(n: int, k: int, s: int, mode: str) -> int:
    if mode == "same":
        return -(-n // s)
    return (n - k) // s + 1 if n >= k else 0


def _pad_amounts(n: int, k: int, s: int, mode: str) -> Tuple[int, int]:
    if mode == "valid":
        return (0, 0)
    total = max((-(-n // s) - 1) * s + k - n, 0)
    return (total // 2, total - total // 2)


def _as_operand(x: Operand) -> Optional[Tensor]:
    return x if isinstance(x, Tensor) else None


def _check_pair(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape == b.shape:
        return
    small, big = (a, b) if a.size == 1 else (b, a)
    if small.size != 1 or small.ndim > big.ndim:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} are not compatible")


def _reduce_to(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    return np.asarray(grad.sum()).reshape(shape)


def _binary(op: str, a: Operand, b: Operand, forward, grad_a, grad_b) -> Tensor:
    ta, tb = _as_operand(a), _as_operand(b)
    if ta is None and tb is None:
        raise ShapeError(f"{op}: at least one operand must be a Tensor")
    if ta is not None and tb is not None:
        _check_pair(op, ta, tb)
    xa = ta.data if ta is not None else a
    xb = tb.data if tb is not None else b
    out = forward(xa, xb)
    inputs = tuple(t for t in (ta, tb) if t is not None)

    def backward_fn(g: np.ndarray):
        grads = []
        if ta is not None:
            grads.append(_reduce_to(grad_a(g, xa, xb), ta.shape) if ta.requires_grad else None)
        if tb is not None:
            grads.append(_reduce_to(grad_b(g, xa, xb), tb.shape) if tb.requires_grad else None)
        return tuple(grads)

    return record(op, inputs, out, backward_fn)


def add(a: Operand, b: Operand) -> Tensor:
    return _binary("add", a, b, np.add, lambda g, x, y: g, lambda g, x, y: g)


def sub(a: Operand, b: Operand) -> Tensor:
    return _binary("sub", a, b, np.subtract, lambda g, x, y: g, lambda g, x, y: -g)


def mul(a: Operand, b: Operand) -> Tensor:
    return _binary(
        "mul", a, b, np.multiply,
        lambda g, x, y: g * y,
        lambda g, x, y: g * x,
    )


def div(a: Operand, b: Operand) -> Tensor:
    return _binary(
        "div", a, b, np.divide,
        lambda g, x, y: g / y,
        lambda g, x, y: -g * x / (y * y),
    )


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)

    def backward_fn(g: np.ndarray):
        return (g * (1.0 - out * out),)

    return record("tanh", (x,), out, backward_fn)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = np.where(mask, x.data, 0).astype(x.dtype, copy=False)

    def backward_fn(g: np.ndarray):
        return (g * mask,)

    return record("relu", (x,), out, backward_fn)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of 2-D operands, or batched over one equal leading axis for 3-D operands."""
    if a.ndim not in (2, 3) or a.ndim != b.ndim:
        raise ShapeError(f"matmul needs two 2-D or two 3-D tensors, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2] or (a.ndim == 3 and a.shape[0] != b.shape[0]):
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")
    out = np.matmul(a.data, b.data)

    def backward_fn(g: np.ndarray):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2)) if a.requires_grad else None
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g) if b.requires_grad else None
        return (ga, gb)

    return record("matmul", (a, b), out, backward_fn)


def reshape_permute(
    x: Tensor,
    perm: Optional[Sequence[int]] = None,
    shape: Optional[Sequence[int]] = None,
) -> Tensor:
    """
    Permute axes (materialized row-major) and then reshape.

    Raises:
        ShapeError: If the permutation is invalid or the element count changes.
    """
    perm = tuple(range(x.ndim)) if perm is None else tuple(int(p) for p in perm)
    if sorted(perm) != list(range(x.ndim)):
        raise ShapeError(f"invalid permutation {perm} for {x.ndim}-D tensor")
    permuted = np.ascontiguousarray(np.transpose(x.data, perm))
    shape = permuted.shape if shape is None else tuple(int(s) for s in shape)
    if int(np.prod(shape)) != x.size:
        raise ShapeError(f"cannot reshape {x.shape} (permuted {permuted.shape}) into {shape}")
    out = permuted.reshape(shape)
    inverse = tuple(np.argsort(perm))
    permuted_shape = permuted.shape

    def backward_fn(g: np.ndarray):
        return (np.ascontiguousarray(np.transpose(g.reshape(permuted_shape), inverse)),)

    return record("reshape_permute", (x,), out, backward_fn)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    return reshape_permute(x, shape=shape)


def permute(x: Tensor, perm: Sequence[int]) -> Tensor:
    return reshape_permute(x, perm=perm)


def _norm_axes(x: Tensor, axes: Optional[Union[int, Sequence[int]]]) -> Tuple[int, ...]:
    if axes is None:
        return tuple(range(x.ndim))
    if isinstance(axes, int):
        axes = (axes,)
    return tuple(sorted(a % x.ndim for a in axes))


def reduce_sum(x: Tensor, axes: Optional[Union[int, Sequence[int]]] = None, keepdims: bool = False) -> Tensor:
    ax = _norm_axes(x, axes)
    out = np.sum(x.data, axis=ax, keepdims=keepdims)
    kept_shape = tuple(1 if i in ax else n for i, n in enumerate(x.shape))

    def backward_fn(g: np.ndarray):
        return (np.broadcast_to(g.reshape(kept_shape), x.shape).copy(),)

    return record("reduce_sum", (x,), np.asarray(out), backward_fn)


def reduce_mean(x: Tensor, axes: Optional[Union[int, Sequence[int]]] = None, keepdims: bool = False) -> Tensor:
    ax = _norm_axes(x, axes)
    count = int(np.prod([x.shape[a] for a in ax])) if ax else 1
    if count == 0:
        raise ShapeError(f"reduce_mean over empty axes {ax} of {x.shape}")
    out = np.mean(x.data, axis=ax, keepdims=keepdims)
    kept_shape = tuple(1 if i in ax else n for i, n in enumerate(x.shape))

    def backward_fn(g: np.ndarray):
        return (np.broadcast_to(g.reshape(kept_shape) / count, x.shape).astype(x.dtype),)

    return record("reduce_mean", (x,), np.asarray(out), backward_fn)


def temporal_diff(x: Tensor, axis: int = 2) -> Tensor:
    """``out[t] = x[t + 1] - x[t]`` along ``axis``."""
    axis = axis % x.ndim
    n = x.shape[axis]
    if n < 2:
        raise ShapeError(f"temporal_diff needs at least 2 samples on axis {axis}, got {n}")
    out = np.diff(x.data, axis=axis)

    def backward_fn(g: np.ndarray):
        gx = np.zeros(x.shape, dtype=g.dtype)
        head = [slice(None)] * x.ndim
        tail = [slice(None)] * x.ndim
        head[axis] = slice(1, None)
        tail[axis] = slice(None, -1)
        gx[tuple(head)] += g
        gx[tuple(tail)] -= g
        return (gx,)

    return record("temporal_diff", (x,), out, backward_fn)


def instance_norm(x: Tensor, eps: float = IN_EPS) -> Tensor:
    """
    Normalize every ``(n, c)`` slice over the remaining axes to mean 0, variance 1.

    Variance is the biased estimate; ``eps`` is added before the square root and
    there are no affine parameters.

    Raises:
        ShapeError: If the input has fewer than 2 axes or a slice is empty.
    """
    if x.ndim < 2 or x.size == 0:
        raise ShapeError(f"instance_norm needs non-empty (N, C, ...) input, got {x.shape}")
    axes = tuple(range(2, x.ndim))
    mean = x.data.mean(axis=axes, keepdims=True)
    centered = x.data - mean
    var = (centered * centered).mean(axis=axes, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    out = centered * inv_std

    def backward_fn(g: np.ndarray):
        g_mean = g.mean(axis=axes, keepdims=True)
        gy_mean = (g * out).mean(axis=axes, keepdims=True)
        return (inv_std * (g - g_mean - out * gy_mean),)

    return record("instance_norm", (x,), out.astype(x.dtype, copy=False), backward_fn)


def conv3d(x: Tensor, spec: ConvSpec, weights: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """
    3D cross-correlation of ``x`` with ``weights`` under ``spec``'s padding and stride.

    The kernel taps are visited in a fixed order and each contributes one
    ``tensordot`` over input channels, so results are reproducible bit for bit.

    Raises:
        ShapeError: On channel/weight mismatch or an output axis shorter than 1.
    """
    if x.ndim != 5:
        raise ShapeError(f"conv3d expects (N, C, T, H, W) input, got {x.shape}")
    if tuple(weights.shape) != spec.weight_shape:
        raise ShapeError(f"conv3d weight shape {weights.shape} != expected {spec.weight_shape}")
    if x.shape[1] != spec.in_channels:
        raise ShapeError(f"conv3d input has {x.shape[1]} channels, spec expects {spec.in_channels}")
    if spec.bias != (bias is not None):
        raise ShapeError("conv3d bias presence does not match spec.bias")
    if bias is not None and tuple(bias.shape) != (spec.out_channels,):
        raise ShapeError(f"conv3d bias shape {bias.shape} != ({spec.out_channels},)")

    n, _, t, h, w = x.shape
    to, ho, wo = spec.output_shape(t, h, w)
    pads = spec.pads(t, h, w)
    kt, kh, kw = spec.kernel
    st, sh, sw = spec.stride

    xp = x.data
    if any(p for pair in pads for p in pair):
        xp = np.pad(xp, ((0, 0), (0, 0), *pads))
    xc = np.ascontiguousarray(xp.transpose(1, 0, 2, 3, 4))
    wd = weights.data
    dtype = np.result_type(x.dtype, weights.dtype)

    def window(dt: int, dh: int, dw: int) -> Tuple[slice, ...]:
        return (
            slice(None),
            slice(None),
            slice(dt, dt + st * (to - 1) + 1, st),
            slice(dh, dh + sh * (ho - 1) + 1, sh),
            slice(dw, dw + sw * (wo - 1) + 1, sw),
        )

    taps = [(dt, dh, dw) for dt in range(kt) for dh in range(kh) for dw in range(kw)]
    acc = np.zeros((spec.out_channels, n, to, ho, wo), dtype=dtype)
    for dt, dh, dw in taps:
        acc += np.tensordot(wd[:, :, dt, dh, dw], xc[window(dt, dh, dw)], axes=([1], [0]))
    if bias is not None:
        acc += bias.data[:, None, None, None, None]
    out = acc.transpose(1, 0, 2, 3, 4)

    def backward_fn(g: np.ndarray):
        gc = np.ascontiguousarray(g.transpose(1, 0, 2, 3, 4))
        gx = gw = gb = None
        if weights.requires_grad:
            gw = np.zeros(wd.shape, dtype=dtype)
            for dt, dh, dw in taps:
                gw[:, :, dt, dh, dw] = np.tensordot(
                    gc, xc[window(dt, dh, dw)], axes=([1, 2, 3, 4], [1, 2, 3, 4])
                )
            gw = gw.astype(weights.dtype, copy=False)
        if x.requires_grad:
            gxc = np.zeros(xc.shape, dtype=dtype)
            for dt, dh, dw in taps:
                gxc[window(dt, dh, dw)] += np.tensordot(wd[:, :, dt, dh, dw], gc, axes=([0], [0]))
            (t0, _), (h0, _), (w0, _) = pads
            gx = np.ascontiguousarray(
                gxc.transpose(1, 0, 2, 3, 4)[:, :, t0 : t0 + t, h0 : h0 + h, w0 : w0 + w]
            ).astype(x.dtype, copy=False)
        if bias is not None and bias.requires_grad:
            gb = gc.sum(axis=(1, 2, 3, 4)).astype(bias.dtype, copy=False)
        return (gx, gw) if bias is None else (gx, gw, gb)

    inputs = (x, weights) if bias is None else (x, weights, bias)
    return record("conv3d", inputs, out, backward_fn)


def neg_pearson(r: Tensor, g: np.ndarray) -> Tensor:
    """
    Mean over samples of ``1 - pearson(r_i, g_i)``.

    ``r`` is ``(T,)`` or ``(N, T)``; ``g`` is a constant array of the same shape.

    Raises:
        ShapeError: If shapes differ.
        SignalError: If any row of ``r`` or ``g`` has zero variance.
    """
    g = np.asarray(g, dtype=r.dtype)
    if g.shape != r.shape or r.ndim not in (1, 2):
        raise ShapeError(f"neg_pearson needs equal 1-D or 2-D shapes, got {r.shape} and {g.shape}")
    if r.shape[-1] < 2:
        raise SignalError("neg_pearson needs at least 2 samples")
    r2 = r.data.reshape(-1, r.shape[-1]).astype(np.float64)
    g2 = g.reshape(-1, g.shape[-1]).astype(np.float64)
    rc = r2 - r2.mean(axis=1, keepdims=True)
    gc = g2 - g2.mean(axis=1, keepdims=True)
    nr = np.sqrt((rc * rc).sum(axis=1))
    ng = np.sqrt((gc * gc).sum(axis=1))
    if np.any(nr == 0) or np.any(ng == 0):
        raise SignalError("pearson correlation undefined for zero-variance signal")
    rho = (rc * gc).sum(axis=1) / (nr * ng)
    batch = r2.shape[0]
    out = np.asarray(np.mean(1.0 - rho), dtype=r.dtype)

    def backward_fn(grad: np.ndarray):
        drho = gc / (nr * ng)[:, None] - rho[:, None] * rc / (nr * nr)[:, None]
        gr = -grad.reshape(-1)[0] * drho / batch
        return (gr.reshape(r.shape).astype(r.dtype),)

    return record("neg_pearson", (r,), out, backward_fn)


def fan_in_bound(spec: ConvSpec) -> float:
    return math.sqrt(6.0 / spec.fan_in)


__all__ = [
    "ConvSpec",
    "PADDING_MODES",
    "IN_EPS",
    "add",
    "sub",
    "mul",
    "div",
    "tanh",
    "relu",
    "matmul",
    "reshape_permute",
    "reshape",
    "permute",
    "reduce_sum",
    "reduce_mean",
    "temporal_diff",
    "instance_norm",
    "conv3d",
    "neg_pearson",
    "fan_in_bound",
]
