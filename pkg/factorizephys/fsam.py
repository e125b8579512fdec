"""
Factorized self-attention over voxel embeddings.

The embedding ``e`` of shape ``(N, kappa, tau, alpha, beta)`` goes through a
1x1x1 convolution and ReLU, is mapped to a nonnegative matrix, factorized at
low rank, mapped back, passed through a second 1x1x1 convolution and ReLU,
and used to excite ``e``:

    out = e + IN(e * relu(post(unmap(NMF(map(relu(pre(e))))))))

Without the residual connection the leading ``e +`` is dropped.
"""

from __future__ import annotations

from contextlib import nullcontext
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np

from factorizephys import ops
from factorizephys.autodiff import Tensor, no_grad
from factorizephys.errors import ConfigError, NmfError, ShapeError
from factorizephys.nmf import NmfConfig, factorize
from factorizephys.ops import ConvSpec

TAU_TO_M = "TauToM"
KAPPA_TO_M = "KappaToM"
TAU_KAPPA_TO_M = "TauKappaToM"
TSM_FRAME_DEPTH = "TsmFrameDepth"
VARIANTS = (TAU_TO_M, KAPPA_TO_M, TAU_KAPPA_TO_M, TSM_FRAME_DEPTH)

# Short names accepted on the command line.
MAPPING_ALIASES = {
    "tau": TAU_TO_M,
    "kappa": KAPPA_TO_M,
    "taukappa": TAU_KAPPA_TO_M,
    "tsm": TSM_FRAME_DEPTH,
}


@dataclass(frozen=True)
class MappingSpec:
    """
    Which embedding axes form the rows (M) of the factorized matrix.

    ``frame_depth`` is only used by ``TsmFrameDepth``, where each frame is its
    own matrix and the channel axis is split into blocks of ``frame_depth``.
    """

    variant: str = TAU_TO_M
    frame_depth: Optional[int] = None

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"mapping must be one of {VARIANTS}, got {self.variant!r}")
        if self.variant == TSM_FRAME_DEPTH:
            if self.frame_depth is None or int(self.frame_depth) < 1:
                raise ConfigError("TsmFrameDepth mapping needs a positive frame_depth")
        elif self.frame_depth is not None:
            raise ConfigError(f"frame_depth only applies to {TSM_FRAME_DEPTH}")

    @classmethod
    def parse(cls, name: str, frame_depth: Optional[int] = None) -> "MappingSpec":
        """Build from a variant name or one of the short aliases (tau, kappa, taukappa, tsm)."""
        variant = MAPPING_ALIASES.get(name.lower(), name)
        if variant == TSM_FRAME_DEPTH and frame_depth is None:
            frame_depth = 2
        return cls(variant, frame_depth if variant == TSM_FRAME_DEPTH else None)

    def matrix_shape(self, kappa: int, tau: int, alpha: int, beta: int) -> Tuple[int, int, int]:
        """``(matrices per sample, M, N)`` for one embedding of the given extent."""
        if self.variant == TAU_TO_M:
            return (1, tau, kappa * alpha * beta)
        if self.variant == KAPPA_TO_M:
            return (1, kappa, tau * alpha * beta)
        if self.variant == TAU_KAPPA_TO_M:
            return (1, tau * kappa, alpha * beta)
        psi = self._check_depth(kappa)
        return (tau, psi, (kappa // psi) * alpha * beta)

    def _check_depth(self, kappa: int) -> int:
        psi = int(self.frame_depth)
        if psi >= kappa or kappa % psi:
            raise ShapeError(f"frame depth {psi} must be smaller than and divide {kappa} channels")
        return psi

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {"variant": self.variant}
        if self.frame_depth is not None:
            data["frame_depth"] = int(self.frame_depth)
        return data

    @classmethod
    def from_dict(cls, data: Any) -> "MappingSpec":
        if isinstance(data, str):
            return cls.parse(data)
        unknown = set(data) - {"variant", "frame_depth"}
        if unknown:
            raise ConfigError(f"unknown mapping keys: {sorted(unknown)}")
        return cls.parse(data.get("variant", TAU_TO_M), data.get("frame_depth"))


@dataclass
class FsamConfig:
    """
    Attention block settings.

    Attributes:
        mapping: Axis mapping (default tau to M).
        nmf: Rank, steps and gradient mode of the factorization.
        channels: Output channels of the first 1x1x1 convolution; None keeps kappa.
        residual: Add the excited embedding back onto the input.
    """

    mapping: MappingSpec = field(default_factory=MappingSpec)
    nmf: NmfConfig = field(default_factory=NmfConfig)
    channels: Optional[int] = None
    residual: bool = True

    def inner_channels(self, kappa: int) -> int:
        return kappa if self.channels is None else int(self.channels)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "mapping": self.mapping.to_dict(),
            "nmf": self.nmf.to_dict(),
            "channels": self.channels,
            "residual": self.residual,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "FsamConfig":
        unknown = set(data) - {"mapping", "nmf", "channels", "residual"}
        if unknown:
            raise ConfigError(f"unknown fsam keys: {sorted(unknown)}")
        return cls(
            mapping=MappingSpec.from_dict(data.get("mapping", {})),
            nmf=NmfConfig.from_dict(data.get("nmf", {})),
            channels=data.get("channels"),
            residual=bool(data.get("residual", True)),
        )


@dataclass
class FsamParams:
    """Weights and biases of the two 1x1x1 convolutions around the factorization."""

    pre_spec: ConvSpec
    post_spec: ConvSpec
    pre_w: Tensor
    pre_b: Tensor
    post_w: Tensor
    post_b: Tensor

    def named(self) -> Dict[str, Tensor]:
        return {
            "fsam.pre.weight": self.pre_w,
            "fsam.pre.bias": self.pre_b,
            "fsam.post.weight": self.post_w,
            "fsam.post.bias": self.post_b,
        }


def fsam_specs(kappa: int, cfg: FsamConfig) -> Tuple[ConvSpec, ConvSpec]:
    inner = cfg.inner_channels(kappa)
    pre = ConvSpec(kappa, inner, kernel=(1, 1, 1), temporal_padding="same", spatial_padding="valid")
    post = ConvSpec(inner, kappa, kernel=(1, 1, 1), temporal_padding="same", spatial_padding="valid")
    return pre, post


def _batched(e: Tensor) -> Tuple[Tensor, bool]:
    if e.ndim == 4:
        return ops.reshape(e, (1, *e.shape)), True
    if e.ndim == 5:
        return e, False
    raise ShapeError(f"embedding must be (kappa, tau, alpha, beta) or batched, got {e.shape}")


def map_to_matrix(e: Tensor, mapping: MappingSpec) -> Tensor:
    """
    Rearrange an embedding into the matrix handed to the factorization.

    A single embedding ``(kappa, tau, alpha, beta)`` gives an ``M x N`` matrix
    (``frames x M x N`` for ``TsmFrameDepth``). A batch ``(N, kappa, ...)``
    gives ``(N * matrices, M, N)``.

    Raises:
        NmfError: If ``e`` has a negative entry.
        ShapeError: If the frame-depth grouping does not divide the channels.
    """
    if e.size and e.data.min() < 0:
        raise NmfError("embedding handed to the factorization must be nonnegative")
    x, single = _batched(e)
    b, kappa, tau, alpha, beta = x.shape
    per, m, n = mapping.matrix_shape(kappa, tau, alpha, beta)

    if mapping.variant == KAPPA_TO_M:
        out = ops.reshape(x, (b, m, n))
    elif mapping.variant in (TAU_TO_M, TAU_KAPPA_TO_M):
        out = ops.reshape_permute(x, perm=(0, 2, 1, 3, 4), shape=(b, m, n))
    else:
        psi = m
        grouped = ops.reshape(x, (b, kappa // psi, psi, tau, alpha, beta))
        out = ops.reshape_permute(grouped, perm=(0, 3, 2, 1, 4, 5), shape=(b * tau, m, n))

    if single and per == 1:
        return ops.reshape(out, (m, n))
    return out


def map_from_matrix(v: Tensor, mapping: MappingSpec, target_shape: Sequence[int]) -> Tensor:
    """
    Exact inverse of ``map_to_matrix`` for an embedding of ``target_shape``.

    Raises:
        ShapeError: If element counts differ.
    """
    target = tuple(int(s) for s in target_shape)
    if int(np.prod(target)) != v.size:
        raise ShapeError(f"cannot restore {v.shape} ({v.size} values) into {target}")
    single = len(target) == 4
    b, kappa, tau, alpha, beta = (1, *target) if single else target

    if mapping.variant == KAPPA_TO_M:
        out = ops.reshape(v, (b, kappa, tau, alpha, beta))
    elif mapping.variant in (TAU_TO_M, TAU_KAPPA_TO_M):
        out = ops.reshape_permute(
            ops.reshape(v, (b, tau, kappa, alpha, beta)), perm=(0, 2, 1, 3, 4)
        )
    else:
        psi = mapping._check_depth(kappa)
        spread = ops.reshape(v, (b, tau, psi, kappa // psi, alpha, beta))
        out = ops.reshape_permute(spread, perm=(0, 3, 2, 1, 4, 5), shape=(b, kappa, tau, alpha, beta))

    return ops.reshape(out, target) if single else out


def factorized_embedding(e: Tensor, params: FsamParams, cfg: FsamConfig) -> Tuple[Tensor, Tensor]:
    """
    Low-rank reconstruction of the embedding.

    Returns:
        ``(e_hat, v_hat)``: the reconstruction in embedding layout and the
        reconstructed matrices, one per sample (per frame for TSM).
    """
    grad_through = cfg.nmf.grad_mode == "one_step"
    with nullcontext() if grad_through else no_grad():
        pre = ops.relu(ops.conv3d(e, params.pre_spec, params.pre_w, params.pre_b))
        v = map_to_matrix(pre, cfg.mapping)
        _, v_hat = factorize(v, cfg.nmf)
        e_hat = map_from_matrix(v_hat, cfg.mapping, pre.shape)
    return e_hat, v_hat


def fsam_forward(e: Tensor, params: FsamParams, cfg: FsamConfig) -> Tensor:
    """
    Attention-weighted embedding with the same shape as ``e``.

    Each batch sample is factorized on its own.

    Raises:
        NmfError: If the rank exceeds ``min(M, N)`` under the mapping.
    """
    if e.ndim != 5:
        raise ShapeError(f"fsam expects (N, kappa, tau, alpha, beta), got {e.shape}")
    e_hat, _ = factorized_embedding(e, params, cfg)
    gate = ops.relu(ops.conv3d(e_hat, params.post_spec, params.post_w, params.post_b))
    excited = ops.instance_norm(ops.mul(e, gate))
    return ops.add(e, excited) if cfg.residual else excited


def fsam_bypass(e: Tensor, params: Optional[FsamParams] = None, cfg: Optional[FsamConfig] = None) -> Tensor:
    """The attention branch removed: ``e`` unchanged."""
    return e


__all__ = [
    "TAU_TO_M",
    "KAPPA_TO_M",
    "TAU_KAPPA_TO_M",
    "TSM_FRAME_DEPTH",
    "VARIANTS",
    "MAPPING_ALIASES",
    "MappingSpec",
    "FsamConfig",
    "FsamParams",
    "fsam_specs",
    "map_to_matrix",
    "map_from_matrix",
    "factorized_embedding",
    "fsam_forward",
    "fsam_bypass",
]
