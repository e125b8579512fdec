"""
The FactorizePhys network: Diff layer, 3D convolution stack, attention block
and a convolutional head producing one pulse value per frame difference.

Architectures are data (``ArchConfig``) so alternate kernel plans can live in
YAML files under ``configs/``. ``ArchConfig.validate`` enforces the structural
rules every plan must follow:

- every feature layer keeps the temporal length (``same`` temporal padding,
  temporal stride 1) and uses ``valid`` spatial padding,
- spatial strides larger than 1 occur on the 3rd and 6th feature layers only,
- the head collapses the spatial extent to 1x1 and the channels to 1.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from factorizephys import ops
from factorizephys.autodiff import Tensor
from factorizephys.errors import ConfigError, NmfError, ShapeError
from factorizephys.fsam import FsamConfig, FsamParams, fsam_bypass, fsam_forward, fsam_specs
from factorizephys.ops import ConvSpec

logger = logging.getLogger(__name__)

STRIDED_LAYERS = (3, 6)
MIN_LAYERS = 6
CHUNK_FRAMES = 161


@dataclass(frozen=True)
class LayerSpec:
    """A feature layer: convolution, then tanh, then instance normalization."""

    conv: ConvSpec
    activation: str = "tanh"
    norm: str = "instance_norm"

    def to_dict(self) -> Dict[str, Any]:
        data = self.conv.to_dict()
        data["activation"] = self.activation
        data["norm"] = self.norm
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "LayerSpec":
        data = dict(data)
        activation = data.pop("activation", "tanh")
        norm = data.pop("norm", "instance_norm")
        return cls(ConvSpec.from_dict(data), activation, norm)


@dataclass
class ArchConfig:
    """
    Network layout.

    Attributes:
        input_shape: ``(C, T, H, W)`` of one input clip chunk.
        layers: Feature layers in order.
        fsam_after_layer: 1-based index of the layer whose output feeds the attention block.
        fsam: Attention block settings.
        head: Final convolution to a single channel at 1x1 spatial extent.
        name: Free-form label.
    """

    input_shape: Tuple[int, int, int, int]
    layers: List[LayerSpec]
    fsam_after_layer: int
    head: ConvSpec
    fsam: FsamConfig = field(default_factory=FsamConfig)
    name: str = "custom"

    @property
    def frames(self) -> int:
        return int(self.input_shape[1])

    @property
    def output_length(self) -> int:
        return self.frames - 1

    def validate(self) -> List[Tuple[str, Tuple[int, int, int, int]]]:
        """
        Check the structural rules and return the shape trace.

        Raises:
            ConfigError: If a structural rule is broken.
            ShapeError: If some layer would produce an empty axis.
        """
        if len(self.layers) < MIN_LAYERS:
            raise ConfigError(f"need at least {MIN_LAYERS} feature layers, got {len(self.layers)}")
        if not 1 <= self.fsam_after_layer <= len(self.layers):
            raise ConfigError(f"fsam_after_layer {self.fsam_after_layer} outside 1..{len(self.layers)}")
        for i, layer in enumerate(self.layers, start=1):
            conv = layer.conv
            if layer.activation != "tanh" or layer.norm != "instance_norm":
                raise ConfigError(f"layer {i}: only tanh + instance_norm layers are supported")
            if conv.temporal_padding != "same" or conv.stride[0] != 1:
                raise ConfigError(f"layer {i}: temporal padding must be same with temporal stride 1")
            if conv.spatial_padding != "valid":
                raise ConfigError(f"layer {i}: spatial padding must be valid")
            strided = conv.stride[1] > 1 or conv.stride[2] > 1
            if strided != (i in STRIDED_LAYERS):
                raise ConfigError(f"spatial strides are only allowed on layers {STRIDED_LAYERS} (layer {i})")
        head = self.head
        if head.out_channels != 1 or head.temporal_padding != "same" or head.stride != (1, 1, 1):
            raise ConfigError("head must map to 1 channel with same temporal padding and unit stride")
        trace = shape_trace(self)
        _, (_, t, h, w) = trace[-1]
        if (h, w) != (1, 1) or t != self.output_length:
            raise ShapeError(f"head output extent {(t, h, w)} is not ({self.output_length}, 1, 1)")
        kappa, tau, alpha, beta = trace[self.fsam_after_layer][1]
        _, m, n = self.fsam.mapping.matrix_shape(
            self.fsam.inner_channels(kappa), tau, alpha, beta
        )
        if self.fsam.nmf.rank > min(m, n):
            raise NmfError(f"rank {self.fsam.nmf.rank} exceeds min(M, N) = {min(m, n)} at the attention stage")
        return trace

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "input_shape": list(self.input_shape),
            "layers": [layer.to_dict() for layer in self.layers],
            "fsam_after_layer": self.fsam_after_layer,
            "fsam": self.fsam.to_dict(),
            "head": self.head.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ArchConfig":
        required = {"input_shape", "layers", "fsam_after_layer", "head"}
        missing = required - set(data)
        if missing:
            raise ConfigError(f"arch config is missing keys: {sorted(missing)}")
        unknown = set(data) - required - {"fsam", "name"}
        if unknown:
            raise ConfigError(f"unknown arch keys: {sorted(unknown)}")
        shape = tuple(int(v) for v in data["input_shape"])
        if len(shape) != 4:
            raise ConfigError(f"input_shape must be [C, T, H, W], got {data['input_shape']}")
        return cls(
            input_shape=shape,
            layers=[LayerSpec.from_dict(layer) for layer in data["layers"]],
            fsam_after_layer=int(data["fsam_after_layer"]),
            head=ConvSpec.from_dict(data["head"]),
            fsam=FsamConfig.from_dict(data.get("fsam") or {}),
            name=str(data.get("name", "custom")),
        )


def _layer(cin: int, cout: int, kernel=(3, 3, 3), stride=(1, 1, 1)) -> LayerSpec:
    return LayerSpec(ConvSpec(cin, cout, kernel=kernel, stride=stride))


def default_arch() -> ArchConfig:
    """
    Nine feature layers for 161 x 72 x 72 RGB chunks.

    Spatial extents 70, 68, 33, 31, 29, 13, 11, 9, 7; channels 3 -> 8 (x5) -> 12 (x4);
    attention after layer 9; head (3, 7, 7) to one channel.
    """
    channels = [3, 8, 8, 8, 8, 8, 12, 12, 12, 12]
    layers = []
    for i in range(9):
        strided = (i + 1) in STRIDED_LAYERS
        layers.append(
            _layer(
                channels[i],
                channels[i + 1],
                kernel=(3, 4, 4) if strided else (3, 3, 3),
                stride=(1, 2, 2) if strided else (1, 1, 1),
            )
        )
    return ArchConfig(
        input_shape=(3, CHUNK_FRAMES, 72, 72),
        layers=layers,
        fsam_after_layer=9,
        head=ConvSpec(12, 1, kernel=(3, 7, 7)),
        name="default",
    )


def scaled_arch() -> ArchConfig:
    """Same plan for 240 x 128 x 128 chunks: a stride-4 third layer keeps the 7x7 attention stage."""
    arch = default_arch()
    layers = list(arch.layers)
    layers[2] = _layer(8, 8, kernel=(3, 4, 4), stride=(1, 4, 4))
    layers[5] = _layer(8, 12, kernel=(3, 3, 3), stride=(1, 2, 2))
    return ArchConfig(
        input_shape=(3, 240, 128, 128),
        layers=layers,
        fsam_after_layer=9,
        head=arch.head,
        fsam=arch.fsam,
        name="scaled",
    )


def shape_trace(cfg: ArchConfig, input_shape: Optional[Tuple[int, int, int, int]] = None):
    """
    ``(stage, (C, T, H, W))`` after the Diff layer, every feature layer and the head.

    Raises:
        ShapeError: If a layer's channels do not chain or an axis becomes empty.
    """
    c, t, h, w = input_shape or cfg.input_shape
    if t < 2:
        raise ShapeError(f"need at least 2 frames, got {t}")
    trace = [("diff", (c, t - 1, h, w))]
    c, t = c, t - 1
    for i, layer in enumerate(cfg.layers, start=1):
        if layer.conv.in_channels != c:
            raise ShapeError(f"layer {i} expects {layer.conv.in_channels} channels, gets {c}")
        t, h, w = layer.conv.output_shape(t, h, w)
        c = layer.conv.out_channels
        trace.append((f"layer{i}", (c, t, h, w)))
    if cfg.head.in_channels != c:
        raise ShapeError(f"head expects {cfg.head.in_channels} channels, gets {c}")
    t, h, w = cfg.head.output_shape(t, h, w)
    trace.append(("head", (cfg.head.out_channels, t, h, w)))
    return trace


def _conv_slots(cfg: ArchConfig) -> List[Tuple[str, ConvSpec]]:
    kappa = cfg.layers[cfg.fsam_after_layer - 1].conv.out_channels
    pre, post = fsam_specs(kappa, cfg.fsam)
    slots = [(f"layers.{i}", layer.conv) for i, layer in enumerate(cfg.layers)]
    slots += [("fsam.pre", pre), ("fsam.post", post), ("head", cfg.head)]
    return slots


def param_count(cfg: ArchConfig, include_fsam: bool = True) -> int:
    return sum(
        spec.param_count
        for name, spec in _conv_slots(cfg)
        if include_fsam or not name.startswith("fsam.")
    )


def parameter_table(cfg: ArchConfig) -> pd.DataFrame:
    """One row per convolution: kernel, stride, output shape and parameter count."""
    trace = dict(shape_trace(cfg))
    kappa_stage = trace[f"layer{cfg.fsam_after_layer}"]
    rows = []
    for name, spec in _conv_slots(cfg):
        if name.startswith("layers."):
            out = trace[f"layer{int(name.split('.')[1]) + 1}"]
        elif name.startswith("fsam."):
            out = kappa_stage
        else:
            out = trace["head"]
        rows.append(
            {
                "layer": name,
                "in_channels": spec.in_channels,
                "out_channels": spec.out_channels,
                "kernel": "x".join(str(k) for k in spec.kernel),
                "stride": "x".join(str(s) for s in spec.stride),
                "output_shape": "x".join(str(d) for d in out),
                "params": spec.param_count,
            }
        )
    return pd.DataFrame(rows)


@dataclass
class ModelParams:
    """
    Named trainable tensors in a fixed order.

    Names follow ``layers.<i>.weight``, ``layers.<i>.bias``, ``fsam.pre.*``,
    ``fsam.post.*`` and ``head.*``.
    """

    tensors: Dict[str, Tensor]
    seed: int = 0

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def get(self, name: str) -> Optional[Tensor]:
        return self.tensors.get(name)

    def named(self) -> Dict[str, Tensor]:
        return dict(self.tensors)

    def parameters(self) -> List[Tensor]:
        return list(self.tensors.values())

    def count(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.zero_grad()

    def astype(self, dtype: Any) -> "ModelParams":
        return ModelParams({k: t.astype(dtype) for k, t in self.tensors.items()}, self.seed)

    def with_tensors(self, updates: Dict[str, Tensor]) -> "ModelParams":
        merged = dict(self.tensors)
        unknown = set(updates) - set(merged)
        if unknown:
            raise KeyError(f"unknown parameter names: {sorted(unknown)}")
        merged.update(updates)
        return ModelParams(merged, self.seed)

    def fsam_params(self, cfg: ArchConfig) -> FsamParams:
        kappa = cfg.layers[cfg.fsam_after_layer - 1].conv.out_channels
        pre, post = fsam_specs(kappa, cfg.fsam)
        return FsamParams(
            pre,
            post,
            self["fsam.pre.weight"],
            self["fsam.pre.bias"],
            self["fsam.post.weight"],
            self["fsam.post.bias"],
        )


def param_init(cfg: ArchConfig, seed: int, dtype: Any = np.float32) -> ModelParams:
    """
    Weights uniform in ``+-sqrt(6 / fan_in)`` and zero biases, drawn in a fixed order.

    The same seed always gives bit-identical parameters.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    tensors: Dict[str, Tensor] = {}
    for name, spec in _conv_slots(cfg):
        bound = math.sqrt(6.0 / spec.fan_in)
        w = rng.uniform(-bound, bound, size=spec.weight_shape)
        tensors[f"{name}.weight"] = Tensor(w, requires_grad=True, dtype=dtype, name=f"{name}.weight")
        if spec.bias:
            tensors[f"{name}.bias"] = Tensor(
                np.zeros(spec.out_channels), requires_grad=True, dtype=dtype, name=f"{name}.bias"
            )
    return ModelParams(tensors, seed)


def expected_param_shapes(cfg: ArchConfig) -> Dict[str, Tuple[int, ...]]:
    shapes: Dict[str, Tuple[int, ...]] = {}
    for name, spec in _conv_slots(cfg):
        shapes[f"{name}.weight"] = spec.weight_shape
        if spec.bias:
            shapes[f"{name}.bias"] = (spec.out_channels,)
    return shapes


def diff_layer(frames: Tensor) -> Tensor:
    """Adjacent-frame differences along T followed by instance normalization."""
    if frames.ndim != 5:
        raise ShapeError(f"frames must be (N, C, T, H, W), got {frames.shape}")
    return ops.instance_norm(ops.temporal_diff(frames, axis=2))


def _feature(x: Tensor, layer: LayerSpec, w: Tensor, b: Optional[Tensor]) -> Tensor:
    return ops.instance_norm(ops.tanh(ops.conv3d(x, layer.conv, w, b)))


def model_forward(
    frames: Tensor,
    params: ModelParams,
    cfg: ArchConfig,
    use_fsam: bool = True,
    taps: Optional[Dict[str, Tensor]] = None,
) -> Tensor:
    """
    Estimate the pulse signal for a batch of chunks.

    Args:
        frames: ``(N, C, T, H, W)`` input.
        params: Trained or freshly initialized parameters.
        cfg: Architecture.
        use_fsam: Route through the attention block; False uses the bypass.
        taps: Optional dict filled with ``"embedding"`` (attention input) and
            ``"attended"`` (attention output).

    Returns:
        ``(N, T - 1)`` tensor, one value per frame difference.

    Raises:
        ShapeError: If any layer's shape check fails.
    """
    x = diff_layer(frames)
    for i, layer in enumerate(cfg.layers):
        x = _feature(x, layer, params[f"layers.{i}.weight"], params.get(f"layers.{i}.bias"))
        if i + 1 == cfg.fsam_after_layer:
            if taps is not None:
                taps["embedding"] = x
            if use_fsam:
                x = fsam_forward(x, params.fsam_params(cfg), cfg.fsam)
            else:
                x = fsam_bypass(x)
            if taps is not None:
                taps["attended"] = x
    out = ops.conv3d(x, cfg.head, params["head.weight"], params.get("head.bias"))
    n, _, t, h, w = out.shape
    if (h, w) != (1, 1):
        raise ShapeError(f"head left a {h}x{w} spatial extent; the input size does not fit this architecture")
    return ops.reshape(out, (n, t))


__all__ = [
    "STRIDED_LAYERS",
    "CHUNK_FRAMES",
    "LayerSpec",
    "ArchConfig",
    "ModelParams",
    "default_arch",
    "scaled_arch",
    "shape_trace",
    "param_count",
    "parameter_table",
    "param_init",
    "expected_param_shapes",
    "diff_layer",
    "model_forward",
]
