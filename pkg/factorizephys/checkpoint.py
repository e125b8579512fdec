"""
FPCK checkpoints: named parameter blobs plus the architecture they belong to.

Layout (little-endian)::

    b"FPCK" | version u32 | header length u32 | UTF-8 JSON header | blobs

The JSON header holds the architecture snapshot, the seed, free-form extras and
an index of ``{name, dtype, shape, offset, nbytes}`` entries; offsets count
from the first blob byte. Writing is byte-deterministic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np

from factorizephys.autodiff import Tensor
from factorizephys.errors import FormatError
from factorizephys.model import ArchConfig, ModelParams, expected_param_shapes

CHECKPOINT_MAGIC = b"FPCK"
CHECKPOINT_VERSION = 1
_PREAMBLE = np.dtype([("magic", "S4"), ("version", "<u4"), ("header_len", "<u4")])
_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}

PathLike = Union[str, Path]


@dataclass
class Checkpoint:
    arch: ArchConfig
    params: ModelParams
    extra: Dict[str, Any] = field(default_factory=dict)

    @property
    def seed(self) -> int:
        return self.params.seed


def _dtype_tag(dtype: np.dtype) -> str:
    for tag, dt in _DTYPES.items():
        if dt == dtype.newbyteorder("<"):
            return tag
    raise FormatError(f"unsupported parameter dtype {dtype}")


def save_checkpoint(
    path: PathLike,
    params: ModelParams,
    arch: ArchConfig,
    extra: Optional[Dict[str, Any]] = None,
) -> str:
    """Write parameters and their architecture as an FPCK file."""
    index = []
    blobs = []
    offset = 0
    for name, tensor in params.named().items():
        tag = _dtype_tag(tensor.dtype)
        blob = np.ascontiguousarray(tensor.data, dtype=_DTYPES[tag]).tobytes()
        index.append(
            {"name": name, "dtype": tag, "shape": list(tensor.shape), "offset": offset, "nbytes": len(blob)}
        )
        blobs.append(blob)
        offset += len(blob)

    header = {
        "arch": arch.to_dict(),
        "seed": int(params.seed),
        "extra": extra or {},
        "params": index,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    preamble = np.zeros((), dtype=_PREAMBLE)
    preamble["magic"] = CHECKPOINT_MAGIC
    preamble["version"] = CHECKPOINT_VERSION
    preamble["header_len"] = len(header_bytes)

    path_obj = Path(path)
    path_obj.parent.mkdir(parents=True, exist_ok=True)
    with open(path_obj, "wb") as f:
        f.write(preamble.tobytes())
        f.write(header_bytes)
        for blob in blobs:
            f.write(blob)
    return str(path_obj)


def load_checkpoint(path: PathLike) -> Checkpoint:
    """
    Read an FPCK file.

    Raises:
        FormatError: On bad magic, an unknown version, a malformed header,
            blobs out of bounds, or parameters that do not fit the stored architecture.
    """
    raw = Path(path).read_bytes()
    if len(raw) < _PREAMBLE.itemsize:
        raise FormatError(f"{path}: truncated checkpoint")
    pre = np.frombuffer(raw, dtype=_PREAMBLE, count=1)[0]
    if pre["magic"] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad magic {bytes(pre['magic'])!r}")
    if int(pre["version"]) != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: checkpoint version {int(pre['version'])}, expected {CHECKPOINT_VERSION}")
    start = _PREAMBLE.itemsize
    end = start + int(pre["header_len"])
    if end > len(raw):
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(raw[start:end].decode("utf-8"))
        arch = ArchConfig.from_dict(header["arch"])
        index = header["params"]
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: malformed checkpoint header ({exc})") from exc

    blob_area = raw[end:]
    expected_size = sum(int(entry["nbytes"]) for entry in index)
    if len(blob_area) != expected_size:
        raise FormatError(f"{path}: {len(blob_area)} blob bytes, header lists {expected_size}")

    expected = expected_param_shapes(arch)
    tensors: Dict[str, Tensor] = {}
    for entry in index:
        name = entry["name"]
        shape = tuple(entry["shape"])
        if expected.get(name) != shape:
            raise FormatError(f"{path}: parameter {name} {shape} does not fit the stored architecture")
        dtype = _DTYPES.get(entry["dtype"])
        if dtype is None:
            raise FormatError(f"{path}: unknown dtype tag {entry['dtype']!r}")
        data = np.frombuffer(
            blob_area, dtype=dtype, count=int(np.prod(shape)), offset=int(entry["offset"])
        ).reshape(shape)
        tensors[name] = Tensor(data, requires_grad=True, dtype=dtype.newbyteorder("="), name=name)
    missing = set(expected) - set(tensors)
    if missing:
        raise FormatError(f"{path}: missing parameters {sorted(missing)}")

    return Checkpoint(arch, ModelParams(tensors, int(header.get("seed", 0))), header.get("extra", {}))


__all__ = ["CHECKPOINT_MAGIC", "CHECKPOINT_VERSION", "Checkpoint", "save_checkpoint", "load_checkpoint"]
