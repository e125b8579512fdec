"""
On-disk formats: FPV1 frame clips, FPL1 label traces, CSV matrices and
attention-map exports.

FPV1 layout (little-endian)::

    b"FPV1" | T u32 | H u32 | W u32 | C u32 | dtype tag (4 bytes, NUL padded) | T*H*W*C samples

FPL1 layout (little-endian)::

    b"FPL1" | T u32 | fs f32 | T f32 samples

Readers validate the header strictly and refuse truncated or oversized payloads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
import pandas as pd

from factorizephys.errors import FormatError, ShapeError

FRAMES_MAGIC = b"FPV1"
LABELS_MAGIC = b"FPL1"

# tag -> (4-byte field, little-endian storage dtype)
DTYPE_TAGS = {
    "u8": (b"u8\0\0", np.dtype("u1")),
    "f32": (b"f32\0", np.dtype("<f4")),
}

FRAMES_HEADER = np.dtype(
    [("magic", "S4"), ("t", "<u4"), ("h", "<u4"), ("w", "<u4"), ("c", "<u4"), ("dtype", "S4")]
)
LABELS_HEADER = np.dtype([("magic", "S4"), ("t", "<u4"), ("fs", "<f4")])

PathLike = Union[str, Path]


@dataclass
class FramesFile:
    """A clip of ``frames`` shaped (T, H, W, C) and the tag it is stored with."""

    frames: np.ndarray
    dtype: str = "u8"

    @property
    def shape(self):
        return self.frames.shape

    def as_channels_first(self) -> np.ndarray:
        """(C, T, H, W) float32 view for the network."""
        return np.ascontiguousarray(np.transpose(self.frames, (3, 0, 1, 2)), dtype=np.float32)


@dataclass
class LabelFile:
    """A label trace sampled at ``fs`` Hz."""

    labels: np.ndarray
    fs: float = 30.0

    def __len__(self) -> int:
        return int(self.labels.shape[0])


def _tag_for(name: str):
    if name not in DTYPE_TAGS:
        raise FormatError(f"unknown dtype tag {name!r}; expected one of {sorted(DTYPE_TAGS)}")
    return DTYPE_TAGS[name]


def write_frames(path: PathLike, frames: np.ndarray, dtype: str = "u8") -> str:
    """
    Write a (T, H, W, C) clip as FPV1.

    Raises:
        ShapeError: If ``frames`` is not 4-D.
        FormatError: If ``dtype='u8'`` and values are not integers in [0, 255].
    """
    arr = np.asarray(frames)
    if arr.ndim != 4:
        raise ShapeError(f"frames must be (T, H, W, C), got {arr.shape}")
    field, storage = _tag_for(dtype)
    if dtype == "u8" and arr.dtype != np.uint8:
        if arr.size and (arr.min() < 0 or arr.max() > 255 or np.any(arr != np.round(arr))):
            raise FormatError("u8 frames must hold integers in [0, 255]")
    payload = np.ascontiguousarray(arr, dtype=storage)

    header = np.zeros((), dtype=FRAMES_HEADER)
    header["magic"] = FRAMES_MAGIC
    header["t"], header["h"], header["w"], header["c"] = arr.shape
    header["dtype"] = field

    path_obj = Path(path)
    path_obj.parent.mkdir(parents=True, exist_ok=True)
    with open(path_obj, "wb") as f:
        f.write(header.tobytes())
        f.write(payload.tobytes())
    return str(path_obj)


def _read_header(raw: bytes, header_dtype: np.dtype, magic: bytes, path: PathLike) -> np.ndarray:
    if len(raw) < header_dtype.itemsize:
        raise FormatError(f"{path}: truncated header ({len(raw)} bytes)")
    header = np.frombuffer(raw, dtype=header_dtype, count=1)[0]
    if header["magic"] != magic:
        raise FormatError(f"{path}: bad magic {bytes(header['magic'])!r}, expected {magic!r}")
    return header


def _payload(raw: bytes, offset: int, count: int, dtype: np.dtype, path: PathLike) -> np.ndarray:
    expected = count * dtype.itemsize
    actual = len(raw) - offset
    if actual < expected:
        raise FormatError(f"{path}: truncated payload ({actual} of {expected} bytes)")
    if actual > expected:
        raise FormatError(f"{path}: {actual - expected} trailing bytes after payload")
    return np.frombuffer(raw, dtype=dtype, count=count, offset=offset)


def read_frames(path: PathLike, promote: bool = True) -> FramesFile:
    """
    Read an FPV1 clip.

    Args:
        path: File to read.
        promote: Return float32 samples (u8 values stay exact integers in [0, 255]).

    Raises:
        FormatError: On bad magic, unknown dtype tag or a payload of the wrong length.
    """
    raw = Path(path).read_bytes()
    header = _read_header(raw, FRAMES_HEADER, FRAMES_MAGIC, path)
    field = bytes(header["dtype"])
    # S4 fields drop trailing NULs on read
    tags = {v[0].rstrip(b"\0"): k for k, v in DTYPE_TAGS.items()}
    if field not in tags:
        raise FormatError(f"{path}: unknown dtype tag {field!r}")
    name = tags[field]
    shape = tuple(int(header[k]) for k in ("t", "h", "w", "c"))
    data = _payload(raw, FRAMES_HEADER.itemsize, int(np.prod(shape)), DTYPE_TAGS[name][1], path)
    frames = data.reshape(shape)
    frames = frames.astype(np.float32) if promote else frames.astype(DTYPE_TAGS[name][1].newbyteorder("="))
    return FramesFile(frames, name)


def write_labels(path: PathLike, labels: np.ndarray, fs: float = 30.0) -> str:
    """Write a 1-D label trace as FPL1."""
    arr = np.asarray(labels)
    if arr.ndim != 1:
        raise ShapeError(f"labels must be 1-D, got {arr.shape}")
    if not fs > 0:
        raise FormatError(f"sampling rate must be positive, got {fs}")
    header = np.zeros((), dtype=LABELS_HEADER)
    header["magic"] = LABELS_MAGIC
    header["t"] = arr.shape[0]
    header["fs"] = fs
    path_obj = Path(path)
    path_obj.parent.mkdir(parents=True, exist_ok=True)
    with open(path_obj, "wb") as f:
        f.write(header.tobytes())
        f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return str(path_obj)


def read_labels(path: PathLike, expected_length: Optional[int] = None) -> LabelFile:
    """
    Read an FPL1 trace.

    Raises:
        FormatError: On bad magic, a payload of the wrong length, or a length
            different from ``expected_length`` (the companion clip's T).
    """
    raw = Path(path).read_bytes()
    header = _read_header(raw, LABELS_HEADER, LABELS_MAGIC, path)
    t = int(header["t"])
    if expected_length is not None and t != expected_length:
        raise FormatError(f"{path}: {t} labels for a clip of {expected_length} frames")
    data = _payload(raw, LABELS_HEADER.itemsize, t, np.dtype("<f4"), path)
    return LabelFile(data.astype(np.float32), float(header["fs"]))


def export_labels_csv(labels: LabelFile, path: PathLike) -> str:
    """Write a label trace as CSV with ``time_s`` and ``bvp`` columns."""
    t = np.arange(len(labels)) / labels.fs
    frame = pd.DataFrame({"time_s": t, "bvp": labels.labels.astype(np.float64)})
    path_obj = Path(path)
    path_obj.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path_obj, index=False)
    return str(path_obj)


def read_matrix_csv(path: PathLike) -> np.ndarray:
    """Read a headerless numeric CSV as a 2-D float64 array."""
    frame = pd.read_csv(path, header=None, float_precision="round_trip")
    try:
        values = frame.to_numpy(dtype=np.float64)
    except ValueError as exc:
        raise FormatError(f"{path}: matrix CSV must be numeric") from exc
    if values.ndim != 2 or values.size == 0 or not np.all(np.isfinite(values)):
        raise FormatError(f"{path}: matrix CSV must be a finite, non-empty 2-D table")
    return values


def write_matrix_csv(path: PathLike, matrix: np.ndarray) -> str:
    """Write a 2-D array as a headerless CSV with full float precision."""
    path_obj = Path(path)
    path_obj.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(np.atleast_2d(np.asarray(matrix, dtype=np.float64))).to_csv(
        path_obj, header=False, index=False, float_format="%.17g"
    )
    return str(path_obj)


def _to_u8(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_pgm(path: PathLike, image: np.ndarray, scale: int = 1) -> str:
    """Write a 2-D array with values in [0, 1] as an 8-bit binary PGM, enlarged ``scale`` times."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ShapeError(f"PGM image must be 2-D, got {img.shape}")
    if scale > 1:
        img = np.kron(img, np.ones((scale, scale)))
    pixels = _to_u8(img)
    h, w = pixels.shape
    path_obj = Path(path)
    path_obj.parent.mkdir(parents=True, exist_ok=True)
    with open(path_obj, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(pixels.tobytes())
    return str(path_obj)


def read_pgm(path: PathLike) -> np.ndarray:
    """Read an 8-bit binary PGM written by ``write_pgm`` as a uint8 array."""
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"P5" or parts[2] != b"255":
        raise FormatError(f"{path}: not an 8-bit binary PGM")
    w, h = (int(v) for v in parts[1].split())
    pixels = np.frombuffer(parts[3], dtype=np.uint8)
    if pixels.size != w * h:
        raise FormatError(f"{path}: expected {w * h} pixels, found {pixels.size}")
    return pixels.reshape(h, w)


def mosaic(maps: np.ndarray, pad: int = 1) -> np.ndarray:
    """Tile (K, H, W) maps into a near-square grid separated by ``pad`` zero pixels."""
    k, h, w = maps.shape
    cols = int(math.ceil(math.sqrt(k)))
    rows = int(math.ceil(k / cols))
    out = np.zeros((rows * (h + pad) - pad, cols * (w + pad) - pad), dtype=np.float64)
    for i in range(k):
        r, c = divmod(i, cols)
        out[r * (h + pad): r * (h + pad) + h, c * (w + pad): c * (w + pad) + w] = maps[i]
    return out


def write_attention_maps(
    maps: np.ndarray,
    out_dir: PathLike,
    prefix: str = "attn",
    scale: int = 8,
) -> Dict[str, List[str]]:
    """
    Export (K, H, W) maps in [0, 1] as per-channel PGM tiles, plain-text
    matrices and one mosaic PGM.

    Returns:
        ``{"tiles": [...], "matrices": [...], "mosaic": [path]}``.
    """
    arr = np.asarray(maps, dtype=np.float64)
    if arr.ndim != 3:
        raise ShapeError(f"attention maps must be (K, H, W), got {arr.shape}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: Dict[str, List[str]] = {"tiles": [], "matrices": [], "mosaic": []}
    for c in range(arr.shape[0]):
        written["tiles"].append(write_pgm(out / f"{prefix}_ch{c:02d}.pgm", arr[c], scale=scale))
        txt = out / f"{prefix}_ch{c:02d}.txt"
        np.savetxt(txt, arr[c], fmt="%.6f")
        written["matrices"].append(str(txt))
    written["mosaic"].append(write_pgm(out / f"{prefix}_mosaic.pgm", mosaic(arr), scale=scale))
    return written


__all__ = [
    "FRAMES_MAGIC",
    "LABELS_MAGIC",
    "DTYPE_TAGS",
    "FramesFile",
    "LabelFile",
    "write_frames",
    "read_frames",
    "write_labels",
    "read_labels",
    "export_labels_csv",
    "read_matrix_csv",
    "write_matrix_csv",
    "write_pgm",
    "read_pgm",
    "mosaic",
    "write_attention_maps",
]
