"""Preprocessing: bilinear resize and chunking of clips into network-sized pieces."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple, Union

import numpy as np

from factorizephys.errors import ShapeError
from factorizephys.formats import FramesFile, LabelFile
from factorizephys.model import CHUNK_FRAMES
from factorizephys.signals import zscore


@dataclass
class ChunkSet:
    """
    Aligned network inputs and targets.

    Attributes:
        frames: (K, C, L, H, W) float32 chunks.
        labels: (K, L) float32 labels, z-scored per chunk.
        sources: (clip id, first frame) for every chunk.
    """

    frames: np.ndarray
    labels: np.ndarray
    sources: List[Tuple[str, int]] = field(default_factory=list)

    def __len__(self) -> int:
        return int(self.frames.shape[0])

    @classmethod
    def concat(cls, parts: List["ChunkSet"]) -> "ChunkSet":
        if not parts:
            raise ShapeError("nothing to concatenate")
        return cls(
            np.concatenate([p.frames for p in parts]),
            np.concatenate([p.labels for p in parts]),
            [s for p in parts for s in p.sources],
        )

    def select(self, index: np.ndarray) -> "ChunkSet":
        idx = np.asarray(index, dtype=np.int64)
        return ChunkSet(self.frames[idx], self.labels[idx], [self.sources[i] for i in idx])


def _axis_weights(n_in: int, n_out: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    # half-pixel centres, edges clamped
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, src - i0


def resize_bilinear(frames: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """
    Bilinear resize of (T, H, W, C) frames with corner alignment off.

    Returns float32 frames; an identity resize returns an exact copy.
    """
    arr = np.asarray(frames)
    if arr.ndim != 4:
        raise ShapeError(f"frames must be (T, H, W, C), got {arr.shape}")
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"output size must be positive, got {out_h}x{out_w}")
    t, h, w, c = arr.shape
    if (h, w) == (out_h, out_w):
        return arr.astype(np.float32, copy=True)

    y0, y1, wy = _axis_weights(h, out_h)
    x0, x1, wx = _axis_weights(w, out_w)
    data = arr.astype(np.float64)
    top = data[:, y0] * (1 - wy)[None, :, None, None] + data[:, y1] * wy[None, :, None, None]
    out = top[:, :, x0] * (1 - wx)[None, None, :, None] + top[:, :, x1] * wx[None, None, :, None]
    return out.astype(np.float32)


def chunk_frames(frames: np.ndarray, chunk_len: int = CHUNK_FRAMES) -> np.ndarray:
    """(T, H, W, C) frames as (K, C, L, H, W) float32 chunks; the remainder is dropped."""
    arr = np.asarray(frames)
    if arr.ndim != 4:
        raise ShapeError(f"frames must be (T, H, W, C), got {arr.shape}")
    k = arr.shape[0] // chunk_len
    if k == 0:
        raise ShapeError(f"clip of {arr.shape[0]} frames is shorter than one {chunk_len}-frame chunk")
    used = arr[: k * chunk_len].astype(np.float32)
    chunks = used.reshape(k, chunk_len, *arr.shape[1:]).transpose(0, 4, 1, 2, 3)
    return np.ascontiguousarray(chunks)


def chunk_dataset(
    frames: Union[FramesFile, np.ndarray],
    labels: Union[LabelFile, np.ndarray],
    chunk_len: int = CHUNK_FRAMES,
    clip_id: str = "clip",
) -> ChunkSet:
    """
    Cut one clip into non-overlapping chunks of ``chunk_len`` frames.

    The trailing remainder is dropped. Frame index t pairs with label index t,
    and each chunk's labels are z-scored.

    Raises:
        ShapeError: If the clip is shorter than one chunk or labels do not match frames.
    """
    arr = frames.frames if isinstance(frames, FramesFile) else np.asarray(frames)
    lab = labels.labels if isinstance(labels, LabelFile) else np.asarray(labels)
    if arr.ndim != 4:
        raise ShapeError(f"frames must be (T, H, W, C), got {arr.shape}")
    t = arr.shape[0]
    if lab.shape != (t,):
        raise ShapeError(f"{lab.shape[0] if lab.ndim else 0} labels for {t} frames")
    if chunk_len < 2:
        raise ShapeError("chunk_len must be at least 2")
    k = t // chunk_len
    if k == 0:
        raise ShapeError(f"clip of {t} frames is shorter than one {chunk_len}-frame chunk")

    chunks = chunk_frames(arr, chunk_len)
    targets = zscore(lab[: k * chunk_len].reshape(k, chunk_len), axis=1)
    return ChunkSet(
        chunks,
        targets.astype(np.float32),
        [(clip_id, i * chunk_len) for i in range(k)],
    )


def chunk_clips(
    clips: List[Tuple[str, FramesFile, LabelFile]],
    chunk_len: int = CHUNK_FRAMES,
    size: Optional[Tuple[int, int]] = None,
) -> ChunkSet:
    """
    Chunk every (clip id, frames, labels) triple and stack the results.

    With ``size`` given, frames are first resized to ``(H, W)``.
    """
    parts = []
    for clip_id, frames, labels in clips:
        arr = frames.frames if isinstance(frames, FramesFile) else np.asarray(frames)
        if size is not None and tuple(arr.shape[1:3]) != tuple(size):
            arr = resize_bilinear(arr, *size)
        parts.append(chunk_dataset(arr, labels, chunk_len, clip_id))
    return ChunkSet.concat(parts)


__all__ = [
    "ChunkSet",
    "resize_bilinear",
    "chunk_frames",
    "chunk_dataset",
    "chunk_clips",
]
