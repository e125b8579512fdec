"""Tests for resizing and chunking."""

import numpy as np
import pytest

from factorizephys.errors import ShapeError
from factorizephys.formats import FramesFile, LabelFile
from factorizephys.preprocess import ChunkSet, chunk_clips, chunk_dataset, chunk_frames, resize_bilinear


def ramp(h, w, t=1):
    yy, xx = np.meshgrid(np.arange(h) + 0.5, np.arange(w) + 0.5, indexing="ij")
    img = 1.0 + xx / w + yy / h
    return np.repeat(img[None, :, :, None], t, axis=0)


def test_resize_identity_is_copy():
    frames = np.random.default_rng(0).random((2, 5, 6, 3)).astype(np.float32)
    out = resize_bilinear(frames, 5, 6)
    np.testing.assert_array_equal(out, frames)
    assert out is not frames


def test_resize_2x2_to_1x1_is_mean():
    frames = np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 2, 2, 1)
    assert resize_bilinear(frames, 1, 1)[0, 0, 0, 0] == pytest.approx(2.5)


def test_resize_constant_preserved():
    frames = np.full((2, 9, 7, 3), 42.0)
    np.testing.assert_allclose(resize_bilinear(frames, 4, 5), 42.0)


def test_resize_ramp_down_and_up():
    """Test a linear ramp survives 64 -> 32 -> 64 within 2%."""
    frames = ramp(64, 64)
    back = resize_bilinear(resize_bilinear(frames, 32, 32), 64, 64)
    np.testing.assert_allclose(back, frames, rtol=0.02)


def test_resize_upsample_shape_and_range():
    frames = ramp(8, 8, t=3)
    out = resize_bilinear(frames, 20, 12)
    assert out.shape == (3, 20, 12, 1)
    assert out.dtype == np.float32
    assert frames.min() - 1e-6 <= out.min() and out.max() <= frames.max() + 1e-6


def test_resize_validation():
    with pytest.raises(ShapeError):
        resize_bilinear(np.zeros((4, 4, 3)), 2, 2)
    with pytest.raises(ShapeError):
        resize_bilinear(np.zeros((1, 4, 4, 3)), 0, 2)


def clip(t, h=4, w=4):
    rng = np.random.default_rng(t)
    frames = rng.integers(0, 255, size=(t, h, w, 3)).astype(np.uint8)
    labels = np.sin(np.arange(t) / 4.0).astype(np.float32)
    return frames, labels


def test_chunk_480_frames():
    """Test 480 frames give two 161-frame chunks."""
    frames, labels = clip(480)
    chunks = chunk_dataset(frames, labels)
    assert len(chunks) == 2
    assert chunks.frames.shape == (2, 3, 161, 4, 4)
    assert chunks.labels.shape == (2, 161)
    assert chunks.sources == [("clip", 0), ("clip", 161)]


def test_chunk_exactly_one():
    frames, labels = clip(161)
    chunks = chunk_dataset(FramesFile(frames), LabelFile(labels))
    assert len(chunks) == 1


def test_chunk_layout_and_standardization():
    """Test chunks are channels-first copies of the frames with z-scored labels."""
    frames, labels = clip(20)
    chunks = chunk_dataset(frames, labels, chunk_len=8, clip_id="c7")
    assert len(chunks) == 2
    np.testing.assert_array_equal(chunks.frames[1, 2, 3], frames[11, :, :, 2].astype(np.float32))
    np.testing.assert_allclose(chunks.labels.mean(axis=1), 0.0, atol=1e-6)
    np.testing.assert_allclose(chunks.labels.std(axis=1), 1.0, atol=1e-5)
    assert chunks.sources[1] == ("c7", 8)


def test_chunk_errors():
    frames, labels = clip(100)
    with pytest.raises(ShapeError, match="shorter"):
        chunk_dataset(frames, labels)
    with pytest.raises(ShapeError):
        chunk_dataset(frames, labels[:-1], chunk_len=10)
    with pytest.raises(ShapeError):
        chunk_frames(np.zeros((5, 4, 4)), 2)


def test_chunk_clips_resizes_and_stacks():
    a = clip(24, 6, 6)
    b = clip(16, 4, 4)
    chunks = chunk_clips([("a", *a), ("b", *b)], chunk_len=8, size=(4, 4))
    assert chunks.frames.shape == (5, 3, 8, 4, 4)
    assert [s[0] for s in chunks.sources] == ["a", "a", "a", "b", "b"]


def test_chunkset_select_and_concat():
    frames, labels = clip(32)
    chunks = chunk_dataset(frames, labels, chunk_len=8)
    picked = chunks.select(np.array([3, 0]))
    assert picked.sources == [("clip", 24), ("clip", 0)]
    np.testing.assert_array_equal(picked.frames[1], chunks.frames[0])
    both = ChunkSet.concat([picked, chunks])
    assert len(both) == 6
    with pytest.raises(ShapeError):
        ChunkSet.concat([])
