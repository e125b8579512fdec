"""
Tests for provenance metadata module.
"""

import hashlib
import json
import os
import tempfile

import numpy as np
import pytest

from factorizephys import __version__
from factorizephys.formats import write_frames
from factorizephys.provenance import (
    calculate_file_hash,
    read_provenance_metadata,
    verify_file_integrity,
    write_provenance_metadata,
)


def test_calculate_file_hash():
    """Test hash calculation for a file."""
    with tempfile.TemporaryDirectory() as tmpdir:
        test_file = os.path.join(tmpdir, 'clip.fpv')
        with open(test_file, 'wb') as f:
            f.write(b'FPV1 payload')

        hash_value = calculate_file_hash(test_file, algorithm='sha256')

        assert hash_value == hashlib.sha256(b'FPV1 payload').hexdigest()
        assert len(hash_value) == 64


def test_calculate_file_hash_md5():
    """Test hash calculation with MD5 algorithm."""
    with tempfile.TemporaryDirectory() as tmpdir:
        test_file = os.path.join(tmpdir, 'labels.fpl')
        with open(test_file, 'wb') as f:
            f.write(b'test data')

        assert len(calculate_file_hash(test_file, algorithm='md5')) == 32


def test_large_file_hash(tmp_path):
    """Test files larger than one read block hash like a single update."""
    data = bytes(range(256)) * 1024
    path = tmp_path / 'big.bin'
    path.write_bytes(data)
    assert calculate_file_hash(path) == hashlib.sha256(data).hexdigest()


def test_write_provenance_metadata_basic(tmp_path):
    """Test writing the sidecar of a frames file."""
    path = write_frames(tmp_path / 'clip.fpv', np.zeros((2, 2, 2, 3), dtype=np.uint8))

    meta_file = write_provenance_metadata(path, 'frames', 'synth', {'seed': 7})

    assert meta_file == path + '.meta.json'
    with open(meta_file, 'r') as f:
        metadata = json.load(f)
    assert metadata['schema_version'] == '1.0'
    assert metadata['file'] == 'clip.fpv'
    assert metadata['kind'] == 'frames'
    assert metadata['file_size_bytes'] == 24 + 24
    assert metadata['hash']['algorithm'] == 'sha256'
    assert metadata['generator'] == {'name': 'synth', 'version': __version__, 'params': {'seed': 7}}


def test_write_provenance_metadata_without_params(tmp_path):
    path = tmp_path / 'loss_log.csv'
    path.write_text('epoch,loss,lr\n')
    write_provenance_metadata(path, 'report', 'train')
    assert 'params' not in read_provenance_metadata(path)['generator']


def test_write_provenance_metadata_file_not_found():
    """Test writing metadata for non-existent file raises error."""
    with pytest.raises(FileNotFoundError):
        write_provenance_metadata('/nonexistent/checkpoint.fpck', 'checkpoint', 'train')


def test_read_provenance_metadata_direct(tmp_path):
    """Test reading through the sidecar path itself."""
    path = tmp_path / 'a.bin'
    path.write_bytes(b'abc')
    meta_file = write_provenance_metadata(path, 'report', 'evaluate')
    assert read_provenance_metadata(meta_file)['file'] == 'a.bin'


def test_read_provenance_metadata_not_found(tmp_path):
    path = tmp_path / 'a.bin'
    path.write_bytes(b'abc')
    with pytest.raises(FileNotFoundError):
        read_provenance_metadata(path)


def test_verify_file_integrity_success(tmp_path):
    path = tmp_path / 'a.bin'
    path.write_bytes(b'original')
    write_provenance_metadata(path, 'report', 'train')
    assert verify_file_integrity(path) is True


def test_verify_file_integrity_failure(tmp_path):
    """Test a modified artifact fails the check."""
    path = tmp_path / 'a.bin'
    path.write_bytes(b'original')
    write_provenance_metadata(path, 'report', 'train')
    path.write_bytes(b'modified')
    assert verify_file_integrity(path) is False


def test_verify_file_integrity_no_hash(tmp_path):
    path = tmp_path / 'a.bin'
    path.write_bytes(b'x')
    meta_file = write_provenance_metadata(path, 'report', 'train')
    with open(meta_file) as f:
        metadata = json.load(f)
    del metadata['hash']
    with open(meta_file, 'w') as f:
        json.dump(metadata, f)
    with pytest.raises(ValueError):
        verify_file_integrity(path)


def test_metadata_timestamp_format(tmp_path):
    """Test that timestamp is in ISO format with Z suffix."""
    path = tmp_path / 'a.bin'
    path.write_bytes(b'test')
    write_provenance_metadata(path, 'report', 'train')
    timestamp = read_provenance_metadata(path)['created_at']
    assert timestamp.endswith('Z')
    assert 'T' in timestamp
