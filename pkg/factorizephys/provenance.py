"""
Provenance sidecars for generated artifacts.

Every clip, label trace, checkpoint and report written by the package can get a
``<file>.meta.json`` sidecar recording what produced it and a content hash, so
a run can later confirm its inputs are unchanged.

Metadata Schema Version: 1.0
Schema fields:
  - schema_version: Version of the metadata schema
  - file: Filename of the artifact
  - kind: Artifact kind ('frames', 'labels', 'checkpoint', 'report', ...)
  - created_at: ISO 8601 timestamp of creation (UTC)
  - file_size_bytes: Size of the file in bytes
  - hash: File integrity hash (algorithm and value)
  - generator: Producer information
    - name: Producing command or function (e.g. 'synth', 'train')
    - version: Package version
    - params: Generator-specific settings (optional)
"""

import hashlib
import json
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Optional, Union

from factorizephys import __version__

METADATA_SCHEMA_VERSION = "1.0"

PathLike = Union[str, Path]


def _format_utc_timestamp(dt: datetime) -> str:
    """Format a UTC datetime as ISO 8601 with a 'Z' suffix."""
    return dt.strftime('%Y-%m-%dT%H:%M:%S') + 'Z'


def calculate_file_hash(file_path: PathLike, algorithm: str = 'sha256') -> str:
    """
    Calculate the hex digest of a file.

    Args:
        file_path: Path to the file to hash.
        algorithm: Any ``hashlib`` algorithm name (default: 'sha256').
    """
    hash_obj = hashlib.new(algorithm)

    with open(file_path, 'rb') as f:
        while chunk := f.read(1 << 16):
            hash_obj.update(chunk)

    return hash_obj.hexdigest()


def _sidecar_path(file_path: Path) -> Path:
    if file_path.name.endswith('.meta.json'):
        return file_path
    return file_path.parent / f"{file_path.name}.meta.json"


def write_provenance_metadata(
    file_path: PathLike,
    kind: str,
    generator: str,
    params: Optional[Dict[str, Any]] = None,
    hash_algorithm: str = 'sha256',
) -> str:
    """
    Write a ``.meta.json`` sidecar next to an artifact.

    Args:
        file_path: The artifact.
        kind: Artifact kind, e.g. 'frames', 'labels', 'checkpoint', 'report'.
        generator: Name of the producing command or function.
        params: Settings that produced the artifact (seed, config snapshot).
        hash_algorithm: Hash algorithm to use (default: 'sha256').

    Returns:
        Path to the created sidecar.

    Raises:
        FileNotFoundError: If the artifact does not exist.

    Example:
        >>> write_provenance_metadata('data/clip_000.fpv', 'frames', 'synth', {'seed': 7})
        'data/clip_000.fpv.meta.json'
    """
    file_path_obj = Path(file_path)
    if not file_path_obj.exists():
        raise FileNotFoundError(f"Artifact not found: {file_path}")

    metadata: Dict[str, Any] = {
        "schema_version": METADATA_SCHEMA_VERSION,
        "file": file_path_obj.name,
        "kind": kind,
        "created_at": _format_utc_timestamp(datetime.now(timezone.utc)),
        "file_size_bytes": file_path_obj.stat().st_size,
        "hash": {
            "algorithm": hash_algorithm,
            "value": calculate_file_hash(file_path_obj, algorithm=hash_algorithm),
        },
        "generator": {"name": generator, "version": __version__},
    }
    if params:
        metadata["generator"]["params"] = params

    meta_file_path = _sidecar_path(file_path_obj)
    with open(meta_file_path, 'w', encoding='utf-8') as f:
        json.dump(metadata, f, indent=2, ensure_ascii=False)

    return str(meta_file_path)


def read_provenance_metadata(file_path: PathLike) -> Dict[str, Any]:
    """
    Read the sidecar of an artifact (or the sidecar path itself).

    Raises:
        FileNotFoundError: If the sidecar doesn't exist.
    """
    meta_file_path = _sidecar_path(Path(file_path))
    if not meta_file_path.exists():
        raise FileNotFoundError(f"Metadata file not found: {meta_file_path}")

    with open(meta_file_path, 'r', encoding='utf-8') as f:
        return json.load(f)


def verify_file_integrity(file_path: PathLike) -> bool:
    """
    Recompute the artifact hash and compare it with its sidecar.

    Returns:
        True if the file is unchanged.

    Raises:
        FileNotFoundError: If the file or its sidecar doesn't exist.
        ValueError: If the sidecar carries no hash.
    """
    metadata = read_provenance_metadata(file_path)
    hash_info = metadata.get('hash', {})
    expected_hash = hash_info.get('value')
    if not expected_hash:
        raise ValueError("No hash value found in metadata")

    current_hash = calculate_file_hash(file_path, algorithm=hash_info.get('algorithm', 'sha256'))
    return current_hash == expected_hash


__all__ = [
    "METADATA_SCHEMA_VERSION",
    "calculate_file_hash",
    "write_provenance_metadata",
    "read_provenance_metadata",
    "verify_file_integrity",
]
