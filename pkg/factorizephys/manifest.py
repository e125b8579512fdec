"""
Manifests for synthetic datasets and training runs.

A dataset directory holds ``dataset.json`` listing every clip, its files, its
ground-truth heart rate and split, plus the generating config. A training run
writes ``run_manifest.json`` next to its checkpoint.
"""

import json
import logging
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from factorizephys.errors import FormatError

logger = logging.getLogger(__name__)

DATASET_MANIFEST = "dataset.json"
RUN_MANIFEST = "run_manifest.json"

PathLike = Union[str, Path]


def build_manifest_file(
    output_dir: PathLike,
    clips: List[Dict[str, Any]],
    config: Optional[Dict[str, Any]] = None,
    manifest_name: str = DATASET_MANIFEST,
) -> str:
    """
    Write a dataset manifest.

    Args:
        output_dir: Dataset directory; file paths in ``clips`` are relative to it.
        clips: One dictionary per clip with:
            - clip_id: Unique identifier
            - files: ``{"frames": ..., "labels": ...}`` relative paths
            - hr_bpm: Ground-truth base heart rate
            - split: 'train' or 'test'
            - seed: Per-clip generator seed
        config: Generating config snapshot.
        manifest_name: File name (default: 'dataset.json').

    Returns:
        Path to the created manifest file.
    """
    output_path = Path(output_dir)
    output_path.mkdir(parents=True, exist_ok=True)

    manifest_path = output_path / manifest_name
    created_at = datetime.now(timezone.utc).isoformat().replace("+00:00", "Z")

    manifest = {
        "created_at": created_at,
        "clips": clips,
        "total_clips": len(clips),
        "config": config or {},
    }

    with open(manifest_path, 'w', encoding='utf-8') as f:
        json.dump(manifest, f, indent=2, ensure_ascii=False)

    return str(manifest_path)


def load_manifest(manifest_path: PathLike) -> Dict[str, Any]:
    """
    Load a manifest file.

    Raises:
        FileNotFoundError: If the manifest file doesn't exist.
        FormatError: If the file is not valid JSON.
    """
    try:
        with open(manifest_path, 'r', encoding='utf-8') as f:
            return json.load(f)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{manifest_path}: invalid JSON ({exc})") from exc


def validate_manifest(manifest_path: PathLike) -> bool:
    """
    Check that every file listed in a dataset manifest exists.

    Missing files are logged at WARNING level.

    Returns:
        True if all files exist, False otherwise.
    """
    manifest = load_manifest(manifest_path)
    manifest_dir = Path(manifest_path).parent

    all_exist = True
    for clip in manifest.get('clips', []):
        for file_path in clip.get('files', {}).values():
            full_path = manifest_dir / file_path
            if not full_path.exists():
                logger.warning("Missing file: %s", full_path)
                all_exist = False

    return all_exist


@dataclass
class RunManifest:
    """
    Record of one training run.

    Attributes:
        config: Training config snapshot (architecture included).
        seed: Seed of the run.
        epoch_losses: Mean training loss per epoch.
        checkpoint: Path of the final checkpoint.
        metrics: Path of the held-out metrics report, if evaluated.
        loss_log: Path of the per-epoch loss CSV.
        wall_clock_s: Elapsed seconds.
    """

    config: Dict[str, Any]
    seed: int
    epoch_losses: List[float] = field(default_factory=list)
    checkpoint: Optional[str] = None
    metrics: Optional[str] = None
    loss_log: Optional[str] = None
    wall_clock_s: float = 0.0

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunManifest":
        known = set(cls.__dataclass_fields__)
        return cls(**{k: v for k, v in data.items() if k in known})


def write_run_manifest(manifest: RunManifest, output_dir: PathLike) -> str:
    """Write ``run_manifest.json`` into ``output_dir``."""
    path = Path(output_dir) / RUN_MANIFEST
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(manifest.to_dict(), f, indent=2, ensure_ascii=False)
    return str(path)


def load_run_manifest(path: PathLike) -> RunManifest:
    """Load a run manifest from its file or its directory."""
    p = Path(path)
    if p.is_dir():
        p = p / RUN_MANIFEST
    return RunManifest.from_dict(load_manifest(p))


__all__ = [
    "DATASET_MANIFEST",
    "RUN_MANIFEST",
    "build_manifest_file",
    "load_manifest",
    "validate_manifest",
    "RunManifest",
    "write_run_manifest",
    "load_run_manifest",
]
