"""Synthetic dataset generation and loading.

A dataset is a directory of FPV1 clips and FPL1 label traces with provenance
sidecars and a ``dataset.json`` manifest recording each clip's heart rate and
train/test split. ``build_dataset_catalog`` gives the same listing as a pandas
DataFrame.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Tuple, Union

import pandas as pd

from factorizephys.errors import FormatError
from factorizephys.formats import FramesFile, LabelFile, read_frames, read_labels, write_frames, write_labels
from factorizephys.manifest import DATASET_MANIFEST, build_manifest_file, load_manifest, validate_manifest
from factorizephys.model import CHUNK_FRAMES
from factorizephys.preprocess import ChunkSet, chunk_clips
from factorizephys.provenance import write_provenance_metadata
from factorizephys.synth import SynthDatasetConfig, generate_synthetic_clip

logger = logging.getLogger(__name__)

SPLITS = ("train", "test")

PathLike = Union[str, Path]


@dataclass
class ClipRecord:
    clip_id: str
    frames: str
    labels: str
    hr_bpm: float
    split: str
    seed: int

    def to_manifest(self) -> Dict[str, object]:
        return {
            "clip_id": self.clip_id,
            "files": {"frames": self.frames, "labels": self.labels},
            "hr_bpm": self.hr_bpm,
            "split": self.split,
            "seed": self.seed,
        }

    @classmethod
    def from_manifest(cls, data: Dict[str, object]) -> "ClipRecord":
        files = data["files"]
        return cls(
            clip_id=str(data["clip_id"]),
            frames=str(files["frames"]),
            labels=str(files["labels"]),
            hr_bpm=float(data["hr_bpm"]),
            split=str(data["split"]),
            seed=int(data["seed"]),
        )


@dataclass
class SyntheticDataset:
    """Clips listed by a dataset manifest, resolved against ``root``."""

    root: Path
    records: List[ClipRecord]
    config: Dict[str, object]

    def split(self, name: Optional[str]) -> List[ClipRecord]:
        if name is None:
            return list(self.records)
        if name not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}, got {name!r}")
        return [r for r in self.records if r.split == name]

    def sampling_rate(self) -> float:
        """Label sampling rate in Hz, read from the first clip."""
        if not self.records:
            raise FormatError(f"dataset {self.root} lists no clips")
        return read_labels(self.root / self.records[0].labels).fs

    def load_clip(self, record: ClipRecord) -> Tuple[FramesFile, LabelFile]:
        frames = read_frames(self.root / record.frames)
        labels = read_labels(self.root / record.labels, expected_length=frames.shape[0])
        return frames, labels

    def iter_clips(self, split: Optional[str] = None) -> Iterator[Tuple[ClipRecord, FramesFile, LabelFile]]:
        for record in self.split(split):
            frames, labels = self.load_clip(record)
            yield record, frames, labels

    def chunks(
        self,
        split: Optional[str] = None,
        chunk_len: int = CHUNK_FRAMES,
        size: Optional[Tuple[int, int]] = None,
    ) -> ChunkSet:
        """Chunk every clip of ``split``, resizing to ``size`` when given."""
        triples = [(r.clip_id, f, l) for r, f, l in self.iter_clips(split)]
        if not triples:
            raise FormatError(f"dataset {self.root} has no clips in split {split!r}")
        return chunk_clips(triples, chunk_len=chunk_len, size=size)


def generate_dataset(cfg: SynthDatasetConfig, output_dir: PathLike) -> SyntheticDataset:
    """
    Render ``cfg.clips`` clips into ``output_dir`` and write ``dataset.json``.

    Clip i uses the template with a heart rate and seed derived from
    ``(cfg.seed, i)``; the last ``cfg.n_test`` clips are held out.
    """
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    records: List[ClipRecord] = []

    for i in range(cfg.clips):
        clip_cfg = cfg.clip_config(i)
        frames, labels = generate_synthetic_clip(clip_cfg)
        clip_id = f"clip_{i:03d}"
        record = ClipRecord(
            clip_id=clip_id,
            frames=f"{clip_id}.fpv",
            labels=f"{clip_id}.fpl",
            hr_bpm=clip_cfg.hr_bpm,
            split="test" if i >= cfg.clips - cfg.n_test else "train",
            seed=clip_cfg.seed,
        )
        frames_path = write_frames(out / record.frames, frames.frames, dtype=frames.dtype)
        labels_path = write_labels(out / record.labels, labels.labels, fs=labels.fs)
        params = {"clip": clip_cfg.to_dict()}
        write_provenance_metadata(frames_path, "frames", "synth", params)
        write_provenance_metadata(labels_path, "labels", "synth", params)
        records.append(record)
        logger.info("Generated %s (%.1f BPM, %s)", clip_id, record.hr_bpm, record.split)

    build_manifest_file(out, [r.to_manifest() for r in records], cfg.to_dict())
    return SyntheticDataset(out, records, cfg.to_dict())


def load_dataset(path: PathLike) -> SyntheticDataset:
    """
    Open a dataset from its directory or its ``dataset.json``.

    Raises:
        FileNotFoundError: If the manifest is missing.
        FormatError: If listed files are missing.
    """
    manifest_path = Path(path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / DATASET_MANIFEST
    if not manifest_path.exists():
        raise FileNotFoundError(f"Dataset manifest not found: {manifest_path}")
    if not validate_manifest(manifest_path):
        raise FormatError(f"{manifest_path}: listed files are missing")
    manifest = load_manifest(manifest_path)
    records = [ClipRecord.from_manifest(c) for c in manifest.get("clips", [])]
    return SyntheticDataset(manifest_path.parent, records, manifest.get("config", {}))


def build_dataset_catalog(dataset: SyntheticDataset) -> pd.DataFrame:
    """One row per clip: id, split, heart rate, seed and absolute file paths."""
    rows = []
    for record in dataset.records:
        row = asdict(record)
        row["frames"] = str(dataset.root / record.frames)
        row["labels"] = str(dataset.root / record.labels)
        rows.append(row)
    columns = ["clip_id", "split", "hr_bpm", "seed", "frames", "labels"]
    if not rows:
        return pd.DataFrame(columns=columns)
    return pd.DataFrame(rows).sort_values("clip_id").reset_index(drop=True)[columns]


__all__ = [
    "SPLITS",
    "ClipRecord",
    "SyntheticDataset",
    "generate_dataset",
    "load_dataset",
    "build_dataset_catalog",
]
