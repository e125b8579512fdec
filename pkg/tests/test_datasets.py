"""Tests for synthetic dataset generation and loading."""

import json

import numpy as np
import pytest

from factorizephys.datasets import build_dataset_catalog, generate_dataset, load_dataset
from factorizephys.errors import FormatError
from factorizephys.provenance import read_provenance_metadata, verify_file_integrity
from factorizephys.signals import estimate_hr_fft
from tests.conftest import tiny_synth_config


def test_generate_writes_files_and_manifest(tiny_dataset):
    root = tiny_dataset.root
    manifest = json.loads((root / "dataset.json").read_text())
    assert manifest["total_clips"] == 4
    assert [c["clip_id"] for c in manifest["clips"]] == ["clip_000", "clip_001", "clip_002", "clip_003"]
    assert [c["split"] for c in manifest["clips"]] == ["train", "train", "test", "test"]
    assert manifest["config"]["clips"] == 4
    for clip in manifest["clips"]:
        for name in clip["files"].values():
            assert (root / name).exists()
            assert verify_file_integrity(root / name)


def test_clip_sidecars_record_generator(tiny_dataset):
    record = tiny_dataset.records[0]
    meta = read_provenance_metadata(tiny_dataset.root / record.frames)
    assert meta["kind"] == "frames"
    assert meta["generator"]["name"] == "synth"
    assert meta["generator"]["params"]["clip"]["hr_bpm"] == record.hr_bpm


def test_load_dataset_round_trip(tiny_dataset):
    """Test a dataset loads from its directory or its manifest file."""
    for path in (tiny_dataset.root, tiny_dataset.root / "dataset.json"):
        loaded = load_dataset(path)
        assert loaded.records == tiny_dataset.records
    assert len(loaded.split("train")) == 2
    assert len(loaded.split("test")) == 2
    assert len(loaded.split(None)) == 4
    with pytest.raises(ValueError):
        loaded.split("val")


def test_labels_match_recorded_rate(tiny_dataset):
    """Test each clip's labels oscillate at the heart rate the manifest records."""
    for record, frames, labels in tiny_dataset.iter_clips():
        assert frames.shape == (129, 20, 20, 3)
        assert estimate_hr_fft(labels.labels) == pytest.approx(record.hr_bpm, abs=60.0 * 30.0 / 1024)


def test_chunks_by_split(tiny_dataset):
    chunks = tiny_dataset.chunks("test", chunk_len=64)
    assert chunks.frames.shape == (4, 3, 64, 20, 20)
    assert [s[0] for s in chunks.sources] == ["clip_002", "clip_002", "clip_003", "clip_003"]
    resized = tiny_dataset.chunks("train", chunk_len=64, size=(10, 10))
    assert resized.frames.shape == (4, 3, 64, 10, 10)


def test_sampling_rate(tiny_dataset):
    assert tiny_dataset.sampling_rate() == 30.0


def test_generation_deterministic(tmp_path):
    """Test the same config writes identical clips."""
    a = generate_dataset(tiny_synth_config(clips=2), tmp_path / "a")
    b = generate_dataset(tiny_synth_config(clips=2), tmp_path / "b")
    for ra, rb in zip(a.records, b.records):
        assert ra == rb
        assert (a.root / ra.frames).read_bytes() == (b.root / rb.frames).read_bytes()
        assert (a.root / ra.labels).read_bytes() == (b.root / rb.labels).read_bytes()


def test_generation_metadata_differs_only_in_timestamps(tmp_path):
    """Test sidecars and manifests of equal-seed runs agree once created_at is dropped."""
    a = generate_dataset(tiny_synth_config(clips=2), tmp_path / "a")
    b = generate_dataset(tiny_synth_config(clips=2), tmp_path / "b")
    for ra, rb in zip(a.records, b.records):
        meta_a = read_provenance_metadata(a.root / ra.frames)
        meta_b = read_provenance_metadata(b.root / rb.frames)
        assert meta_a["hash"]["value"] == meta_b["hash"]["value"]
        meta_a.pop("created_at")
        meta_b.pop("created_at")
        assert meta_a == meta_b
    manifest_a = json.loads((a.root / "dataset.json").read_text())
    manifest_b = json.loads((b.root / "dataset.json").read_text())
    assert "created_at" in manifest_a
    manifest_a.pop("created_at")
    manifest_b.pop("created_at")
    assert manifest_a == manifest_b


def test_missing_file_rejected(tiny_dataset):
    (tiny_dataset.root / tiny_dataset.records[1].labels).unlink()
    with pytest.raises(FormatError, match="missing"):
        load_dataset(tiny_dataset.root)


def test_missing_manifest(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_dataset(tmp_path)


def test_empty_split_rejected(tmp_path):
    cfg = tiny_synth_config(clips=1)
    dataset = generate_dataset(cfg, tmp_path / "one")
    with pytest.raises(FormatError, match="no clips"):
        dataset.chunks("test", chunk_len=64)


def test_dataset_catalog(tiny_dataset):
    catalog = build_dataset_catalog(tiny_dataset)
    assert list(catalog.columns) == ["clip_id", "split", "hr_bpm", "seed", "frames", "labels"]
    assert len(catalog) == 4
    assert catalog["frames"].iloc[0].endswith("clip_000.fpv")
    assert np.all((catalog["hr_bpm"] >= 60.0) & (catalog["hr_bpm"] <= 120.0))
