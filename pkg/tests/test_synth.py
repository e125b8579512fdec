"""Tests for the synthetic pulsatile-video generator."""

import numpy as np
import pytest

from factorizephys.errors import ConfigError, SynthError
from factorizephys.formats import read_frames, read_labels, write_frames, write_labels
from factorizephys.signals import bandpass, estimate_hr_fft
from factorizephys.synth import (
    SynthConfig,
    SynthDatasetConfig,
    bvp_waveform,
    generate_synthetic_clip,
    skin_mask,
)


def small(**kwargs):
    base = dict(duration_s=16.0, frame_size=(12, 12), noise_sigma=0.0)
    base.update(kwargs)
    return SynthConfig(**base)


def test_clip_shapes_and_labels():
    cfg = small(duration_s=2.0)
    frames, labels = generate_synthetic_clip(cfg)
    assert frames.shape == (60, 12, 12, 3)
    assert frames.frames.dtype == np.uint8
    assert len(labels) == 60
    assert labels.fs == 30.0
    assert labels.labels.dtype == np.float32
    assert abs(float(labels.labels.mean())) < 1e-5
    assert float(labels.labels.std()) == pytest.approx(1.0, abs=1e-5)


def test_noise_free_hr_recovered_from_pixel():
    """Test a masked pixel of a noise-free 72 BPM clip carries a 72 BPM pulse."""
    cfg = small(hr_bpm=72.0, amplitude=4.0)
    frames, _ = generate_synthetic_clip(cfg)
    assert frames.shape[0] == 480
    trace = frames.frames[:, 6, 6, 1].astype(np.float64)
    assert estimate_hr_fft(bandpass(trace)) == pytest.approx(72.0, abs=1.0)


@pytest.mark.parametrize("hr", [45.0, 60.0, 90.0, 120.0, 150.0, 180.0])
def test_labels_hr_across_band(hr):
    """Test the label trace peaks at the configured rate within one spectral bin."""
    _, labels = generate_synthetic_clip(small(hr_bpm=hr, duration_s=8.0))
    assert estimate_hr_fft(labels.labels) == pytest.approx(hr, abs=60.0 * 30.0 / 1024)


def test_zero_amplitude_is_static():
    """Test a clip without pulse or noise is constant over time."""
    frames, _ = generate_synthetic_clip(small(amplitude=0.0, duration_s=1.0))
    assert np.ptp(frames.frames, axis=0).max() == 0


def test_pulse_only_inside_mask():
    frames, _ = generate_synthetic_clip(small(duration_s=2.0, amplitude=4.0))
    mask = skin_mask(small())
    swing = np.ptp(frames.frames.astype(np.int32), axis=0)[..., 0]
    assert swing[mask == 0].max() == 0
    assert swing[mask == 1].min() > 0


def test_same_seed_identical_files(tmp_path):
    """Test the same seed writes byte-identical files."""
    cfg = SynthConfig(duration_s=1.0, frame_size=(8, 8), seed=11)
    paths = []
    for name in ("a", "b"):
        frames, labels = generate_synthetic_clip(cfg)
        paths.append(
            (
                write_frames(tmp_path / f"{name}.fpv", frames.frames),
                write_labels(tmp_path / f"{name}.fpl", labels.labels, labels.fs),
            )
        )
    for i in range(2):
        with open(paths[0][i], "rb") as f0, open(paths[1][i], "rb") as f1:
            assert f0.read() == f1.read()
    np.testing.assert_array_equal(read_frames(paths[0][0]).frames, read_frames(paths[1][0]).frames)
    assert len(read_labels(paths[0][1])) == 30


def test_different_seed_changes_noise():
    a, _ = generate_synthetic_clip(SynthConfig(duration_s=1.0, frame_size=(8, 8), seed=1))
    b, _ = generate_synthetic_clip(SynthConfig(duration_s=1.0, frame_size=(8, 8), seed=2))
    assert not np.array_equal(a.frames, b.frames)


def test_float_clip():
    frames, _ = generate_synthetic_clip(small(dtype="f32", duration_s=1.0, noise_sigma=1.0))
    assert frames.dtype == "f32"
    assert frames.frames.dtype == np.float32


def test_hr_outside_band_rejected():
    with pytest.raises(SynthError):
        generate_synthetic_clip(small(hr_bpm=30.0))
    with pytest.raises(SynthError):
        generate_synthetic_clip(small(hr_bpm=170.0, hr_drift_bpm_per_s=2.0))


def test_u8_budget_rejected():
    """Test a swing that would clip at the u8 range is refused."""
    with pytest.raises(SynthError, match="clip"):
        generate_synthetic_clip(small(base_color=(250.0, 110.0, 90.0), amplitude=4.0))
    with pytest.raises(SynthError):
        generate_synthetic_clip(small(base_color=(10.0, 110.0, 90.0), noise_sigma=3.0))


def test_drift_raises_rate():
    cfg = small(hr_bpm=60.0, hr_drift_bpm_per_s=1.0, duration_s=10.0)
    lo, hi = cfg.hr_range()
    assert lo == 60.0
    assert hi == pytest.approx(60.0 + 299 / 30.0)
    wave = bvp_waveform(cfg)
    assert wave.shape == (300,)


def test_config_validation():
    with pytest.raises(ConfigError):
        SynthConfig(fs=0.0)
    with pytest.raises(ConfigError):
        SynthConfig(dtype="u16")
    with pytest.raises(ConfigError):
        SynthConfig.from_dict({"hr": 70})
    with pytest.raises(ConfigError):
        SynthDatasetConfig(hr_range=(30.0, 90.0))


def test_config_dict_round_trip():
    cfg = SynthDatasetConfig(clips=5, hr_range=(60.0, 100.0), seed=3)
    again = SynthDatasetConfig.from_dict(cfg.to_dict())
    assert again == cfg


def test_dataset_clip_configs_seeded():
    """Test per-clip rates are drawn inside the range and depend on the dataset seed."""
    cfg = SynthDatasetConfig(clips=8, hr_range=(50.0, 150.0), seed=4)
    rates = [cfg.clip_config(i).hr_bpm for i in range(8)]
    assert all(50.0 <= r <= 150.0 for r in rates)
    assert rates == [cfg.clip_config(i).hr_bpm for i in range(8)]
    other = SynthDatasetConfig(clips=8, hr_range=(50.0, 150.0), seed=5)
    assert rates != [other.clip_config(i).hr_bpm for i in range(8)]


def test_n_test_keeps_a_training_clip():
    assert SynthDatasetConfig(clips=16).n_test == 4
    assert SynthDatasetConfig(clips=1, test_fraction=0.5).n_test == 0
    assert SynthDatasetConfig(clips=2, test_fraction=0.9).n_test == 1
