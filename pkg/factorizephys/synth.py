"""
Synthetic pulsatile video.

Each clip is a static face-like ellipse on a flat background whose colour is
modulated by a blood-volume-pulse waveform::

    bvp(t)     = sin(phi(t)) + ratio * sin(2 phi(t)),   phi(t) = 2 pi * integral f
    pixel      = base_c + A * bvp(t) * mask(h, w) + drift(t) + noise
    label(t)   = zscore(bvp)

with ``f(t) = (hr_bpm + hr_drift * t) / 60`` Hz. Generation is deterministic
per seed.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, Tuple

import numpy as np

from factorizephys.errors import ConfigError, SynthError
from factorizephys.formats import FramesFile, LabelFile
from factorizephys.signals import HR_BAND, zscore

logger = logging.getLogger(__name__)

HR_LIMITS_BPM = (40.0, 180.0)
NOISE_MARGIN_SIGMAS = 5.0


@dataclass
class SynthConfig:
    """
    Settings for one synthetic clip.

    Attributes:
        duration_s: Clip length in seconds.
        fs: Frame rate in Hz.
        frame_size: (H, W) in pixels.
        hr_bpm: Heart rate at t = 0.
        hr_drift_bpm_per_s: Linear heart-rate drift.
        amplitude: Pulsatile amplitude A in 8-bit levels.
        harmonic_ratio: Second-harmonic to fundamental ratio.
        base_color: Per-channel background level.
        mask_center: Ellipse centre as fractions of (H, W).
        mask_axes: Ellipse semi-axes as fractions of (H, W).
        illumination_amplitude: Amplitude of the global illumination drift.
        illumination_hz: Frequency of the illumination drift.
        noise_sigma: Gaussian sensor noise in 8-bit levels.
        dtype: Storage tag, ``u8`` or ``f32``.
        seed: RNG seed.
    """

    duration_s: float = 16.0
    fs: float = 30.0
    frame_size: Tuple[int, int] = (72, 72)
    hr_bpm: float = 72.0
    hr_drift_bpm_per_s: float = 0.0
    amplitude: float = 2.0
    harmonic_ratio: float = 0.3
    base_color: Tuple[float, float, float] = (150.0, 110.0, 90.0)
    mask_center: Tuple[float, float] = (0.5, 0.5)
    mask_axes: Tuple[float, float] = (0.38, 0.3)
    illumination_amplitude: float = 0.0
    illumination_hz: float = 0.1
    noise_sigma: float = 2.0
    dtype: str = "u8"
    seed: int = 0

    def __post_init__(self) -> None:
        self.frame_size = tuple(int(v) for v in self.frame_size)
        self.base_color = tuple(float(v) for v in self.base_color)
        self.mask_center = tuple(float(v) for v in self.mask_center)
        self.mask_axes = tuple(float(v) for v in self.mask_axes)
        if self.fs <= 0 or self.duration_s <= 0:
            raise ConfigError("fs and duration_s must be positive")
        if len(self.frame_size) != 2 or min(self.frame_size) < 1:
            raise ConfigError(f"frame_size must be two positive ints, got {self.frame_size}")
        if self.amplitude < 0 or self.noise_sigma < 0 or self.illumination_amplitude < 0:
            raise ConfigError("amplitude, noise_sigma and illumination_amplitude must be >= 0")
        if self.dtype not in ("u8", "f32"):
            raise ConfigError(f"dtype must be 'u8' or 'f32', got {self.dtype!r}")

    @property
    def frames(self) -> int:
        return int(round(self.duration_s * self.fs))

    def hr_range(self) -> Tuple[float, float]:
        end = self.hr_bpm + self.hr_drift_bpm_per_s * (self.frames - 1) / self.fs
        return min(self.hr_bpm, end), max(self.hr_bpm, end)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        for key in ("frame_size", "base_color", "mask_center", "mask_axes"):
            data[key] = list(data[key])
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SynthConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown synth keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class SynthDatasetConfig:
    """
    A set of clips sharing a template, with heart rates drawn uniformly from ``hr_range``.

    The last ``round(clips * test_fraction)`` clips form the held-out split.
    """

    clips: int = 16
    hr_range: Tuple[float, float] = (50.0, 150.0)
    test_fraction: float = 0.25
    seed: int = 0
    clip: SynthConfig = field(default_factory=SynthConfig)

    def __post_init__(self) -> None:
        self.hr_range = tuple(float(v) for v in self.hr_range)
        if self.clips < 1:
            raise ConfigError("clips must be >= 1")
        if not 0 <= self.test_fraction < 1:
            raise ConfigError("test_fraction must be in [0, 1)")
        lo, hi = self.hr_range
        if not HR_LIMITS_BPM[0] <= lo <= hi <= HR_LIMITS_BPM[1]:
            raise ConfigError(f"hr_range must lie within {HR_LIMITS_BPM} BPM, got {self.hr_range}")

    @property
    def n_test(self) -> int:
        return min(int(round(self.clips * self.test_fraction)), self.clips - 1)

    def clip_config(self, index: int) -> SynthConfig:
        """Template with this clip's heart rate and seed."""
        rng = np.random.default_rng([self.seed, index])
        hr = float(rng.uniform(*self.hr_range))
        data = self.clip.to_dict()
        data.update(hr_bpm=round(hr, 3), seed=int(rng.integers(0, 2**31 - 1)))
        return SynthConfig.from_dict(data)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "clips": self.clips,
            "hr_range": list(self.hr_range),
            "test_fraction": self.test_fraction,
            "seed": self.seed,
            "clip": self.clip.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SynthDatasetConfig":
        unknown = set(data) - {"clips", "hr_range", "test_fraction", "seed", "clip"}
        if unknown:
            raise ConfigError(f"unknown dataset keys: {sorted(unknown)}")
        return cls(
            clips=int(data.get("clips", 16)),
            hr_range=data.get("hr_range", (50.0, 150.0)),
            test_fraction=float(data.get("test_fraction", 0.25)),
            seed=int(data.get("seed", 0)),
            clip=SynthConfig.from_dict(data.get("clip", {})),
        )


def bvp_waveform(cfg: SynthConfig) -> np.ndarray:
    """Pulse waveform sampled at the frame times."""
    t = np.arange(cfg.frames) / cfg.fs
    phase = 2 * np.pi * (cfg.hr_bpm / 60.0 * t + cfg.hr_drift_bpm_per_s / 120.0 * t * t)
    return np.sin(phase) + cfg.harmonic_ratio * np.sin(2 * phase)


def skin_mask(cfg: SynthConfig) -> np.ndarray:
    """1.0 inside the ellipse, 0.0 outside; shape (H, W)."""
    h, w = cfg.frame_size
    yy, xx = np.meshgrid(np.arange(h) + 0.5, np.arange(w) + 0.5, indexing="ij")
    cy, cx = cfg.mask_center[0] * h, cfg.mask_center[1] * w
    ay, ax = cfg.mask_axes[0] * h, cfg.mask_axes[1] * w
    return (((yy - cy) / ay) ** 2 + ((xx - cx) / ax) ** 2 <= 1.0).astype(np.float64)


def _check_budget(cfg: SynthConfig) -> None:
    lo_hr, hi_hr = cfg.hr_range()
    band = (HR_BAND[0] * 60.0, HR_BAND[1] * 60.0)
    if not (HR_LIMITS_BPM[0] <= cfg.hr_bpm <= HR_LIMITS_BPM[1] and band[0] <= lo_hr and hi_hr <= band[1]):
        raise SynthError(f"heart rate {lo_hr:.1f}-{hi_hr:.1f} BPM leaves the evaluation band {band}")
    if cfg.dtype != "u8":
        return
    swing = (
        cfg.amplitude * (1.0 + abs(cfg.harmonic_ratio))
        + cfg.illumination_amplitude
        + NOISE_MARGIN_SIGMAS * cfg.noise_sigma
    )
    for base in cfg.base_color:
        if base - swing < 0 or base + swing > 255:
            raise SynthError(
                f"amplitude budget {swing:.1f} around base level {base} would clip in u8"
            )


def generate_synthetic_clip(cfg: SynthConfig) -> Tuple[FramesFile, LabelFile]:
    """
    Render one clip and its standardized label trace.

    Raises:
        SynthError: If the heart rate leaves the evaluation band or the u8
            amplitude budget would clip.
    """
    _check_budget(cfg)
    rng = np.random.default_rng(cfg.seed)
    bvp = bvp_waveform(cfg)
    mask = skin_mask(cfg)
    t = np.arange(cfg.frames) / cfg.fs
    drift = cfg.illumination_amplitude * np.sin(2 * np.pi * cfg.illumination_hz * t)

    base = np.asarray(cfg.base_color, dtype=np.float64)
    pulse = cfg.amplitude * bvp[:, None, None] * mask[None]
    frames = base[None, None, None, :] + (pulse + drift[:, None, None])[..., None]
    if cfg.noise_sigma > 0:
        frames = frames + rng.normal(0.0, cfg.noise_sigma, size=frames.shape)

    if cfg.dtype == "u8":
        frames = np.clip(np.round(frames), 0, 255).astype(np.uint8)
    else:
        frames = frames.astype(np.float32)

    labels = zscore(bvp).astype(np.float32)
    return FramesFile(frames, cfg.dtype), LabelFile(labels, cfg.fs)


__all__ = [
    "HR_LIMITS_BPM",
    "SynthConfig",
    "SynthDatasetConfig",
    "bvp_waveform",
    "skin_mask",
    "generate_synthetic_clip",
]
