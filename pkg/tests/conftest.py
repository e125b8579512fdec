"""Shared fixtures: a tiny architecture and tiny synthetic clips that keep the suite fast."""

import numpy as np
import pytest

from factorizephys.datasets import generate_dataset
from factorizephys.model import ArchConfig, LayerSpec
from factorizephys.ops import ConvSpec
from factorizephys.synth import SynthConfig, SynthDatasetConfig


def build_tiny_arch(frames: int = 9) -> ArchConfig:
    """Six layers over 20x20 input: 18, 16, 7, 7, 7, 4, then a 4x4 head."""
    plan = [
        ((3, 3, 3), (1, 1, 1)),
        ((3, 3, 3), (1, 1, 1)),
        ((3, 4, 4), (1, 2, 2)),
        ((3, 1, 1), (1, 1, 1)),
        ((3, 1, 1), (1, 1, 1)),
        ((3, 1, 1), (1, 2, 2)),
    ]
    channels = [3, 4, 4, 4, 4, 4, 4]
    layers = [
        LayerSpec(ConvSpec(channels[i], channels[i + 1], kernel=k, stride=s))
        for i, (k, s) in enumerate(plan)
    ]
    return ArchConfig(
        input_shape=(3, frames, 20, 20),
        layers=layers,
        fsam_after_layer=6,
        head=ConvSpec(4, 1, kernel=(3, 4, 4)),
        name="tiny",
    )


@pytest.fixture
def tiny_arch():
    return build_tiny_arch()


@pytest.fixture
def tiny_frames():
    rng = np.random.default_rng(5)
    return rng.normal(size=(2, 3, 9, 20, 20)).astype(np.float32)


def tiny_synth_config(clips: int = 4, seed: int = 0):
    """129-frame 20x20 clips: two 64-frame chunks each, enough signal for heart-rate metrics."""
    clip = SynthConfig(duration_s=4.3, frame_size=(20, 20), amplitude=3.0, noise_sigma=1.0)
    return SynthDatasetConfig(clips=clips, hr_range=(60.0, 120.0), test_fraction=0.5, seed=seed, clip=clip)


@pytest.fixture
def tiny_dataset(tmp_path):
    return generate_dataset(tiny_synth_config(), tmp_path / "data")


@pytest.fixture
def eval_arch():
    return build_tiny_arch(frames=64)
