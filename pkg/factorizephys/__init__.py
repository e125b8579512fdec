"""
factorizephys - Factorized self-attention for remote photoplethysmography.

This package provides tools for:
- Differentiating numpy computations with a small tape-based engine
- Nonnegative matrix factorization by multiplicative updates
- The factorized self-attention block and the FactorizePhys 3D-CNN
- Heart-rate, SNR and waveform-correlation metrics
- Synthetic pulsatile video, chunking, and training/evaluation runs
"""

__version__ = "0.1.0"

from factorizephys.autodiff import Tape, Tensor, backward, gradcheck, no_grad
from factorizephys.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from factorizephys.config import (
    TrainConfig,
    apply_overrides,
    load_arch_config,
    load_synth_config,
    load_train_config,
    save_config,
)
from factorizephys.datasets import (
    SyntheticDataset,
    build_dataset_catalog,
    generate_dataset,
    load_dataset,
)
from factorizephys.errors import (
    AutogradError,
    ConfigError,
    FactorizePhysError,
    FormatError,
    NmfError,
    NonFiniteError,
    ShapeError,
    SignalError,
    SynthError,
    TrainingError,
)
from factorizephys.formats import (
    FramesFile,
    LabelFile,
    read_frames,
    read_labels,
    write_frames,
    write_labels,
)
from factorizephys.fsam import FsamConfig, MappingSpec, fsam_bypass, fsam_forward
from factorizephys.manifest import RunManifest, build_manifest_file, validate_manifest
from factorizephys.metrics import MetricsReport, aggregate_metrics, export_run_report
from factorizephys.model import (
    ArchConfig,
    ModelParams,
    default_arch,
    model_forward,
    param_init,
    parameter_table,
    scaled_arch,
)
from factorizephys.nmf import FactorPair, NmfConfig, factorize, mu_step, nmf_init
from factorizephys.optim import Adam, one_cycle_lr
from factorizephys.preprocess import ChunkSet, chunk_dataset, resize_bilinear
from factorizephys.provenance import verify_file_integrity, write_provenance_metadata
from factorizephys.signals import (
    SignalTrace,
    bandpass,
    cosine_attention_map,
    estimate_hr_fft,
    macc,
    neg_pearson_loss,
    snr_db,
)
from factorizephys.synth import SynthConfig, SynthDatasetConfig, generate_synthetic_clip
from factorizephys.training import evaluate, infer, run_sweep, train

__all__ = [
    "__version__",
    "Tensor",
    "Tape",
    "backward",
    "gradcheck",
    "no_grad",
    "Checkpoint",
    "save_checkpoint",
    "load_checkpoint",
    "TrainConfig",
    "apply_overrides",
    "load_arch_config",
    "load_synth_config",
    "load_train_config",
    "save_config",
    "SyntheticDataset",
    "build_dataset_catalog",
    "generate_dataset",
    "load_dataset",
    "FactorizePhysError",
    "ShapeError",
    "NonFiniteError",
    "AutogradError",
    "NmfError",
    "SignalError",
    "FormatError",
    "SynthError",
    "ConfigError",
    "TrainingError",
    "FramesFile",
    "LabelFile",
    "read_frames",
    "read_labels",
    "write_frames",
    "write_labels",
    "FsamConfig",
    "MappingSpec",
    "fsam_forward",
    "fsam_bypass",
    "RunManifest",
    "build_manifest_file",
    "validate_manifest",
    "MetricsReport",
    "aggregate_metrics",
    "export_run_report",
    "ArchConfig",
    "ModelParams",
    "default_arch",
    "scaled_arch",
    "model_forward",
    "param_init",
    "parameter_table",
    "FactorPair",
    "NmfConfig",
    "factorize",
    "mu_step",
    "nmf_init",
    "Adam",
    "one_cycle_lr",
    "ChunkSet",
    "chunk_dataset",
    "resize_bilinear",
    "verify_file_integrity",
    "write_provenance_metadata",
    "SignalTrace",
    "bandpass",
    "cosine_attention_map",
    "estimate_hr_fft",
    "macc",
    "neg_pearson_loss",
    "snr_db",
    "SynthConfig",
    "SynthDatasetConfig",
    "generate_synthetic_clip",
    "train",
    "evaluate",
    "infer",
    "run_sweep",
]
