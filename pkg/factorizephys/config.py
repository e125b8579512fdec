"""
YAML configuration files.

Configs are dataclasses with ``from_dict``/``to_dict``; this module reads and
writes them as YAML and holds the training settings.

Example training config (configs/train_default.yaml):
    epochs: 10
    batch_size: 4
    max_lr: 0.001
    seed: 0
    arch: configs/arch_default.yaml
    dataset: data/synth
    out_dir: runs/train

Command-line flags (``--seed``, ``--rank``, ``--steps``, ``--mapping``,
``--no-fsam``, ``--no-residual``, ``--out``) override file values.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import yaml

from factorizephys.errors import ConfigError
from factorizephys.fsam import MappingSpec
from factorizephys.model import ArchConfig, default_arch
from factorizephys.nmf import NmfConfig
from factorizephys.synth import SynthDatasetConfig

PathLike = Union[str, Path]


def _resolve_configs_dir() -> Path:
    """Shipped configs: ``./configs`` when present, else the one beside the package."""
    cwd = Path.cwd().resolve()
    if (cwd / "configs").exists():
        return cwd / "configs"
    return Path(__file__).resolve().parents[1] / "configs"


CONFIGS_DIR = _resolve_configs_dir()


@dataclass
class TrainConfig:
    """
    Training settings.

    Attributes:
        epochs: Passes over the training chunks (0 writes the initial parameters).
        batch_size: Chunks per optimizer step.
        max_lr: Peak learning rate of the one-cycle schedule.
        beta1, beta2, eps: Adam moment coefficients and denominator term.
        weight_decay: Decoupled weight decay.
        warmup_fraction: Share of steps spent ramping up to ``max_lr``.
        div_factor: Initial rate is ``max_lr / div_factor``.
        final_div_factor: Final rate is ``max_lr / final_div_factor``.
        seed: Seeds parameter init and batch shuffling.
        arch: Architecture YAML path, inline mapping, or None for the default plan.
        dataset: Dataset directory or ``dataset.json``.
        out_dir: Run directory for checkpoint, logs and reports.
        use_fsam: Train with the attention block.
        resize_to_arch: Resize clips whose frame size differs from the architecture
            input; when False such clips raise ShapeError.
        evaluate: Score the held-out split after training.
        dtype: Parameter and activation precision, 'float32' or 'float64'.
    """

    epochs: int = 10
    batch_size: int = 4
    max_lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    warmup_fraction: float = 0.3
    div_factor: float = 25.0
    final_div_factor: float = 1e4
    seed: int = 0
    arch: Optional[Union[str, Dict[str, Any]]] = None
    dataset: Optional[str] = None
    out_dir: str = "runs/train"
    use_fsam: bool = True
    resize_to_arch: bool = False
    evaluate: bool = True
    dtype: str = "float32"

    def __post_init__(self) -> None:
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.max_lr > 0:
            raise ConfigError(f"max_lr must be positive, got {self.max_lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("beta1 and beta2 must lie in [0, 1)")
        if not 0 < self.warmup_fraction < 1:
            raise ConfigError("warmup_fraction must lie in (0, 1)")
        if self.div_factor <= 0 or self.final_div_factor <= 0:
            raise ConfigError("div_factor and final_div_factor must be positive")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown train keys: {sorted(unknown)}")
        return cls(**data)


def load_yaml(path: PathLike) -> Dict[str, Any]:
    """
    Read a YAML mapping.

    Raises:
        FileNotFoundError: If the file doesn't exist.
        ConfigError: If the file is not valid YAML or not a mapping.
    """
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"Config file not found: {p}")
    try:
        with open(p, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except yaml.YAMLError as exc:
        raise ConfigError(f"Invalid YAML in {p}: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"Invalid config format in {p}: expected a mapping")
    return data


def save_config(config: Any, path: PathLike) -> Path:
    """Write any config object with ``to_dict`` (or a plain dict) as YAML."""
    data = config.to_dict() if hasattr(config, "to_dict") else dict(config)
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with open(p, "w", encoding="utf-8") as f:
        yaml.safe_dump(data, f, default_flow_style=False, sort_keys=False)
    return p


def _from_file(path: PathLike, build):
    try:
        return build(load_yaml(path))
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"Malformed config {path}: {exc}") from exc


def load_arch_config(path: PathLike) -> ArchConfig:
    """Load and validate an architecture file."""
    arch = _from_file(path, ArchConfig.from_dict)
    arch.validate()
    return arch


def load_synth_config(path: PathLike) -> SynthDatasetConfig:
    return _from_file(path, SynthDatasetConfig.from_dict)


def load_train_config(path: PathLike) -> TrainConfig:
    return _from_file(path, TrainConfig.from_dict)


def resolve_arch(cfg: TrainConfig) -> ArchConfig:
    """The architecture a training config refers to."""
    if cfg.arch is None:
        return default_arch()
    if isinstance(cfg.arch, dict):
        arch = ArchConfig.from_dict(cfg.arch)
        arch.validate()
        return arch
    return load_arch_config(cfg.arch)


def apply_overrides(
    arch: ArchConfig,
    rank: Optional[int] = None,
    steps: Optional[int] = None,
    mapping: Optional[str] = None,
    frame_depth: Optional[int] = None,
    residual: Optional[bool] = None,
) -> ArchConfig:
    """Copy of ``arch`` with the attention settings replaced where given."""
    out = ArchConfig.from_dict(arch.to_dict())
    nmf = out.fsam.nmf.to_dict()
    if rank is not None:
        nmf["rank"] = rank
    if steps is not None:
        nmf["steps"] = steps
    out.fsam.nmf = NmfConfig.from_dict(nmf)
    if mapping is not None:
        out.fsam.mapping = MappingSpec.parse(mapping, frame_depth)
    elif frame_depth is not None:
        out.fsam.mapping = MappingSpec.parse(out.fsam.mapping.variant, frame_depth)
    if residual is not None:
        out.fsam.residual = residual
    out.validate()
    return out


def list_configs(configs_dir: Optional[PathLike] = None) -> List[str]:
    """Names (without extension) of the YAML files in ``configs_dir``."""
    search_dir = Path(configs_dir) if configs_dir else CONFIGS_DIR
    if not search_dir.exists():
        return []
    files = list(search_dir.glob("*.yaml")) + list(search_dir.glob("*.yml"))
    return [p.stem for p in sorted(files)]


__all__ = [
    "CONFIGS_DIR",
    "TrainConfig",
    "load_yaml",
    "save_config",
    "load_arch_config",
    "load_synth_config",
    "load_train_config",
    "resolve_arch",
    "apply_overrides",
    "list_configs",
]
