"""
Training, evaluation and inference drivers.

``train`` runs Adam with a one-cycle schedule over shuffled chunk batches and
writes a run directory::

    <out_dir>/
        checkpoint.fpck (+ .meta.json)
        loss_log.csv (+ .meta.json)
        metrics.json, metrics.csv, metrics_chunks.csv   (when evaluated)
        run_manifest.json

The network emits one value per frame difference, so a chunk of L frames is
scored against its z-scored labels ``[1:]``.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import replace
from itertools import product
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from factorizephys import ops
from factorizephys.autodiff import Tape, Tensor, no_grad
from factorizephys.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from factorizephys.config import TrainConfig, apply_overrides, resolve_arch
from factorizephys.datasets import SyntheticDataset, load_dataset
from factorizephys.errors import ConfigError, NonFiniteError, ShapeError, TrainingError
from factorizephys.formats import FramesFile, LabelFile, read_frames
from factorizephys.manifest import RunManifest, write_run_manifest
from factorizephys.metrics import (
    MetricsReport,
    chunk_metrics,
    export_run_report,
    read_metrics,
    summarize_chunks,
    write_metrics,
)
from factorizephys.model import ArchConfig, ModelParams, model_forward, param_init
from factorizephys.optim import Adam, one_cycle_lr
from factorizephys.preprocess import ChunkSet, chunk_frames, resize_bilinear
from factorizephys.provenance import write_provenance_metadata
from factorizephys.signals import DEFAULT_FS, cosine_attention_map, zscore

logger = logging.getLogger(__name__)

CHECKPOINT_FILE = "checkpoint.fpck"
LOSS_LOG_FILE = "loss_log.csv"
SWEEP_SUMMARY_FILE = "sweep_summary.csv"
LOSS_LOG_COLUMNS = ["epoch", "loss", "lr"]

PathLike = Union[str, Path]


def _open_dataset(dataset: Union[SyntheticDataset, PathLike, None]) -> SyntheticDataset:
    if dataset is None:
        raise ConfigError("no dataset given")
    if isinstance(dataset, SyntheticDataset):
        return dataset
    return load_dataset(dataset)


def _open_checkpoint(checkpoint: Union[Checkpoint, PathLike]) -> Checkpoint:
    if isinstance(checkpoint, Checkpoint):
        return checkpoint
    return load_checkpoint(checkpoint)


def _fit_frames(frames: np.ndarray, arch: ArchConfig, resize: bool) -> np.ndarray:
    """(T, H, W, C) frames at the architecture's input size."""
    c, _, h, w = arch.input_shape
    if frames.shape[3] != c:
        raise ShapeError(f"clip has {frames.shape[3]} channels, architecture expects {c}")
    if tuple(frames.shape[1:3]) == (h, w):
        return frames
    if not resize:
        raise ShapeError(
            f"clip frames are {frames.shape[1]}x{frames.shape[2]}, architecture expects {h}x{w}"
        )
    return resize_bilinear(frames, h, w)


def load_chunks(
    dataset: SyntheticDataset,
    split: Optional[str],
    arch: ArchConfig,
    resize: bool = False,
) -> ChunkSet:
    """
    Chunks of ``split`` shaped for ``arch``.

    Raises:
        ShapeError: If clip frames differ from the architecture input and ``resize`` is off.
    """
    c, length, h, w = arch.input_shape
    chunks = dataset.chunks(split, chunk_len=length, size=(h, w) if resize else None)
    if chunks.frames.shape[1:] != (c, length, h, w):
        raise ShapeError(
            f"dataset chunks are {chunks.frames.shape[1:]}, architecture expects {arch.input_shape}"
        )
    return chunks


def batch_loss(
    params: ModelParams,
    arch: ArchConfig,
    frames: np.ndarray,
    labels: np.ndarray,
    use_fsam: bool = True,
) -> Tensor:
    """Negative Pearson loss of one batch of (N, C, L, H, W) chunks against (N, L) labels."""
    x = Tensor(frames, dtype=params.parameters()[0].dtype)
    pred = model_forward(x, params, arch, use_fsam=use_fsam)
    return ops.neg_pearson(pred, labels[:, 1:])


def predict(
    params: ModelParams,
    arch: ArchConfig,
    frames: np.ndarray,
    use_fsam: bool = True,
    batch_size: int = 4,
) -> np.ndarray:
    """Pulse estimates (K, L - 1) for (K, C, L, H, W) chunks, without recording gradients."""
    dtype = params.parameters()[0].dtype
    out = []
    with no_grad():
        for start in range(0, frames.shape[0], batch_size):
            x = Tensor(frames[start: start + batch_size], dtype=dtype)
            out.append(model_forward(x, params, arch, use_fsam=use_fsam).numpy())
    return np.concatenate(out).astype(np.float64)


def _finite_grads(params: ModelParams) -> Optional[str]:
    for name, p in params.named().items():
        if p.grad is not None and not np.isfinite(p.grad).all():
            return name
    return None


def train(
    cfg: TrainConfig,
    arch: Optional[ArchConfig] = None,
    dataset: Union[SyntheticDataset, PathLike, None] = None,
) -> RunManifest:
    """
    Train a model on the ``train`` split and write the run directory.

    Args:
        cfg: Training settings.
        arch: Architecture; defaults to the one ``cfg.arch`` names.
        dataset: Dataset or its path; defaults to ``cfg.dataset``.

    Returns:
        The run manifest (also written to ``cfg.out_dir``).

    Raises:
        TrainingError: If a non-finite value appears; the message names the
            first offending op, the epoch and the step.
        ShapeError: If clip frames do not fit the architecture and resizing is off.
    """
    started = time.perf_counter()
    arch = arch or resolve_arch(cfg)
    arch.validate()
    data = _open_dataset(dataset if dataset is not None else cfg.dataset)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    chunks = load_chunks(data, "train", arch, resize=cfg.resize_to_arch)
    dtype = np.dtype(cfg.dtype)
    params = param_init(arch, cfg.seed, dtype=dtype)
    optimizer = Adam.from_config(cfg)
    shuffle_rng = np.random.default_rng([cfg.seed, 1])

    n = len(chunks)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch
    logger.info(
        "Training on %d chunks: %d epochs x %d steps, %d parameters",
        n, cfg.epochs, steps_per_epoch, params.count(),
    )

    log_rows: List[Dict[str, float]] = []
    epoch_losses: List[float] = []
    step = 0
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(n)
        losses = []
        lr = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start: start + cfg.batch_size]
            lr = one_cycle_lr(step, total_steps, cfg)
            params.zero_grad()
            try:
                with Tape() as tape:
                    loss = batch_loss(params, arch, chunks.frames[idx], chunks.labels[idx], cfg.use_fsam)
                    tape.backward(loss)
            except NonFiniteError as exc:
                raise TrainingError(
                    f"non-finite value in op '{exc.op}' at epoch {epoch} step {step}"
                ) from exc
            bad = _finite_grads(params)
            if bad is not None:
                raise TrainingError(f"non-finite gradient for {bad} at epoch {epoch} step {step}")
            value = loss.item()
            params = optimizer.step(params, lr)
            losses.append(value)
            logger.debug("epoch %d step %d: loss=%.6f lr=%.3g", epoch, step, value, lr)
            step += 1
        mean_loss = float(np.mean(losses))
        epoch_losses.append(mean_loss)
        log_rows.append({"epoch": epoch, "loss": mean_loss, "lr": lr})
        logger.info("Epoch %d/%d: loss=%.4f lr=%.3g", epoch + 1, cfg.epochs, mean_loss, lr)

    config_snapshot = cfg.to_dict()
    config_snapshot["arch"] = arch.to_dict()
    config_snapshot["dataset"] = str(data.root)

    checkpoint_path = save_checkpoint(
        out_dir / CHECKPOINT_FILE,
        params,
        arch,
        extra={"use_fsam": cfg.use_fsam, "epochs": cfg.epochs, "dtype": cfg.dtype},
    )
    write_provenance_metadata(checkpoint_path, "checkpoint", "train", {"seed": cfg.seed})
    loss_log = export_run_report(
        pd.DataFrame(log_rows, columns=LOSS_LOG_COLUMNS), out_dir / LOSS_LOG_FILE, format="csv"
    )
    write_provenance_metadata(loss_log, "report", "train", {"seed": cfg.seed})

    metrics_path = None
    if cfg.evaluate:
        if data.split("test"):
            evaluate(
                Checkpoint(arch, params),
                data,
                use_fsam=cfg.use_fsam,
                out_dir=out_dir,
                resize=cfg.resize_to_arch,
                batch_size=cfg.batch_size,
            )
            metrics_path = str(out_dir / "metrics.json")
        else:
            logger.warning("Dataset %s has no test clips; skipping evaluation", data.root)

    manifest = RunManifest(
        config=config_snapshot,
        seed=cfg.seed,
        epoch_losses=epoch_losses,
        checkpoint=checkpoint_path,
        metrics=metrics_path,
        loss_log=loss_log,
        wall_clock_s=time.perf_counter() - started,
    )
    write_run_manifest(manifest, out_dir)
    return manifest


def evaluate_predictions(
    predictions: np.ndarray,
    labels: np.ndarray,
    fs: float = DEFAULT_FS,
) -> Tuple[MetricsReport, pd.DataFrame]:
    """
    Score (K, L - 1) predictions against (K, L) chunk labels.

    Returns:
        The summary report and the per-chunk table.
    """
    preds = np.asarray(predictions, dtype=np.float64)
    targets = np.asarray(labels, dtype=np.float64)[:, 1:]
    if preds.shape != targets.shape:
        raise ShapeError(f"predictions {preds.shape} do not match labels {targets.shape}")
    chunks = chunk_metrics(list(zip(preds, targets)), fs)
    return summarize_chunks(chunks), chunks


def evaluate(
    checkpoint: Union[Checkpoint, PathLike],
    dataset: Union[SyntheticDataset, PathLike],
    use_fsam: bool = True,
    split: Optional[str] = "test",
    out_dir: Optional[PathLike] = None,
    resize: bool = False,
    batch_size: int = 4,
) -> MetricsReport:
    """
    Evaluate a checkpoint on one split of a dataset.

    With ``out_dir`` set, ``metrics.json``, ``metrics.csv`` and
    ``metrics_chunks.csv`` are written there.

    Raises:
        ShapeError: If the dataset frames do not fit the checkpoint's architecture.
        SignalError: If the split yields fewer than two chunks.
    """
    ckpt = _open_checkpoint(checkpoint)
    data = _open_dataset(dataset)
    chunks = load_chunks(data, split, ckpt.arch, resize=resize)
    preds = predict(ckpt.params, ckpt.arch, chunks.frames, use_fsam=use_fsam, batch_size=batch_size)
    report, table = evaluate_predictions(preds, chunks.labels, data.sampling_rate())
    logger.info(
        "Evaluated %d chunks (fsam=%s): MAE=%.3f MACC=%.3f",
        report.n_chunks, use_fsam, report.mae_hr, report.macc,
    )
    if out_dir is not None:
        written = write_metrics(report, table, out_dir)
        write_provenance_metadata(written["json"], "report", "evaluate", {"use_fsam": use_fsam})
    return report


def infer(
    checkpoint: Union[Checkpoint, PathLike],
    frames: Union[FramesFile, PathLike],
    use_fsam: bool = True,
    fs: float = DEFAULT_FS,
    resize: bool = False,
) -> pd.DataFrame:
    """
    rPPG trace of a whole clip.

    The clip is cut into non-overlapping chunks (trailing frames dropped) and the
    per-chunk estimates are concatenated. Value j of chunk k belongs to the
    difference ending at frame ``k * L + j + 1``.

    Returns:
        DataFrame with ``time_s``, ``chunk`` and ``rppg`` columns.
    """
    ckpt = _open_checkpoint(checkpoint)
    clip = frames if isinstance(frames, FramesFile) else read_frames(frames)
    arr = _fit_frames(clip.frames, ckpt.arch, resize)
    length = ckpt.arch.frames
    chunks = chunk_frames(arr, length)
    preds = predict(ckpt.params, ckpt.arch, chunks, use_fsam=use_fsam)
    k = preds.shape[0]
    frame_index = (np.arange(k)[:, None] * length + np.arange(1, length)[None, :]).ravel()
    return pd.DataFrame(
        {
            "time_s": frame_index / fs,
            "chunk": np.repeat(np.arange(k), length - 1),
            "rppg": preds.ravel(),
        }
    )


def attention_maps(
    checkpoint: Union[Checkpoint, PathLike],
    frames: Union[FramesFile, PathLike],
    labels: Union[LabelFile, np.ndarray],
    use_fsam: bool = True,
    chunk: int = 0,
    resize: bool = False,
) -> Dict[str, np.ndarray]:
    """
    Cosine maps between the embedding voxels and the chunk's label trace.

    Returns:
        ``{"embedding": (kappa, alpha, beta)}`` plus ``"attended"`` when the
        attention block is used.

    Raises:
        ShapeError: If ``chunk`` is out of range or the frames do not fit.
    """
    ckpt = _open_checkpoint(checkpoint)
    clip = frames if isinstance(frames, FramesFile) else read_frames(frames)
    lab = labels.labels if isinstance(labels, LabelFile) else np.asarray(labels)
    arr = _fit_frames(clip.frames, ckpt.arch, resize)
    length = ckpt.arch.frames
    chunks = chunk_frames(arr, length)
    if not 0 <= chunk < chunks.shape[0]:
        raise ShapeError(f"chunk {chunk} outside 0..{chunks.shape[0] - 1}")
    if lab.shape[0] < (chunk + 1) * length:
        raise ShapeError(f"{lab.shape[0]} labels do not cover chunk {chunk}")
    target = zscore(lab[chunk * length: (chunk + 1) * length].astype(np.float64))[1:]

    taps: Dict[str, Tensor] = {}
    dtype = ckpt.params.parameters()[0].dtype
    with no_grad():
        model_forward(Tensor(chunks[chunk: chunk + 1], dtype=dtype), ckpt.params, ckpt.arch, use_fsam, taps)
    maps = {"embedding": cosine_attention_map(taps["embedding"].data[0], target)}
    if use_fsam:
        maps["attended"] = cosine_attention_map(taps["attended"].data[0], target)
    return maps


def _cell_name(mapping: str, rank: int, steps: int) -> str:
    return f"mapping-{mapping}_rank-{rank}_steps-{steps}"


def run_sweep(
    cfg: TrainConfig,
    out_dir: PathLike,
    mappings: Optional[Sequence[str]] = None,
    ranks: Optional[Sequence[int]] = None,
    steps: Optional[Sequence[int]] = None,
    arch: Optional[ArchConfig] = None,
    dataset: Union[SyntheticDataset, PathLike, None] = None,
) -> pd.DataFrame:
    """
    Train and evaluate one model per (mapping, rank, steps) cell.

    Unset axes keep the architecture's value. Every cell gets its own run
    directory under ``out_dir``; the summary table is written to
    ``sweep_summary.csv``.
    """
    base = arch or resolve_arch(cfg)
    data = _open_dataset(dataset if dataset is not None else cfg.dataset)
    if not data.split("test"):
        raise ConfigError(f"dataset {data.root} has no test clips to score sweep cells on")
    out = Path(out_dir)
    mapping_axis = list(mappings) if mappings else [base.fsam.mapping.variant]
    rank_axis = list(ranks) if ranks else [base.fsam.nmf.rank]
    steps_axis = list(steps) if steps else [base.fsam.nmf.steps]

    rows = []
    for mapping, rank, n_steps in product(mapping_axis, rank_axis, steps_axis):
        cell_arch = apply_overrides(base, rank=rank, steps=n_steps, mapping=mapping)
        variant = cell_arch.fsam.mapping.variant
        name = _cell_name(variant, rank, n_steps)
        logger.info("Sweep cell %s", name)
        cell_cfg = replace(cfg, arch=cell_arch.to_dict(), out_dir=str(out / name), evaluate=True, use_fsam=True)
        manifest = train(cell_cfg, arch=cell_arch, dataset=data)
        report = read_metrics(manifest.metrics)
        row = {
            "cell": name,
            "mapping": variant,
            "rank": rank,
            "steps": n_steps,
            "final_loss": manifest.epoch_losses[-1] if manifest.epoch_losses else float("nan"),
        }
        row.update(report.to_dict())
        rows.append(row)

    summary = pd.DataFrame(rows)
    export_run_report(summary, out / SWEEP_SUMMARY_FILE, format="csv")
    return summary


__all__ = [
    "CHECKPOINT_FILE",
    "LOSS_LOG_FILE",
    "SWEEP_SUMMARY_FILE",
    "load_chunks",
    "batch_loss",
    "predict",
    "train",
    "evaluate_predictions",
    "evaluate",
    "infer",
    "attention_maps",
    "run_sweep",
]
