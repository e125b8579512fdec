"""
Command-line interface for factorizephys.

Subcommands generate synthetic data, train and evaluate models, run inference,
factorize matrices, export attention maps, summarize architectures and sweep
attention settings. Failures print one JSON line to stderr:

    {"error": "ShapeError", "message": "..."}
"""

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

import numpy as np

from factorizephys.autodiff import Tensor
from factorizephys.config import (
    CONFIGS_DIR,
    TrainConfig,
    apply_overrides,
    load_arch_config,
    load_synth_config,
    load_train_config,
    resolve_arch,
    save_config,
)
from factorizephys.datasets import generate_dataset
from factorizephys.errors import FactorizePhysError
from factorizephys.formats import (
    export_labels_csv,
    read_labels,
    read_matrix_csv,
    write_attention_maps,
    write_matrix_csv,
)
from factorizephys.fsam import MAPPING_ALIASES
from factorizephys.metrics import export_run_report
from factorizephys.model import default_arch, param_count, parameter_table
from factorizephys.nmf import NmfConfig, factorize
from factorizephys.synth import SynthDatasetConfig
from factorizephys.training import attention_maps, evaluate, infer, run_sweep, train

logger = logging.getLogger(__name__)

USAGE_EXIT = 2
RUNTIME_EXIT = 1


class JsonArgumentParser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors are a single JSON line."""

    def error(self, message):
        sys.stderr.write(json.dumps({"error": "UsageError", "message": message}) + "\n")
        sys.exit(USAGE_EXIT)


def _report_error(exc: BaseException) -> int:
    sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
    return RUNTIME_EXIT


def _configure_logging(verbosity: int) -> None:
    level = logging.WARNING
    if verbosity == 1:
        level = logging.INFO
    elif verbosity >= 2:
        level = logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", force=True)


def _arch_from_args(args, base=None):
    """Architecture named by ``--arch`` (or ``base``) with attention flags applied."""
    arch = base
    if getattr(args, "arch", None):
        arch = load_arch_config(args.arch)
    if arch is None:
        arch = default_arch()
    return apply_overrides(
        arch,
        rank=getattr(args, "rank", None),
        steps=getattr(args, "steps", None),
        mapping=getattr(args, "mapping", None),
        frame_depth=getattr(args, "frame_depth", None),
        residual=False if getattr(args, "no_residual", False) else None,
    )


def _train_config_from_args(args) -> TrainConfig:
    cfg = load_train_config(args.config) if args.config else TrainConfig()
    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.epochs is not None:
        updates["epochs"] = args.epochs
    if args.dataset:
        updates["dataset"] = args.dataset
    if args.out:
        updates["out_dir"] = args.out
    if args.no_fsam:
        updates["use_fsam"] = False
    if args.resize:
        updates["resize_to_arch"] = True
    if getattr(args, "no_eval", False):
        updates["evaluate"] = False
    return replace(cfg, **updates)


def cmd_synth(args):
    """Generate a synthetic dataset."""
    cfg = load_synth_config(args.config) if args.config else SynthDatasetConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.clips is not None:
        cfg = replace(cfg, clips=args.clips)
    out = args.out or "data/synth"

    print(f"Generating {cfg.clips} clips into {out}")
    dataset = generate_dataset(cfg, out)
    for record in dataset.records:
        if args.labels_csv:
            export_labels_csv(read_labels(dataset.root / record.labels), dataset.root / f"{record.clip_id}_labels.csv")
        print(f"  ✓ {record.clip_id}: {record.hr_bpm:.1f} BPM ({record.split})")
    print(f"\n✓ Dataset written: {Path(out) / 'dataset.json'}")


def cmd_train(args):
    """Train a model and write its run directory."""
    cfg = _train_config_from_args(args)
    arch = _arch_from_args(args, resolve_arch(cfg))
    print(f"Training {arch.name} for {cfg.epochs} epochs (seed {cfg.seed}, fsam={cfg.use_fsam})")
    manifest = train(cfg, arch=arch)
    save_config(replace(cfg, arch=arch.to_dict()), Path(cfg.out_dir) / "train_config.yaml")

    for epoch, loss in enumerate(manifest.epoch_losses, 1):
        print(f"  epoch {epoch}: loss {loss:.4f}")
    print(f"\n✓ Checkpoint: {manifest.checkpoint}")
    print(f"✓ Loss log: {manifest.loss_log}")
    if manifest.metrics:
        print(f"✓ Metrics: {manifest.metrics}")


def cmd_eval(args):
    """Evaluate a checkpoint on a dataset split."""
    split = None if args.split == "all" else args.split
    out = args.out or str(Path(args.checkpoint).parent)
    report = evaluate(
        args.checkpoint,
        args.dataset,
        use_fsam=not args.no_fsam,
        split=split,
        out_dir=out,
        resize=args.resize,
    )
    print(f"Evaluated {report.n_chunks} chunks (fsam={not args.no_fsam})")
    print(f"  MAE  {report.mae_hr:.3f} ± {report.mae_hr_se:.3f} BPM")
    print(f"  RMSE {report.rmse_hr:.3f} ± {report.rmse_hr_se:.3f} BPM")
    print(f"  MAPE {report.mape_hr:.3f} ± {report.mape_hr_se:.3f} %")
    print(f"  r    {report.corr_hr:.3f} ± {report.corr_hr_se:.3f}")
    print(f"  SNR  {report.snr_db:.3f} ± {report.snr_db_se:.3f} dB")
    print(f"  MACC {report.macc:.3f} ± {report.macc_se:.3f}")
    print(f"\n✓ Report written to {out}")


def cmd_infer(args):
    """Estimate the rPPG trace of one clip."""
    trace = infer(args.checkpoint, args.frames, use_fsam=not args.no_fsam, fs=args.fs, resize=args.resize)
    out = args.out or str(Path(args.frames).with_suffix(".rppg.csv"))
    path = export_run_report(trace, out, format="csv")
    print(f"✓ rPPG trace ({len(trace)} samples): {path}")


def cmd_factorize(args):
    """Factorize a nonnegative CSV matrix."""
    V = read_matrix_csv(args.matrix)
    cfg = NmfConfig(rank=args.rank or 1, steps=args.steps or 6, seed=args.seed or 0)
    fp, V_hat = factorize(Tensor(V, dtype=np.float64), cfg)
    recon = V_hat.numpy()
    objective = float(np.sum((V - recon) ** 2))
    norm = float(np.linalg.norm(V))
    relative = float(np.sqrt(objective) / norm) if norm > 0 else 0.0

    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    write_matrix_csv(out / "W.csv", fp.W)
    write_matrix_csv(out / "H.csv", fp.H)
    write_matrix_csv(out / "V_hat.csv", recon)
    result = {
        "rank": cfg.rank,
        "steps": cfg.steps,
        "shape": list(V.shape),
        "objective": objective,
        "relative_error": relative,
    }
    with open(out / "factorize.json", "w", encoding="utf-8") as f:
        json.dump(result, f, indent=2)
    print(f"✓ Factorized {V.shape[0]}x{V.shape[1]} at rank {cfg.rank} in {cfg.steps} steps")
    print(f"  objective {objective:.3e}, relative error {relative:.3e}")
    print(f"  W, H, V_hat written to {out}")


def cmd_attnmap(args):
    """Export cosine attention maps for one chunk of a clip."""
    labels = read_labels(args.labels)
    maps = attention_maps(
        args.checkpoint,
        args.frames,
        labels,
        use_fsam=not args.no_fsam,
        chunk=args.chunk,
        resize=args.resize,
    )
    out = args.out or "attnmaps"
    for name, stack in maps.items():
        written = write_attention_maps(stack, out, prefix=name, scale=args.scale)
        print(f"✓ {name}: {len(written['tiles'])} tiles, mosaic {written['mosaic'][0]}")


def cmd_summary(args):
    """Print per-layer shapes and parameter counts."""
    base = load_train_config(args.config) if args.config else None
    arch = _arch_from_args(args, resolve_arch(base) if base else None)
    table = parameter_table(arch)
    print(f"Architecture: {arch.name}, input {'x'.join(str(d) for d in arch.input_shape)}")
    print(table.to_string(index=False))
    total = param_count(arch)
    print(f"\nTotal parameters: {total} (attention block {total - param_count(arch, include_fsam=False)})")
    if args.out:
        path = export_run_report(table, args.out, format="csv")
        print(f"✓ Table written: {path}")


def cmd_sweep(args):
    """Train and evaluate one model per mapping/rank/steps cell."""
    cfg = _train_config_from_args(args)
    arch = _arch_from_args(args, resolve_arch(cfg))
    out = args.out or "runs/sweep"
    summary = run_sweep(
        cfg,
        out,
        mappings=args.mapping_list,
        ranks=args.rank_list,
        steps=args.steps_list,
        arch=arch,
    )
    print("\n" + "=" * 60)
    print("SWEEP SUMMARY")
    print("=" * 60)
    print(summary[["cell", "final_loss", "mae_hr", "macc"]].to_string(index=False))
    print(f"\n✓ Sweep complete: {Path(out) / 'sweep_summary.csv'}")


def _add_common(p, config_help: str) -> None:
    p.add_argument("--config", help=config_help)
    p.add_argument("--seed", type=int, help="Override the seed")
    p.add_argument("--out", help="Output path")
    p.add_argument("-v", "--verbose", action="count", default=0, help="-v for INFO, -vv for DEBUG")


def _add_attention_flags(p, grid: bool = False) -> None:
    p.add_argument("--arch", help="Architecture YAML file")
    if grid:
        p.add_argument("--rank", dest="rank_list", type=int, nargs="+", help="Ranks to sweep")
        p.add_argument("--steps", dest="steps_list", type=int, nargs="+", help="Step counts to sweep")
        p.add_argument(
            "--mapping", dest="mapping_list", nargs="+", choices=sorted(MAPPING_ALIASES), help="Mappings to sweep"
        )
    else:
        p.add_argument("--rank", type=int, help="NMF rank")
        p.add_argument("--steps", type=int, help="NMF multiplicative-update steps")
        p.add_argument("--mapping", choices=sorted(MAPPING_ALIASES), help="Embedding-to-matrix mapping")
    p.add_argument("--frame-depth", type=int, help="Channel block size for the tsm mapping")
    p.add_argument("--no-residual", action="store_true", help="Drop the residual path around attention")


def _add_training_flags(p) -> None:
    p.add_argument("--dataset", help="Dataset directory or dataset.json")
    p.add_argument("--epochs", type=int, help="Override the epoch count")
    p.add_argument("--no-fsam", action="store_true", help="Train without the attention block")
    p.add_argument("--resize", action="store_true", help="Resize clips to the architecture input")


def build_parser() -> argparse.ArgumentParser:
    parser = JsonArgumentParser(
        prog="factorizephys",
        description="factorizephys - factorized self-attention for rPPG estimation",
    )
    subparsers = parser.add_subparsers(dest="command", help="Available commands")

    synth_parser = subparsers.add_parser("synth", help="Generate a synthetic dataset")
    _add_common(synth_parser, "Synthetic dataset YAML")
    synth_parser.add_argument("--clips", type=int, help="Override the number of clips")
    synth_parser.add_argument("--labels-csv", action="store_true", help="Also write label traces as CSV")
    synth_parser.set_defaults(func=cmd_synth)

    train_parser = subparsers.add_parser("train", help="Train a model")
    _add_common(train_parser, "Training YAML")
    _add_training_flags(train_parser)
    _add_attention_flags(train_parser)
    train_parser.add_argument("--no-eval", action="store_true", help="Skip held-out evaluation")
    train_parser.set_defaults(func=cmd_train)

    eval_parser = subparsers.add_parser("eval", help="Evaluate a checkpoint")
    _add_common(eval_parser, "Unused; accepted for symmetry")
    eval_parser.add_argument("checkpoint", help="Checkpoint file")
    eval_parser.add_argument("--dataset", required=True, help="Dataset directory or dataset.json")
    eval_parser.add_argument("--split", choices=["train", "test", "all"], default="test")
    eval_parser.add_argument("--no-fsam", action="store_true", help="Skip the attention block")
    eval_parser.add_argument("--resize", action="store_true", help="Resize clips to the architecture input")
    eval_parser.set_defaults(func=cmd_eval)

    infer_parser = subparsers.add_parser("infer", help="Estimate the rPPG trace of a clip")
    _add_common(infer_parser, "Unused; accepted for symmetry")
    infer_parser.add_argument("checkpoint", help="Checkpoint file")
    infer_parser.add_argument("frames", help="FPV1 clip")
    infer_parser.add_argument("--fs", type=float, default=30.0, help="Frame rate in Hz")
    infer_parser.add_argument("--no-fsam", action="store_true", help="Skip the attention block")
    infer_parser.add_argument("--resize", action="store_true", help="Resize frames to the architecture input")
    infer_parser.set_defaults(func=cmd_infer)

    factorize_parser = subparsers.add_parser("factorize", help="Factorize a nonnegative CSV matrix")
    _add_common(factorize_parser, "Unused; accepted for symmetry")
    factorize_parser.add_argument("matrix", help="Headerless CSV matrix")
    factorize_parser.add_argument("--rank", type=int, help="Factorization rank (default: 1)")
    factorize_parser.add_argument("--steps", type=int, help="Multiplicative updates (default: 6)")
    factorize_parser.set_defaults(func=cmd_factorize)

    attn_parser = subparsers.add_parser("attnmap", help="Export attention maps")
    _add_common(attn_parser, "Unused; accepted for symmetry")
    attn_parser.add_argument("checkpoint", help="Checkpoint file")
    attn_parser.add_argument("frames", help="FPV1 clip")
    attn_parser.add_argument("labels", help="FPL1 label trace")
    attn_parser.add_argument("--chunk", type=int, default=0, help="Chunk index (default: 0)")
    attn_parser.add_argument("--scale", type=int, default=8, help="Pixel scale of the PGM tiles")
    attn_parser.add_argument("--no-fsam", action="store_true", help="Only export the embedding maps")
    attn_parser.add_argument("--resize", action="store_true", help="Resize frames to the architecture input")
    attn_parser.set_defaults(func=cmd_attnmap)

    summary_parser = subparsers.add_parser("summary", help="Show layer shapes and parameter counts")
    _add_common(summary_parser, "Training YAML whose architecture to show")
    _add_attention_flags(summary_parser)
    summary_parser.set_defaults(func=cmd_summary)

    sweep_parser = subparsers.add_parser("sweep", help="Sweep mappings, ranks and steps")
    _add_common(sweep_parser, "Training YAML")
    _add_training_flags(sweep_parser)
    _add_attention_flags(sweep_parser, grid=True)
    sweep_parser.set_defaults(func=cmd_sweep)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """
    Main entry point for the CLI.
    """
    parser = build_parser()
    args = parser.parse_args(argv)

    if not hasattr(args, "func"):
        parser.print_help()
        return 0

    _configure_logging(args.verbose)
    logger.debug("Configs directory: %s", CONFIGS_DIR)
    try:
        args.func(args)
    except (FactorizePhysError, OSError, ValueError, KeyError) as exc:
        return _report_error(exc)
    return 0


if __name__ == "__main__":
    sys.exit(main())
