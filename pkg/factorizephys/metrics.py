"""
Heart-rate evaluation metrics with standard errors, and report export.

Per-chunk heart rates come from ``estimate_hr_fft`` on bandpassed estimates and
ground truth; the summary is MAE, RMSE, MAPE, Pearson correlation of the HR
pairs, SNR and MACC, each with a standard error.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterable, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from factorizephys.errors import SignalError
from factorizephys.signals import (
    DEFAULT_FS,
    TraceLike,
    as_trace,
    bandpass,
    estimate_hr_fft,
    macc,
    snr_db,
)

logger = logging.getLogger(__name__)

CHUNK_COLUMNS = ["chunk", "hr_est", "hr_gt", "abs_err", "snr_db", "macc"]


@dataclass
class MetricsReport:
    """Aggregate metrics over ``n_chunks`` evaluation chunks; every value has an ``_se`` companion."""

    mae_hr: float
    mae_hr_se: float
    rmse_hr: float
    rmse_hr_se: float
    mape_hr: float
    mape_hr_se: float
    corr_hr: float
    corr_hr_se: float
    snr_db: float
    snr_db_se: float
    macc: float
    macc_se: float
    n_chunks: int

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([self.to_dict()])

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "MetricsReport":
        return cls(**{k: data[k] for k in cls.__dataclass_fields__})


def _sem(values: np.ndarray) -> float:
    return float(np.std(values, ddof=1) / np.sqrt(len(values)))


def _hr_correlation(est: np.ndarray, gt: np.ndarray) -> float:
    if np.array_equal(est, gt):
        return 1.0
    ec = est - est.mean()
    gc = gt - gt.mean()
    denom = np.sqrt((ec * ec).sum() * (gc * gc).sum())
    if denom == 0:
        return 0.0
    return float(np.clip((ec * gc).sum() / denom, -1.0, 1.0))


def summarize_chunks(chunks: pd.DataFrame) -> MetricsReport:
    """
    Reduce a per-chunk table (columns ``hr_est``, ``hr_gt``, ``snr_db``, ``macc``) to a report.

    Standard errors: sample std / sqrt(n) for MAE, MAPE, SNR and MACC;
    ``sqrt(std(squared errors) / sqrt(n))`` for RMSE; ``(1 - r^2) / sqrt(n - 3)``
    for the correlation when n > 3, else 0.

    Raises:
        SignalError: With fewer than two chunks.
    """
    n = len(chunks)
    if n < 2:
        raise SignalError(f"need at least 2 chunks for standard errors, got {n}")
    est = chunks["hr_est"].to_numpy(dtype=np.float64)
    gt = chunks["hr_gt"].to_numpy(dtype=np.float64)
    err = est - gt
    abs_err = np.abs(err)
    sq_err = err * err
    pct_err = abs_err / gt * 100.0
    snr = chunks["snr_db"].to_numpy(dtype=np.float64)
    mac = chunks["macc"].to_numpy(dtype=np.float64)
    corr = _hr_correlation(est, gt)

    return MetricsReport(
        mae_hr=float(abs_err.mean()),
        mae_hr_se=_sem(abs_err),
        rmse_hr=float(np.sqrt(sq_err.mean())),
        rmse_hr_se=float(np.sqrt(np.std(sq_err, ddof=1) / np.sqrt(n))),
        mape_hr=float(pct_err.mean()),
        mape_hr_se=_sem(pct_err),
        corr_hr=corr,
        corr_hr_se=float((1.0 - corr * corr) / np.sqrt(n - 3)) if n > 3 else 0.0,
        snr_db=float(snr.mean()),
        snr_db_se=_sem(snr),
        macc=float(mac.mean()),
        macc_se=_sem(mac),
        n_chunks=n,
    )


def chunk_metrics(
    pairs: Iterable[Tuple[TraceLike, TraceLike]],
    fs: float = DEFAULT_FS,
) -> pd.DataFrame:
    """
    Per-chunk heart rates, absolute error, SNR and MACC.

    Both signals of a pair are bandpassed before the heart rate is estimated;
    SNR scores the estimate against the ground-truth rate.
    """
    rows = []
    for i, (est, gt) in enumerate(pairs):
        est_t, gt_t = as_trace(est, fs), as_trace(gt, fs)
        hr_est = estimate_hr_fft(bandpass(est_t))
        hr_gt = estimate_hr_fft(bandpass(gt_t))
        rows.append(
            {
                "chunk": i,
                "hr_est": hr_est,
                "hr_gt": hr_gt,
                "abs_err": abs(hr_est - hr_gt),
                "snr_db": snr_db(est_t, hr_gt),
                "macc": macc(est_t, gt_t),
            }
        )
        logger.debug("chunk %d: hr_est=%.2f hr_gt=%.2f", i, hr_est, hr_gt)
    return pd.DataFrame(rows, columns=CHUNK_COLUMNS)


def aggregate_metrics(
    pairs: Sequence[Tuple[TraceLike, TraceLike]],
    fs: float = DEFAULT_FS,
) -> MetricsReport:
    """
    Evaluate (estimate, ground truth) chunk pairs into a MetricsReport.

    Raises:
        SignalError: With fewer than two chunks.
    """
    if len(pairs) < 2:
        raise SignalError(f"need at least 2 chunks for standard errors, got {len(pairs)}")
    return summarize_chunks(chunk_metrics(pairs, fs))


def export_run_report(
    report: pd.DataFrame,
    output_path: Union[str, Path],
    format: str = "csv",
) -> str:
    """
    Export a report table to CSV or JSON.

    Args:
        report: Table to save (a one-row metrics summary, per-chunk rows, a loss log).
        output_path: File path, or a directory in which a timestamped
            ``run_report_<UTC>.<ext>`` file is created.
        format: ``'csv'`` or ``'json'`` (records orientation).

    Returns:
        Path to the exported file.

    Example:
        >>> export_run_report(report.to_frame(), './runs/eval/metrics.json', format='json')
    """
    if format not in ("csv", "json"):
        raise ValueError(f"format must be 'csv' or 'json', got {format!r}")
    output_path_obj = Path(output_path)

    if output_path_obj.is_dir() or (not output_path_obj.suffix and not output_path_obj.exists()):
        output_path_obj.mkdir(parents=True, exist_ok=True)
        timestamp = datetime.now(timezone.utc).strftime("%Y%m%d_%H%M%S")
        output_path_obj = output_path_obj / f"run_report_{timestamp}.{format}"
    else:
        output_path_obj.parent.mkdir(parents=True, exist_ok=True)

    if format == "json":
        report.to_json(output_path_obj, orient="records", indent=2, double_precision=12)
    else:
        report.to_csv(output_path_obj, index=False)

    return str(output_path_obj)


def write_metrics(
    report: MetricsReport,
    chunks: pd.DataFrame,
    out_dir: Union[str, Path],
    stem: str = "metrics",
) -> Dict[str, str]:
    """Write ``<stem>.json``, ``<stem>.csv`` and ``<stem>_chunks.csv`` into ``out_dir``."""
    out = Path(out_dir)
    frame = report.to_frame()
    return {
        "json": export_run_report(frame, out / f"{stem}.json", format="json"),
        "csv": export_run_report(frame, out / f"{stem}.csv", format="csv"),
        "chunks": export_run_report(chunks, out / f"{stem}_chunks.csv", format="csv"),
    }


def read_metrics(path: Union[str, Path]) -> MetricsReport:
    """Load a report written by ``write_metrics`` (JSON or CSV)."""
    p = Path(path)
    frame = pd.read_json(p, orient="records") if p.suffix == ".json" else pd.read_csv(p)
    row = frame.iloc[0].to_dict()
    row["n_chunks"] = int(row["n_chunks"])
    return MetricsReport.from_dict({k: (v if k == "n_chunks" else float(v)) for k, v in row.items()})


__all__ = [
    "CHUNK_COLUMNS",
    "MetricsReport",
    "summarize_chunks",
    "chunk_metrics",
    "aggregate_metrics",
    "export_run_report",
    "write_metrics",
    "read_metrics",
]
