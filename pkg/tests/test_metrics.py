"""Tests for heart-rate metrics and report export."""

import numpy as np
import pandas as pd
import pytest

from factorizephys.errors import SignalError
from factorizephys.metrics import (
    CHUNK_COLUMNS,
    MetricsReport,
    aggregate_metrics,
    chunk_metrics,
    export_run_report,
    read_metrics,
    summarize_chunks,
    write_metrics,
)


def make_table(est, gt, snr=None, mac=None):
    n = len(est)
    return pd.DataFrame(
        {
            "hr_est": est,
            "hr_gt": gt,
            "snr_db": np.zeros(n) if snr is None else snr,
            "macc": np.ones(n) if mac is None else mac,
        }
    )


def tone(freq, n=160, fs=30.0):
    return np.sin(2 * np.pi * freq * np.arange(n) / fs)


def test_identical_estimates():
    """Test perfect estimates give zero error and unit correlation."""
    gt = np.array([60.0, 72.0, 90.0, 110.0])
    report = summarize_chunks(make_table(gt, gt))
    assert report.mae_hr == report.rmse_hr == report.mape_hr == 0.0
    assert report.corr_hr == 1.0
    assert report.n_chunks == 4


def test_constant_offset():
    """Test a +6 BPM offset gives MAE 6 and correlation 1."""
    gt = np.array([55.0, 70.0, 85.0, 100.0, 130.0])
    report = summarize_chunks(make_table(gt + 6.0, gt))
    assert report.mae_hr == pytest.approx(6.0)
    assert report.rmse_hr == pytest.approx(6.0)
    assert report.mae_hr_se == pytest.approx(0.0, abs=1e-12)
    assert report.corr_hr == pytest.approx(1.0)


def naive_report(est, gt, snr, mac):
    n = len(est)
    errs = [e - g for e, g in zip(est, gt)]

    def mean(xs):
        return sum(xs) / len(xs)

    def sem(xs):
        m = mean(xs)
        return (sum((x - m) ** 2 for x in xs) / (len(xs) - 1)) ** 0.5 / n ** 0.5

    abs_err = [abs(e) for e in errs]
    sq = [e * e for e in errs]
    pct = [abs(e) / g * 100 for e, g in zip(errs, gt)]
    me, mg = mean(est), mean(gt)
    cov = sum((a - me) * (b - mg) for a, b in zip(est, gt))
    corr = cov / (sum((a - me) ** 2 for a in est) * sum((b - mg) ** 2 for b in gt)) ** 0.5
    return {
        "mae_hr": mean(abs_err),
        "mae_hr_se": sem(abs_err),
        "rmse_hr": mean(sq) ** 0.5,
        "rmse_hr_se": ((sum((x - mean(sq)) ** 2 for x in sq) / (n - 1)) ** 0.5 / n ** 0.5) ** 0.5,
        "mape_hr": mean(pct),
        "mape_hr_se": sem(pct),
        "corr_hr": corr,
        "corr_hr_se": (1 - corr * corr) / (n - 3) ** 0.5,
        "snr_db": mean(snr),
        "snr_db_se": sem(snr),
        "macc": mean(mac),
        "macc_se": sem(mac),
    }


def test_matches_naive_reference():
    """Test the vectorized summary against a loop implementation."""
    rng = np.random.default_rng(0)
    for _ in range(20):
        n = int(rng.integers(5, 40))
        gt = rng.uniform(45, 180, size=n)
        est = gt + rng.normal(0, 8, size=n)
        snr = rng.normal(5, 3, size=n)
        mac = rng.uniform(0, 1, size=n)
        report = summarize_chunks(make_table(est, gt, snr, mac)).to_dict()
        for key, value in naive_report(list(est), list(gt), list(snr), list(mac)).items():
            assert report[key] == pytest.approx(value, abs=1e-9), key


def test_correlation_se_small_n():
    """Test the correlation SE is 0 with three or fewer chunks."""
    report = summarize_chunks(make_table([60.0, 75.0, 80.0], [62.0, 70.0, 85.0]))
    assert report.corr_hr_se == 0.0
    assert -1.0 <= report.corr_hr <= 1.0


def test_constant_ground_truth_correlation_is_zero():
    """Test a constant HR vector gives correlation 0."""
    report = summarize_chunks(make_table([60.0, 70.0, 80.0], [72.0, 72.0, 72.0]))
    assert report.corr_hr == 0.0


def test_too_few_chunks():
    """Test standard errors need two chunks."""
    with pytest.raises(SignalError):
        summarize_chunks(make_table([60.0], [60.0]))
    with pytest.raises(SignalError):
        aggregate_metrics([(tone(1.2), tone(1.2))])


def test_aggregate_ground_truth_against_itself():
    """Test the oracle path gives zero error and full MACC."""
    pairs = [(tone(f), tone(f)) for f in (1.0, 1.2, 1.5, 2.0)]
    report = aggregate_metrics(pairs)
    assert report.mae_hr == 0.0
    assert report.macc == pytest.approx(1.0, abs=1e-6)
    assert report.corr_hr == 1.0
    assert report.mae_hr_se >= 0 and report.macc_se >= 0


def test_chunk_metrics_table():
    """Test the per-chunk table columns and rates."""
    table = chunk_metrics([(tone(1.2), tone(1.2)), (tone(2.0), tone(1.5))])
    assert list(table.columns) == CHUNK_COLUMNS
    assert table.loc[0, "hr_gt"] == pytest.approx(72.0, abs=1.0)
    assert table.loc[1, "abs_err"] == pytest.approx(30.0, abs=2.0)


def test_write_and_read_metrics(tmp_path):
    """Test JSON and CSV reports reload to the same values."""
    gt = np.array([60.0, 72.0, 90.0, 110.0])
    table = make_table(gt + np.array([1.0, -2.0, 0.5, 3.0]), gt)
    report = summarize_chunks(table)
    paths = write_metrics(report, table, tmp_path / "eval")
    for key in ("json", "csv"):
        loaded = read_metrics(paths[key])
        assert loaded.n_chunks == 4
        for name, value in report.to_dict().items():
            assert getattr(loaded, name) == pytest.approx(value, rel=1e-9), name
    assert pd.read_csv(paths["chunks"]).shape == (4, 4)


def test_reports_are_byte_identical(tmp_path):
    """Test writing the same report twice gives identical bytes."""
    gt = np.array([60.0, 72.0, 90.0])
    table = make_table(gt + 1.0, gt)
    report = summarize_chunks(table)
    a = write_metrics(report, table, tmp_path / "a")
    b = write_metrics(report, table, tmp_path / "b")
    for key in a:
        assert open(a[key], "rb").read() == open(b[key], "rb").read()


def test_export_run_report_to_directory(tmp_path):
    """Test a directory target gets a timestamped file name."""
    path = export_run_report(pd.DataFrame({"epoch": [1], "loss": [0.5]}), tmp_path / "logs", format="json")
    assert path.endswith(".json")
    assert "run_report_" in path


def test_export_run_report_bad_format(tmp_path):
    """Test unsupported formats are refused."""
    with pytest.raises(ValueError):
        export_run_report(pd.DataFrame({"a": [1]}), tmp_path / "x.txt", format="xml")


def test_report_dict_round_trip():
    """Test MetricsReport from_dict/to_dict."""
    report = summarize_chunks(make_table([60.0, 70.0, 81.0], [61.0, 72.0, 80.0]))
    assert MetricsReport.from_dict(report.to_dict()) == report
