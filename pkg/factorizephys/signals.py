"""
Pulse-signal utilities: the Pearson training loss, FFT-mask bandpass, FFT-peak
heart rate, SNR, maximum amplitude of cross-correlation (MACC) and cosine
attention maps.

All spectra are computed with ``scipy.signal.periodogram`` on the mean-removed
trace, zero-padded to four times the next power of two.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Tuple, Union

import numpy as np
import scipy.fft
import scipy.signal

from factorizephys import ops
from factorizephys.autodiff import Tensor
from factorizephys.errors import ShapeError, SignalError

DEFAULT_FS = 30.0
HR_BAND = (0.60, 3.30)
SNR_WINDOW_HZ = 0.1
SNR_CLAMP_DB = (-20.0, 60.0)
MACC_MAX_LAG_S = 1.0
ZERO_PAD_FACTOR = 4


@dataclass(frozen=True)
class SignalTrace:
    """A 1-D real trace sampled at ``fs`` Hz."""

    samples: np.ndarray
    fs: float = DEFAULT_FS

    def __post_init__(self) -> None:
        arr = np.asarray(self.samples, dtype=np.float64)
        if arr.ndim != 1:
            raise ShapeError(f"signal trace must be 1-D, got shape {arr.shape}")
        if not self.fs > 0:
            raise SignalError(f"sampling rate must be positive, got {self.fs}")
        object.__setattr__(self, "samples", arr)
        object.__setattr__(self, "fs", float(self.fs))

    def __len__(self) -> int:
        return int(self.samples.shape[0])

    @property
    def duration(self) -> float:
        return len(self) / self.fs


TraceLike = Union[SignalTrace, np.ndarray, Sequence[float]]


def as_trace(x: TraceLike, fs: float = DEFAULT_FS) -> SignalTrace:
    """Wrap a plain array as a trace; traces pass through unchanged."""
    return x if isinstance(x, SignalTrace) else SignalTrace(np.asarray(x), fs)


def to_traces(batch: np.ndarray, fs: float = DEFAULT_FS) -> list:
    """Split an ``(N, T)`` array into N traces."""
    arr = np.asarray(batch)
    if arr.ndim != 2:
        raise ShapeError(f"expected (N, T) signals, got {arr.shape}")
    return [SignalTrace(row, fs) for row in arr]


def zscore(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """
    Standardize to zero mean and unit (population) standard deviation.

    Raises:
        SignalError: If any slice along ``axis`` is constant.
    """
    arr = np.asarray(x, dtype=np.float64)
    std = arr.std(axis=axis, keepdims=True)
    if np.any(std == 0):
        raise SignalError("cannot standardize a constant signal")
    return (arr - arr.mean(axis=axis, keepdims=True)) / std


def neg_pearson_loss(r: Union[Tensor, TraceLike], g: TraceLike) -> Tensor:
    """
    ``1 - pearson(r, g)``, differentiable in ``r`` when ``r`` is a tensor on tape.

    Batched ``(N, T)`` inputs give the mean over rows.

    Raises:
        SignalError: On zero variance in either argument.
    """
    if isinstance(r, SignalTrace):
        r = Tensor(r.samples, dtype=np.float64)
    elif not isinstance(r, Tensor):
        r = Tensor(np.asarray(r), dtype=np.float64)
    target = g.samples if isinstance(g, SignalTrace) else np.asarray(g)
    return ops.neg_pearson(r, target)


def bandpass(x: TraceLike, lo: float = HR_BAND[0], hi: float = HR_BAND[1]) -> SignalTrace:
    """
    Zero-phase bandpass: zero every real-FFT bin outside ``[lo, hi]`` Hz.

    Raises:
        SignalError: If ``fs <= 2 * hi`` or the band is inverted.
    """
    trace = as_trace(x)
    if not 0 <= lo < hi:
        raise SignalError(f"invalid band [{lo}, {hi}] Hz")
    if trace.fs <= 2 * hi:
        raise SignalError(f"sampling rate {trace.fs} Hz too low for a {hi} Hz cutoff")
    n = len(trace)
    spectrum = scipy.fft.rfft(trace.samples)
    freqs = scipy.fft.rfftfreq(n, d=1.0 / trace.fs)
    spectrum[(freqs < lo) | (freqs > hi)] = 0
    return SignalTrace(scipy.fft.irfft(spectrum, n=n), trace.fs)


def _next_power_of_2(n: int) -> int:
    return 1 if n == 0 else 2 ** (int(n) - 1).bit_length()


def power_spectrum(x: TraceLike, window: str = "boxcar") -> Tuple[np.ndarray, np.ndarray]:
    """One-sided periodogram of the mean-removed trace with 4x zero padding."""
    trace = as_trace(x)
    nfft = ZERO_PAD_FACTOR * _next_power_of_2(len(trace))
    centered = trace.samples - trace.samples.mean()
    freqs, power = scipy.signal.periodogram(
        centered, fs=trace.fs, window=window, nfft=nfft, detrend=False
    )
    return freqs, power


def _band_mask(freqs: np.ndarray, lo: float, hi: float) -> np.ndarray:
    mask = (freqs >= lo) & (freqs <= hi)
    if not mask.any():
        raise SignalError(f"no spectral bins inside [{lo}, {hi}] Hz")
    return mask


def estimate_hr_fft(x: TraceLike, lo: float = HR_BAND[0], hi: float = HR_BAND[1]) -> float:
    """
    Heart rate in BPM from the strongest periodogram peak inside ``[lo, hi]`` Hz.

    Raises:
        SignalError: If the trace is shorter than two seconds or the band is empty.
    """
    trace = as_trace(x)
    if trace.duration < 2.0:
        raise SignalError(f"need at least 2 s of samples, got {trace.duration:.2f} s")
    freqs, power = power_spectrum(trace)
    mask = _band_mask(freqs, lo, hi)
    return float(60.0 * freqs[mask][np.argmax(power[mask])])


def snr_db(
    r: TraceLike,
    hr_gt: float,
    window: float = SNR_WINDOW_HZ,
    band: Tuple[float, float] = HR_BAND,
    clamp: Tuple[float, float] = SNR_CLAMP_DB,
) -> float:
    """
    Ratio of power near the reference rate and its first harmonic to the rest of the band.

    Power is taken from a Hann-windowed periodogram. Signal bins lie within
    ``window`` Hz of ``f`` or ``2 f`` (``f = hr_gt / 60``); noise bins are the
    remaining bins of ``band``. The result is clamped to ``clamp``; zero noise
    power returns the upper clamp.

    Raises:
        SignalError: If ``hr_gt`` lies outside ``band``.
    """
    lo, hi = band
    f_gt = hr_gt / 60.0
    if not lo <= f_gt <= hi:
        raise SignalError(f"reference heart rate {hr_gt} BPM outside [{lo}, {hi}] Hz")
    freqs, power = power_spectrum(r, window="hann")
    in_band = _band_mask(freqs, lo, hi)
    near = (np.abs(freqs - f_gt) <= window) | (np.abs(freqs - 2 * f_gt) <= window)
    p_signal = float(power[in_band & near].sum())
    p_noise = float(power[in_band & ~near].sum())
    if p_noise == 0:
        return float(clamp[1])
    if p_signal == 0:
        return float(clamp[0])
    return float(np.clip(10.0 * np.log10(p_signal / p_noise), *clamp))


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    ac = a - a.mean()
    bc = b - b.mean()
    denom = np.sqrt((ac * ac).sum() * (bc * bc).sum())
    return 0.0 if denom == 0 else float((ac * bc).sum() / denom)


def macc(
    r: TraceLike,
    g: TraceLike,
    max_lag_s: float = MACC_MAX_LAG_S,
    band: Tuple[float, float] = HR_BAND,
) -> float:
    """
    Maximum Pearson correlation over integer lags up to ``max_lag_s``, floored at 0.

    Both traces are bandpassed and z-scored first; each lag correlates the
    overlapping segments only.

    Raises:
        ShapeError: On unequal lengths.
        SignalError: On traces shorter than two seconds or with zero variance.
    """
    rt, gt = as_trace(r), as_trace(g)
    if len(rt) != len(gt):
        raise ShapeError(f"macc needs equal lengths, got {len(rt)} and {len(gt)}")
    if rt.duration < 2.0:
        raise SignalError("macc needs at least 2 s of samples")
    if np.ptp(rt.samples) == 0 or np.ptp(gt.samples) == 0:
        raise SignalError("macc undefined for a constant signal")
    a = zscore(bandpass(rt, *band).samples)
    b = zscore(bandpass(gt, *band).samples)
    n = len(a)
    max_lag = min(int(round(max_lag_s * rt.fs)), n - 2)
    best = 0.0
    for lag in range(-max_lag, max_lag + 1):
        if lag >= 0:
            corr = _pearson(a[lag:], b[: n - lag])
        else:
            corr = _pearson(a[: n + lag], b[-lag:])
        best = max(best, corr)
    return float(min(best, 1.0))


def cosine_attention_map(e: Union[Tensor, np.ndarray], g: TraceLike) -> np.ndarray:
    """
    ``|cos|`` between every voxel's temporal vector in ``e`` (kappa, tau, alpha, beta) and ``g``.

    Voxels whose temporal vector has zero norm map to 0.
    """
    emb = e.numpy() if isinstance(e, Tensor) else np.asarray(e)
    emb = emb.astype(np.float64)
    ref = g.samples if isinstance(g, SignalTrace) else np.asarray(g, dtype=np.float64)
    if emb.ndim != 4 or ref.shape != (emb.shape[1],):
        raise ShapeError(f"need e (kappa, tau, alpha, beta) and g (tau,), got {emb.shape} and {ref.shape}")
    dots = np.einsum("ctab,t->cab", emb, ref)
    norms = np.sqrt(np.einsum("ctab,ctab->cab", emb, emb)) * np.linalg.norm(ref)
    out = np.zeros_like(dots)
    np.divide(np.abs(dots), norms, out=out, where=norms > 0)
    return np.clip(out, 0.0, 1.0)


__all__ = [
    "DEFAULT_FS",
    "HR_BAND",
    "SNR_WINDOW_HZ",
    "SNR_CLAMP_DB",
    "MACC_MAX_LAG_S",
    "SignalTrace",
    "as_trace",
    "to_traces",
    "zscore",
    "neg_pearson_loss",
    "bandpass",
    "power_spectrum",
    "estimate_hr_fft",
    "snr_db",
    "macc",
    "cosine_attention_map",
]
