"""
Nonnegative matrix factorization by multiplicative updates.

``factorize`` approximates a nonnegative matrix ``V`` (``M x N``, or a batch
``B x M x N`` factorized sample by sample) by ``W @ H`` with ``W`` of shape
``M x L`` and ``H`` of shape ``L x N``. The objective is the squared Frobenius
norm of the residual; the residual itself is never kept.

Two gradient modes are offered:

- ``none``: every update runs outside the tape, so the reconstruction is a
  constant for differentiation.
- ``one_step``: the first ``K - 1`` updates run outside the tape and the final
  update plus the product ``W @ H`` are recorded, so gradients reach ``V``
  through exactly one update.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Any, Dict, Tuple, Union

import numpy as np

from factorizephys import ops
from factorizephys.autodiff import Tensor
from factorizephys.errors import ConfigError, NmfError, ShapeError

logger = logging.getLogger(__name__)

GRAD_MODES = ("none", "one_step")


@dataclass
class NmfConfig:
    """
    Factorization settings.

    Attributes:
        rank: Inner dimension L of the factorization.
        steps: Number of multiplicative updates K.
        delta: Positive floor added to every update denominator.
        seed: Seed for the initial factors.
        grad_mode: ``"none"`` or ``"one_step"``.
    """

    rank: int = 1
    steps: int = 6
    delta: float = 1e-6
    seed: int = 0
    grad_mode: str = "none"

    def __post_init__(self) -> None:
        if int(self.rank) < 1:
            raise ConfigError(f"nmf rank must be >= 1, got {self.rank}")
        if int(self.steps) < 1:
            raise ConfigError(f"nmf steps must be >= 1, got {self.steps}")
        if not float(self.delta) > 0:
            raise ConfigError(f"nmf delta must be > 0, got {self.delta}")
        if self.grad_mode not in GRAD_MODES:
            raise ConfigError(f"grad_mode must be one of {GRAD_MODES}, got {self.grad_mode!r}")
        self.rank = int(self.rank)
        self.steps = int(self.steps)
        self.delta = float(self.delta)
        self.seed = int(self.seed)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "NmfConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown nmf keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class FactorPair:
    """Nonnegative basis ``W`` (``[B,] M x L``) and coefficients ``H`` (``[B,] L x N``)."""

    W: np.ndarray
    H: np.ndarray

    @property
    def rank(self) -> int:
        return int(self.W.shape[-1])

    def reconstruct(self) -> np.ndarray:
        return np.matmul(self.W, self.H)


def _check_nonnegative(V: np.ndarray) -> None:
    if V.ndim not in (2, 3):
        raise ShapeError(f"nmf expects an M x N matrix or a batch of them, got shape {V.shape}")
    if V.size and V.min() < 0:
        raise NmfError(f"nmf input has negative entries (min {V.min():.4g})")


def _check_pair(V: np.ndarray, fp: FactorPair) -> None:
    m, n = V.shape[-2:]
    if fp.W.shape[-2] != m or fp.H.shape[-1] != n or fp.W.shape[-1] != fp.H.shape[-2]:
        raise ShapeError(f"factors {fp.W.shape} x {fp.H.shape} do not reconstruct {V.shape}")


def nmf_init(m: int, n: int, cfg: NmfConfig, dtype: Any = np.float32) -> FactorPair:
    """
    Seeded initial factors with entries in (0.01, 1.0].

    The same ``cfg.seed`` always gives the same factors.
    """
    if m < 1 or n < 1:
        raise ShapeError(f"nmf needs M, N >= 1, got {m} x {n}")
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    W = 1.0 - 0.99 * rng.random((m, cfg.rank))
    H = 1.0 - 0.99 * rng.random((cfg.rank, n))
    return FactorPair(W.astype(dtype), H.astype(dtype))


def mu_step(V: np.ndarray, fp: FactorPair, delta: float = 1e-6) -> FactorPair:
    """
    One multiplicative update, ``H`` first and then ``W`` using the new ``H``.

    Raises:
        NmfError: If ``V`` has a negative entry.
    """
    V = np.asarray(V)
    _check_nonnegative(V)
    _check_pair(V, fp)
    W, H = fp.W, fp.H
    Wt = np.swapaxes(W, -1, -2)
    H = H * np.matmul(Wt, V) / (np.matmul(np.matmul(Wt, W), H) + delta)
    Ht = np.swapaxes(H, -1, -2)
    W = W * np.matmul(V, Ht) / (np.matmul(W, np.matmul(H, Ht)) + delta)
    return FactorPair(W.astype(V.dtype, copy=False), H.astype(V.dtype, copy=False))


def reconstruction_error(V: np.ndarray, fp: FactorPair) -> Union[float, np.ndarray]:
    """
    Squared Frobenius norm ``||V - W H||^2``.

    Returns a float for a single matrix and one value per sample for a batch.
    """
    V = np.asarray(V)
    _check_pair(V, fp)
    resid = V.astype(np.float64) - np.matmul(fp.W.astype(np.float64), fp.H.astype(np.float64))
    sq = np.sum(resid * resid, axis=(-2, -1))
    return float(sq) if V.ndim == 2 else sq


def _tape_step(V: Tensor, W: np.ndarray, H: np.ndarray, delta: float) -> Tuple[Tensor, Tensor]:
    swap = (1, 0) if V.ndim == 2 else (0, 2, 1)
    Wc = Tensor._wrap(W)
    Hc = Tensor._wrap(H)
    WtW = Tensor._wrap(np.matmul(np.swapaxes(W, -1, -2), W))
    Wt = Tensor._wrap(np.ascontiguousarray(np.swapaxes(W, -1, -2)))

    H1 = ops.mul(Hc, ops.div(ops.matmul(Wt, V), ops.add(ops.matmul(WtW, Hc), delta)))
    H1t = ops.permute(H1, swap)
    W1 = ops.mul(Wc, ops.div(ops.matmul(V, H1t), ops.add(ops.matmul(Wc, ops.matmul(H1, H1t)), delta)))
    return W1, H1


def factorize(V: Tensor, cfg: NmfConfig, low_rank: bool = True) -> Tuple[FactorPair, Tensor]:
    """
    Run ``nmf_init`` followed by ``cfg.steps`` multiplicative updates.

    Batched input shares the same initial factors across samples; each sample
    is still factorized on its own.

    Args:
        V: Nonnegative ``M x N`` or ``B x M x N`` tensor.
        cfg: Rank, steps, floor, seed and gradient mode.
        low_rank: Require ``rank <= min(M, N)``.

    Returns:
        The final factors and the reconstruction ``V_hat = W @ H``.

    Raises:
        NmfError: Negative input or rank too large.
    """
    _check_nonnegative(V.data)
    m, n = V.shape[-2:]
    if low_rank and cfg.rank > min(m, n):
        raise NmfError(f"rank {cfg.rank} exceeds min(M, N) = {min(m, n)} for a {m} x {n} matrix")

    fp = nmf_init(m, n, cfg, dtype=V.dtype)
    if V.ndim == 3:
        batch = V.shape[0]
        fp = FactorPair(np.repeat(fp.W[None], batch, axis=0), np.repeat(fp.H[None], batch, axis=0))

    recorded = cfg.grad_mode == "one_step"
    plain_steps = cfg.steps - 1 if recorded else cfg.steps
    trace = logger.isEnabledFor(logging.DEBUG)
    for k in range(plain_steps):
        fp = mu_step(V.data, fp, cfg.delta)
        if trace:
            logger.debug("nmf step %d objective %s", k + 1, reconstruction_error(V.data, fp))

    if recorded:
        W1, H1 = _tape_step(V, fp.W, fp.H, cfg.delta)
        v_hat = ops.matmul(W1, H1)
        return FactorPair(W1.numpy(), H1.numpy()), v_hat

    return fp, Tensor._wrap(fp.reconstruct().astype(V.dtype, copy=False))


__all__ = [
    "GRAD_MODES",
    "NmfConfig",
    "FactorPair",
    "nmf_init",
    "mu_step",
    "reconstruction_error",
    "factorize",
]
