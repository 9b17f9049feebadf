"""Forward-diffusion arithmetic in float64.

Latents are plain ``numpy`` arrays; nothing here knows about networks. The
framed binary latent format is: rank (u64), then ``rank`` dims (u64 each),
then the values as little-endian float64 in row-major order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._io import write_bytes_atomic
from .errors import InvalidRange, ShapeMismatch, StepOutOfRange, DataError

ALPHA_BAR_FLOOR = 1e-12


@dataclass(frozen=True)
class NoiseSchedule:
    betas: np.ndarray  # index t-1 holds beta_t
    alpha_bar: np.ndarray  # index t-1 holds the cumulative product up to t

    @property
    def total_steps(self) -> int:
        return int(self.alpha_bar.shape[0])

    def alpha_bar_at(self, t: int) -> float:
        if isinstance(t, bool) or int(t) != t or not 1 <= t <= self.total_steps:
            raise StepOutOfRange(f"step {t} outside [1, {self.total_steps}]")
        return float(self.alpha_bar[int(t) - 1])


def build_noise_schedule(T: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Linear variance schedule and its cumulative products."""
    if int(T) != T or T < 1:
        raise InvalidRange(f"T must be a positive integer, got {T}")
    if not 0 < beta_start <= beta_end < 1:
        raise InvalidRange(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    betas = np.linspace(beta_start, beta_end, int(T), dtype=np.float64) if T > 1 else np.array([beta_start])
    alpha_bar = np.cumprod(1.0 - betas)
    return NoiseSchedule(betas=betas, alpha_bar=alpha_bar)


def _check_finite(x: np.ndarray, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise DataError(f"{name} contains non-finite values")
    return x


def diffuse(z0, eps, alpha_bar: float) -> np.ndarray:
    """``sqrt(alpha_bar) * z0 + sqrt(1 - alpha_bar) * eps`` for an explicit alpha_bar in [0, 1]."""
    z0 = _check_finite(z0, "z0")
    eps = _check_finite(eps, "eps")
    if z0.shape != eps.shape:
        raise ShapeMismatch(f"z0 shape {z0.shape} != eps shape {eps.shape}")
    if not 0.0 <= alpha_bar <= 1.0:
        raise InvalidRange(f"alpha_bar must lie in [0, 1], got {alpha_bar}")
    return np.sqrt(alpha_bar) * z0 + np.sqrt(1.0 - alpha_bar) * eps


def undiffuse(zt, eps, alpha_bar: float) -> np.ndarray:
    zt = _check_finite(zt, "zt")
    eps = _check_finite(eps, "eps")
    if zt.shape != eps.shape:
        raise ShapeMismatch(f"zt shape {zt.shape} != eps shape {eps.shape}")
    if not ALPHA_BAR_FLOOR <= alpha_bar <= 1.0:
        raise StepOutOfRange(f"alpha_bar {alpha_bar} below the invertibility floor {ALPHA_BAR_FLOOR}")
    return (zt - np.sqrt(1.0 - alpha_bar) * eps) / np.sqrt(alpha_bar)


def forward_diffuse(z0, t: int, eps, sched: NoiseSchedule) -> np.ndarray:
    return diffuse(z0, eps, sched.alpha_bar_at(t))


def invert_forward(zt, eps, t: int, sched: NoiseSchedule) -> np.ndarray:
    return undiffuse(zt, eps, sched.alpha_bar_at(t))


def pairwise_sum(x: np.ndarray) -> float:
    """Sum by a fixed balanced tree so the result never depends on chunking."""
    v = np.asarray(x, dtype=np.float64).reshape(-1)
    if v.size == 0:
        return 0.0
    while v.size > 1:
        if v.size % 2:
            v = np.append(v, 0.0)
        v = v[0::2] + v[1::2]
    return float(v[0])


def denoising_loss(eps_true, eps_pred, reduction: str = "sum") -> float:
    """Squared L2 distance between true and predicted noise (``reduction='mean'`` divides by size)."""
    a = _check_finite(eps_true, "eps_true")
    b = _check_finite(eps_pred, "eps_pred")
    if a.shape != b.shape:
        raise ShapeMismatch(f"shapes differ: {a.shape} vs {b.shape}")
    total = pairwise_sum((a - b) ** 2)
    if reduction == "sum":
        return total
    if reduction == "mean":
        return total / a.size if a.size else 0.0
    raise ValueError(f"unknown reduction {reduction!r}")


def schedule_csv(sched: NoiseSchedule) -> str:
    lines = ["t,beta,alpha_bar"]
    for t in range(1, sched.total_steps + 1):
        lines.append(f"{t},{float(sched.betas[t - 1])!r},{float(sched.alpha_bar[t - 1])!r}")
    return "\n".join(lines) + "\n"


def encode_latent(x) -> bytes:
    arr = _check_finite(x, "latent")
    header = struct.pack(f"<Q{arr.ndim}Q", arr.ndim, *arr.shape)
    return header + np.ascontiguousarray(arr, dtype="<f8").tobytes(order="C")


def decode_latent(data: bytes) -> np.ndarray:
    if len(data) < 8:
        raise DataError("latent frame too short for its header")
    (rank,) = struct.unpack_from("<Q", data, 0)
    head = 8 * (1 + rank)
    if len(data) < head:
        raise DataError(f"latent frame truncated in dims (rank {rank})")
    dims = struct.unpack_from(f"<{rank}Q", data, 8)
    n = int(np.prod(dims, dtype=np.int64)) if rank else 1
    if len(data) != head + 8 * n:
        raise DataError(f"latent payload is {len(data) - head} bytes, expected {8 * n}")
    arr = np.frombuffer(data, dtype="<f8", offset=head, count=n).astype(np.float64).reshape(dims)
    return _check_finite(arr, "latent")


def read_latent(path: str | Path) -> np.ndarray:
    return decode_latent(Path(path).read_bytes())


def write_latent(path: str | Path, x) -> None:
    write_bytes_atomic(path, encode_latent(x))
