"""Two-stage learning-rate schedule and subject-count curriculum.

Epochs are 1-based throughout: ``e`` runs from 1 to the total epoch count, so
the curriculum reaches ``k_max`` exactly on the last epoch.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from fractions import Fraction
from typing import Sequence, TypeVar

import numpy as np

from .config import ClsqConfig, DstConfig
from .errors import ConfigMismatch, EpochOutOfRange
from .reference_pool import derive_rng

T = TypeVar("T")


@dataclass(frozen=True)
class EpochPlan:
    epoch: int
    lr: float
    k: int


def _curriculum_step(e: int, total: int, gamma: float, span: int) -> int:
    # floor((e/E)^gamma * span); exact rational arithmetic when gamma is integral,
    # so products that land on an integer are not floored one step short
    if float(gamma).is_integer():
        return math.floor(Fraction(e, total) ** int(gamma) * span)
    return math.floor((e / total) ** gamma * span)


def subjects_at_epoch(cfg: ClsqConfig, e: int) -> int:
    """Subject cap K(e) for 1-based epoch ``e``."""
    if isinstance(e, bool) or int(e) != e or not 1 <= e <= cfg.total_epochs:
        raise EpochOutOfRange(f"epoch {e} outside [1, {cfg.total_epochs}]")
    step = _curriculum_step(int(e), cfg.total_epochs, cfg.gamma, cfg.k_max - cfg.k_min)
    return max(cfg.k_min, cfg.k_min + step)


def learning_rate_at(cfg: DstConfig, e: int) -> float:
    if isinstance(e, bool) or int(e) != e or not 1 <= e <= cfg.total_epochs:
        raise EpochOutOfRange(f"epoch {e} outside [1, {cfg.total_epochs}]")
    return cfg.eta1 if e <= cfg.e1 else cfg.eta2


def select_subjects(subjects: Sequence[T], k_e: int, rng: np.random.Generator) -> list[T]:
    """Uniformly random size-``k_e`` subset, keeping the input's relative order.

    Returns all subjects untouched when there are no more than ``k_e``.
    """
    if k_e < 1:
        raise ValueError(f"k_e must be >= 1, got {k_e}")
    items = list(subjects)
    if len(items) <= k_e:
        return items
    picked = rng.choice(len(items), size=k_e, replace=False)
    return [items[i] for i in sorted(int(i) for i in picked)]


def subset_rng(seed: int, epoch: int, sample_id) -> np.random.Generator:
    """Stream for the subset drawn for one sample in one epoch."""
    return derive_rng(seed, "subset", epoch, sample_id)


def export_schedule(dst: DstConfig, clsq: ClsqConfig) -> list[EpochPlan]:
    if dst.total_epochs != clsq.total_epochs:
        raise ConfigMismatch(
            f"dual-stage epochs e1+e2={dst.total_epochs} differ from curriculum total {clsq.total_epochs}"
        )
    return [
        EpochPlan(epoch=e, lr=learning_rate_at(dst, e), k=subjects_at_epoch(clsq, e))
        for e in range(1, clsq.total_epochs + 1)
    ]


def schedule_to_json(plans: Sequence[EpochPlan]) -> list[dict]:
    return [asdict(p) for p in plans]
