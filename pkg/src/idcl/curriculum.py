"""Exponential pacing schedule and per-cluster easy-sample selection."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .density import DensityProfile
from .numerics import rank_index


@dataclass(frozen=True)
class PaceSchedule:
    zeta0: float = 0.6
    zeta_max: float = 0.95
    t_grow: int = 50

    def __post_init__(self):
        if not 0.0 < self.zeta0 < self.zeta_max <= 1.0:
            raise ValueError(
                f"need 0 < zeta0 < zeta_max <= 1, got {self.zeta0}, {self.zeta_max}"
            )
        if self.t_grow < 1:
            raise ValueError(f"t_grow must be >= 1, got {self.t_grow}")


@dataclass(frozen=True)
class Curriculum:
    epoch: int
    zeta_t: float
    indicator: np.ndarray
    selected: np.ndarray


def pace_uncapped(t: float, sched: PaceSchedule) -> float:
    """The exponential curve before the cap; reaches 1 at ``t_grow``."""
    log_z0 = math.log2(sched.zeta0)
    return 2.0 ** (-(log_z0 / sched.t_grow) * t + log_z0)


def pace(t: int, sched: PaceSchedule) -> float:
    """Fraction of each cluster admitted at epoch ``t``, capped at ``zeta_max``."""
    if t < 0:
        raise ValueError(f"epoch must be >= 0, got {t}")
    return min(sched.zeta_max, pace_uncapped(t, sched))


def select_easy(cluster_members: Sequence[int], delta, zeta_t: float) -> np.ndarray:
    """Indicator over ``cluster_members`` of the easiest ``zeta_t`` share.

    The threshold is the score at position ``ceil(zeta_t * |C|)`` (at least 1)
    of the members' scores sorted descending; every member scoring at or above
    it is selected, so ties at the threshold all get in.
    """
    members = np.asarray(cluster_members, dtype=np.intp)
    if members.size == 0:
        raise ValueError("cannot select from an empty cluster")
    if not 0.0 < zeta_t <= 1.0:
        raise ValueError(f"zeta_t must lie in (0, 1], got {zeta_t}")
    scores = np.asarray(delta, dtype=np.float64)[members]
    ordered = np.sort(scores)[::-1]
    threshold = ordered[rank_index(zeta_t, members.size) - 1]
    return scores >= threshold


def generate_curriculum(
    clusters: Sequence[Sequence[int]],
    profile: DensityProfile,
    t: int,
    sched: PaceSchedule,
) -> Curriculum:
    """Union over clusters of each cluster's easy samples at epoch ``t``."""
    n = len(profile.delta)
    seen = np.zeros(n, dtype=np.int64)
    for members in clusters:
        np.add.at(seen, np.asarray(members, dtype=np.intp), 1)
    if not (seen == 1).all():
        raise ValueError("clusters must partition the sample indices exactly once")

    zeta_t = pace(t, sched)
    indicator = np.zeros(n, dtype=bool)
    for members in clusters:
        if len(members) == 0:
            continue
        members = np.asarray(members, dtype=np.intp)
        indicator[members] = select_easy(members, profile.delta, zeta_t)
    return Curriculum(
        epoch=t, zeta_t=zeta_t, indicator=indicator, selected=np.flatnonzero(indicator)
    )
