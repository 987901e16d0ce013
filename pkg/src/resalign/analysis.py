"""Capture range, receptive field and motion-separability bounds of a level schedule.

All quantities are exact :class:`fractions.Fraction` values; capture ranges are
half-integers and the separability step function is evaluated without rounding.
"""

from __future__ import annotations

import bisect
import csv
import io
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

__all__ = [
    "LevelConfig",
    "ArchitectureConfig",
    "SeparabilityProfile",
    "receptive_field_size",
    "capture_range",
    "search_reach",
    "covers_whole_image",
    "separability_profile",
    "ma_config",
    "profile_area",
    "level_table",
]


@dataclass(frozen=True)
class LevelConfig:
    """One coarse-to-fine level: pool size ``p_k`` and dilation entries ``r_k``."""

    pool_size: int
    dilation: tuple[int, ...] = (1,)

    def __post_init__(self):
        object.__setattr__(self, "dilation", tuple(int(r) for r in self.dilation))
        if int(self.pool_size) != self.pool_size or self.pool_size < 1:
            raise ValueError(f"pool_size must be a positive integer, got {self.pool_size}")
        object.__setattr__(self, "pool_size", int(self.pool_size))
        if any(r < 1 for r in self.dilation):
            raise ValueError(f"dilation entries must be >= 1, got {self.dilation}")

    @property
    def dilation_norm(self) -> int:
        return sum(self.dilation)

    @property
    def search_step(self) -> int:
        """Lattice step of the block-matching search (the finest dilation pass)."""
        return min(self.dilation) if self.dilation else 1


@dataclass(frozen=True)
class ArchitectureConfig:
    """Ordered levels ``k = 1..K`` (coarse to fine), motion-aware depth ``q`` and head count."""

    levels: tuple[LevelConfig, ...]
    ma_depth: int = 0
    heads: int = 2

    def __post_init__(self):
        levels = tuple(
            lv if isinstance(lv, LevelConfig) else LevelConfig(*lv) for lv in self.levels
        )
        object.__setattr__(self, "levels", levels)
        if not 0 <= self.ma_depth <= len(levels):
            raise ValueError(f"ma_depth must lie in [0, {len(levels)}], got {self.ma_depth}")
        if self.heads < 1:
            raise ValueError(f"heads must be >= 1, got {self.heads}")
        for k in range(1, len(levels)):
            if levels[k].pool_size > levels[k - 1].pool_size:
                raise ValueError("pool sizes must be non-increasing from coarse to fine levels")

    @property
    def n_levels(self) -> int:
        return len(self.levels)


@dataclass(frozen=True)
class SeparabilityProfile:
    """Right-continuous step function ``p -> Delta_inf(p)``; zero below the first breakpoint."""

    breakpoints: tuple[Fraction, ...]
    values: tuple[Fraction, ...] = field(default=())

    def __post_init__(self):
        if len(self.breakpoints) != len(self.values):
            raise ValueError("breakpoints and values must have equal length")
        if any(b > a for a, b in zip(self.breakpoints[1:], self.breakpoints)):
            raise ValueError("breakpoints must be ascending")

    def __call__(self, p) -> Fraction:
        i = bisect.bisect_right(self.breakpoints, Fraction(p))
        return self.values[i - 1] if i else Fraction(0)

    @property
    def plateau(self) -> Fraction:
        return self.values[-1] if self.values else Fraction(0)

    def to_dict(self) -> dict:
        return {
            "breakpoints": [float(b) for b in self.breakpoints],
            "values": [float(v) for v in self.values],
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["p", "delta_inf"])
        writer.writerow([0.0, 0.0])
        for b, v in zip(self.breakpoints, self.values):
            writer.writerow([float(b), float(v)])
        return buf.getvalue()


def receptive_field_size(level: LevelConfig) -> int:
    """Original-resolution receptive field ``p_k (1 + 2 ||r_k||_1)``."""
    return level.pool_size * (1 + 2 * level.dilation_norm)


def capture_range(level: LevelConfig) -> Fraction:
    """Capture radius ``(s_k - 1) / 2`` of one level."""
    return Fraction(receptive_field_size(level) - 1, 2)


def search_reach(level: LevelConfig) -> int:
    """Largest displacement (original voxels) the integer block-matching search can emit."""
    return level.pool_size * level.dilation_norm


def covers_whole_image(cfg: ArchitectureConfig, dims: Sequence[int]) -> bool:
    """Whether the coarsest level's receptive field spans the whole image."""
    if not cfg.levels:
        raise ValueError("configuration has no levels")
    return receptive_field_size(cfg.levels[0]) >= 2 * max(dims) + 1


def separability_profile(cfg: ArchitectureConfig) -> SeparabilityProfile:
    """Upper bound on the displacement difference of two voxels at Chebyshev distance ``p``.

    Level ``k`` contributes a breakpoint at ``p_k + 2 * sum(a_k' for k' > k)``
    with plateau ``2 * sum(a_k' for k' >= k)``.
    """
    ranges = [capture_range(lv) for lv in cfg.levels]
    breakpoints, values = [], []
    for k in range(len(cfg.levels) - 1, -1, -1):
        finer = sum(ranges[k + 1:], Fraction(0))
        breakpoints.append(cfg.levels[k].pool_size + 2 * finer)
        values.append(2 * (finer + ranges[k]))
    return SeparabilityProfile(tuple(breakpoints), tuple(values))


def ma_config(K: int, q: int, base_dilation: Sequence[int] = (1,), heads: int = 2) -> ArchitectureConfig:
    """Motion-aware level schedule.

    Levels ``k <= q`` run at pool ``2**(K-q)`` with every dilation entry scaled
    by ``2**(q-k)``; levels ``k > q`` keep the feature-pyramid pool ``2**(K-k)``
    and the base dilation.  ``q = 0`` is the plain feature pyramid.
    """
    base = tuple(int(r) for r in base_dilation)
    if not base:
        raise ValueError("base_dilation must be non-empty")
    if K < 1 or not 0 <= q <= K:
        raise ValueError(f"need K >= 1 and 0 <= q <= K, got K={K}, q={q}")
    levels = []
    for k in range(1, K + 1):
        if k <= q:
            levels.append(LevelConfig(2 ** (K - q), tuple(r * 2 ** (q - k) for r in base)))
        else:
            levels.append(LevelConfig(2 ** (K - k), base))
    return ArchitectureConfig(tuple(levels), ma_depth=q, heads=heads)


def profile_area(profile: SeparabilityProfile, p_max) -> Fraction:
    """Exact integral of the step function over ``[0, p_max]``."""
    p_max = Fraction(p_max)
    if p_max <= 0:
        raise ValueError(f"p_max must be > 0, got {p_max}")
    area = Fraction(0)
    edges = list(profile.breakpoints) + [None]
    for i, (b, v) in enumerate(zip(profile.breakpoints, profile.values)):
        if b >= p_max:
            break
        end = edges[i + 1]
        end = p_max if end is None else min(end, p_max)
        area += v * (end - b)
    return area


def level_table(cfg: ArchitectureConfig) -> list[dict]:
    """Rows of ``(k, p_k, ||r_k||_1, s_k, a_k)`` for reporting."""
    return [
        {
            "k": k,
            "pool_size": lv.pool_size,
            "dilation_l1": lv.dilation_norm,
            "receptive_field": receptive_field_size(lv),
            "capture_range": capture_range(lv),
        }
        for k, lv in enumerate(cfg.levels, start=1)
    ]
