"""Sector partition around a reference minutia and nearest-neighbour selection.

Angles are measured in the ridge coordinate system: the reference axis points
along the reference minutia's orientation, so a constellation rotated as a
whole keeps every sector assignment.  Sector ``k`` (1-based) covers the
half-open interval ``[(k-1)*w, k*w)`` with ``w = 2*pi/s``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .fpdata import TWO_PI, Minutia, MinutiaeRecord


class DegenerateInputError(ValueError):
    pass


@dataclass(frozen=True)
class SectorConfig:
    s: int = 8

    def __post_init__(self) -> None:
        if int(self.s) != self.s or self.s < 2:
            raise ValueError(f"sector count must be an integer >= 2, got {self.s!r}")

    @property
    def width(self) -> float:
        return TWO_PI / self.s


@dataclass(frozen=True)
class Neighbor:
    index: int
    distance: float
    relative_angle: float


@dataclass(frozen=True)
class NeighborStructure:
    reference_index: int
    neighbors: tuple[Optional[Neighbor], ...]
    degenerate: bool = False

    def occupied(self) -> list[int]:
        """1-based ids of sectors holding a neighbour."""
        return [k + 1 for k, nb in enumerate(self.neighbors) if nb is not None]


def normalize_angle(angle: float) -> float:
    """Map to [0, 2*pi); guards the float case where ``a % 2pi`` returns 2pi."""
    a = math.fmod(angle, TWO_PI)
    if a < 0:
        a += TWO_PI
    if a >= TWO_PI:
        a = 0.0
    return a


def relative_angle(reference: Minutia, point: tuple[float, float]) -> float:
    dx = point[0] - reference.x
    dy = point[1] - reference.y
    if dx == 0 and dy == 0:
        raise DegenerateInputError("point coincides with the reference minutia")
    return normalize_angle(math.atan2(dy, dx) - reference.theta)


def sector_index(angle: float, config: SectorConfig) -> int:
    k = int(angle // config.width)  # exact floor of the quotient, no rounding of a/w
    return min(max(k, 0), config.s - 1) + 1


def _relative_angles(xy: np.ndarray, theta: float, ref: np.ndarray) -> np.ndarray:
    d = xy - ref
    a = np.mod(np.arctan2(d[:, 1], d[:, 0]) - theta, TWO_PI)
    a[a >= TWO_PI] = 0.0
    return a


def neighbor_table(xy: np.ndarray, thetas: np.ndarray, reference_index: int, s: int):
    """Vectorised core of :func:`build_neighbor_structure`.

    Returns ``(index, distance, angle)`` arrays of length ``s``; ``index`` is
    -1 for empty sectors.
    """
    n = len(xy)
    idx = np.full(s, -1, dtype=np.int64)
    dist = np.zeros(s)
    ang = np.zeros(s)
    if n < 2:
        return idx, dist, ang
    others = np.array([j for j in range(n) if j != reference_index], dtype=np.int64)
    ref = xy[reference_index]
    d = np.hypot(xy[others, 0] - ref[0], xy[others, 1] - ref[1])
    if np.any(d == 0):
        raise DegenerateInputError("two minutiae share a position")
    a = _relative_angles(xy[others], thetas[reference_index], ref)
    sec = np.minimum(np.floor_divide(a, TWO_PI / s).astype(np.int64), s - 1)
    # lexsort: last key is primary -> sector, distance, angle, index
    order = np.lexsort((others, a, d, sec))
    sec_sorted = sec[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = sec_sorted[1:] != sec_sorted[:-1]
    chosen = order[first]
    idx[sec[chosen]] = others[chosen]
    dist[sec[chosen]] = d[chosen]
    ang[sec[chosen]] = a[chosen]
    return idx, dist, ang


def build_neighbor_structure(
    record: MinutiaeRecord, reference_index: int, config: SectorConfig
) -> NeighborStructure:
    """Nearest neighbour per sector around ``record.minutiae[reference_index]``.

    Ties on distance go to the smaller relative angle, then the smaller index.
    A single-minutia record yields an all-empty structure flagged degenerate.
    """
    n = len(record)
    if not 0 <= reference_index < n:
        raise IndexError(f"reference index {reference_index} out of range for {n} minutiae")
    if n < 2:
        return NeighborStructure(reference_index, (None,) * config.s, degenerate=True)
    idx, dist, ang = neighbor_table(record.positions(), record.thetas(), reference_index, config.s)
    neighbors = tuple(
        Neighbor(int(idx[k]), float(dist[k]), float(ang[k])) if idx[k] >= 0 else None
        for k in range(config.s)
    )
    return NeighborStructure(reference_index, neighbors)
