"""Ridge count and mean ridge orientation between minutia pairs.

A segment between two minutiae is walked through every pixel it touches (a
supercover traversal, 4-connected, so it cannot slip between the pixels of an
8-connected one-pixel skeleton).  A maximal run of ridge pixels met along the
walk is a ridge crossing when the walk leaves it on the other side of the
ridge than it entered; grazing touches and runs touching either endpoint's
own pixel are ignored.  The local ridge tangent at a crossing is the principal
axis of the Gaussian-weighted scatter of the crossed ridge's pixels.

Tangents are undirected, so the angle between a ridge and the connecting
segment is only defined modulo pi.  Each crossing contributes its unsigned
crossing angle ``|wrap(tangent - slope)|`` in [0, pi/2]; the sector's mean
orientation is the plain average of those.  Folding to the unsigned angle is
what keeps the feature continuous: a signed value in (-pi/2, pi/2] flips by pi
whenever a ridge is crossed almost head-on, and a doubled-angle mean becomes
arbitrary when crossings come in mirror-image pairs.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import ndimage

from .fpdata import Minutia, MinutiaeRecord, SkeletonImage
from .sectoring import SectorConfig, neighbor_table

TANGENT_SIGMA = 5.0
SIDE_MARGIN = 3


class DegenerateTangentError(ValueError):
    pass


@dataclass(frozen=True)
class RidgeCrossing:
    position: tuple[float, float]
    tangent_angle: float


@dataclass(frozen=True)
class SectorFeature:
    ridge_count: int = 0
    mean_orientation: float = 0.0
    present: bool = False

    def __post_init__(self) -> None:
        if not self.present and (self.ridge_count != 0 or self.mean_orientation != 0.0):
            raise ValueError("an absent sector feature must be the (0, 0) sentinel")


ABSENT = SectorFeature()


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """Per-minutia sector descriptors, shape ``(n, 2s)``.

    Each row is ``[count_1, orient_1, ..., count_s, orient_s]``; an all-zero
    pair is the sentinel for an empty sector.
    """

    values: np.ndarray
    s: int
    degenerate: bool = False

    def __post_init__(self) -> None:
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != 2 * self.s or v.shape[0] < 1:
            raise ValueError(f"feature matrix must be (n >= 1, {2 * self.s}), got {v.shape}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FeatureMatrix):
            return NotImplemented
        return self.s == other.s and np.array_equal(self.values, other.values)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def T(self) -> int:
        return self.values.size

    def pairs(self) -> np.ndarray:
        """View as ``(n, s, 2)`` (count, orientation) pairs."""
        return self.values.reshape(self.n, self.s, 2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        header = ",".join(f"count_{k},orient_{k}" for k in range(1, self.s + 1))
        buf.write(header + "\n")
        for row in self.values:
            buf.write(",".join(repr(float(v)) for v in row) + "\n")
        return buf.getvalue()


def wrap_half_pi(angle):
    """Wrap angles to (-pi/2, pi/2]; works on scalars and arrays."""
    v = np.mod(angle, np.pi)
    v = np.where(v > np.pi / 2, v - np.pi, v)
    return float(v) if np.ndim(v) == 0 else v


def crossing_angle(tangent, slope):
    """Unsigned angle in [0, pi/2] between an undirected ridge and a segment."""
    return np.abs(wrap_half_pi(np.asarray(tangent, dtype=np.float64) - slope))


# ---------------------------------------------------------------------------
# Segment walk


def _boundary_params(a0: float, a1: float) -> np.ndarray:
    """Parameters t in (0, 1) where a0 + t*(a1 - a0) crosses a pixel edge k + 0.5."""
    if a0 == a1:
        return np.empty(0)
    lo, hi = min(a0, a1), max(a0, a1)
    edges = np.arange(math.floor(lo - 0.5) + 0.5, hi, 1.0)
    edges = edges[(edges > lo) & (edges < hi)]
    return (edges - a0) / (a1 - a0)


def supercover_walk(p1, p2):
    """Pixels touched by the segment p1 -> p2, in order.

    Returns ``(cells, t_start, t_end)``: ``cells`` is an ``(m, 2)`` int array of
    (x, y) and the parameter interval each cell occupies.  Where the segment
    passes exactly through a pixel corner, both side pixels are included.
    """
    x0, y0 = float(p1[0]), float(p1[1])
    x1, y1 = float(p2[0]), float(p2[1])
    ts = np.concatenate(([0.0], _boundary_params(x0, x1), _boundary_params(y0, y1), [1.0]))
    ts = np.unique(ts)
    keep = np.concatenate(([True], np.diff(ts) > 1e-12))
    ts = ts[keep]
    if ts[-1] != 1.0:
        ts[-1] = 1.0
    t_start, t_end = ts[:-1], ts[1:]
    if len(t_start) == 0:
        t_start, t_end = np.array([0.0]), np.array([1.0])
    mid = 0.5 * (t_start + t_end)
    cx = np.floor(x0 + mid * (x1 - x0) + 0.5).astype(np.int64)
    cy = np.floor(y0 + mid * (y1 - y0) + 0.5).astype(np.int64)
    cells = np.stack([cx, cy], axis=1)

    diag = np.nonzero(np.all(cells[1:] != cells[:-1], axis=1))[0]
    if len(diag):
        side_a = np.stack([cells[diag + 1, 0], cells[diag, 1]], axis=1)
        side_b = np.stack([cells[diag, 0], cells[diag + 1, 1]], axis=1)
        sides = np.empty((2 * len(diag), 2), dtype=np.int64)
        sides[0::2], sides[1::2] = side_a, side_b
        at = np.repeat(diag + 1, 2)
        tb = np.repeat(t_end[diag], 2)
        cells = np.insert(cells, at, sides, axis=0)
        t_start = np.insert(t_start, at, tb)
        t_end = np.insert(t_end, at, tb)

    # an endpoint exactly on a pixel boundary touches its own pixel for zero length
    first = np.floor(np.array([x0, y0]) + 0.5).astype(np.int64)
    last = np.floor(np.array([x1, y1]) + 0.5).astype(np.int64)
    if np.any(cells[0] != first):
        cells = np.vstack([first, cells])
        t_start, t_end = np.concatenate(([0.0], t_start)), np.concatenate(([0.0], t_end))
    if np.any(cells[-1] != last):
        cells = np.vstack([cells, last])
        t_start, t_end = np.concatenate((t_start, [1.0])), np.concatenate((t_end, [1.0]))
    return cells, t_start, t_end


def _ridge_flags(skeleton: SkeletonImage, cells: np.ndarray) -> np.ndarray:
    x, y = cells[:, 0], cells[:, 1]
    inside = (x >= 0) & (x < skeleton.width) & (y >= 0) & (y < skeleton.height)
    flags = np.zeros(len(cells), dtype=bool)
    flags[inside] = skeleton.pixels[y[inside], x[inside]] > 0
    return flags


def _runs(flags: np.ndarray) -> list[tuple[int, int]]:
    padded = np.concatenate(([False], flags, [False])).astype(np.int8)
    edges = np.diff(padded)
    starts = np.nonzero(edges == 1)[0]
    stops = np.nonzero(edges == -1)[0] - 1
    return list(zip(starts.tolist(), stops.tolist()))


def _changes_side(skeleton: SkeletonImage, cells: np.ndarray, a: int, b: int) -> bool:
    """True when the walk leaves run ``a..b`` on the other side of the ridge.

    Background pixels of a window around the run are split into 4-connected
    regions; a touch that enters and leaves through the same region is a graze.
    """
    before, after = cells[a - 1], cells[b + 1]
    span = cells[a - 1 : b + 2]
    x_lo = max(int(span[:, 0].min()) - SIDE_MARGIN, 0)
    x_hi = min(int(span[:, 0].max()) + SIDE_MARGIN + 1, skeleton.width)
    y_lo = max(int(span[:, 1].min()) - SIDE_MARGIN, 0)
    y_hi = min(int(span[:, 1].max()) + SIDE_MARGIN + 1, skeleton.height)
    for x, y in (before, after):
        if not (x_lo <= x < x_hi and y_lo <= y < y_hi):
            return True  # walk leaves the image; no way to tell, keep the crossing
    labels, _ = ndimage.label(skeleton.pixels[y_lo:y_hi, x_lo:x_hi] == 0)
    return labels[before[1] - y_lo, before[0] - x_lo] != labels[after[1] - y_lo, after[0] - x_lo]


def crossing_tangent(
    skeleton: SkeletonImage, position, sigma: float = TANGENT_SIGMA, seed=None
) -> float:
    """Undirected ridge direction in [0, pi) at ``position``.

    Principal axis of the Gaussian-weighted scatter (scale ``sigma``) of the
    ridge pixels within ``3*sigma`` of ``position``.  When ``seed`` names a
    ridge pixel, only its 8-connected ridge is used, so neighbouring ridges in
    the window do not pull the estimate.
    """
    reach = int(math.ceil(3 * sigma))
    cx = int(math.floor(position[0] + 0.5))
    cy = int(math.floor(position[1] + 0.5))
    x_lo, x_hi = max(cx - reach, 0), min(cx + reach + 1, skeleton.width)
    y_lo, y_hi = max(cy - reach, 0), min(cy + reach + 1, skeleton.height)
    window = skeleton.pixels[y_lo:y_hi, x_lo:x_hi]
    if seed is not None and x_lo <= seed[0] < x_hi and y_lo <= seed[1] < y_hi:
        labels, _ = ndimage.label(window, structure=np.ones((3, 3)))
        label = labels[seed[1] - y_lo, seed[0] - x_lo]
        if label:
            window = labels == label
    ys, xs = np.nonzero(window)
    if len(xs) < 2:
        raise DegenerateTangentError(
            f"{len(xs)} ridge pixel(s) near ({position[0]:.1f}, {position[1]:.1f})"
        )
    pts = np.stack([xs + x_lo, ys + y_lo], axis=1).astype(np.float64)
    d2 = ((pts - np.asarray(position, dtype=np.float64)) ** 2).sum(axis=1)
    weights = np.exp(-d2 / (2 * sigma * sigma))
    centre = weights @ pts / weights.sum()
    q = pts - centre
    scatter = (q * weights[:, None]).T @ q
    _, vecs = np.linalg.eigh(scatter)
    vx, vy = vecs[:, -1]
    angle = math.atan2(vy, vx) % math.pi
    if angle >= math.pi:
        angle = 0.0
    return angle


def find_ridge_crossings(skeleton: SkeletonImage, p1, p2) -> list[RidgeCrossing]:
    """Ridge crossings strictly between p1 and p2, ordered by distance from p1.

    Crossings whose tangent cannot be estimated are dropped.
    """
    cells, t_start, t_end = supercover_walk(p1, p2)
    flags = _ridge_flags(skeleton, cells)
    last = len(cells) - 1
    x0, y0 = float(p1[0]), float(p1[1])
    dx, dy = float(p2[0]) - x0, float(p2[1]) - y0
    crossings = []
    for a, b in _runs(flags):
        if a == 0 or b == last:
            continue
        if not _changes_side(skeleton, cells, a, b):
            continue
        t = 0.5 * (t_start[a] + t_end[b])
        pos = (x0 + t * dx, y0 + t * dy)
        try:
            tangent = crossing_tangent(skeleton, pos, seed=cells[(a + b) // 2])
        except DegenerateTangentError:
            continue
        crossings.append(RidgeCrossing(pos, tangent))
    return crossings


def sector_feature(skeleton: SkeletonImage, reference: Minutia, neighbor: Minutia) -> SectorFeature:
    if (reference.x, reference.y) == (neighbor.x, neighbor.y):
        raise ValueError("reference and neighbour minutiae coincide")
    slope = math.atan2(neighbor.y - reference.y, neighbor.x - reference.x)
    crossings = find_ridge_crossings(
        skeleton, (reference.x, reference.y), (neighbor.x, neighbor.y)
    )
    if not crossings:
        return ABSENT
    angles = crossing_angle([c.tangent_angle for c in crossings], slope)
    return SectorFeature(len(crossings), float(np.mean(angles)), True)


def build_feature_matrix(
    record: MinutiaeRecord, skeleton: SkeletonImage, config: Optional[SectorConfig] = None
) -> FeatureMatrix:
    """Invariant ridge features of every minutia, one row per minutia."""
    config = config or SectorConfig()
    if (record.width, record.height) != (skeleton.width, skeleton.height):
        raise ValueError(
            f"record is {record.width}x{record.height} but skeleton is "
            f"{skeleton.width}x{skeleton.height}"
        )
    n, s = len(record), config.s
    values = np.zeros((n, 2 * s))
    if n < 2:
        return FeatureMatrix(values, s, degenerate=True)
    xy, thetas = record.positions(), record.thetas()
    minutiae = record.minutiae
    for i in range(n):
        idx, _, _ = neighbor_table(xy, thetas, i, s)
        for k in np.nonzero(idx >= 0)[0]:
            feat = sector_feature(skeleton, minutiae[i], minutiae[idx[k]])
            values[i, 2 * k] = feat.ridge_count
            values[i, 2 * k + 1] = feat.mean_orientation
    return FeatureMatrix(values, s)
