"""Synthetic fingerprint scenes with analytically known ridge counts.

A scene is a set of concentric one-pixel rings (radii d, 2d, ..., ring_count*d)
around a centre, plus minutiae placed in polar coordinates about that centre.
Ridge counts along radial segments are closed-form, which makes these scenes
an oracle for the ridge-feature code.  A rigid transform rotates the minutiae
about the ring centre and shifts everything by an integer offset; the rings
themselves are rotation invariant, so their raster only translates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from skimage.draw import circle_perimeter

from .fpdata import TWO_PI, DatasetEntry, Minutia, MinutiaeRecord, SkeletonImage

DEFAULT_CANVAS = 320
DEFAULT_JITTER = 1.0


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class SyntheticScene:
    center: tuple[int, int]
    ring_spacing: int
    ring_count: int
    minutiae_spec: tuple[tuple[float, float, float], ...]  # (radius, angle, theta)
    rigid_transform: tuple[float, tuple[int, int]] = (0.0, (0, 0))
    noise: float = 0.0
    noise_seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "minutiae_spec", tuple(tuple(m) for m in self.minutiae_spec))
        if self.ring_spacing < 2 or self.ring_count < 1:
            raise GeometryError("need ring_spacing >= 2 and ring_count >= 1")
        for radius, _, _ in self.minutiae_spec:
            if ring_margin(radius, self.ring_spacing, self.ring_count) < 1.0:
                raise GeometryError(f"minutia at radius {radius} lies within 1 pixel of a ring")

    @property
    def outer_radius(self) -> int:
        return self.ring_spacing * self.ring_count

    def transformed_center(self) -> tuple[int, int]:
        dx, dy = self.rigid_transform[1]
        return (self.center[0] + int(dx), self.center[1] + int(dy))

    def with_transform(self, rotation: float, translation: tuple[int, int], **changes) -> "SyntheticScene":
        return SyntheticScene(
            self.center, self.ring_spacing, self.ring_count, self.minutiae_spec,
            (rotation, (int(translation[0]), int(translation[1]))),
            changes.get("noise", self.noise), changes.get("noise_seed", self.noise_seed),
        )


def ring_margin(radius: float, spacing: int, ring_count: int) -> float:
    """Distance from ``radius`` to the nearest ring radius."""
    k = min(max(round(radius / spacing), 1), ring_count)
    return abs(radius - k * spacing)


def render_rings(center: tuple[int, int], spacing: int, ring_count: int, width: int, height: int) -> np.ndarray:
    pixels = np.zeros((height, width), dtype=np.uint8)
    cx, cy = center
    for k in range(1, ring_count + 1):
        rr, cc = circle_perimeter(cy, cx, k * spacing, method="bresenham", shape=(height, width))
        pixels[rr, cc] = 1
    return pixels


def render_scene(
    scene: SyntheticScene,
    width: int = DEFAULT_CANVAS,
    height: int = DEFAULT_CANVAS,
    subject_id: str = "synthetic",
    impression_id: str = "1",
) -> tuple[SkeletonImage, MinutiaeRecord]:
    """Rasterise the rings and place the (transformed, jittered) minutiae."""
    cx, cy = scene.transformed_center()
    R = scene.outer_radius
    if cx - R < 1 or cy - R < 1 or cx + R > width - 2 or cy + R > height - 2:
        raise GeometryError(f"rings of radius {R} around ({cx}, {cy}) do not fit {width}x{height}")
    pixels = render_rings((cx, cy), scene.ring_spacing, scene.ring_count, width, height)

    rotation = scene.rigid_transform[0]
    spec = np.array(scene.minutiae_spec, dtype=np.float64).reshape(-1, 3)
    radius, angle, theta = spec[:, 0], spec[:, 1], spec[:, 2]
    xs = cx + radius * np.cos(angle + rotation)
    ys = cy + radius * np.sin(angle + rotation)
    if scene.noise > 0:
        rng = np.random.default_rng(scene.noise_seed)
        xs = xs + rng.normal(0.0, scene.noise, len(xs))
        ys = ys + rng.normal(0.0, scene.noise, len(ys))
    thetas = np.mod(theta + rotation, TWO_PI)

    minutiae = []
    for x, y, t in zip(xs, ys, thetas):
        if not (0 <= x < width and 0 <= y < height):
            raise GeometryError(f"minutia ({x:.1f}, {y:.1f}) falls outside the canvas")
        minutiae.append(Minutia(float(x), float(y), float(t) if t < TWO_PI else 0.0))
    record = MinutiaeRecord(subject_id, impression_id, width, height, tuple(minutiae))
    return SkeletonImage(width, height, pixels), record


def oracle_ridge_count(scene: SyntheticScene, p1, p2, tol: float = 1e-6) -> int:
    """Rings crossed between two points on a common ray from the ring centre."""
    cx, cy = scene.transformed_center()
    v1 = np.array([p1[0] - cx, p1[1] - cy], dtype=np.float64)
    v2 = np.array([p2[0] - cx, p2[1] - cy], dtype=np.float64)
    r1, r2 = float(np.hypot(*v1)), float(np.hypot(*v2))
    if r1 == 0 or r2 == 0:
        raise ValueError("points must differ from the ring centre")
    cross = v1[0] * v2[1] - v1[1] * v2[0]
    if abs(cross) > tol * r1 * r2 or float(v1 @ v2) <= 0:
        raise ValueError("points are not on a common ray through the centre")
    d, rc = scene.ring_spacing, scene.ring_count
    return abs(min(math.floor(r2 / d), rc) - min(math.floor(r1 / d), rc))


# ---------------------------------------------------------------------------
# Populations


@dataclass(frozen=True)
class PopulationConfig:
    width: int = DEFAULT_CANVAS
    height: int = DEFAULT_CANVAS
    spacing_range: tuple[int, int] = (8, 13)
    minutiae_range: tuple[int, int] = (25, 45)
    min_separation: float = 8.0
    ring_clearance: float = 2.0
    max_rotation: float = math.pi / 6
    max_translation: int = 10
    jitter: float = DEFAULT_JITTER


def random_base_scene(rng: np.random.Generator, cfg: PopulationConfig = PopulationConfig()) -> SyntheticScene:
    """One subject's finger: ring spacing and minutiae layout drawn from ``rng``."""
    d = int(rng.integers(cfg.spacing_range[0], cfg.spacing_range[1] + 1))
    cx, cy = cfg.width // 2, cfg.height // 2
    reach = min(cx, cy, cfg.width - 1 - cx, cfg.height - 1 - cy) - cfg.max_translation - 3
    ring_count = reach // d
    outer = ring_count * d
    n = int(rng.integers(cfg.minutiae_range[0], cfg.minutiae_range[1] + 1))

    placed: list[tuple[float, float, float]] = []
    xy: list[tuple[float, float]] = []
    attempts = 0
    while len(placed) < n:
        attempts += 1
        if attempts > 200 * n:
            raise GeometryError("could not place minutiae with the requested separation")
        r = outer * math.sqrt(rng.uniform(0.02, 1.0))
        if ring_margin(r, d, ring_count) < cfg.ring_clearance or r > outer - cfg.ring_clearance:
            continue
        phi = rng.uniform(0.0, TWO_PI)
        p = (r * math.cos(phi), r * math.sin(phi))
        if any(math.hypot(p[0] - q[0], p[1] - q[1]) < cfg.min_separation for q in xy):
            continue
        xy.append(p)
        placed.append((r, phi, rng.uniform(0.0, TWO_PI)))
    return SyntheticScene((cx, cy), d, ring_count, tuple(placed))


def generate_population(
    subject_count: int,
    impressions_per_subject: int,
    master_seed: int,
    config: PopulationConfig = PopulationConfig(),
) -> list[DatasetEntry]:
    """Seed-deterministic synthetic dataset in (subject, impression) order.

    Each impression is the subject's base scene under a random rotation and
    integer translation plus Gaussian positional jitter.
    """
    if subject_count < 1 or impressions_per_subject < 1:
        raise ValueError("subject and impression counts must be positive")
    children = np.random.SeedSequence(master_seed).spawn(subject_count)
    entries = []
    for s_idx, child in enumerate(children):
        rng = np.random.default_rng(child)
        base = random_base_scene(rng, config)
        for i_idx in range(impressions_per_subject):
            rotation = float(rng.uniform(-config.max_rotation, config.max_rotation))
            shift = tuple(int(v) for v in rng.integers(-config.max_translation, config.max_translation + 1, 2))
            scene = base.with_transform(
                rotation, shift, noise=config.jitter, noise_seed=int(rng.integers(0, 2**63))
            )
            skeleton, record = render_scene(
                scene, config.width, config.height, str(s_idx + 1), str(i_idx + 1)
            )
            entries.append(DatasetEntry(record, skeleton))
    return entries


# ---------------------------------------------------------------------------
# Oracle conditioning


def segment_is_well_conditioned(
    scene: SyntheticScene, p, q, min_angle: float = math.radians(15), min_gap: float = 1.5
) -> bool:
    """Whether the segment p-q meets every ring cleanly.

    Near-tangent geometry is ambiguous on a raster: a chord a fraction of a
    pixel deep may or may not show up as two crossings.  A segment qualifies
    when each ring it intersects is crossed at an angle of at least
    ``min_angle`` and every ring it misses stays ``min_gap`` pixels away.
    """
    c = np.array(scene.transformed_center(), dtype=np.float64)
    p = np.asarray(p, dtype=np.float64) - c
    q = np.asarray(q, dtype=np.float64) - c
    v = q - p
    L2 = float(v @ v)
    if L2 == 0:
        return False
    t_closest = float(np.clip(-(p @ v) / L2, 0.0, 1.0))
    closest = float(np.hypot(*(p + t_closest * v)))
    r_p, r_q = float(np.hypot(*p)), float(np.hypot(*q))
    r_max = max(r_p, r_q)
    h = abs(p[0] * v[1] - p[1] * v[0]) / math.sqrt(L2)  # line distance from centre
    for k in range(1, scene.ring_count + 1):
        R = k * scene.ring_spacing
        if R < closest - min_gap or R > r_max + min_gap:
            continue
        if closest <= R <= r_max:
            # the segment reaches ring R; each hit must be at a clean angle
            if h / R > math.cos(min_angle):
                return False
            if abs(R - r_p) < min_gap or abs(R - r_q) < min_gap:
                return False
        else:
            return False  # near miss within min_gap
    return True


def condition_scene(
    scene: SyntheticScene, s: int = 8, min_minutiae: int = 10, **kwargs
) -> SyntheticScene:
    """Drop minutiae until every nearest-neighbour segment is well conditioned.

    The scene's rigid transform is ignored (it does not change the geometry
    relative to the rings).  Raises GeometryError when fewer than
    ``min_minutiae`` would remain.
    """
    from .sectoring import neighbor_table

    spec = list(scene.minutiae_spec)
    base = SyntheticScene(scene.center, scene.ring_spacing, scene.ring_count, tuple(spec))
    while True:
        cx, cy = base.center
        xy = np.array([(cx + r * math.cos(a), cy + r * math.sin(a)) for r, a, _ in spec])
        th = np.array([t for _, _, t in spec])
        blame = np.zeros(len(spec), dtype=np.int64)
        for i in range(len(spec)):
            idx, _, _ = neighbor_table(xy, th, i, s)
            for j in idx[idx >= 0]:
                if not segment_is_well_conditioned(base, xy[i], xy[j], **kwargs):
                    blame[i] += 1
                    blame[j] += 1
        if not blame.any():
            break
        del spec[int(np.argmax(blame))]
        if len(spec) < min_minutiae:
            raise GeometryError("scene cannot be conditioned with enough minutiae left")
        base = SyntheticScene(scene.center, scene.ring_spacing, scene.ring_count, tuple(spec))
    return SyntheticScene(
        scene.center, scene.ring_spacing, scene.ring_count, tuple(spec),
        scene.rigid_transform, scene.noise, scene.noise_seed,
    )
