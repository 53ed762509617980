from __future__ import annotations

import math

import numpy as np
import pytest

from coprimefp.fpdata import Minutia, MinutiaeRecord, SkeletonImage

# Filled by tests/test_acceptance.py; printed once at the end of the session.
ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


def make_record(points, width=200, height=200, subject="1", impression="1") -> MinutiaeRecord:
    """Record from ``(x, y, theta_radians)`` triples."""
    return MinutiaeRecord(
        subject, impression, width, height, tuple(Minutia(float(x), float(y), float(t)) for x, y, t in points)
    )


def blank_skeleton(width=200, height=200) -> np.ndarray:
    return np.zeros((height, width), dtype=np.uint8)


def as_skeleton(pixels: np.ndarray) -> SkeletonImage:
    h, w = pixels.shape
    return SkeletonImage(w, h, pixels)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def deg():
    return math.radians


def random_features(rng: np.random.Generator, n: int, s: int = 8, empty: float = 0.25):
    """Random feature matrix with consistent empty-sector sentinels."""
    from coprimefp.ridgefeat import FeatureMatrix

    counts = rng.integers(1, 12, (n, s)).astype(np.float64)
    orients = rng.uniform(0.0, math.pi / 2, (n, s))
    hole = rng.random((n, s)) < empty
    counts[hole] = 0.0
    orients[hole] = 0.0
    values = np.empty((n, 2 * s))
    values[:, 0::2], values[:, 1::2] = counts, orients
    return FeatureMatrix(values, s)
