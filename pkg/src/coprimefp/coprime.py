"""Protected template generation by coprime mapping.

The feature matrix F (n x 2s) is written, row-major, onto T = n*2s cells of a
T x T matrix.  Cell ``t`` of the walk sits at row ``(k1 - 1 + t*k3) mod T + 1``
and column ``(k2 - 1 + t*k4) mod T + 1``.  Because k3 and k4 are coprime with
T the row and column sequences are permutations, so the T positions never
collide.  Every other cell holds filler drawn from a Philox stream keyed by
the seed ``rho``.

Filler stream (see docs/filler.md): Philox-4x64-10 with key ``(rho, 0)`` and
counter starting at zero emits one 64-bit word ``w`` per cell, row-major.
If the top bit of ``w`` is set the cell is the count-like integer
``((w & 0xFFFFFFFF) * 26) >> 32`` (uniform on 0..25); otherwise it is the
orientation-like real ``pi - 2*pi*u`` with ``u = (w & (2**53 - 1)) / 2**53``,
uniform on (-pi, pi].
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .ridgefeat import FeatureMatrix
from .sectoring import SectorConfig

MAGIC = b"CPT1"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHIH")
U64_MAX = 2**64 - 1


class InvalidKeyError(ValueError):
    pass


class TemplateFormatError(ValueError):
    pass


class IncompatibleTemplateError(ValueError):
    pass


@dataclass(frozen=True)
class KeySet:
    """User secrets: start cell (k1, k2), row/column jumps (k3, k4), filler seed rho."""

    k1: int
    k2: int
    k3: int
    k4: int
    rho: int = 0

    def __post_init__(self) -> None:
        for name in ("k1", "k2", "k3", "k4", "rho"):
            value = getattr(self, name)
            if isinstance(value, bool) or int(value) != value:
                raise InvalidKeyError(f"{name} must be an integer, got {value!r}")
        if not 0 <= self.rho <= U64_MAX:
            raise InvalidKeyError(f"rho must be an unsigned 64-bit integer, got {self.rho}")

    def to_line(self) -> str:
        return f"{self.k1} {self.k2} {self.k3} {self.k4} {self.rho}"

    @classmethod
    def from_line(cls, text: str) -> "KeySet":
        lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
        if len(lines) != 1:
            raise InvalidKeyError("key file must hold exactly one line 'k1 k2 k3 k4 rho'")
        parts = lines[0].split()
        if len(parts) != 5:
            raise InvalidKeyError("key line must have five integers: k1 k2 k3 k4 rho")
        try:
            values = [int(p) for p in parts]
        except ValueError:
            raise InvalidKeyError(f"non-integer value in key line {lines[0]!r}") from None
        return cls(*values)


def read_keys(path: str | Path) -> KeySet:
    return KeySet.from_line(Path(path).read_text(encoding="utf-8"))


def write_keys(keys: KeySet, path: str | Path) -> None:
    Path(path).write_text(keys.to_line() + "\n", encoding="utf-8")


def validate_keys(keys: KeySet, T: int) -> Optional[str]:
    """Return None when ``keys`` are usable with side ``T``, else what is wrong."""
    if T < 2:
        raise ValueError(f"template side must be >= 2, got {T}")
    if not 1 <= keys.k1 <= T:
        return f"k1={keys.k1} outside [1, {T}]"
    if not 1 <= keys.k2 <= T:
        return f"k2={keys.k2} outside [1, {T}]"
    if not 2 <= keys.k3 <= T:
        return f"k3={keys.k3} outside [2, {T}]"
    if not 2 <= keys.k4 <= T:
        return f"k4={keys.k4} outside [2, {T}]"
    if math.gcd(keys.k3, T) != 1:
        return f"gcd(k3={keys.k3}, T={T}) = {math.gcd(keys.k3, T)}, must be 1"
    if math.gcd(keys.k4, T) != 1:
        return f"gcd(k4={keys.k4}, T={T}) = {math.gcd(keys.k4, T)}, must be 1"
    return None


def check_keys(keys: KeySet, T: int) -> None:
    problem = validate_keys(keys, T)
    if problem is not None:
        raise InvalidKeyError(problem)


def position_cycle(keys: KeySet, T: int) -> np.ndarray:
    """The T mapped positions as a ``(T, 2)`` array of 1-based (row, column)."""
    check_keys(keys, T)
    t = np.arange(T, dtype=np.int64)
    rows = (keys.k1 - 1 + t * keys.k3) % T + 1
    cols = (keys.k2 - 1 + t * keys.k4) % T + 1
    return np.stack([rows, cols], axis=1)


def filler(rho: int, T: int) -> np.ndarray:
    """Seed-determined T x T filler matrix (algorithm in the module docstring)."""
    bitgen = np.random.Philox(key=np.array([rho, 0], dtype=np.uint64))
    words = np.asarray(bitgen.random_raw(T * T), dtype=np.uint64)
    is_count = (words >> np.uint64(63)).astype(bool)
    counts = ((words & np.uint64(0xFFFFFFFF)) * np.uint64(26)) >> np.uint64(32)
    u = (words & np.uint64((1 << 53) - 1)).astype(np.float64) * (2.0**-53)
    orient = math.pi - 2.0 * math.pi * u
    cells = np.where(is_count, counts.astype(np.float64), orient)
    return cells.reshape(T, T)


@dataclass(frozen=True, eq=False)
class ProtectedTemplate:
    T: int
    s: int
    cells: np.ndarray
    format_version: int = FORMAT_VERSION

    def __post_init__(self) -> None:
        cells = np.asarray(self.cells, dtype=np.float64)
        if cells.shape != (self.T, self.T):
            raise TemplateFormatError(f"cells shape {cells.shape} does not match T={self.T}")
        if self.T < 2 * self.s:
            raise TemplateFormatError(f"T={self.T} smaller than one minutia row (2s={2 * self.s})")
        cells.setflags(write=False)
        object.__setattr__(self, "cells", cells)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ProtectedTemplate):
            return NotImplemented
        return (
            (self.T, self.s, self.format_version) == (other.T, other.s, other.format_version)
            and np.array_equal(self.cells, other.cells)
        )

    @property
    def n(self) -> int:
        return self.T // (2 * self.s)

    def to_bytes(self) -> bytes:
        header = _HEADER.pack(MAGIC, self.format_version, self.T, self.s)
        return header + self.cells.astype("<f8").tobytes(order="C")

    @classmethod
    def from_bytes(cls, data: bytes) -> "ProtectedTemplate":
        if len(data) < _HEADER.size:
            raise TemplateFormatError("template file shorter than its header")
        magic, version, T, s = _HEADER.unpack_from(data)
        if magic != MAGIC:
            raise TemplateFormatError(f"bad template magic {magic!r}")
        if version != FORMAT_VERSION:
            raise TemplateFormatError(f"unsupported template format version {version}")
        expected = _HEADER.size + 8 * T * T
        if len(data) != expected:
            raise TemplateFormatError(f"template payload is {len(data)} bytes, expected {expected}")
        if s < 1:
            raise TemplateFormatError("sector count must be positive")
        cells = np.frombuffer(data, dtype="<f8", offset=_HEADER.size).reshape(T, T)
        return cls(T, s, cells.astype(np.float64), version)


def save_template(template: ProtectedTemplate, path: str | Path) -> None:
    Path(path).write_bytes(template.to_bytes())


def load_template(path: str | Path) -> ProtectedTemplate:
    return ProtectedTemplate.from_bytes(Path(path).read_bytes())


def generate_template(
    features: FeatureMatrix, keys: KeySet, config: Optional[SectorConfig] = None
) -> ProtectedTemplate:
    s = features.s if config is None else config.s
    if s != features.s:
        raise ValueError(f"feature matrix has s={features.s}, config says s={s}")
    T = features.T
    if T < 2 * s:
        raise ValueError("need at least one minutia row")
    pos = position_cycle(keys, T)
    cells = filler(keys.rho, T)
    cells[pos[:, 0] - 1, pos[:, 1] - 1] = features.values.ravel()
    return ProtectedTemplate(T, s, cells)


def extract_features(template: ProtectedTemplate, keys: KeySet) -> FeatureMatrix:
    """Read the mapped cells back in cycle order and regroup into rows of 2s."""
    T, s = template.T, template.s
    if T % (2 * s):
        raise TemplateFormatError(f"T={T} is not a multiple of 2s={2 * s}; template corrupt")
    pos = position_cycle(keys, T)
    flat = template.cells[pos[:, 0] - 1, pos[:, 1] - 1]
    return FeatureMatrix(flat.reshape(T // (2 * s), 2 * s), s)


def cycle_mask(keys: KeySet, T: int) -> np.ndarray:
    """Boolean T x T mask of the cells on the key's position cycle."""
    mask = np.zeros((T, T), dtype=bool)
    pos = position_cycle(keys, T)
    mask[pos[:, 0] - 1, pos[:, 1] - 1] = True
    return mask


def draw_keys(rng: np.random.Generator, T_values, max_tries: int = 10_000) -> KeySet:
    """Random KeySet valid for every side length in ``T_values``.

    Starts are drawn from [1, min T]; jumps from [2, min T] coprime with each T.
    """
    Ts = sorted({int(t) for t in T_values})
    if not Ts:
        raise ValueError("need at least one template size")
    t_min = Ts[0]
    lcm = math.lcm(*Ts)

    def jump() -> int:
        for _ in range(max_tries):
            k = int(rng.integers(2, t_min + 1))
            if math.gcd(k, lcm) == 1:
                return k
        raise InvalidKeyError(f"no jump coprime with all of {Ts[:5]}...")

    k1 = int(rng.integers(1, t_min + 1))
    k2 = int(rng.integers(1, t_min + 1))
    rho = int(rng.integers(0, 2**63)) * 2 + int(rng.integers(0, 2))
    return KeySet(k1, k2, jump(), jump(), rho)
