"""Minutiae and skeleton data types, file parsers and the dataset layout.

On disk a minutiae file looks like::

    # optional comment lines
    S07 I03 300 300
    120 85 270
    64 140 12.5

The header is ``<subject_id> <impression_id> <width> <height>``; every other
line is ``<x> <y> <theta_degrees>`` with theta in [0, 360).  In memory theta
is kept in radians in [0, 2*pi).

Skeletons are PGM images (P2 or P5); any pixel value above 127 is ridge.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

TWO_PI = 2.0 * math.pi
RIDGE_THRESHOLD = 127


# ---------------------------------------------------------------------------
# Errors


class MinutiaeParseError(ValueError):
    """Base class for minutiae text-format errors; carries the 1-based line number."""

    def __init__(self, message: str, lineno: Optional[int] = None, path: Optional[str] = None):
        self.lineno = lineno
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}: "
        if lineno is not None:
            where += f"line {lineno}: "
        super().__init__(where + message)
        self.message = message


class EmptyFileError(MinutiaeParseError):
    pass


class MalformedLineError(MinutiaeParseError):
    pass


class AngleRangeError(MinutiaeParseError):
    pass


class DuplicateCoordinatesError(MinutiaeParseError):
    pass


class OutOfBoundsError(MinutiaeParseError):
    pass


class SkeletonParseError(ValueError):
    pass


class BadMagicError(SkeletonParseError):
    pass


class TruncatedPayloadError(SkeletonParseError):
    pass


class DimensionMismatchError(SkeletonParseError):
    pass


# ---------------------------------------------------------------------------
# Domain types


@dataclass(frozen=True)
class Minutia:
    """A minutia point: position in pixels and orientation in radians, [0, 2*pi)."""

    x: float
    y: float
    theta: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError("minutia coordinates must be finite")
        if self.x < 0 or self.y < 0:
            raise ValueError(f"minutia coordinates must be non-negative, got ({self.x}, {self.y})")
        if not (0.0 <= self.theta < TWO_PI):
            raise ValueError(f"theta must lie in [0, 2*pi), got {self.theta!r}")


@dataclass(frozen=True)
class MinutiaeRecord:
    subject_id: str
    impression_id: str
    width: int
    height: int
    minutiae: tuple[Minutia, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "minutiae", tuple(self.minutiae))
        if self.width <= 0 or self.height <= 0:
            raise ValueError("record dimensions must be positive")
        if not self.minutiae:
            raise ValueError("a minutiae record needs at least one minutia")
        seen = set()
        for m in self.minutiae:
            if not (m.x < self.width and m.y < self.height):
                raise ValueError(
                    f"minutia ({m.x}, {m.y}) outside {self.width}x{self.height} image"
                )
            if (m.x, m.y) in seen:
                raise ValueError(f"duplicate minutia coordinates ({m.x}, {m.y})")
            seen.add((m.x, m.y))

    def __len__(self) -> int:
        return len(self.minutiae)

    def positions(self) -> np.ndarray:
        """(n, 2) float array of (x, y)."""
        return np.array([(m.x, m.y) for m in self.minutiae], dtype=np.float64)

    def thetas(self) -> np.ndarray:
        return np.array([m.theta for m in self.minutiae], dtype=np.float64)


@dataclass(frozen=True, eq=False)
class SkeletonImage:
    """Binary thinned ridge map; ``pixels[y, x] == 1`` marks a ridge pixel."""

    width: int
    height: int
    pixels: np.ndarray

    def __post_init__(self) -> None:
        px = np.ascontiguousarray(self.pixels, dtype=np.uint8)
        if px.shape != (self.height, self.width):
            raise ValueError(
                f"pixel grid shape {px.shape} does not match {self.height}x{self.width}"
            )
        if px.size and px.max() > 1:
            raise ValueError("skeleton pixels must be 0 or 1")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SkeletonImage):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and np.array_equal(self.pixels, other.pixels)
        )

    @property
    def ridge_pixel_count(self) -> int:
        return int(self.pixels.sum())


@dataclass(frozen=True)
class DatasetEntry:
    record: MinutiaeRecord
    skeleton: Optional[SkeletonImage] = None
    path: Optional[Path] = field(default=None, compare=False)

    @property
    def skeleton_absent(self) -> bool:
        return self.skeleton is None


# ---------------------------------------------------------------------------
# Minutiae text format


def _is_comment_or_blank(line: str) -> bool:
    stripped = line.strip()
    return not stripped or stripped.startswith("#")


def _parse_number(token: str, lineno: int, what: str) -> float:
    try:
        value = float(token)
    except ValueError:
        raise MalformedLineError(f"{what} is not a number: {token!r}", lineno) from None
    if not math.isfinite(value):
        raise MalformedLineError(f"{what} is not finite: {token!r}", lineno)
    return value


def _coordinate(value: float) -> float | int:
    return int(value) if value == int(value) else value


def parse_minutiae_file(data: bytes | str, path: Optional[str] = None) -> MinutiaeRecord:
    """Parse the minutiae text format into a :class:`MinutiaeRecord`.

    Invalid input is always rejected, never repaired.  Each failure mode has
    its own exception class and names the offending line.
    """
    text = data.decode("utf-8") if isinstance(data, (bytes, bytearray)) else data
    try:
        return _parse_minutiae_text(text)
    except MinutiaeParseError as exc:
        if path is not None:
            raise type(exc)(exc.message, exc.lineno, path) from None
        raise


def _parse_minutiae_text(text: str) -> MinutiaeRecord:
    lines = [(i + 1, ln) for i, ln in enumerate(text.splitlines()) if not _is_comment_or_blank(ln)]
    if not lines:
        raise EmptyFileError("empty minutiae file (no header)", None)

    header_no, header = lines[0]
    parts = header.split()
    if len(parts) != 4:
        raise MalformedLineError(
            "header must be '<subject_id> <impression_id> <width> <height>'", header_no
        )
    subject_id, impression_id = parts[0], parts[1]
    try:
        width, height = int(parts[2]), int(parts[3])
    except ValueError:
        raise MalformedLineError("image width/height must be integers", header_no) from None
    if width <= 0 or height <= 0:
        raise MalformedLineError("image width/height must be positive", header_no)

    if len(lines) == 1:
        raise EmptyFileError("minutiae file has a header but no minutiae", header_no)

    minutiae: list[Minutia] = []
    seen: dict[tuple[float, float], int] = {}
    for lineno, line in lines[1:]:
        tokens = line.split()
        if len(tokens) != 3:
            raise MalformedLineError(f"expected '<x> <y> <theta>', got {line.strip()!r}", lineno)
        x = _parse_number(tokens[0], lineno, "x")
        y = _parse_number(tokens[1], lineno, "y")
        deg = _parse_number(tokens[2], lineno, "theta")
        if not (0.0 <= deg < 360.0):
            raise AngleRangeError(f"angle out of range [0, 360): {tokens[2]}", lineno)
        if not (0 <= x < width and 0 <= y < height):
            raise OutOfBoundsError(
                f"minutia ({tokens[0]}, {tokens[1]}) outside {width}x{height} image", lineno
            )
        key = (x, y)
        if key in seen:
            raise DuplicateCoordinatesError(
                f"duplicate coordinates ({tokens[0]}, {tokens[1]}), first seen on line {seen[key]}",
                lineno,
            )
        seen[key] = lineno
        theta = math.radians(deg)
        if theta >= TWO_PI:  # deg just below 360 can round up
            theta = 0.0
        minutiae.append(Minutia(_coordinate(x), _coordinate(y), theta))

    return MinutiaeRecord(subject_id, impression_id, width, height, tuple(minutiae))


def _format_number(value: float) -> str:
    if float(value) == int(value):
        return str(int(value))
    return repr(float(value))


def _format_degrees(theta: float) -> str:
    text = f"{math.degrees(theta):.6f}"
    if float(text) >= 360.0:
        text = "0.000000"
    return text


def format_minutiae(record: MinutiaeRecord) -> str:
    lines = [f"{record.subject_id} {record.impression_id} {record.width} {record.height}"]
    for m in record.minutiae:
        lines.append(f"{_format_number(m.x)} {_format_number(m.y)} {_format_degrees(m.theta)}")
    return "\n".join(lines) + "\n"


def write_minutiae_file(record: MinutiaeRecord, path: str | Path) -> None:
    Path(path).write_text(format_minutiae(record), encoding="utf-8")


def read_minutiae_file(path: str | Path) -> MinutiaeRecord:
    return parse_minutiae_file(Path(path).read_bytes(), path=str(path))


# ---------------------------------------------------------------------------
# PGM skeletons

_PGM_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def _pgm_header(data: bytes, count: int) -> tuple[list[bytes], int]:
    tokens = []
    pos = 2
    for _ in range(count):
        m = _PGM_TOKEN.match(data, pos)
        if m is None:
            raise TruncatedPayloadError("truncated PGM header")
        tokens.append(m.group(1))
        pos = m.end()
    return tokens, pos


def parse_skeleton(
    data: bytes, expected_size: Optional[tuple[int, int]] = None
) -> SkeletonImage:
    """Parse a P2 or P5 PGM into a :class:`SkeletonImage`.

    ``expected_size`` is an optional ``(width, height)`` the image must match,
    normally taken from the paired minutiae record.
    """
    magic = data[:2]
    if magic not in (b"P2", b"P5"):
        raise BadMagicError(f"not a PGM image (magic {magic!r}); expected P2 or P5")

    tokens, pos = _pgm_header(data, 3)
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise SkeletonParseError("PGM header fields must be integers") from None
    if width <= 0 or height <= 0 or not (0 < maxval < 65536):
        raise SkeletonParseError(f"invalid PGM header: {width}x{height}, maxval {maxval}")

    n = width * height
    if magic == b"P5":
        # exactly one whitespace byte separates the header from the raster
        start = pos + 1
        bytes_per = 1 if maxval < 256 else 2
        payload = data[start:]
        if len(payload) < n * bytes_per:
            raise TruncatedPayloadError(
                f"P5 payload has {len(payload)} bytes, {width}x{height} needs {n * bytes_per}"
            )
        dtype = np.uint8 if bytes_per == 1 else np.dtype(">u2")
        values = np.frombuffer(payload, dtype=dtype, count=n).astype(np.int64)
    else:
        body = data[pos:]
        body = re.sub(rb"#[^\n]*", b"", body)
        raw = body.split()
        if len(raw) < n:
            raise TruncatedPayloadError(f"P2 payload has {len(raw)} values, expected {n}")
        try:
            values = np.array([int(v) for v in raw[:n]], dtype=np.int64)
        except ValueError:
            raise SkeletonParseError("P2 payload contains a non-integer value") from None

    if expected_size is not None and (width, height) != tuple(expected_size):
        raise DimensionMismatchError(
            f"skeleton is {width}x{height}, expected {expected_size[0]}x{expected_size[1]}"
        )
    pixels = (values.reshape(height, width) > RIDGE_THRESHOLD).astype(np.uint8)
    return SkeletonImage(width, height, pixels)


def format_skeleton_pgm(skeleton: SkeletonImage) -> bytes:
    """Binary P5 encoding, ridge pixels written as 255."""
    header = f"P5\n{skeleton.width} {skeleton.height}\n255\n".encode("ascii")
    return header + (skeleton.pixels.astype(np.uint8) * 255).tobytes()


def read_skeleton(path: str | Path, expected_size: Optional[tuple[int, int]] = None) -> SkeletonImage:
    try:
        return parse_skeleton(Path(path).read_bytes(), expected_size)
    except SkeletonParseError as exc:
        raise type(exc)(f"{path}: {exc}") from None


def write_skeleton(skeleton: SkeletonImage, path: str | Path) -> None:
    Path(path).write_bytes(format_skeleton_pgm(skeleton))


# ---------------------------------------------------------------------------
# Dataset layout


def _natural_key(value: str) -> tuple:
    return tuple((0, int(part), "") if part.isdigit() else (1, 0, part)
                 for part in re.split(r"(\d+)", value) if part)


def entry_sort_key(entry: DatasetEntry) -> tuple:
    return (_natural_key(entry.record.subject_id), _natural_key(entry.record.impression_id))


def load_dataset(root: str | Path) -> list[DatasetEntry]:
    """Load every ``<subject>_<impression>.min`` file under ``root``.

    A sibling ``.pgm`` with the same stem is attached as the skeleton; without
    one the entry is flagged ``skeleton_absent``.  Entries are sorted by
    (subject_id, impression_id) with numeric parts compared as numbers.
    """
    root = Path(root)
    entries = []
    for path in sorted(root.glob("*.min")):
        if "_" not in path.stem:
            continue
        record = read_minutiae_file(path)
        skel_path = path.with_suffix(".pgm")
        skeleton = None
        if skel_path.exists():
            skeleton = read_skeleton(skel_path, (record.width, record.height))
        entries.append(DatasetEntry(record, skeleton, path))
    entries.sort(key=entry_sort_key)
    return entries


def save_dataset(entries: Iterable[DatasetEntry], root: str | Path) -> list[Path]:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    written = []
    for entry in entries:
        stem = f"{entry.record.subject_id}_{entry.record.impression_id}"
        path = root / f"{stem}.min"
        write_minutiae_file(entry.record, path)
        written.append(path)
        if entry.skeleton is not None:
            write_skeleton(entry.skeleton, root / f"{stem}.pgm")
    return written


def group_by_subject(entries: Sequence[DatasetEntry]) -> dict[str, list[DatasetEntry]]:
    """Subject id -> impressions in sorted order (first impression first)."""
    groups: dict[str, list[DatasetEntry]] = {}
    for entry in sorted(entries, key=entry_sort_key):
        groups.setdefault(entry.record.subject_id, []).append(entry)
    return groups
