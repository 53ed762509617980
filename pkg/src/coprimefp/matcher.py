"""Local and global matching of ridge-feature templates.

Local: for every non-empty (count, orientation) pair of a query row, take the
distance to the nearest non-empty pair of the enrolled row and average those
minima.  Global: pair query and enrolled rows greedily, smallest local score
first, one-to-one, while the score stays within ``local_threshold``; the
overall score is matched rows over participating query rows.  A query row
whose sectors are all empty carries no evidence and does not participate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .coprime import IncompatibleTemplateError, KeySet, ProtectedTemplate, extract_features
from .ridgefeat import FeatureMatrix

DEFAULT_LOCAL_THRESHOLD = 0.4
DEFAULT_ORIENTATION_WEIGHT = 4.0


@dataclass(frozen=True)
class MatchParams:
    local_threshold: float = DEFAULT_LOCAL_THRESHOLD
    orientation_weight: float = DEFAULT_ORIENTATION_WEIGHT

    def __post_init__(self) -> None:
        if not self.local_threshold > 0:
            raise ValueError("local_threshold must be > 0")
        if not self.orientation_weight > 0:
            raise ValueError("orientation_weight must be > 0")


@dataclass(frozen=True)
class MatchResult:
    overall_score: float
    matched_count: int
    query_minutiae_count: int  # N: participating query rows
    enrolled_minutiae_count: int
    pairs: tuple[tuple[int, int], ...] = ()
    featureless_query_rows: int = 0
    per_pair_local_scores: Optional[np.ndarray] = field(default=None, compare=False, repr=False)


def _orientation_gap(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # magnitude of the difference wrapped to (-pi, pi]
    d = np.mod(a - b + np.pi, 2 * np.pi) - np.pi
    return np.abs(d)


def _present(pairs: np.ndarray) -> np.ndarray:
    return ~((pairs[..., 0] == 0) & (pairs[..., 1] == 0))


def local_score(query_row, enrolled_row, params: MatchParams) -> Optional[float]:
    """Mean over query pairs of the distance to the closest enrolled pair.

    Rows are flat ``[count_1, orient_1, ...]``.  Returns None when the query
    row has no features and ``inf`` when the enrolled row has none.
    """
    q = np.asarray(query_row, dtype=np.float64).reshape(-1, 2)
    c = np.asarray(enrolled_row, dtype=np.float64).reshape(-1, 2)
    q = q[_present(q)]
    c = c[_present(c)]
    if len(q) == 0:
        return None
    if len(c) == 0:
        return math.inf
    dc = q[:, None, 0] - c[None, :, 0]
    do = params.orientation_weight * _orientation_gap(q[:, None, 1], c[None, :, 1])
    dist = np.sqrt(dc * dc + do * do)
    return float(dist.min(axis=1).mean())


def local_score_table(query: FeatureMatrix, enrolled: FeatureMatrix, params: MatchParams) -> np.ndarray:
    """N x M table of local scores; rows or columns without features are inf."""
    if query.s != enrolled.s:
        raise IncompatibleTemplateError(f"sector counts differ: {query.s} vs {enrolled.s}")
    q = query.pairs()  # (N, s, 2)
    c = enrolled.pairs()  # (M, s, 2)
    qp = _present(q)
    cp = _present(c)
    dc = q[:, None, :, None, 0] - c[None, :, None, :, 0]
    do = params.orientation_weight * _orientation_gap(q[:, None, :, None, 1], c[None, :, None, :, 1])
    dist = np.sqrt(dc * dc + do * do)  # (N, M, s, s)
    dist = np.where(cp[None, :, None, :], dist, np.inf)
    nearest = dist.min(axis=3)  # (N, M, s)
    nearest = np.where(qp[:, None, :], nearest, 0.0)
    counts = qp.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        table = nearest.sum(axis=2) / counts[:, None]
    table[counts == 0, :] = np.inf
    return table


def greedy_pairs(table: np.ndarray, threshold: float) -> list[tuple[int, int]]:
    """One-to-one pairing, globally smallest entry first, ties by (row, col)."""
    rows, cols = np.nonzero(table <= threshold)
    if len(rows) == 0:
        return []
    vals = table[rows, cols]
    order = np.lexsort((cols, rows, vals))
    used_r, used_c = set(), set()
    pairs = []
    for k in order:
        r, c = int(rows[k]), int(cols[k])
        if r in used_r or c in used_c:
            continue
        used_r.add(r)
        used_c.add(c)
        pairs.append((r, c))
    return pairs


def match_raw(
    query: FeatureMatrix, enrolled: FeatureMatrix, params: Optional[MatchParams] = None,
    keep_table: bool = False,
) -> MatchResult:
    """Match untransformed feature matrices (the baseline mode)."""
    params = params or MatchParams()
    table = local_score_table(query, enrolled, params)
    pairs = greedy_pairs(table, params.local_threshold)
    participating = int(_present(query.pairs()).any(axis=1).sum())
    return MatchResult(
        overall_score=len(pairs) / participating if participating else 0.0,
        matched_count=len(pairs),
        query_minutiae_count=participating,
        enrolled_minutiae_count=enrolled.n,
        pairs=tuple(pairs),
        featureless_query_rows=query.n - participating,
        per_pair_local_scores=table if keep_table else None,
    )


def global_match(
    query: ProtectedTemplate,
    enrolled: ProtectedTemplate,
    query_keys: KeySet,
    enrolled_keys: KeySet,
    params: Optional[MatchParams] = None,
    keep_table: bool = False,
) -> MatchResult:
    """Match two protected templates, reading each with the keys given for it."""
    if query.s != enrolled.s:
        raise IncompatibleTemplateError(f"sector counts differ: {query.s} vs {enrolled.s}")
    fq = extract_features(query, query_keys)
    fe = extract_features(enrolled, enrolled_keys)
    return match_raw(fq, fe, params, keep_table)
