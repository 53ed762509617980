"""Verification-protocol evaluation and the security analyses.

Protocol: genuine comparisons pair every two impressions of a subject (the
later impression is the query); imposter comparisons pair the first
impressions of every two subjects.  Scores are acceptance scores in [0, 1]:
a comparison is accepted when its score is at least the threshold.

Key policies:

* ``None`` -- unprotected baseline, raw feature matrices are matched.
* :class:`SameKey` -- every subject uses the same KeySet.
* :class:`PerUserKeys` -- every subject gets its own seeded KeySet.  Each
  template is generated with its owner's keys and the verifier reads both
  templates with the keys of the claimed identity, so an imposter query is
  read on the wrong cycle and sees mostly filler.
"""

from __future__ import annotations

import itertools
import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .coprime import (
    InvalidKeyError,
    KeySet,
    ProtectedTemplate,
    cycle_mask,
    draw_keys,
    generate_template,
    validate_keys,
)
from .fpdata import DatasetEntry, group_by_subject
from .matcher import MatchParams, global_match, match_raw
from .ridgefeat import FeatureMatrix, build_feature_matrix
from .sectoring import SectorConfig

HISTOGRAM_BINS = 50


class EvaluationError(ValueError):
    """Not enough (or unsuitable) data for the requested evaluation."""


# ---------------------------------------------------------------------------
# Result types


@dataclass(frozen=True)
class ScoreSet:
    genuine: tuple[float, ...]
    imposter: tuple[float, ...]
    label: str = ""
    timings: Optional[dict] = field(default=None, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "genuine", tuple(float(v) for v in self.genuine))
        object.__setattr__(self, "imposter", tuple(float(v) for v in self.imposter))
        for v in itertools.chain(self.genuine, self.imposter):
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"score {v} outside [0, 1]")

    @property
    def counts(self) -> tuple[int, int]:
        return len(self.genuine), len(self.imposter)


@dataclass(frozen=True)
class EvalReport:
    eer: float  # percent
    eer_threshold: float
    roc: tuple[tuple[float, float], ...]  # (FAR %, GAR %)
    counts: tuple[int, int]  # (genuine, imposter)
    timings: Optional[dict] = None
    label: str = ""

    def to_dict(self) -> dict:
        out = {
            "label": self.label,
            "eer_percent": self.eer,
            "eer_threshold": self.eer_threshold,
            "counts": {"genuine": self.counts[0], "imposter": self.counts[1]},
            "roc": [{"far_percent": far, "gar_percent": gar} for far, gar in self.roc],
        }
        if self.timings is not None:
            out["timings"] = self.timings
        return out


@dataclass(frozen=True)
class DistributionStats:
    mean: float
    std: float
    histogram: tuple[int, ...]
    kind: str
    count: int

    KINDS = ("genuine", "imposter", "pseudo-imposter", "pseudo-genuine")

    @classmethod
    def from_scores(cls, scores: Sequence[float], kind: str) -> "DistributionStats":
        if kind not in cls.KINDS:
            raise ValueError(f"unknown distribution kind {kind!r}")
        a = np.asarray(scores, dtype=np.float64)
        if a.size == 0:
            raise EvaluationError(f"empty {kind} distribution")
        hist, _ = np.histogram(a, bins=HISTOGRAM_BINS, range=(0.0, 1.0))
        return cls(float(a.mean()), float(a.std()), tuple(int(h) for h in hist), kind, int(a.size))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "count": self.count,
            "mean": self.mean,
            "std": self.std,
            "histogram": list(self.histogram),
        }


def overlap_coefficient(a: DistributionStats, b: DistributionStats) -> float:
    """Shared area of the two normalised histograms, in [0, 1]."""
    ha = np.asarray(a.histogram, dtype=np.float64) / a.count
    hb = np.asarray(b.histogram, dtype=np.float64) / b.count
    return float(np.minimum(ha, hb).sum())


# ---------------------------------------------------------------------------
# Key policies


@dataclass(frozen=True)
class SameKey:
    keys: KeySet

    label = "same-key"

    def assign(self, subjects: Sequence[str], T_values: Sequence[int]) -> dict[str, KeySet]:
        for T in sorted(set(T_values)):
            problem = validate_keys(self.keys, T)
            if problem is not None:
                raise InvalidKeyError(f"shared keys unusable for a template of side {T}: {problem}")
        return {s: self.keys for s in subjects}


@dataclass(frozen=True)
class PerUserKeys:
    """Seeded per-subject keys, each valid for every template size in the dataset."""

    seed: int

    label = "different-key"

    def assign(self, subjects: Sequence[str], T_values: Sequence[int]) -> dict[str, KeySet]:
        rng = np.random.default_rng(np.random.SeedSequence(self.seed))
        return {s: draw_keys(rng, T_values) for s in subjects}


KeyPolicy = Union[SameKey, PerUserKeys, None]


# ---------------------------------------------------------------------------
# Protocol


def protocol_pairs(dataset: Sequence[DatasetEntry]):
    """Index pairs ``(query, enrolled)`` for genuine and imposter comparisons.

    Indices refer to ``dataset`` as given.  Raises EvaluationError unless there
    are at least two subjects with at least two impressions each.
    """
    index = {id(e): k for k, e in enumerate(dataset)}
    groups = group_by_subject(dataset)
    if len(groups) < 2:
        raise EvaluationError(f"need at least 2 subjects, got {len(groups)}")
    short = [s for s, g in groups.items() if len(g) < 2]
    if short:
        raise EvaluationError(f"subjects with fewer than 2 impressions: {short[:5]}")
    genuine = []
    for impressions in groups.values():
        ids = [index[id(e)] for e in impressions]
        for a, b in itertools.combinations(range(len(ids)), 2):
            genuine.append((ids[b], ids[a]))
    firsts = [index[id(g[0])] for g in groups.values()]
    imposter = [(firsts[b], firsts[a]) for a, b in itertools.combinations(range(len(firsts)), 2)]
    return genuine, imposter


def expected_comparison_counts(subjects: int, impressions: int) -> tuple[int, int]:
    return subjects * math.comb(impressions, 2), math.comb(subjects, 2)


def compute_features(
    dataset: Sequence[DatasetEntry], config: Optional[SectorConfig] = None
) -> list[FeatureMatrix]:
    config = config or SectorConfig()
    out = []
    for entry in dataset:
        if entry.skeleton is None:
            raise EvaluationError(
                f"no skeleton for subject {entry.record.subject_id} "
                f"impression {entry.record.impression_id}"
            )
        out.append(build_feature_matrix(entry.record, entry.skeleton, config))
    return out


def fvc_protocol_scores(
    dataset: Sequence[DatasetEntry],
    key_policy: KeyPolicy,
    config: Optional[SectorConfig] = None,
    params: Optional[MatchParams] = None,
    features: Optional[Sequence[FeatureMatrix]] = None,
) -> ScoreSet:
    """Genuine and imposter scores under ``key_policy`` (``None`` = unprotected).

    ``features`` may carry precomputed feature matrices aligned with
    ``dataset`` so several scenarios can share one extraction pass.
    """
    config = config or SectorConfig()
    params = params or MatchParams()
    genuine_pairs, imposter_pairs = protocol_pairs(dataset)
    t0 = time.perf_counter()
    if features is None:
        features = compute_features(dataset, config)
    elif len(features) != len(dataset):
        raise ValueError("features must align with the dataset")
    t_features = time.perf_counter() - t0
    subject_of = [e.record.subject_id for e in dataset]

    t_protect = 0.0
    if key_policy is None:
        label = "unprotected"

        def score(q: int, e: int) -> float:
            return match_raw(features[q], features[e], params).overall_score

    else:
        label = key_policy.label
        keys = key_policy.assign(sorted(set(subject_of)), [f.T for f in features])
        t0 = time.perf_counter()
        templates = [generate_template(f, keys[s]) for f, s in zip(features, subject_of)]
        t_protect = time.perf_counter() - t0

        def score(q: int, e: int) -> float:
            claimed = keys[subject_of[e]]
            return global_match(templates[q], templates[e], claimed, claimed, params).overall_score

    t0 = time.perf_counter()
    genuine = [score(q, e) for q, e in genuine_pairs]
    imposter = [score(q, e) for q, e in imposter_pairs]
    t_match = time.perf_counter() - t0
    timings = {
        "feature_extraction_mean_s": t_features / len(dataset),
        "template_generation_mean_s": t_protect / len(dataset),
        "matching_mean_s": t_match / (len(genuine) + len(imposter)),
    }
    return ScoreSet(genuine, imposter, label, timings)


# ---------------------------------------------------------------------------
# Error rates


def error_curve(genuine, imposter):
    """``(thresholds, FAR, FRR)`` as fractions over every observed score.

    FAR(t) is the fraction of imposter scores >= t and FRR(t) the fraction of
    genuine scores < t.  A final threshold just above the largest score closes
    the curve at FAR = 0, FRR = 1.
    """
    g = np.sort(np.asarray(genuine, dtype=np.float64))
    i = np.sort(np.asarray(imposter, dtype=np.float64))
    if g.size == 0 or i.size == 0:
        raise EvaluationError("both genuine and imposter scores are required")
    thr = np.unique(np.concatenate([g, i]))
    thr = np.append(thr, np.nextafter(thr[-1], np.inf))
    frr = np.searchsorted(g, thr, side="left") / g.size
    far = 1.0 - np.searchsorted(i, thr, side="left") / i.size
    return thr, far, frr


def _lower_hull(x: np.ndarray, y: np.ndarray) -> list[int]:
    """Indices of the lower convex hull of points sorted by ascending x."""
    hull: list[int] = []
    for k in range(len(x)):
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            cross = (x[b] - x[a]) * (y[k] - y[a]) - (y[b] - y[a]) * (x[k] - x[a])
            if cross <= 0:
                hull.pop()
            else:
                break
        hull.append(k)
    return hull


def compute_eer(scores: ScoreSet, resolution: int = 101) -> EvalReport:
    """Equal error rate where FAR = FRR on the convex hull of the ROC.

    Operating points between two thresholds are reachable by randomising
    between them, so the error trade-off is the lower convex hull of the
    (FAR, FRR) points; the EER is where that hull meets FAR = FRR.  The
    threshold is interpolated between the two hull vertices with the same
    weight.
    """
    thr, far, frr = error_curve(scores.genuine, scores.imposter)
    # ascending FAR is descending threshold
    x, y, t = far[::-1], frr[::-1], thr[::-1]
    hull = _lower_hull(x, y)
    d = x[hull] - y[hull]
    b = int(np.argmax(d >= 0))  # first hull vertex on or below the diagonal
    hb = hull[b]
    if d[b] == 0 or b == 0:
        eer, threshold = float(x[hb]), float(t[hb])
    else:
        ha = hull[b - 1]
        da, db = d[b - 1], d[b]
        lam = da / (da - db)
        eer = float(x[ha] + lam * (x[hb] - x[ha]))
        threshold = float(t[ha] + lam * (t[hb] - t[ha]))
    return EvalReport(
        eer=100.0 * eer,
        eer_threshold=threshold,
        roc=tuple(roc_points(scores, resolution)),
        counts=scores.counts,
        timings=scores.timings,
        label=scores.label,
    )


def roc_points(scores: ScoreSet, resolution: int = 101) -> list[tuple[float, float]]:
    """(FAR %, GAR %) pairs along a threshold sweep from low to high.

    At most ``resolution`` points, picked evenly from the observed thresholds;
    the first (FAR = GAR = 100) and last (FAR = 0, GAR = 0) are always kept.
    """
    if resolution < 2:
        raise ValueError("resolution must be at least 2")
    thr, far, frr = error_curve(scores.genuine, scores.imposter)
    pick = np.unique(np.linspace(0, len(thr) - 1, min(resolution, len(thr))).round().astype(int))
    return [(100.0 * float(far[k]), 100.0 * (1.0 - float(frr[k]))) for k in pick]


# ---------------------------------------------------------------------------
# Security analyses


def _distinct_keys(keys: Sequence[KeySet]) -> None:
    if len(set(keys)) != len(keys):
        raise InvalidKeyError("keys passed as different are not pairwise distinct")


def revocability_experiment(
    entry_features: FeatureMatrix,
    enrolled_keys: KeySet,
    revoked: Union[int, Sequence[KeySet]],
    population: Sequence[DatasetEntry],
    config: Optional[SectorConfig] = None,
    params: Optional[MatchParams] = None,
    seed: int = 0,
    population_features: Optional[Sequence[FeatureMatrix]] = None,
) -> list[DistributionStats]:
    """Genuine, imposter and pseudo-imposter distributions.

    Pseudo-imposter scores compare the template enrolled under
    ``enrolled_keys`` with templates of the same finger made under other keys
    (``revoked``: a count K of keys to draw, or the keys themselves), read with
    the enrolled keys.  Genuine and imposter scores come from the
    different-key protocol on ``population``.
    """
    params = params or MatchParams()
    T = entry_features.T
    if isinstance(revoked, int):
        if revoked < 2:
            raise ValueError("need at least 2 revoked keys")
        rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
        revoked_keys: list[KeySet] = []
        while len(revoked_keys) < revoked:
            k = draw_keys(rng, [T])
            if k != enrolled_keys and k not in revoked_keys:
                revoked_keys.append(k)
    else:
        revoked_keys = list(revoked)
        if len(revoked_keys) < 2:
            raise ValueError("need at least 2 revoked keys")
        _distinct_keys([enrolled_keys, *revoked_keys])
    enrolled = generate_template(entry_features, enrolled_keys)
    pseudo = [
        global_match(generate_template(entry_features, k), enrolled, enrolled_keys, enrolled_keys,
                     params).overall_score
        for k in revoked_keys
    ]
    scores = fvc_protocol_scores(population, PerUserKeys(seed), config, params, population_features)
    return [
        DistributionStats.from_scores(scores.genuine, "genuine"),
        DistributionStats.from_scores(scores.imposter, "imposter"),
        DistributionStats.from_scores(pseudo, "pseudo-imposter"),
    ]


@dataclass(frozen=True)
class UnlinkabilityReport:
    pseudo_genuine: DistributionStats
    pseudo_imposter: DistributionStats
    overlap: float
    warnings: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "pseudo_genuine": self.pseudo_genuine.to_dict(),
            "pseudo_imposter": self.pseudo_imposter.to_dict(),
            "overlap_coefficient": self.overlap,
            "warnings": list(self.warnings),
        }


def unlinkability_experiment(
    dataset: Sequence[DatasetEntry],
    key_assignments: tuple[PerUserKeys, PerUserKeys],
    config: Optional[SectorConfig] = None,
    params: Optional[MatchParams] = None,
    features: Optional[Sequence[FeatureMatrix]] = None,
) -> UnlinkabilityReport:
    """Cross-application comparisons under two independent key draws A and B.

    Pseudo-genuine: impressions of one subject, the enrolled one protected
    under draw A and the query under draw B.  Pseudo-imposter: first
    impressions of two subjects, enrolled under A and query under B.  Both
    templates are read with the enrolled subject's A keys.
    """
    params = params or MatchParams()
    draw_a, draw_b = key_assignments
    notes = []
    if draw_a == draw_b:
        msg = "both key draws are identical; pseudo-genuine scores degrade to genuine scores"
        warnings.warn(msg, stacklevel=2)
        notes.append(msg)
    groups = group_by_subject(dataset)
    if len(groups) < 2:
        raise EvaluationError("need at least 2 subjects for pseudo-imposter comparisons")
    if all(len(g) < 2 for g in groups.values()):
        raise EvaluationError("need a subject with at least 2 impressions for pseudo-genuine comparisons")
    if features is None:
        features = compute_features(dataset, config)
    index = {id(e): k for k, e in enumerate(dataset)}
    subjects = sorted(groups)
    Ts = [f.T for f in features]
    keys_a = draw_a.assign(subjects, Ts)
    keys_b = draw_b.assign(subjects, Ts)
    subject_of = [e.record.subject_id for e in dataset]
    tmpl_a = {}
    tmpl_b = {}

    def template(k: int, which: str) -> ProtectedTemplate:
        cache, keys = (tmpl_a, keys_a) if which == "a" else (tmpl_b, keys_b)
        if k not in cache:
            cache[k] = generate_template(features[k], keys[subject_of[k]])
        return cache[k]

    def score(q: int, e: int) -> float:
        claimed = keys_a[subject_of[e]]
        return global_match(template(q, "b"), template(e, "a"), claimed, claimed, params).overall_score

    pseudo_genuine = []
    for impressions in groups.values():
        ids = [index[id(e)] for e in impressions]
        for a, b in itertools.combinations(range(len(ids)), 2):
            pseudo_genuine.append(score(ids[b], ids[a]))
    firsts = [index[id(groups[s][0])] for s in groups]
    pseudo_imposter = [
        score(firsts[b], firsts[a]) for a, b in itertools.combinations(range(len(firsts)), 2)
    ]
    pg = DistributionStats.from_scores(pseudo_genuine, "pseudo-genuine")
    pi = DistributionStats.from_scores(pseudo_imposter, "pseudo-imposter")
    return UnlinkabilityReport(pg, pi, overlap_coefficient(pg, pi), tuple(notes))


def brute_force_estimate(n: int, s: int) -> int:
    """Guesses needed to find the mapped cells blindly: (T^2)^2 with T = n*2s."""
    if n < 1 or s < 1:
        raise ValueError("n and s must be positive")
    T = n * 2 * s
    return (T * T) ** 2


# ---------------------------------------------------------------------------
# Diversity


@dataclass(frozen=True)
class KeySpace:
    """Candidate values per key component; ``None`` means every valid value for T."""

    k1: Optional[Sequence[int]] = None
    k2: Optional[Sequence[int]] = None
    k3: Optional[Sequence[int]] = None
    k4: Optional[Sequence[int]] = None
    rho: Optional[Sequence[int]] = None

    def candidates(self, T: int) -> list[list[int]]:
        def valid(values, full, ok):
            vals = full if values is None else values
            return sorted({int(v) for v in vals if ok(int(v))})

        starts = range(1, T + 1)
        jumps = range(2, T + 1)
        return [
            valid(self.k1, starts, lambda v: 1 <= v <= T),
            valid(self.k2, starts, lambda v: 1 <= v <= T),
            valid(self.k3, jumps, lambda v: 2 <= v <= T and math.gcd(v, T) == 1),
            valid(self.k4, jumps, lambda v: 2 <= v <= T and math.gcd(v, T) == 1),
            [] if self.rho is None else sorted({int(v) for v in self.rho}),
        ]

    def size(self, T: int) -> float:
        """Number of distinct KeySets; ``inf`` when rho is unrestricted."""
        c = self.candidates(T)
        if self.rho is None:
            return math.inf if all(c[:4]) else 0
        return math.prod(len(v) for v in c)


@dataclass(frozen=True)
class DiversityResult:
    templates: tuple[ProtectedTemplate, ...]
    keys: tuple[KeySet, ...]
    cross_scores: np.ndarray  # [a, b]: template b read with a's keys vs template a
    filler_difference: np.ndarray  # [a, b]: fraction of differing cells off both cycles

    def to_dict(self) -> dict:
        n = len(self.keys)
        pairs = [
            {
                "a": a,
                "b": b,
                "cross_score": float(self.cross_scores[a, b]),
                "non_cycle_cell_difference": float(self.filler_difference[a, b]),
            }
            for a in range(n) for b in range(n) if a != b
        ]
        return {"count": n, "keys": [k.to_line() for k in self.keys], "pairs": pairs}


def diversity_generate(
    features: FeatureMatrix,
    count: int,
    space: KeySpace = KeySpace(),
    seed: int = 0,
    params: Optional[MatchParams] = None,
) -> DiversityResult:
    """``count`` templates of one finger under pairwise-distinct KeySets."""
    if count < 1:
        raise ValueError("count must be positive")
    params = params or MatchParams()
    T = features.T
    size = space.size(T)
    if size < count:
        raise EvaluationError(f"key space holds {size} distinct KeySets, {count} requested")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    c = space.candidates(T)

    def pick(values):
        return int(values[int(rng.integers(len(values)))])

    chosen: list[KeySet] = []
    if math.isinf(size) or size > 50 * count:
        while len(chosen) < count:
            rho = int(rng.integers(0, 2**63)) if space.rho is None else pick(c[4])
            k = KeySet(pick(c[0]), pick(c[1]), pick(c[2]), pick(c[3]), rho)
            if k not in chosen:
                chosen.append(k)
    else:
        every = list(itertools.product(*c))
        for k in rng.choice(len(every), size=count, replace=False):
            chosen.append(KeySet(*(int(v) for v in every[int(k)])))

    templates = [generate_template(features, k) for k in chosen]
    masks = [cycle_mask(k, T) for k in chosen]
    cross = np.eye(count)
    diff = np.zeros((count, count))
    for a, b in itertools.permutations(range(count), 2):
        cross[a, b] = global_match(
            templates[b], templates[a], chosen[a], chosen[a], params
        ).overall_score
        if a < b:
            off = ~(masks[a] | masks[b])
            frac = float(np.mean(templates[a].cells[off] != templates[b].cells[off]))
            diff[a, b] = diff[b, a] = frac
    return DiversityResult(tuple(templates), tuple(chosen), cross, diff)


# ---------------------------------------------------------------------------
# Timing


@dataclass(frozen=True)
class TimingTable:
    generation_mean_s: float
    matching_mean_s: float
    generation_run_std_s: float
    matching_run_std_s: float
    repeats: int
    templates: int
    comparisons: int

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def timing_benchmark(
    dataset: Sequence[DatasetEntry],
    config: Optional[SectorConfig] = None,
    params: Optional[MatchParams] = None,
    repeats: int = 3,
    seed: int = 0,
    max_comparisons: int = 500,
) -> TimingTable:
    """Mean wall-clock seconds per template generation and per comparison.

    Generation covers feature extraction plus protection.  Comparisons are
    genuine protocol pairs (or consecutive entries when the dataset has no
    repeated subject).  The spread of the per-run means is reported too.
    """
    if not dataset:
        raise EvaluationError("timing needs a non-empty dataset")
    if repeats < 1:
        raise ValueError("repeats must be positive")
    config = config or SectorConfig()
    params = params or MatchParams()
    try:
        pairs = protocol_pairs(dataset)[0]
    except EvaluationError:
        pairs = [(k, k - 1) for k in range(1, len(dataset))] or [(0, 0)]
    pairs = pairs[:max_comparisons]
    gen_means, match_means = [], []
    for _ in range(repeats):
        t0 = time.perf_counter()
        features = compute_features(dataset, config)
        keys = PerUserKeys(seed).assign(
            sorted({e.record.subject_id for e in dataset}), [f.T for f in features]
        )
        templates = [
            generate_template(f, keys[e.record.subject_id]) for f, e in zip(features, dataset)
        ]
        gen_means.append((time.perf_counter() - t0) / len(dataset))
        t0 = time.perf_counter()
        for q, e in pairs:
            claimed = keys[dataset[e].record.subject_id]
            global_match(templates[q], templates[e], claimed, claimed, params)
        match_means.append((time.perf_counter() - t0) / len(pairs))
    return TimingTable(
        float(np.mean(gen_means)),
        float(np.mean(match_means)),
        float(np.std(gen_means)),
        float(np.std(match_means)),
        repeats,
        len(dataset),
        len(pairs),
    )
