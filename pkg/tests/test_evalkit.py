from __future__ import annotations

import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coprimefp.coprime import InvalidKeyError, KeySet, validate_keys
from coprimefp.evalkit import (
    DistributionStats,
    EvaluationError,
    KeySpace,
    PerUserKeys,
    SameKey,
    ScoreSet,
    brute_force_estimate,
    compute_eer,
    compute_features,
    diversity_generate,
    expected_comparison_counts,
    fvc_protocol_scores,
    overlap_coefficient,
    protocol_pairs,
    revocability_experiment,
    roc_points,
    timing_benchmark,
    unlinkability_experiment,
)
from coprimefp.fpdata import DatasetEntry
from coprimefp.synthgen import generate_population

from conftest import make_record, random_features
from oracles import hull_eer


def fake_dataset(subjects, impressions):
    return [
        DatasetEntry(make_record([(10, 10, 0.0)], subject=str(s), impression=str(i)), None)
        for s in range(1, subjects + 1) for i in range(1, impressions + 1)
    ]


@pytest.fixture(scope="module")
def small_population():
    data = generate_population(4, 3, 777)
    return data, compute_features(data)


# -- EER ----------------------------------------------------------------------------------


class TestEER:
    def test_separated(self):
        assert compute_eer(ScoreSet([0.9, 0.8], [0.1, 0.2])).eer == 0.0

    def test_worked_example(self):
        rep = compute_eer(ScoreSet([0.6, 0.4], [0.5, 0.3]))
        assert rep.eer == pytest.approx(25.0)
        assert 0.4 < rep.eer_threshold <= 0.5

    def test_identical_distributions(self):
        assert compute_eer(ScoreSet([0.3, 0.5, 0.7], [0.3, 0.5, 0.7])).eer == pytest.approx(50.0)
        assert compute_eer(ScoreSet([0.5], [0.5])).eer == pytest.approx(50.0)

    def test_inverted_is_capped_at_chance(self):
        # the trivial accept-all / reject-all points always span FAR = FRR = 50%
        assert compute_eer(ScoreSet([0.1, 0.2], [0.8, 0.9])).eer == pytest.approx(50.0)

    def test_needs_both_sides(self):
        with pytest.raises(EvaluationError):
            compute_eer(ScoreSet([0.5], []))

    def test_scores_bounded(self):
        with pytest.raises(ValueError):
            ScoreSet([1.5], [0.2])

    @settings(max_examples=150, deadline=None)
    @given(st.integers(0, 2**32), st.integers(1, 60), st.integers(1, 60), st.sampled_from([3, 11, 1000]))
    def test_matches_hull_oracle(self, seed, ng, ni, levels):
        r = np.random.default_rng(seed)
        g = np.round(r.beta(4, 2, ng) * levels) / levels
        i = np.round(r.beta(2, 4, ni) * levels) / levels
        assert compute_eer(ScoreSet(g, i)).eer / 100 == pytest.approx(hull_eer(g, i), abs=1e-9)

    def test_roc_shape(self):
        r = np.random.default_rng(5)
        s = ScoreSet(r.beta(4, 2, 300), r.beta(2, 4, 500))
        roc = roc_points(s, 21)
        assert roc[0] == (100.0, 100.0) and roc[-1] == (0.0, 0.0)
        assert len(roc) <= 21
        far = [p[0] for p in roc]
        gar = [p[1] for p in roc]
        assert far == sorted(far, reverse=True) and gar == sorted(gar, reverse=True)

    def test_report_dict(self):
        d = compute_eer(ScoreSet([0.9, 0.8], [0.1, 0.2], "x")).to_dict()
        assert set(d) == {"label", "eer_percent", "eer_threshold", "counts", "roc"}
        assert d["counts"] == {"genuine": 2, "imposter": 2}


# -- protocol ----------------------------------------------------------------------------------


class TestProtocol:
    @pytest.mark.parametrize("s, i, expected", [(2, 2, (2, 1)), (20, 4, (120, 190)), (100, 8, (2800, 4950))])
    def test_counts(self, s, i, expected):
        g, imp = protocol_pairs(fake_dataset(s, i))
        assert (len(g), len(imp)) == expected == expected_comparison_counts(s, i)

    def test_pair_semantics(self):
        data = fake_dataset(3, 3)
        g, imp = protocol_pairs(data)
        for q, e in g:
            assert data[q].record.subject_id == data[e].record.subject_id
            assert int(data[q].record.impression_id) > int(data[e].record.impression_id)
        for q, e in imp:
            assert data[q].record.impression_id == data[e].record.impression_id == "1"
            assert data[q].record.subject_id != data[e].record.subject_id

    def test_too_small(self):
        with pytest.raises(EvaluationError):
            protocol_pairs(fake_dataset(1, 4))
        with pytest.raises(EvaluationError):
            protocol_pairs(fake_dataset(3, 1))

    def test_missing_skeleton(self):
        with pytest.raises(EvaluationError):
            compute_features(fake_dataset(2, 2))

    def test_scenarios(self, small_population):
        data, feats = small_population
        plain = fvc_protocol_scores(data, None, features=feats)
        Ts = [f.T for f in feats]
        shared = PerUserKeys(3).assign(["x"], Ts)["x"]
        same = fvc_protocol_scores(data, SameKey(shared), features=feats)
        diff = fvc_protocol_scores(data, PerUserKeys(9), features=feats)
        assert plain.counts == same.counts == diff.counts == (12, 6)
        assert same.genuine == plain.genuine and same.imposter == plain.imposter
        assert diff.genuine == plain.genuine
        assert max(diff.imposter) < 0.1
        assert set(plain.timings) == {"feature_extraction_mean_s", "template_generation_mean_s", "matching_mean_s"}

    def test_same_key_must_fit_every_size(self, small_population):
        data, feats = small_population
        with pytest.raises(InvalidKeyError):
            fvc_protocol_scores(data, SameKey(KeySet(1, 1, 2, 3)), features=feats)

    def test_per_user_keys_deterministic(self):
        subjects, Ts = ["1", "2", "3"], [320, 480, 528]
        a, b = PerUserKeys(4).assign(subjects, Ts), PerUserKeys(4).assign(subjects, Ts)
        assert a == b and len(set(a.values())) == 3
        assert all(validate_keys(k, T) is None for k in a.values() for T in Ts)


# -- distributions and analyses ------------------------------------------------------------------


def test_overlap():
    a = DistributionStats.from_scores([0.1, 0.2, 0.3], "genuine")
    b = DistributionStats.from_scores([0.1, 0.2, 0.3], "imposter")
    c = DistributionStats.from_scores([0.9], "imposter")
    assert overlap_coefficient(a, b) == pytest.approx(1.0)
    assert overlap_coefficient(a, c) == 0.0
    assert sum(a.histogram) == 3 and len(a.histogram) == 50
    with pytest.raises(ValueError):
        DistributionStats.from_scores([0.1], "other")
    with pytest.raises(EvaluationError):
        DistributionStats.from_scores([], "genuine")


def test_brute_force():
    assert brute_force_estimate(50, 8) == 409_600_000_000
    assert brute_force_estimate(1, 1) == 16
    with pytest.raises(ValueError):
        brute_force_estimate(0, 8)


class TestRevocability:
    def test_distributions(self, small_population):
        data, feats = small_population
        keys = PerUserKeys(1).assign(["e"], [feats[0].T])["e"]
        g, imp, pseudo = revocability_experiment(feats[0], keys, 10, data, seed=2, population_features=feats)
        assert (g.kind, imp.kind, pseudo.kind) == ("genuine", "imposter", "pseudo-imposter")
        assert pseudo.count == 10 and g.count == 12 and imp.count == 6
        assert abs(pseudo.mean - imp.mean) <= 0.05

    def test_duplicate_keys_rejected(self, small_population):
        data, feats = small_population
        T = feats[0].T
        keys = PerUserKeys(1).assign(["a", "b"], [T])
        with pytest.raises(InvalidKeyError):
            revocability_experiment(feats[0], keys["a"], [keys["b"], keys["b"]], data, population_features=feats)
        with pytest.raises(InvalidKeyError):
            revocability_experiment(feats[0], keys["a"], [keys["a"], keys["b"]], data, population_features=feats)


class TestUnlinkability:
    def test_overlap(self, small_population):
        data, feats = small_population
        rep = unlinkability_experiment(data, (PerUserKeys(1), PerUserKeys(2)), features=feats)
        assert rep.pseudo_genuine.count == 12 and rep.pseudo_imposter.count == 6
        assert rep.overlap >= 0.5 and rep.warnings == ()

    def test_identical_draws_warn(self, small_population):
        data, feats = small_population
        with pytest.warns(UserWarning):
            rep = unlinkability_experiment(data, (PerUserKeys(1), PerUserKeys(1)), features=feats)
        assert rep.warnings
        assert rep.pseudo_genuine.mean > 0.5  # equal draws: a plain genuine comparison

    def test_single_subject(self, small_population):
        data, feats = small_population
        with pytest.raises(EvaluationError):
            unlinkability_experiment(data[:3], (PerUserKeys(1), PerUserKeys(2)), features=feats[:3])


class TestDiversity:
    def test_count_one(self, rng):
        res = diversity_generate(random_features(rng, 4), 1)
        assert len(res.templates) == 1 and res.to_dict()["pairs"] == []

    def test_exhausted_space(self, rng):
        F = random_features(rng, 4)  # T = 64
        space = KeySpace(k1=[1], k2=[1], k3=[3], k4=[5, 7], rho=[0])
        assert space.size(64) == 2
        with pytest.raises(EvaluationError):
            diversity_generate(F, 3, space)
        res = diversity_generate(F, 2, space)
        assert len(set(res.keys)) == 2

    def test_invalid_values_filtered(self):
        space = KeySpace(k3=[2, 3, 4, 5])
        assert space.candidates(64)[2] == [3, 5]

    def test_templates_differ(self, rng):
        res = diversity_generate(random_features(rng, 50), 3, seed=8)
        off = res.filler_difference[~np.eye(3, dtype=bool)]
        assert np.all(off > 0.99)
        cross = res.cross_scores[~np.eye(3, dtype=bool)]
        assert np.all(cross < 0.2)
        assert np.all(np.diag(res.cross_scores) == 1.0)


def test_timing(small_population):
    data, _ = small_population
    table = timing_benchmark(data, repeats=2, max_comparisons=5)
    assert table.repeats == 2 and table.templates == 12 and table.comparisons == 5
    assert table.generation_mean_s > 0 and table.matching_mean_s > 0
    with pytest.raises(EvaluationError):
        timing_benchmark([])
