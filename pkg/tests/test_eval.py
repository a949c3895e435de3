from datetime import date

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deephhf import evaluation as ev
from deephhf.cohort import EmrEvent, ExamLabel, HF, NON_HF
from deephhf.errors import SingleClass, ZeroExposure


def pair_count_auroc(scores, labels):
    """O(n^2) oracle: wins + half-ties over positive/negative pairs."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = ties = 0
    for p in pos:
        for q in neg:
            if p > q:
                wins += 1
            elif p == q:
                ties += 1
    return (wins + 0.5 * ties) / (len(pos) * len(neg))


class TestAuroc:
    def test_perfect_ordering(self):
        assert ev.auroc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0

    def test_single_class_rejected(self):
        with pytest.raises(SingleClass):
            ev.auroc([0.1, 0.2], [1, 1])

    def test_random_scores_near_half(self):
        rng = np.random.default_rng(0)
        scores = rng.random(10_000)
        labels = rng.integers(0, 2, 10_000)
        assert abs(ev.auroc(scores, labels) - 0.5) < 0.02

    def test_matches_pair_count_oracle_with_ties(self):
        rng = np.random.default_rng(42)
        for _ in range(50):
            n = int(rng.integers(4, 51))
            labels = np.zeros(n, dtype=int)
            labels[: int(rng.integers(1, n))] = 1
            rng.shuffle(labels)
            if labels.min() == labels.max():
                continue
            scores = rng.integers(0, 5, n) / 4.0   # heavy ties
            assert ev.auroc(scores, labels) == pair_count_auroc(scores, labels)

    @given(st.integers(0, 2 ** 31 - 1))
    @settings(max_examples=30, deadline=None)
    def test_invariant_under_monotone_transform(self, seed):
        rng = np.random.default_rng(seed)
        n = 40
        scores = rng.random(n)
        labels = np.concatenate([np.ones(20, int), np.zeros(20, int)])
        base = ev.auroc(scores, labels)
        assert ev.auroc(np.exp(3 * scores), labels) == pytest.approx(base, abs=1e-12)
        assert ev.auroc(scores ** 3, labels) == pytest.approx(base, abs=1e-12)


class TestBootstrap:
    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(1)
        scores = rng.random(600)
        labels = rng.integers(0, 2, 600)
        a = ev.bootstrap_auroc(scores, labels, seed=9)
        b = ev.bootstrap_auroc(scores, labels, seed=9)
        assert a[0] == b[0] and np.array_equal(a[2], b[2])

    def test_separable_cohort_ci_is_degenerate_one(self):
        scores = np.concatenate([np.zeros(300), np.ones(300)])
        labels = np.concatenate([np.zeros(300, int), np.ones(300, int)])
        mean, (lo, hi), _ = ev.bootstrap_auroc(scores, labels, seed=0)
        assert (mean, lo, hi) == (1.0, 1.0, 1.0)

    def test_small_cohort_resampled(self):
        scores = [0.1, 0.4, 0.6, 0.9]
        labels = [0, 0, 1, 1]
        mean, _, dist = ev.bootstrap_auroc(scores, labels, iters=50, seed=2)
        assert len(dist) == 50 and 0 <= mean <= 1

    def test_ci_covers_full_sample_auroc(self):
        rng = np.random.default_rng(7)
        hits = 0
        trials = 100
        for _ in range(trials):
            scores = np.concatenate([rng.normal(0.2, 1, 250), rng.normal(0.0, 1, 250)])
            labels = np.concatenate([np.ones(250, int), np.zeros(250, int)])
            full = ev.auroc(scores, labels)
            _, (lo, hi), _ = ev.bootstrap_auroc(scores, labels, iters=200,
                                                seed=int(rng.integers(1 << 31)))
            hits += lo <= full <= hi
        assert hits >= 95


class TestCompareModels:
    def test_identical_distributions(self):
        d = np.full(100, 0.8)
        assert ev.compare_models(d, d) == (0.0, 1.0)

    def test_identical_random_distributions(self):
        d = np.random.default_rng(0).random(500)
        t, p = ev.compare_models(d, d)
        assert t == 0.0 and p == 1.0

    def test_five_sd_shift(self):
        rng = np.random.default_rng(3)
        a = rng.normal(0.80, 0.01, 1000)
        b = rng.normal(0.75, 0.01, 1000)
        t, p = ev.compare_models(a, b)
        assert p < 1e-10 and t > 0

    def test_p_in_unit_interval(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            t, p = ev.compare_models(rng.random(50), rng.random(50))
            assert 0.0 <= p <= 1.0


class TestRiskGroups:
    def test_counting_example(self):
        neg = np.arange(10) / 10.0           # 0.0 .. 0.9
        scores = np.concatenate([neg, [0.95, 0.99]])
        labels = np.concatenate([np.zeros(10, int), [1, 1]])
        rg = ev.risk_groups(scores, labels)
        assert rg.t90 == 0.9                 # exactly 9 negatives below
        assert rg.t70 == 0.7
        spec90 = np.mean(neg < rg.t90)
        spec70 = np.mean(neg < rg.t70)
        assert spec90 >= 0.9 and spec70 >= 0.7

    def test_identical_scores_collapse(self):
        scores = np.full(10, 0.5)
        labels = np.array([0] * 8 + [1] * 2)
        rg = ev.risk_groups(scores, labels)
        assert rg.t70 == rg.t90
        assert not (rg.groups == "moderate").any()

    def test_membership_invariant_under_monotone_transform(self):
        rng = np.random.default_rng(5)
        scores = rng.random(200)
        labels = rng.integers(0, 2, 200)
        base = ev.risk_groups(scores, labels).groups
        squashed = ev.risk_groups(1 / (1 + np.exp(-7 * scores)), labels).groups
        assert np.array_equal(base, squashed)

    def test_thresholds_ordered(self):
        rng = np.random.default_rng(6)
        scores = rng.random(100)
        labels = rng.integers(0, 2, 100)
        rg = ev.risk_groups(scores, labels)
        assert rg.t70 <= rg.t90


class TestKaplanMeier:
    def test_two_subject_hand_example(self):
        times, surv = ev.kaplan_meier([(1, 1), (2, 1)])
        assert times.tolist() == [0.0, 1.0, 2.0]
        assert surv.tolist() == [1.0, 0.5, 0.0]

    def test_six_subject_hand_example(self):
        rows = [(1, 1), (2, 0), (3, 1), (4, 1), (5, 0), (6, 1)]
        times, surv = ev.kaplan_meier(rows)
        assert times.tolist() == [0.0, 1.0, 3.0, 4.0, 6.0]
        expected = [1.0, 5 / 6, 5 / 8, 5 / 12, 0.0]
        assert np.allclose(surv, expected, atol=1e-9)

    def test_no_events(self):
        times, surv = ev.kaplan_meier([(5, 0), (7, 0)])
        assert surv.tolist() == [1.0]

    def test_all_censored_at_zero(self):
        times, surv = ev.kaplan_meier([(0, 0), (0, 0)])
        assert surv.tolist() == [1.0]

    def test_non_increasing_unit_range(self):
        rng = np.random.default_rng(8)
        rows = list(zip(rng.integers(0, 100, 50), rng.integers(0, 2, 50)))
        _, surv = ev.kaplan_meier(rows)
        assert np.all(np.diff(surv) <= 0)
        assert surv[0] == 1.0 and np.all((surv >= 0) & (surv <= 1))


class TestLogrank:
    A = [(1, 1), (2, 1), (4, 0), (5, 1)]
    B = [(1, 0), (3, 1), (5, 1), (6, 0)]

    def test_hand_computed_example(self):
        chi2, p = ev.logrank(self.A, self.B)
        assert chi2 == pytest.approx(392 / 433, abs=1e-6)        # exact-fraction oracle
        assert p == pytest.approx(0.3413614096663084, abs=1e-6)

    def test_identical_groups(self):
        assert ev.logrank(self.A, self.A) == (0.0, 1.0)

    def test_symmetric_under_swap(self):
        assert ev.logrank(self.A, self.B) == pytest.approx(ev.logrank(self.B, self.A))


class TestOddsRatio:
    def test_direct_arithmetic(self):
        or_, corrected = ev.odds_ratio(20, 100, 5, 100)
        assert or_ == pytest.approx((20 * 95) / (80 * 5))
        assert or_ == pytest.approx(4.75)
        assert not corrected

    def test_equal_rates(self):
        or_, _ = ev.odds_ratio(10, 50, 10, 50)
        assert or_ == 1.0

    def test_zero_cell_haldane(self):
        or_, corrected = ev.odds_ratio(0, 50, 5, 50)
        assert corrected and or_ > 0

    def test_events_by_horizon_excludes_early_censoring(self):
        rows = [(100, 1), (2000, 0), (500, 0), (1900, 1)]
        events, total = ev.events_by_horizon(rows, 1826)
        # the 500-day censored subject drops out; the 1900-day event counts
        # only in the denominator
        assert (events, total) == (1, 3)


class TestIncidenceNns:
    @pytest.mark.parametrize("rate,expected", [(41.5, 61), (85.0, 30), (124.0, 21)])
    def test_published_triplet(self, rate, expected):
        assert ev.nns_from_rate(rate, irr=0.60) == expected

    def test_rate_from_exposure(self):
        rate, nns = ev.incidence_and_nns(person_years=10_000, events=415, irr=0.60)
        assert rate == pytest.approx(41.5)
        assert nns == 61

    def test_zero_exposure(self):
        with pytest.raises(ZeroExposure):
            ev.incidence_and_nns(0.0, 5)


def brute_force_pr(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pts = []
    for t in sorted(set(scores), reverse=True):
        flag = scores >= t
        tp = int((flag & (labels == 1)).sum())
        fp = int((flag & (labels == 0)).sum())
        pts.append((tp / labels.sum(), tp / (tp + fp)))
    recall = np.array([0.0] + [r for r, _ in pts])
    precision = np.array([pts[0][1]] + [p for _, p in pts])
    return float(np.trapezoid(precision, recall))


class TestPrCurve:
    def test_perfect_separation(self):
        auprc, _, _ = ev.pr_curve([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1])
        assert auprc == 1.0

    def test_random_scores_near_prevalence(self):
        rng = np.random.default_rng(11)
        labels = (rng.random(20_000) < 0.2).astype(int)
        scores = rng.random(20_000)
        auprc, _, _ = ev.pr_curve(scores, labels)
        assert abs(auprc - 0.2) < 0.02

    def test_matches_brute_force(self):
        rng = np.random.default_rng(12)
        for _ in range(30):
            n = int(rng.integers(5, 51))
            labels = rng.integers(0, 2, n)
            if labels.min() == labels.max():
                continue
            scores = rng.integers(0, 6, n) / 5.0
            auprc, _, _ = ev.pr_curve(scores, labels)
            assert auprc == pytest.approx(brute_force_pr(scores, labels), abs=1e-12)


class TestErrorGroups:
    def test_partition_sizes_sum(self):
        rng = np.random.default_rng(13)
        scores = rng.random(100)
        labels = rng.integers(0, 2, 100)
        out = ev.error_groups(scores, labels, threshold=0.6)
        assert sum(len(v) for v in out["partition"].values()) == 100

    def test_threshold_above_all(self):
        out = ev.error_groups([0.1, 0.2], [0, 1], threshold=0.9)
        assert len(out["partition"]["TP"]) == 0
        assert len(out["partition"]["FP"]) == 0

    def test_bin_auroc_ordering_on_synthetic(self):
        rng = np.random.default_rng(14)
        neg = rng.normal(0.0, 0.5, 300)
        near = rng.normal(2.5, 0.5, 100)    # close to onset, highest scores
        far = rng.normal(0.8, 0.5, 100)
        scores = np.concatenate([neg, near, far])
        labels = np.concatenate([np.zeros(300, int), np.ones(200, int)])
        days = [None] * 300 + [300] * 100 + [1700] * 100
        out = ev.error_groups(scores, labels, threshold=1.5, days_to_endpoint=days)
        assert out["bin_auroc"]["0-2y"] > out["bin_auroc"]["4-5y"]
        assert out["bin_auroc"]["2-4y"] is None      # empty bin reported, not fatal


class TestSurvivalRows:
    def test_event_and_censoring(self):
        labels = [
            ExamLabel("e1", "p1", date(2018, 1, 1), HF),
            ExamLabel("e2", "p2", date(2018, 1, 1), NON_HF),
        ]
        timelines = {
            "p1": [EmrEvent("p1", "death", "", None, date(2018, 3, 1))],
            "p2": [EmrEvent("p2", "admission", "cardiology", None, date(2019, 1, 1))],
        }
        rows = ev.survival_rows(labels, timelines, endpoint="death")
        assert rows[0] == (59.0, 1)
        assert rows[1] == (59.0, 0)          # censored at latest death
        rows = ev.survival_rows(labels, timelines, endpoint="death_or_admission")
        assert rows[1] == (365.0, 1)

    def test_non_cardiac_admission_ignored(self):
        labels = [ExamLabel("e1", "p1", date(2018, 1, 1), NON_HF)]
        timelines = {"p1": [EmrEvent("p1", "admission", "orthopedics", None, date(2018, 6, 1))]}
        rows = ev.survival_rows(labels, timelines, endpoint="death_or_admission")
        assert rows[0][1] == 0
