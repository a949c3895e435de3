"""Evaluation statistics: ROC/PR, bootstrap CIs, risk groups, survival, screening yield.

Everything here is deterministic given a seed and works on plain numpy
arrays; survival inputs are (time_days, event_flag) pairs with censoring at
the latest documented event.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import SingleClass, ZeroExposure

STOP_HF_IRR = 0.60     # incidence rate ratio of the BNP-screening intervention


def _check_two_classes(labels: np.ndarray):
    if labels.min() == labels.max():
        raise SingleClass("need both positive and negative examples")


def auroc(scores, labels) -> float:
    """Area under the ROC curve via the rank statistic; ties credit 0.5."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    _check_two_classes(labels)
    ranks = stats.rankdata(scores)          # average ranks on ties
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def bootstrap_auroc(scores, labels, iters: int = 1000, n_pos: int = 250,
                    n_neg: int = 250, seed: int = 0):
    """Bootstrap AUROC distribution from per-class resamples.

    Each iteration draws n_pos positives and n_neg negatives with
    replacement (sampling with replacement also covers cohorts smaller than
    the requested subset sizes). Returns (mean, (lo, hi), distribution) with
    a 2.5/97.5 percentile interval.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    _check_two_classes(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    rng = np.random.default_rng(seed)
    dist = np.empty(iters)
    for i in range(iters):
        sp = pos[rng.integers(0, len(pos), n_pos)]
        sn = neg[rng.integers(0, len(neg), n_neg)]
        dist[i] = auroc(
            np.concatenate([sp, sn]),
            np.concatenate([np.ones(n_pos, dtype=int), np.zeros(n_neg, dtype=int)]),
        )
    lo, hi = np.percentile(dist, [2.5, 97.5])
    return float(dist.mean()), (float(lo), float(hi)), dist


def compare_models(dist_a, dist_b) -> tuple[float, float]:
    """Two-sample Student's t-test between bootstrap distributions.

    Zero pooled variance degenerates gracefully: equal means give (0, 1),
    different means give (+/-inf, 0).
    """
    a = np.asarray(dist_a, dtype=np.float64)
    b = np.asarray(dist_b, dtype=np.float64)
    if len(a) != len(b):
        raise ValueError("bootstrap distributions must have equal length")
    n, m = len(a), len(b)
    var = ((n - 1) * a.var(ddof=1) + (m - 1) * b.var(ddof=1)) / (n + m - 2)
    diff = a.mean() - b.mean()
    if var == 0:
        if diff == 0:
            return 0.0, 1.0
        return math.copysign(math.inf, diff), 0.0
    t = diff / math.sqrt(var * (1 / n + 1 / m))
    p = 2.0 * stats.t.sf(abs(t), df=n + m - 2)
    return float(t), float(p)


@dataclass(frozen=True)
class RiskGroups:
    t70: float
    t90: float
    groups: np.ndarray     # "low" | "moderate" | "high" per exam


def _specificity_threshold(neg_scores: np.ndarray, target: float) -> float:
    """Smallest threshold t with fraction of negatives strictly below t >= target."""
    n = len(neg_scores)
    for t in np.unique(neg_scores):
        if np.count_nonzero(neg_scores < t) / n >= target:
            return float(t)
    return math.inf


def risk_groups(scores, labels) -> RiskGroups:
    """Low/moderate/high groups at the 70%/90% specificity thresholds."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    _check_two_classes(labels)
    neg = scores[labels == 0]
    t70 = _specificity_threshold(neg, 0.70)
    t90 = _specificity_threshold(neg, 0.90)
    groups = np.where(scores >= t90, "high", np.where(scores >= t70, "moderate", "low"))
    return RiskGroups(t70=t70, t90=t90, groups=groups)


def kaplan_meier(rows) -> tuple[np.ndarray, np.ndarray]:
    """Product-limit survival estimate.

    rows: iterable of (time_days, event_flag). Returns (times, survival)
    starting at (0, 1.0) with one step per distinct event time.
    """
    rows = [(float(t), int(e)) for t, e in rows]
    times = np.array([0.0])
    surv = np.array([1.0])
    if not rows:
        return times, surv
    arr = np.array(sorted(rows))
    t_col, e_col = arr[:, 0], arr[:, 1]
    s = 1.0
    out_t, out_s = [0.0], [1.0]
    for t in np.unique(t_col[e_col == 1]):
        at_risk = np.count_nonzero(t_col >= t)
        deaths = np.count_nonzero((t_col == t) & (e_col == 1))
        s *= 1.0 - deaths / at_risk
        out_t.append(float(t))
        out_s.append(s)
    return np.array(out_t), np.array(out_s)


def logrank(group_a, group_b) -> tuple[float, float]:
    """Two-group logrank test; returns (chi2, p) with 1 degree of freedom."""
    a = np.array([(float(t), int(e)) for t, e in group_a])
    b = np.array([(float(t), int(e)) for t, e in group_b])
    times = np.concatenate([a[:, 0], b[:, 0]])
    events = np.concatenate([a[:, 1], b[:, 1]])
    member_a = np.concatenate([np.ones(len(a), bool), np.zeros(len(b), bool)])
    observed = expected = variance = 0.0
    for t in np.unique(times[events == 1]):
        at_risk = times >= t
        n = int(at_risk.sum())
        n_a = int((at_risk & member_a).sum())
        d = int(((times == t) & (events == 1)).sum())
        d_a = int(((times == t) & (events == 1) & member_a).sum())
        observed += d_a
        expected += d * n_a / n
        if n > 1:
            variance += d * (n_a / n) * (1 - n_a / n) * (n - d) / (n - 1)
    if variance == 0:
        return 0.0, 1.0
    chi2 = (observed - expected) ** 2 / variance
    return float(chi2), float(stats.chi2.sf(chi2, df=1))


def odds_ratio(events_a: int, total_a: int, events_b: int, total_b: int) -> tuple[float, bool]:
    """Odds ratio of group a vs group b with Haldane 0.5 correction on zero cells.

    Returns (odds_ratio, corrected_flag).
    """
    a, b = events_a, total_a - events_a
    c, d = events_b, total_b - events_b
    corrected = 0 in (a, b, c, d)
    if corrected:
        a, b, c, d = a + 0.5, b + 0.5, c + 0.5, d + 0.5
    return (a * d) / (b * c), corrected


def events_by_horizon(rows, horizon_days: float) -> tuple[int, int]:
    """(events, total) within a horizon; subjects censored earlier are excluded."""
    events = total = 0
    for t, e in rows:
        if e and t <= horizon_days:
            events += 1
            total += 1
        elif t >= horizon_days:
            total += 1
    return events, total


def nns_from_rate(rate_per_1000py: float, irr: float = STOP_HF_IRR) -> int:
    """Number needed to screen to prevent one event per year under an intervention.

    The intervention multiplies the incidence rate by irr, so screening 1000
    patient-years prevents rate * (1 - irr) events.
    """
    prevented = rate_per_1000py * (1.0 - irr)
    if prevented <= 0:
        raise ZeroExposure("no preventable events at this rate")
    return math.ceil(1000.0 / prevented)


def incidence_and_nns(person_years: float, events: int, irr: float = STOP_HF_IRR) -> tuple[float, int]:
    """(events per 1000 patient-years, number needed to screen)."""
    if person_years <= 0:
        raise ZeroExposure("person_years must be positive")
    rate = 1000.0 * events / person_years
    return rate, nns_from_rate(rate, irr)


def pr_curve(scores, labels) -> tuple[float, np.ndarray, np.ndarray]:
    """Precision-recall curve by threshold sweep; AUPRC by trapezoid over recall.

    Returns (auprc, recall, precision) with points ordered by increasing
    recall and anchored at recall 0.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    _check_two_classes(labels)
    order = np.argsort(-scores, kind="stable")
    sorted_labels = labels[order]
    sorted_scores = scores[order]
    tp = np.cumsum(sorted_labels)
    fp = np.cumsum(1 - sorted_labels)
    # one operating point per distinct threshold (last index of each run)
    last = np.nonzero(np.diff(sorted_scores, append=np.nan))[0]
    tp, fp = tp[last], fp[last]
    n_pos = labels.sum()
    recall = tp / n_pos
    precision = tp / (tp + fp)
    recall = np.concatenate([[0.0], recall])
    precision = np.concatenate([[precision[0]], precision])
    auprc = float(np.trapezoid(precision, recall))
    return auprc, recall, precision


ADMISSION_DEPARTMENTS = ("cardiology", "internal")


def survival_rows(labels, timelines, endpoint: str = "death") -> list[tuple[float, int]]:
    """(time_days, event) per exam, censored at the cohort's latest event date.

    endpoint "death" uses death events only; "death_or_admission" also counts
    cardiac/internal department hospitalizations. Times originate at the exam
    date.
    """
    if endpoint not in ("death", "death_or_admission"):
        raise ValueError(f"unknown endpoint {endpoint!r}")

    def matches(ev):
        if ev.kind == "death":
            return True
        return (endpoint == "death_or_admission" and ev.kind == "admission"
                and ev.code in ADMISSION_DEPARTMENTS)

    all_event_dates = [
        ev.date for events in timelines.values() for ev in events if matches(ev)
    ]
    censor_date = max(all_event_dates) if all_event_dates else max(
        lab.exam_date for lab in labels
    )
    rows = []
    for lab in labels:
        event_dates = [
            ev.date for ev in timelines.get(lab.patient_id, [])
            if matches(ev) and ev.date >= lab.exam_date
        ]
        if event_dates:
            rows.append((float((min(event_dates) - lab.exam_date).days), 1))
        else:
            rows.append((float(max((censor_date - lab.exam_date).days, 0)), 0))
    return rows


def error_groups(scores, labels, threshold: float, days_to_endpoint=None) -> dict:
    """Confusion partition at the high-risk threshold plus horizon-binned AUROCs.

    Positives are bucketed by days to endpoint into 0-2 y, 2-4 y, and 4-5 y
    and each bucket is scored against all negatives; an empty bucket reports
    None instead of failing.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    flagged = scores >= threshold
    partition = {
        "TP": np.nonzero(flagged & (labels == 1))[0],
        "FP": np.nonzero(flagged & (labels == 0))[0],
        "TN": np.nonzero(~flagged & (labels == 0))[0],
        "FN": np.nonzero(~flagged & (labels == 1))[0],
    }
    result = {"partition": partition, "bin_auroc": {}}
    if days_to_endpoint is not None:
        days = np.asarray(
            [d if d is not None else -1 for d in days_to_endpoint], dtype=np.float64
        )
        neg_scores = scores[labels == 0]
        bins = {"0-2y": (0, 730), "2-4y": (731, 1460), "4-5y": (1461, 1826)}
        for name, (lo, hi) in bins.items():
            sel = (labels == 1) & (days >= lo) & (days <= hi)
            if not sel.any() or len(neg_scores) == 0:
                result["bin_auroc"][name] = None
                continue
            s = np.concatenate([scores[sel], neg_scores])
            y = np.concatenate([np.ones(int(sel.sum()), int), np.zeros(len(neg_scores), int)])
            result["bin_auroc"][name] = auroc(s, y)
    return result
