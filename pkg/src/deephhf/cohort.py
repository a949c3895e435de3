"""Labeled exam cohorts from EMR-style event tables.

Covers the heart-failure endpoint (first matching ICD-9 diagnosis), the
5-year labeling window, the calendar-based test split with patient
stratification, and the label-verification views (medication categories,
echo timing, comorbidity flags).
"""

from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass, replace
from datetime import date
from pathlib import Path

import numpy as np

from .errors import BadPattern, DegenerateSplit

HF = "HF"
NON_HF = "non-HF"

ENDPOINT_WINDOW_DAYS = 1826        # 5 years incl. one leap day; boundary counts as HF
INCLUSION_YEARS = (2010, 2023)
TEST_WINDOW = (date(2018, 1, 1), date(2018, 4, 30))

# Heart-failure endpoint codes. `X` is a wildcard over trailing digits,
# `NNN-MMM.X` matches on the 3-digit category.
HF_CODES = (
    "428.X", "402.01X", "402.11X", "402.91X", "404.01X", "404.03X",
    "404.11X", "404.13", "404.93X", "416.11X", "514.2X", "514.3X", "518.4X",
)

COMORBIDITY_CODES = {
    "diabetes": ("249-250.X",),
    "ischemic_heart_disease": ("410-414.X",),
    "mi_or_acute_coronary": ("410-412.X",),
    "cerebrovascular_disease": ("430-438.X",),
    "stroke": ("431.X", "433.X1", "434.X1", "435.X", "436.X", "438.X"),
    "chronic_renal_failure": ("585.6X", "586.X"),
    "acute_renal_failure": ("584.X",),
    "conduction_disorders": ("426.X",),
    "cardiac_dysrhythmia": ("427.X",),
    "afib_or_flutter": ("427.3X",),
    "hypertension": ("401-405.X",),
    "valvular_heart_disease": ("394.X", "385.X", "397.X", "398.X", "424.X"),
    "copd": ("490-496.X",),
    "cancer": ("140-159.X", "160-165.X", "170-176.X", "179-189.X",
               "190-199.X", "200-208.X", "209-209.X"),
}

# Guideline-directed therapy groups used for label verification (ATC prefixes).
MEDICATION_GROUPS = {
    "mra": ("C03DA",),
    "sglt2i": ("A10BD20", "A10BD15"),
    "ras_agents": ("C09",),
    "low_ceiling_diuretics": ("C03A", "C03B"),
    "high_ceiling_diuretics": ("C03C",),
    "beta_blockers": ("C07",),
}

CATEGORY_PRIORITY = ("new_or_renewed", "future", "history", "not_documented")


@dataclass(frozen=True)
class EmrEvent:
    patient_id: str
    kind: str                     # diagnosis|medication|lab|measure|admission|echo|death
    code: str                     # ICD-9, ATC, or lab/measure name
    value: float | None
    date: date
    source: str = "clinic"


@dataclass(frozen=True)
class ExamLabel:
    exam_id: str
    patient_id: str
    exam_date: date
    label: str                    # HF | non-HF
    endpoint_date: date | None = None
    days_to_endpoint: int | None = None
    split: str | None = None      # train | validation | test


# ---------------------------------------------------------------------------
# ICD-9 matching
# ---------------------------------------------------------------------------

_RANGE_RE = re.compile(r"^(\d{3})-(\d{3})(\.[\dX]{1,2})?X?$")
_PLAIN_RE = re.compile(r"^\d{3}(\.[\dX]{1,2})?X?$")


def _compile_pattern(pattern: str):
    pattern = pattern.strip().upper()
    m = _RANGE_RE.match(pattern)
    if m:
        lo, hi = int(m.group(1)), int(m.group(2))
        if lo > hi:
            raise BadPattern(f"inverted range: {pattern}")
        return ("range", lo, hi)
    if not _PLAIN_RE.match(pattern):
        raise BadPattern(f"malformed ICD-9 pattern: {pattern!r}")
    if pattern.endswith(".X"):
        # wildcard over the whole decimal part, including its absence
        rx = re.escape(pattern[:-2]) + r"(\.\d{1,2})?"
    else:
        rx = ""
        for i, ch in enumerate(pattern):
            if ch == "X":
                rx += r"\d*" if i == len(pattern) - 1 else r"\d"
            elif ch == ".":
                rx += r"\."
            else:
                rx += ch
        if not pattern.endswith("X"):
            rx += r"\d*"        # exact patterns match as prefixes
    return ("regex", re.compile(rx + "$"))


def match_icd9(code: str, patterns) -> bool:
    """True iff the code falls in any pattern of the set."""
    code = str(code).strip().upper()
    for pattern in patterns:
        compiled = _compile_pattern(pattern)
        if compiled[0] == "range":
            head = code.split(".")[0]
            if head.isdigit() and compiled[1] <= int(head) <= compiled[2]:
                return True
        elif compiled[1].match(code):
            return True
    return False


# ---------------------------------------------------------------------------
# Endpoint extraction and labeling
# ---------------------------------------------------------------------------

def extract_endpoint(timeline) -> date | None:
    """Earliest heart-failure diagnosis date for one patient, if any."""
    dates = [
        ev.date for ev in timeline
        if ev.kind == "diagnosis" and match_icd9(ev.code, HF_CODES)
    ]
    return min(dates) if dates else None


def label_exams(exams, endpoints: dict) -> list[ExamLabel]:
    """Label (exam_id, patient_id, exam_date) triples against patient endpoints.

    Exams dated outside the 2010-2023 inclusion window (mis-dated outliers)
    or whose patient already carried the endpoint strictly before the exam
    are excluded outright; a diagnosis within [0, 1826] days after the exam
    makes it positive.
    """
    out = []
    for exam_id, patient_id, exam_date in exams:
        if not (INCLUSION_YEARS[0] <= exam_date.year <= INCLUSION_YEARS[1]):
            continue
        endpoint = endpoints.get(patient_id)
        if endpoint is not None and endpoint < exam_date:
            continue
        if endpoint is None:
            out.append(ExamLabel(exam_id, patient_id, exam_date, NON_HF))
            continue
        delta = (endpoint - exam_date).days
        label = HF if delta <= ENDPOINT_WINDOW_DAYS else NON_HF
        out.append(ExamLabel(
            exam_id, patient_id, exam_date, label,
            endpoint_date=endpoint, days_to_endpoint=delta,
        ))
    return out


def split_cohort(labels, val_frac: float, seed: int) -> list[ExamLabel]:
    """Assign train/validation/test with patient stratification.

    Every exam dated inside the Jan-Apr 2018 window goes to test, then all
    other exams of those patients follow (no patient spans two splits). A
    random val_frac of the remaining exams seeds the validation set, closed
    over patients the same way.
    """
    test_patients = {
        lab.patient_id for lab in labels
        if TEST_WINDOW[0] <= lab.exam_date <= TEST_WINDOW[1]
    }
    remaining = sorted(
        (lab for lab in labels if lab.patient_id not in test_patients),
        key=lambda lab: lab.exam_id,
    )
    val_patients: set[str] = set()
    if val_frac > 0 and remaining:
        n_val = int(round(val_frac * len(remaining)))
        rng = np.random.default_rng(seed)
        chosen = rng.choice(len(remaining), size=min(n_val, len(remaining)), replace=False)
        val_patients = {remaining[i].patient_id for i in chosen}

    out = []
    for lab in labels:
        if lab.patient_id in test_patients:
            split = "test"
        elif lab.patient_id in val_patients:
            split = "validation"
        else:
            split = "train"
        out.append(replace(lab, split=split))

    counts = {s: sum(1 for lab in out if lab.split == s) for s in ("train", "validation", "test")}
    required = ["train", "test"] + (["validation"] if val_frac > 0 else [])
    empty = [s for s in required if counts[s] == 0]
    if empty:
        raise DegenerateSplit(f"empty splits: {empty} (counts={counts})")
    return out


# ---------------------------------------------------------------------------
# Label verification views
# ---------------------------------------------------------------------------

def _atc_in_group(code: str, prefixes) -> bool:
    code = code.strip().upper()
    return any(code.startswith(p) for p in prefixes)


def medication_category(timeline, atc_groups: dict, diagnosis_date: date) -> dict:
    """Per-group prescription category around a diagnosis date.

    new_or_renewed: used within one year either side of diagnosis and absent
    during the second year before it; history: already in use earlier;
    future: started only after the first post-diagnosis year. The combined
    ``minimum_1`` entry takes the highest-priority category across groups.
    """
    d = diagnosis_date
    result = {}
    for group, prefixes in atc_groups.items():
        dates = [ev.date for ev in timeline
                 if ev.kind == "medication" and _atc_in_group(ev.code, prefixes)]
        in_window = any(abs((p - d).days) <= 365 for p in dates)
        in_year2 = any(-730 <= (p - d).days <= -366 for p in dates)
        older = any((p - d).days <= -731 for p in dates)
        later = any((p - d).days >= 366 for p in dates)
        if in_window and not in_year2:
            cat = "new_or_renewed"
        elif older or in_year2:
            cat = "history"
        elif later:
            cat = "future"
        else:
            cat = "not_documented"
        result[group] = cat
    result["minimum_1"] = min(
        (result[g] for g in atc_groups),
        key=CATEGORY_PRIORITY.index,
        default="not_documented",
    )
    return result


def echo_category(timeline, diagnosis_date: date) -> str:
    """Echocardiogram timing relative to diagnosis: [-1 y, +2 y] counts as inside."""
    dates = [ev.date for ev in timeline if ev.kind == "echo"]
    if not dates:
        return "not_documented"
    if any(-365 <= (p - diagnosis_date).days <= 730 for p in dates):
        return "inside_range"
    return "outside_range"


def comorbidity_flags(timeline, as_of: date) -> dict:
    """Per-comorbidity flag: any matching diagnosis strictly before as_of."""
    diagnoses = [(ev.code, ev.date) for ev in timeline if ev.kind == "diagnosis"]
    return {
        name: any(d < as_of and match_icd9(code, patterns) for code, d in diagnoses)
        for name, patterns in COMORBIDITY_CODES.items()
    }


# ---------------------------------------------------------------------------
# Table and label-file I/O
# ---------------------------------------------------------------------------

_EVENT_FILES = (
    ("diagnoses.csv", "diagnosis", "icd9", None),
    ("medications.csv", "medication", "atc", None),
    ("labs.csv", "lab", "name", "value"),
    ("measures.csv", "measure", "name", "value"),
    ("echoes.csv", "echo", None, None),
    ("deaths.csv", "death", None, None),
    ("admissions.csv", "admission", "department", None),
)


def load_events(data_dir) -> dict[str, list[EmrEvent]]:
    """Read the EMR CSV tables into per-patient timelines (missing files skip)."""
    data_dir = Path(data_dir)
    timelines: dict[str, list[EmrEvent]] = {}
    for fname, kind, code_col, value_col in _EVENT_FILES:
        path = data_dir / fname
        if not path.exists():
            continue
        with path.open(newline="") as fh:
            for row in csv.DictReader(fh):
                ev = EmrEvent(
                    patient_id=row["patient_id"],
                    kind=kind,
                    code=row[code_col] if code_col else "",
                    value=float(row[value_col]) if value_col and row.get(value_col) else None,
                    date=date.fromisoformat(row["date"]),
                    source=row.get("source", "clinic"),
                )
                timelines.setdefault(ev.patient_id, []).append(ev)
    for events in timelines.values():
        events.sort(key=lambda ev: (ev.date, ev.kind, ev.code))
    return timelines


def load_exams(path) -> list[tuple[str, str, date]]:
    """Read exams.csv rows as (exam_id, patient_id, exam_date)."""
    with Path(path).open(newline="") as fh:
        return [
            (row["exam_id"], row["patient_id"], date.fromisoformat(row["exam_date"]))
            for row in csv.DictReader(fh)
        ]


def write_labels(labels, path):
    """One ExamLabel JSON object per line."""
    with Path(path).open("w") as fh:
        for lab in labels:
            fh.write(json.dumps({
                "exam_id": lab.exam_id,
                "patient_id": lab.patient_id,
                "exam_date": lab.exam_date.isoformat(),
                "label": lab.label,
                "endpoint_date": lab.endpoint_date.isoformat() if lab.endpoint_date else None,
                "days_to_endpoint": lab.days_to_endpoint,
                "split": lab.split,
            }) + "\n")


def read_labels(path) -> list[ExamLabel]:
    labels = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        row = json.loads(line)
        labels.append(ExamLabel(
            exam_id=row["exam_id"],
            patient_id=row["patient_id"],
            exam_date=date.fromisoformat(row["exam_date"]),
            label=row["label"],
            endpoint_date=date.fromisoformat(row["endpoint_date"]) if row.get("endpoint_date") else None,
            days_to_endpoint=row.get("days_to_endpoint"),
            split=row.get("split"),
        ))
    return labels
