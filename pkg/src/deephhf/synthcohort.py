"""Desk-scale synthetic cohort: recordings plus consistent EMR-style tables.

Positive patients carry daytime PVC-burst burden in their waveform and a
heart-failure diagnosis 1-4 years after the exam; the event tables (labs,
measures, medications, deaths, admissions, echoes) are generated so the
labeling, clinical-score, and survival pipelines all have real inputs. Test
exams are dated inside the Jan-Apr 2018 window so the calendar split rule
applies unchanged.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import date, datetime, timedelta
from pathlib import Path

import numpy as np

from .sampling import derive_seed
from .signal_io import SynthSpec, synthesize_with_truth, write_recording


@dataclass(frozen=True)
class CohortSpec:
    n_train: int = 40
    n_val: int = 10
    n_test: int = 20
    seed: int = 7
    pos_frac: float = 0.35
    duration_h: float = 24.0
    noise_rms: float = 20.0
    pos_burst_rate: float = 2.0       # bursts/hour, daytime-biased
    neg_burst_rate: float = 0.0

    @property
    def n_total(self) -> int:
        return self.n_train + self.n_val + self.n_test

    @property
    def val_frac(self) -> float:
        return self.n_val / (self.n_train + self.n_val)


def _write_csv(path: Path, header, rows):
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def make_synthetic_cohort(out_dir, spec: CohortSpec) -> dict:
    """Generate containers + EMR tables under out_dir; returns a summary dict."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)

    n = spec.n_total
    labels = np.zeros(n, dtype=bool)
    labels[: int(round(spec.pos_frac * n))] = True
    rng.shuffle(labels)
    in_test_window = np.zeros(n, dtype=bool)
    # keep the class mix comparable between blocks
    pos_idx = np.flatnonzero(labels)
    neg_idx = np.flatnonzero(~labels)
    n_test_pos = int(round(spec.n_test * labels.mean()))
    test_members = np.concatenate([
        rng.choice(pos_idx, size=min(n_test_pos, len(pos_idx)), replace=False),
        rng.choice(neg_idx, size=spec.n_test - min(n_test_pos, len(pos_idx)), replace=False),
    ])
    in_test_window[test_members] = True

    exams, patients, diagnoses, medications = [], [], [], []
    labs, measures, echoes, deaths, admissions, bursts = [], [], [], [], [], []

    for i in range(n):
        exam_id = f"E{i:04d}"
        patient_id = f"P{i:04d}"
        positive = bool(labels[i])
        if in_test_window[i]:
            exam_date = date(2018, 1, 1) + timedelta(days=int(rng.integers(0, 120)))
        else:
            exam_date = date(2015, 1, 1) + timedelta(days=int(rng.integers(0, 1095)))
        start_time = datetime(exam_date.year, exam_date.month, exam_date.day,
                              int(rng.integers(8, 11)), int(rng.integers(0, 60)))
        sspec = SynthSpec(
            seed=derive_seed(spec.seed, "rec", exam_id),
            duration_h=spec.duration_h,
            mean_hr=float(rng.uniform(62, 78)),
            hr_circadian_amp=float(rng.uniform(5, 10)),
            pvc_burst_rate=spec.pos_burst_rate if positive else spec.neg_burst_rate,
            pvc_burst_daytime_bias=1.0,
            af_episode_prob=0.0,
            noise_rms=spec.noise_rms,
        )
        rec, truth = synthesize_with_truth(sspec, exam_id, patient_id, start_time)
        write_recording(rec, out_dir)
        for b0, b1 in truth.burst_intervals_s:
            bursts.append([exam_id, f"{b0:.3f}", f"{b1:.3f}"])

        exams.append([exam_id, patient_id, exam_date.isoformat()])
        sex = "male" if rng.random() < 0.45 else "female"
        birth_year = exam_date.year - int(rng.integers(45, 80))
        patients.append([patient_id, sex, birth_year, int(rng.random() < 0.2)])

        if positive:
            dx_date = exam_date + timedelta(days=int(rng.integers(200, 1500)))
            diagnoses.append([patient_id, "428.0", dx_date.isoformat(), "clinic"])
            # guideline therapy near diagnosis plus an echo, for verification views
            medications.append([patient_id, "C07AB02",
                                (dx_date + timedelta(days=int(rng.integers(0, 300)))).isoformat()])
            if rng.random() < 0.7:
                medications.append([patient_id, "C09AA05",
                                    (dx_date + timedelta(days=int(rng.integers(0, 300)))).isoformat()])
            if rng.random() < 0.8:
                echoes.append([patient_id,
                               (dx_date + timedelta(days=int(rng.integers(-200, 400)))).isoformat()])
        if rng.random() < 0.4:
            comorbidity = rng.choice(["401.9", "427.31", "250.00", "414.0"])
            diagnoses.append([patient_id, comorbidity,
                              (exam_date - timedelta(days=int(rng.integers(100, 2000)))).isoformat(),
                              "clinic"])
        if rng.random() < 0.3:
            medications.append([patient_id, "C03CA01",
                                (exam_date - timedelta(days=int(rng.integers(0, 600)))).isoformat()])

        # measurements and labs close to the exam; a few percent go missing
        meas_date = (exam_date - timedelta(days=int(rng.integers(5, 60)))).isoformat()
        measures.append([patient_id, "sbp", round(float(rng.uniform(105, 165)), 1), meas_date])
        measures.append([patient_id, "bmi", round(float(rng.uniform(20, 36)), 1), meas_date])
        if rng.random() < 0.92:
            labs.append([patient_id, "glucose", round(float(rng.uniform(80, 160)), 1), meas_date])
        labs.append([patient_id, "total_chol", round(float(rng.uniform(140, 260)), 1), meas_date])
        labs.append([patient_id, "hdl", round(float(rng.uniform(30, 80)), 1), meas_date])

        # follow-up events for survival analyses
        death_p = 0.30 if positive else 0.08
        if rng.random() < death_p:
            deaths.append([patient_id,
                           (exam_date + timedelta(days=int(rng.integers(200, 2000)))).isoformat()])
        adm_p = 0.5 if positive else 0.15
        if rng.random() < adm_p:
            admissions.append([patient_id, rng.choice(["cardiology", "internal"]),
                               (exam_date + timedelta(days=int(rng.integers(30, 1800)))).isoformat()])

    _write_csv(out_dir / "exams.csv", ["exam_id", "patient_id", "exam_date"], exams)
    _write_csv(out_dir / "patients.csv", ["patient_id", "sex", "birth_year", "smoker"], patients)
    _write_csv(out_dir / "diagnoses.csv", ["patient_id", "icd9", "date", "source"], diagnoses)
    _write_csv(out_dir / "medications.csv", ["patient_id", "atc", "date"], medications)
    _write_csv(out_dir / "labs.csv", ["patient_id", "name", "value", "date"], labs)
    _write_csv(out_dir / "measures.csv", ["patient_id", "name", "value", "date"], measures)
    _write_csv(out_dir / "echoes.csv", ["patient_id", "date"], echoes)
    _write_csv(out_dir / "deaths.csv", ["patient_id", "date"], deaths)
    _write_csv(out_dir / "admissions.csv", ["patient_id", "department", "date"], admissions)
    _write_csv(out_dir / "bursts.csv", ["exam_id", "start_s", "end_s"], bursts)

    return {
        "n_recordings": n,
        "n_positive": int(labels.sum()),
        "n_test_window": int(in_test_window.sum()),
        "val_frac": spec.val_frac,
    }


def load_patients(data_dir) -> dict:
    """patients.csv -> {patient_id: {sex, birth_year, smoker}}."""
    out = {}
    path = Path(data_dir) / "patients.csv"
    if not path.exists():
        return out
    with path.open(newline="") as fh:
        for row in csv.DictReader(fh):
            out[row["patient_id"]] = {
                "sex": row["sex"],
                "birth_year": int(row["birth_year"]),
                "smoker": bool(int(row["smoker"])),
            }
    return out


def load_bursts(data_dir) -> dict:
    """bursts.csv -> {exam_id: [(start_s, end_s), ...]}."""
    out: dict = {}
    path = Path(data_dir) / "bursts.csv"
    if not path.exists():
        return out
    with path.open(newline="") as fh:
        for row in csv.DictReader(fh):
            out.setdefault(row["exam_id"], []).append(
                (float(row["start_s"]), float(row["end_s"]))
            )
    return out
