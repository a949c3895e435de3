"""Clinical baseline: PCP-HF risk score, ECG-derived QRS duration, score combiner.

The pooled-cohort equation coefficients are published externally, so they
live in a versioned text table loaded at runtime; the file shipped with the
package holds clearly marked placeholder values for testing. Per this
pipeline's method, the untreated blood-pressure and glucose coefficients are
applied regardless of treatment status.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from datetime import date
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import InsufficientValidData, MissingVariable, NoBeatsDetected
from .qrs import delineate_qrs, detect_r_peaks, remove_baseline
from .signal_io import FS, EcgRecording

QRS_SLICE_START_H = 11          # twelfth recording hour
QRS_SLICE_MINUTES = 5
MIN_HOURS_FOR_QRS = 12
LOOKUP_BEFORE_DAYS = 730        # two years before the exam
LOOKUP_AFTER_DAYS = 61          # two months after
DESIGN_AGE_RANGE = (30, 79)

ANTIHYPERTENSIVE_ATC = ("C02", "C03", "C07", "C08", "C09")
ANTIDIABETIC_ATC = ("A10",)

SEXES = ("male", "female")

# Transform registry: term name -> value computed from the inputs. Terms with
# a _treated suffix mirror the published table layout but are never used in
# this pipeline's scoring (untreated coefficients apply to everyone).
_TERMS = {
    "ln_age": lambda v: math.log(v.age),
    "ln_age_sq": lambda v: math.log(v.age) ** 2,
    "ln_sbp_untreated": lambda v: math.log(v.sbp),
    "ln_sbp_treated": lambda v: math.log(v.sbp),
    "ln_glucose_untreated": lambda v: math.log(v.glucose),
    "ln_glucose_treated": lambda v: math.log(v.glucose),
    "ln_tc": lambda v: math.log(v.total_chol),
    "ln_hdl": lambda v: math.log(v.hdl),
    "ln_bmi": lambda v: math.log(v.bmi),
    "ln_qrs": lambda v: math.log(v.qrs_ms),
    "smoker": lambda v: 1.0 if v.smoker else 0.0,
    "ln_age_x_ln_sbp_untreated": lambda v: math.log(v.age) * math.log(v.sbp),
    "ln_age_x_ln_sbp_treated": lambda v: math.log(v.age) * math.log(v.sbp),
    "ln_age_x_smoker": lambda v: math.log(v.age) * (1.0 if v.smoker else 0.0),
}

_REQUIRED_FIELDS = ("sex", "age", "sbp", "glucose", "total_chol", "hdl", "bmi", "qrs_ms", "smoker")


@dataclass(frozen=True)
class PcphfInputs:
    sex: str
    age: float
    sbp: float
    sbp_treated: bool
    glucose: float
    glucose_treated: bool
    total_chol: float
    hdl: float
    bmi: float
    qrs_ms: float
    smoker: bool

    def __post_init__(self):
        if self.sex not in SEXES:
            raise ValueError(f"sex must be one of {SEXES}")
        for name in ("age", "sbp", "glucose", "total_chol", "hdl", "bmi", "qrs_ms"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @property
    def in_design_age_range(self) -> bool:
        return DESIGN_AGE_RANGE[0] <= self.age <= DESIGN_AGE_RANGE[1]


@dataclass(frozen=True)
class CoefficientTable:
    """Per-sex coefficient rows (term -> (coef, mean)) and baseline survival."""

    by_sex: dict
    s0: dict
    file_hash: str


def load_coefficients(path=None) -> CoefficientTable:
    """Parse and validate the coefficient file; records its content hash."""
    if path is None:
        text = resources.files("deephhf.data").joinpath("pcphf_coefficients.txt").read_text()
    else:
        text = Path(path).read_text()
    file_hash = hashlib.sha256(text.encode()).hexdigest()
    by_sex: dict = {}
    s0: dict = {}
    sex = None
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            sex = line[1:-1]
            if sex not in SEXES:
                raise ValueError(f"unknown section [{sex}]")
            by_sex[sex] = {}
            continue
        if sex is None or "=" not in line:
            raise ValueError(f"stray line in coefficient file: {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key == "s0":
            s0[sex] = float(value)
            continue
        parts = key.split(".")
        if len(parts) != 3 or parts[0] != "term" or parts[2] not in ("coef", "mean"):
            raise ValueError(f"bad coefficient key: {key!r}")
        term = parts[1]
        if term not in _TERMS:
            raise ValueError(f"unknown term {term!r}; registry has {sorted(_TERMS)}")
        by_sex[sex].setdefault(term, {})[parts[2]] = float(value)

    for sex in SEXES:
        if sex not in by_sex:
            raise ValueError(f"coefficient table missing [{sex}] section")
        if sex not in s0 or not (0.0 < s0[sex] < 1.0):
            raise ValueError(f"[{sex}] needs s0 in (0, 1)")
        for term, row in by_sex[sex].items():
            if set(row) != {"coef", "mean"}:
                raise ValueError(f"[{sex}] term {term} needs both coef and mean")
    rows = {
        sex: {term: (row["coef"], row["mean"]) for term, row in by_sex[sex].items()}
        for sex in SEXES
    }
    return CoefficientTable(by_sex=rows, s0=s0, file_hash=file_hash)


def pcphf_score(inputs: PcphfInputs, coeffs: CoefficientTable) -> float:
    """10-year risk = 1 - S0 ** exp(sum(coef * (term - mean))).

    Only the untreated blood-pressure/glucose rows enter the sum, so the
    output is invariant to the treatment flags.
    """
    missing = [f for f in _REQUIRED_FIELDS if getattr(inputs, f) is None]
    if missing:
        raise MissingVariable(missing)
    rows = coeffs.by_sex[inputs.sex]
    lp = 0.0
    for term, (coef, mean) in sorted(rows.items()):
        if term.endswith("_treated"):
            continue
        lp += coef * (_TERMS[term](inputs) - mean)
    return 1.0 - coeffs.s0[inputs.sex] ** math.exp(lp)


# ---------------------------------------------------------------------------
# QRS duration from the recording
# ---------------------------------------------------------------------------

def measure_qrs(rec: EcgRecording) -> float:
    """Mean QRS duration (ms) over the first five minutes of the twelfth hour."""
    if rec.valid_len < MIN_HOURS_FOR_QRS * 3600 * FS:
        raise InsufficientValidData(
            f"{rec.exam_id}: needs {MIN_HOURS_FOR_QRS} h of valid signal"
        )
    start = QRS_SLICE_START_H * 3600 * FS
    stop = start + QRS_SLICE_MINUTES * 60 * FS
    segment = np.asarray(rec.samples[start:stop], dtype=np.float64)
    segment = remove_baseline(segment, rec.fs)
    peaks = detect_r_peaks(segment, rec.fs)
    if len(peaks) == 0:
        raise NoBeatsDetected(f"{rec.exam_id}: no R-peaks in the QRS slice")
    onsets, offsets = delineate_qrs(segment, peaks, rec.fs)
    if len(onsets) == 0:
        raise NoBeatsDetected(f"{rec.exam_id}: no delineable beats")
    widths = offsets - onsets + 1
    return float(widths.mean() * 1000.0 / rec.fs)


# ---------------------------------------------------------------------------
# Variable assembly from EMR timelines
# ---------------------------------------------------------------------------

def _nearest_value(events, exam_date: date):
    """Value closest to the exam inside [-2 y, +2 mo]; pre-exam wins date ties."""
    best = None
    for ev in events:
        days = (ev.date - exam_date).days
        if not (-LOOKUP_BEFORE_DAYS <= days <= LOOKUP_AFTER_DAYS):
            continue
        key = (abs(days), 0 if days <= 0 else 1, ev.date)
        if best is None or key < best[0]:
            best = (key, ev.value)
    return None if best is None else best[1]


def assemble_pcphf_inputs(timeline, demographics: dict, exam_date: date,
                          rec: EcgRecording | None) -> PcphfInputs:
    """Gather score inputs near the exam date; raises MissingVariable with the gaps.

    demographics: {"sex", "birth_year", "smoker"} for the patient. The QRS
    duration comes from the recording; treatment flags mean at least one
    dispensed prescription of a relevant ATC group inside the same window.
    """
    missing = []
    sex = demographics.get("sex")
    if sex not in SEXES:
        missing.append("sex")
    birth_year = demographics.get("birth_year")
    age = exam_date.year - int(birth_year) if birth_year else None
    if age is None:
        missing.append("age")
    smoker = demographics.get("smoker")
    if smoker is None:
        missing.append("smoker")

    def pick(kind, name):
        events = [ev for ev in timeline if ev.kind == kind and ev.code == name]
        value = _nearest_value(events, exam_date)
        if value is None:
            missing.append(name)
        return value

    sbp = pick("measure", "sbp")
    bmi = pick("measure", "bmi")
    glucose = pick("lab", "glucose")
    total_chol = pick("lab", "total_chol")
    hdl = pick("lab", "hdl")

    def treated(prefixes):
        return any(
            ev.kind == "medication"
            and any(ev.code.upper().startswith(p) for p in prefixes)
            and -LOOKUP_BEFORE_DAYS <= (ev.date - exam_date).days <= LOOKUP_AFTER_DAYS
            for ev in timeline
        )

    qrs_ms = None
    if rec is None:
        missing.append("qrs_ms")
    else:
        try:
            qrs_ms = measure_qrs(rec)
        except (InsufficientValidData, NoBeatsDetected):
            missing.append("qrs_ms")

    if missing:
        raise MissingVariable(missing)
    return PcphfInputs(
        sex=sex,
        age=float(age),
        sbp=float(sbp),
        sbp_treated=treated(ANTIHYPERTENSIVE_ATC),
        glucose=float(glucose),
        glucose_treated=treated(ANTIDIABETIC_ATC),
        total_chol=float(total_chol),
        hdl=float(hdl),
        bmi=float(bmi),
        qrs_ms=float(qrs_ms),
        smoker=bool(smoker),
    )


# ---------------------------------------------------------------------------
# Logistic score combiner
# ---------------------------------------------------------------------------

@dataclass
class LogisticModel:
    beta: np.ndarray               # intercept first, standardized space
    means: np.ndarray
    stds: np.ndarray
    converged: bool
    separation: bool

    @property
    def intercept(self) -> float:
        adj = sum(
            self.beta[j + 1] * self.means[j] / self.stds[j]
            for j in range(len(self.means)) if self.stds[j] > 0
        )
        return float(self.beta[0] - adj)

    @property
    def coef(self) -> np.ndarray:
        out = np.zeros(len(self.means))
        for j in range(len(self.means)):
            if self.stds[j] > 0:
                out[j] = self.beta[j + 1] / self.stds[j]
        return out

    def predict_proba(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        z = np.zeros(len(x))
        for j in range(x.shape[1]):
            if self.stds[j] > 0:
                z += self.beta[j + 1] * (x[:, j] - self.means[j]) / self.stds[j]
        z += self.beta[0]
        return 1.0 / (1.0 + np.exp(-z))


def _irls(design: np.ndarray, y: np.ndarray, ridge: float, max_iter: int = 100,
          tol: float = 1e-8) -> tuple[np.ndarray, bool]:
    beta = np.zeros(design.shape[1])
    for _ in range(max_iter):
        z = design @ beta
        p = 1.0 / (1.0 + np.exp(-z))
        grad = design.T @ (y - p) - ridge * beta
        if np.max(np.abs(grad)) < tol:
            return beta, True
        w = np.clip(p * (1.0 - p), 1e-12, None)
        hess = design.T @ (design * w[:, None]) + ridge * np.eye(design.shape[1])
        beta = beta + np.linalg.solve(hess, grad)
        if not np.all(np.isfinite(beta)) or np.max(np.abs(beta)) > 1e8:
            raise np.linalg.LinAlgError("diverged")
    return beta, False


def fit_logistic(x: np.ndarray, y: np.ndarray, ridge_fallback: float = 1e-6) -> LogisticModel:
    """Maximum-likelihood logistic regression by IRLS on standardized covariates.

    Perfect separation or a singular system falls back to a small ridge
    penalty and sets the separation flag; constant covariates standardize to
    zero columns and get exactly zero coefficients there.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    means = x.mean(axis=0)
    stds = x.std(axis=0)
    # constant columns standardize to exactly zero (np.std is not exact there)
    stds = np.where(stds <= 1e-12 * np.maximum(1.0, np.abs(means)), 0.0, stds)
    xs = np.where(stds > 0, (x - means) / np.where(stds > 0, stds, 1.0), 0.0)
    design = np.column_stack([np.ones(len(xs)), xs])
    separation = False
    try:
        beta, converged = _irls(design, y, ridge=0.0)
        if not converged:
            raise np.linalg.LinAlgError("no convergence")
        z = design @ beta
        if np.all((z > 0) == (y == 1)) and np.min(np.abs(z)) > 10.0:
            # every point confidently on the right side: the unpenalized MLE
            # is at infinity and the flat gradient only looked converged
            raise np.linalg.LinAlgError("perfect separation")
    except np.linalg.LinAlgError:
        separation = True
        beta, converged = _irls(design, y, ridge=ridge_fallback)
    return LogisticModel(beta=beta, means=means, stds=stds,
                         converged=converged, separation=separation)


def fit_score_combiner(scores, covariates, labels) -> LogisticModel:
    """Logistic model combining the model score with extra covariates."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1, 1)
    if covariates is None or np.size(covariates) == 0:
        x = scores
    else:
        x = np.column_stack([scores, np.atleast_2d(np.asarray(covariates, dtype=np.float64))])
    return fit_logistic(x, labels)


def apply_combiner(model: LogisticModel, scores, covariates=None) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64).reshape(-1, 1)
    if covariates is None or np.size(covariates) == 0:
        x = scores
    else:
        x = np.column_stack([scores, np.atleast_2d(np.asarray(covariates, dtype=np.float64))])
    return model.predict_proba(x)
