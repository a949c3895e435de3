import math
from datetime import date

import numpy as np
import pytest

from conftest import make_recording
from deephhf.clinical import (
    PcphfInputs,
    apply_combiner,
    assemble_pcphf_inputs,
    fit_logistic,
    fit_score_combiner,
    load_coefficients,
    measure_qrs,
    pcphf_score,
)
from deephhf.cohort import EmrEvent
from deephhf.errors import InsufficientValidData, MissingVariable, NoBeatsDetected
from deephhf.evaluation import auroc
from deephhf.signal_io import FS


def inputs(**overrides):
    base = dict(sex="male", age=60.0, sbp=125.0, sbp_treated=False, glucose=98.0,
                glucose_treated=False, total_chol=190.0, hdl=50.0, bmi=26.5,
                qrs_ms=94.0, smoker=False)
    base.update(overrides)
    return PcphfInputs(**base)


REFERENCE_TABLE = """
[male]
s0=0.98800
term.ln_age.coef=4.20000
term.ln_age.mean={ln_age}
term.ln_sbp_untreated.coef=1.90000
term.ln_sbp_untreated.mean={ln_sbp}
term.ln_sbp_treated.coef=2.05000
term.ln_sbp_treated.mean={ln_sbp}
term.smoker.coef=0.65000
term.smoker.mean=0.0
term.ln_glucose_untreated.coef=0.75000
term.ln_glucose_untreated.mean={ln_glucose}
term.ln_tc.coef=0.60000
term.ln_tc.mean={ln_tc}
term.ln_hdl.coef=-0.80000
term.ln_hdl.mean={ln_hdl}
term.ln_bmi.coef=1.70000
term.ln_bmi.mean={ln_bmi}
term.ln_qrs.coef=1.30000
term.ln_qrs.mean={ln_qrs}
[female]
s0=0.99500
term.ln_age.coef=4.60000
term.ln_age.mean={ln_age}
""".format(
    ln_age=math.log(60.0), ln_sbp=math.log(125.0), ln_glucose=math.log(98.0),
    ln_tc=math.log(190.0), ln_hdl=math.log(50.0), ln_bmi=math.log(26.5),
    ln_qrs=math.log(94.0),
)


@pytest.fixture()
def reference_coeffs(tmp_path):
    path = tmp_path / "coeffs.txt"
    path.write_text(REFERENCE_TABLE)
    return load_coefficients(path)


class TestCoefficientTable:
    def test_packaged_placeholder_loads(self):
        table = load_coefficients()
        assert set(table.by_sex) == {"male", "female"}
        assert len(table.file_hash) == 64
        assert 0 < table.s0["male"] < 1

    def test_unknown_term_rejected(self, tmp_path):
        p = tmp_path / "bad.txt"
        p.write_text("[male]\ns0=0.9\nterm.bogus.coef=1\nterm.bogus.mean=0\n[female]\ns0=0.9\n")
        with pytest.raises(ValueError, match="unknown term"):
            load_coefficients(p)

    def test_missing_sex_rejected(self, tmp_path):
        p = tmp_path / "bad.txt"
        p.write_text("[male]\ns0=0.9\n")
        with pytest.raises(ValueError, match="female"):
            load_coefficients(p)

    def test_incomplete_term_rejected(self, tmp_path):
        p = tmp_path / "bad.txt"
        p.write_text("[male]\ns0=0.9\nterm.ln_age.coef=1\n[female]\ns0=0.9\n")
        with pytest.raises(ValueError, match="coef and mean"):
            load_coefficients(p)


class TestPcphfScore:
    def test_risk_at_covariate_means(self, reference_coeffs):
        assert pcphf_score(inputs(), reference_coeffs) == pytest.approx(1 - 0.988, abs=1e-12)

    def test_age_monotone(self, reference_coeffs):
        risks = [pcphf_score(inputs(age=a), reference_coeffs) for a in (50, 60, 70, 79)]
        assert all(b > a for a, b in zip(risks, risks[1:]))

    def test_invariant_to_treatment_flags(self, reference_coeffs):
        for sbp_t in (False, True):
            for glu_t in (False, True):
                alt = inputs(sbp_treated=sbp_t, glucose_treated=glu_t)
                assert pcphf_score(alt, reference_coeffs) == pcphf_score(inputs(), reference_coeffs)

    def test_age_range_flag(self):
        assert inputs(age=45).in_design_age_range
        assert not inputs(age=85).in_design_age_range

    def test_rejects_nonpositive_fields(self):
        with pytest.raises(ValueError):
            inputs(hdl=0.0)


class TestMeasureQrs:
    def test_template_width_recovered(self, clean_recording):
        qrs_ms = measure_qrs(clean_recording)
        tolerance = 1000.0 / FS          # one sample
        assert abs(qrs_ms - 93.75) <= tolerance

    def test_amplitude_scale_invariant(self, clean_recording):
        scaled = make_recording(np.asarray(clean_recording.samples) * 2.5,
                                valid_len=clean_recording.valid_len)
        assert measure_qrs(scaled) == measure_qrs(clean_recording)

    def test_insufficient_duration(self):
        rec = make_recording(np.zeros(10 * 3600 * FS, dtype=np.float32))
        with pytest.raises(InsufficientValidData):
            measure_qrs(rec)

    def test_flat_line(self):
        rec = make_recording(np.zeros(13 * 3600 * FS, dtype=np.float32))
        with pytest.raises(NoBeatsDetected):
            measure_qrs(rec)


def ev_measure(name, value, when, pid="p1"):
    return EmrEvent(pid, "measure", name, value, when)


def ev_lab(name, value, when, pid="p1"):
    return EmrEvent(pid, "lab", name, value, when)


class TestAssembleInputs:
    EXAM = date(2018, 3, 1)
    DEMO = {"sex": "male", "birth_year": 1955, "smoker": False}

    def timeline(self, extra=(), skip=()):
        base = {
            "sbp": ev_measure("sbp", 130.0, self.EXAM - date.resolution * 20),
            "bmi": ev_measure("bmi", 27.0, date(2018, 2, 1)),
            "glucose": ev_lab("glucose", 101.0, date(2018, 2, 1)),
            "total_chol": ev_lab("total_chol", 180.0, date(2018, 2, 1)),
            "hdl": ev_lab("hdl", 44.0, date(2018, 2, 1)),
        }
        events = [v for k, v in base.items() if k not in skip]
        return events + list(extra)

    def test_nearest_value_wins(self, clean_recording):
        tl = self.timeline(extra=[ev_measure("sbp", 150.0, date(2016, 9, 1))])
        got = assemble_pcphf_inputs(tl, self.DEMO, self.EXAM, clean_recording)
        assert got.sbp == 130.0                # -20 d beats -18 months

    def test_post_exam_value_closer_wins(self, clean_recording):
        tl = self.timeline(skip=("sbp",), extra=[
            ev_measure("sbp", 150.0, date(2016, 9, 1)),     # -18 months
            ev_measure("sbp", 120.0, date(2018, 4, 1)),     # +1 month
        ])
        got = assemble_pcphf_inputs(tl, self.DEMO, self.EXAM, clean_recording)
        assert got.sbp == 120.0

    def test_tie_prefers_pre_exam(self, clean_recording):
        tl = self.timeline(skip=("sbp",), extra=[
            ev_measure("sbp", 111.0, date(2018, 2, 19)),    # -10 days
            ev_measure("sbp", 122.0, date(2018, 3, 11)),    # +10 days
        ])
        got = assemble_pcphf_inputs(tl, self.DEMO, self.EXAM, clean_recording)
        assert got.sbp == 111.0

    def test_outside_window_missing(self, clean_recording):
        tl = self.timeline(skip=("glucose",),
                           extra=[ev_lab("glucose", 99.0, date(2016, 1, 1))])  # -26 months
        with pytest.raises(MissingVariable) as exc:
            assemble_pcphf_inputs(tl, self.DEMO, self.EXAM, clean_recording)
        assert exc.value.missing == ["glucose"]

    def test_treatment_flag_from_dispensed_atc(self, clean_recording):
        tl = self.timeline(extra=[EmrEvent("p1", "medication", "C09AA05", None,
                                           date(2017, 12, 1))])
        got = assemble_pcphf_inputs(tl, self.DEMO, self.EXAM, clean_recording)
        assert got.sbp_treated is True
        assert got.glucose_treated is False

    def test_age_from_birth_year(self, clean_recording):
        got = assemble_pcphf_inputs(self.timeline(), self.DEMO, self.EXAM, clean_recording)
        assert got.age == 63.0

    def test_missing_recording_reports_qrs(self):
        with pytest.raises(MissingVariable) as exc:
            assemble_pcphf_inputs(self.timeline(), self.DEMO, self.EXAM, None)
        assert "qrs_ms" in exc.value.missing


class TestLogisticCombiner:
    def test_recovers_exact_log_odds_relation(self):
        # grouped covariate values whose empirical positive fraction equals
        # sigmoid(x): the unique MLE is then intercept 0, slope 1
        xs, ys = [], []
        for p in (0.2, 0.4, 0.6, 0.8):
            x = math.log(p / (1 - p))
            n = 10
            k = int(round(p * n))
            xs += [x] * n
            ys += [1] * k + [0] * (n - k)
        model = fit_logistic(np.array(xs)[:, None], np.array(ys))
        assert model.converged and not model.separation
        assert model.coef[0] == pytest.approx(1.0, abs=1e-4)
        assert model.intercept == pytest.approx(0.0, abs=1e-4)

    def test_constant_covariate_zero_coef_under_ridge(self):
        rng = np.random.default_rng(0)
        x = np.column_stack([rng.normal(size=100), np.full(100, 3.3)])
        y = (x[:, 0] + rng.normal(scale=2.0, size=100) > 0).astype(float)
        model = fit_logistic(x, y)
        assert model.coef[1] == 0.0

    def test_perfect_separation_flagged(self):
        x = np.concatenate([np.linspace(-2, -1, 20), np.linspace(1, 2, 20)])[:, None]
        y = np.concatenate([np.zeros(20), np.ones(20)])
        model = fit_logistic(x, y)
        assert model.separation

    def test_combiner_auroc_not_below_score_alone(self):
        rng = np.random.default_rng(1)
        n = 400
        score = rng.random(n)
        covar = rng.normal(size=(n, 2))
        logit = 3 * (score - 0.5) + 0.8 * covar[:, 0]
        y = (rng.random(n) < 1 / (1 + np.exp(-logit))).astype(float)
        model = fit_score_combiner(score, covar, y)
        combined = apply_combiner(model, score, covar)
        assert auroc(combined, y) >= auroc(score, y)

    def test_predictions_deterministic(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(50, 1))
        y = (x[:, 0] > 0).astype(float) * (rng.random(50) > 0.2)
        a = fit_logistic(x, y)
        b = fit_logistic(x, y)
        assert np.array_equal(a.beta, b.beta)
