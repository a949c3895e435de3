import numpy as np
import pytest
from datetime import date, datetime

from deephhf.cohort import ExamLabel, HF, NON_HF
from deephhf.errors import EmptySplit, IncompatibleCheckpoint, TooShort
from deephhf.model import (
    ModelConfig,
    build_encoder,
    build_head,
    load_checkpoint,
    save_checkpoint,
)
from deephhf.sampling import derive_seed
from deephhf.signal_io import FULL_DAY_SAMPLES, EcgRecording, FS
from deephhf.training import (
    TrainConfig,
    aggregate_window_logits,
    compute_pos_weight,
    score_recording,
    train_step1,
    train_step2,
    write_metrics,
)

TINY = ModelConfig(enc_filters=4, feat_dim=8, d_model=8, n_heads=2, n_layers=1,
                   ff_dim=16, dropout_p=0.0, input_scale_uv=1000.0)


class FakeStore:
    """In-memory store: positives get a planted square pulse in every window."""

    def __init__(self, positive_ids, n_valid=FULL_DAY_SAMPLES):
        self.positive_ids = set(positive_ids)
        self.n_valid = n_valid
        self.accessed = set()

    def windows(self, exam_id, offsets, length):
        self.accessed.add(exam_id)
        rng = np.random.default_rng(derive_seed("fake", exam_id, int(offsets[0])))
        out = rng.normal(0, 40, (len(offsets), length)).astype(np.float32)
        if exam_id in self.positive_ids:
            out[:, 500:600] += 900.0
        mask = np.asarray(offsets) >= self.n_valid
        out[mask] = 0.0
        return out, mask


def mk_labels(n_train=4, n_val=2, n_test=2):
    labels = []
    counter = 0
    for split, count in (("train", n_train), ("validation", n_val), ("test", n_test)):
        for i in range(count):
            label = HF if i % 2 == 0 else NON_HF
            labels.append(ExamLabel(f"{split[:2]}{i}", f"pat{counter}", date(2016, 1, 1),
                                    label, split=split))
            counter += 1
    return labels


def positives(labels):
    return [lab.exam_id for lab in labels if lab.label == HF]


class TestPosWeight:
    def test_one_to_nine_ratio(self):
        labels = [ExamLabel(f"e{i}", f"p{i}", date(2016, 1, 1),
                            HF if i == 0 else NON_HF) for i in range(10)]
        assert compute_pos_weight(labels) == 9.0

    def test_single_class_rejected(self):
        labels = [ExamLabel("e", "p", date(2016, 1, 1), NON_HF)]
        with pytest.raises(EmptySplit):
            compute_pos_weight(labels)


class TestAggregation:
    def test_modes(self):
        logits = np.array([-1.0, 1.0, 3.0])
        assert aggregate_window_logits(logits, "mean_logit") == pytest.approx(1.0)
        assert aggregate_window_logits(logits, "max_logit") == 3.0
        probs = 1 / (1 + np.exp(-logits))
        assert aggregate_window_logits(logits, "mean_prob") == pytest.approx(probs.mean())

    def test_bad_aggregation_rejected(self):
        with pytest.raises(ValueError):
            TrainConfig(score_aggregation="median")


class TestTrainStep1:
    def test_early_stop_exactly_two_epochs_with_frozen_lr(self):
        labels = mk_labels()
        store = FakeStore(positives(labels))
        cfg = TrainConfig(step=1, lr=0.0, patience=1, max_epochs=10, seed=0)
        outcome = train_step1(labels, store, TINY, cfg)
        assert len(outcome.metrics) == 2
        assert outcome.metrics[0]["is_best"] is True
        assert outcome.metrics[1]["is_best"] is False
        assert outcome.metrics[0]["val_auroc"] == outcome.metrics[1]["val_auroc"]

    def test_never_touches_test_split(self):
        labels = mk_labels()
        store = FakeStore(positives(labels))
        cfg = TrainConfig(step=1, lr=0.0, patience=1, max_epochs=2, seed=0)
        train_step1(labels, store, TINY, cfg)
        test_ids = {lab.exam_id for lab in labels if lab.split == "test"}
        assert store.accessed.isdisjoint(test_ids)

    def test_learns_planted_pulse(self):
        labels = mk_labels(n_train=6, n_val=4)
        store = FakeStore(positives(labels))
        cfg = TrainConfig(step=1, lr=3e-3, patience=2, max_epochs=3, seed=1)
        outcome = train_step1(labels, store, TINY, cfg)
        assert outcome.best_val_auroc == 1.0
        assert outcome.pos_weight == 1.0

    def test_empty_validation_rejected(self):
        labels = mk_labels(n_val=0)
        with pytest.raises(EmptySplit):
            train_step1(labels, FakeStore([]), TINY, TrainConfig(max_epochs=1))

    def test_single_class_train_rejected(self):
        labels = [lab for lab in mk_labels() if not (lab.split == "train" and lab.label == HF)]
        with pytest.raises(EmptySplit):
            train_step1(labels, FakeStore([]), TINY, TrainConfig(max_epochs=1))

    def test_metric_log_best_flags_monotone(self):
        labels = mk_labels(n_train=6, n_val=4)
        store = FakeStore(positives(labels))
        cfg = TrainConfig(step=1, lr=1e-3, patience=2, max_epochs=4, seed=2)
        outcome = train_step1(labels, store, TINY, cfg)
        best = -np.inf
        for row in outcome.metrics:
            if row["is_best"]:
                assert row["val_auroc"] > best
                best = row["val_auroc"]
        assert outcome.best_val_auroc == max(r["val_auroc"] for r in outcome.metrics)


@pytest.fixture(scope="module")
def encoder_ckpt(tmp_path_factory):
    path = tmp_path_factory.mktemp("ck") / "enc.ckpt"
    save_checkpoint(path, TINY, build_encoder(TINY, 3), meta={"step": 1})
    return load_checkpoint(path)


class TestTrainStep2:
    def test_encoder_stays_bit_identical(self, encoder_ckpt):
        labels = mk_labels()
        store = FakeStore(positives(labels))
        cfg = TrainConfig(step=2, lr=1e-3, patience=2, max_epochs=3, seed=4)
        outcome = train_step2(encoder_ckpt, labels, store, cfg)
        for name, p in outcome.encoder.named_parameters():
            assert np.array_equal(p.detach().numpy(), encoder_ckpt.params["encoder." + name])

    def test_metric_log_one_row_per_epoch(self, encoder_ckpt):
        labels = mk_labels()
        store = FakeStore(positives(labels))
        cfg = TrainConfig(step=2, lr=0.0, patience=1, max_epochs=10, seed=4)
        outcome = train_step2(encoder_ckpt, labels, store, cfg)
        assert len(outcome.metrics) == 2
        assert [row["epoch"] for row in outcome.metrics] == [0, 1]

    def test_headless_checkpoint_required(self, tmp_path):
        labels = mk_labels()
        bad = load_checkpoint(save_checkpoint(tmp_path / "x.ckpt", TINY, build_encoder(TINY, 0)))
        bad.params = {k: v for k, v in bad.params.items() if not k.startswith("encoder.")}
        with pytest.raises(IncompatibleCheckpoint):
            train_step2(bad, labels, FakeStore([]), TrainConfig(max_epochs=1))


def _tiny_recording(seed=0, n=FULL_DAY_SAMPLES):
    rng = np.random.default_rng(seed)
    samples = rng.normal(0, 60, n).astype(np.float32)
    return EcgRecording("r", "p", datetime(2017, 1, 1, 9, 0), FS, samples, n)


@pytest.fixture(scope="module")
def model_pair():
    return build_encoder(TINY, 5), build_head(TINY, 5)


class TestScoreRecording:
    def test_probability_and_determinism(self, model_pair):
        encoder, head = model_pair
        rec = _tiny_recording()
        p1 = score_recording(encoder, head, rec)
        p2 = score_recording(encoder, head, rec)
        assert 0.0 < p1 < 1.0
        assert p1 == p2

    def test_too_short_rejected(self, model_pair):
        encoder, head = model_pair
        rec = _tiny_recording(n=10 * 3600 * FS)
        with pytest.raises(TooShort):
            score_recording(encoder, head, rec)


def test_write_metrics_csv(tmp_path):
    rows = [{"epoch": 0, "train_loss": 0.5, "val_auroc": 0.9, "is_best": True}]
    path = tmp_path / "m.csv"
    write_metrics(path, rows)
    text = path.read_text().splitlines()
    assert text[0] == "epoch,train_loss,val_auroc,is_best"
    assert text[1] == "0,0.5,0.9,1"
