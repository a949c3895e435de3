"""Two-step training with early stopping on validation AUROC.

Step 1 trains the window encoder on 30-second windows that inherit their
recording's label; step 2 freezes the encoder and trains the sequential head
on ordered window features. Both stop after `patience` epochs without a
strict validation-AUROC improvement and keep the best checkpoint seen.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .cohort import HF
from .errors import EmptySplit, IncompatibleCheckpoint
from .evaluation import auroc
from .model import (
    Checkpoint,
    ModelConfig,
    SequentialHead,
    WindowEncoder,
    build_encoder,
    build_head,
    encoder_from_checkpoint,
    head_from_checkpoint,
    weighted_bce,
)
from .sampling import WINDOW_LEN, derive_seed, gather, plan_step1, plan_step2
from .signal_io import EcgRecording, normalize_duration

IMPROVEMENT_EPS = 1e-6
AGGREGATIONS = ("mean_logit", "mean_prob", "max_logit")


@dataclass
class TrainConfig:
    step: int = 1
    lr: float = 1e-3               # step 2 default is 5e-5
    batch_size: int = 32
    patience: int = 8
    max_epochs: int | None = None
    seed: int = 0
    score_aggregation: str = "mean_logit"

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.score_aggregation not in AGGREGATIONS:
            raise ValueError(f"score_aggregation must be one of {AGGREGATIONS}")


@dataclass
class TrainOutcome:
    encoder: WindowEncoder
    head: SequentialHead | None
    metrics: list[dict] = field(default_factory=list)
    pos_weight: float = 1.0
    best_val_auroc: float = 0.0


def _split_labels(labels):
    by_split = {"train": [], "validation": [], "test": []}
    for lab in labels:
        if lab.split in by_split:
            by_split[lab.split].append(lab)
    return by_split


def _require_two_class(split_labels, name):
    if not split_labels:
        raise EmptySplit(f"{name} split is empty")
    classes = {lab.label for lab in split_labels}
    if len(classes) < 2:
        raise EmptySplit(f"{name} split has a single class: {classes}")


def compute_pos_weight(train_labels) -> float:
    n_pos = sum(1 for lab in train_labels if lab.label == HF)
    n_neg = len(train_labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise EmptySplit("train split needs both classes for the loss weight")
    return n_neg / n_pos


def aggregate_window_logits(logits: np.ndarray, how: str) -> float:
    """Recording-level score from per-window logits."""
    if how == "mean_logit":
        return float(np.mean(logits))
    if how == "mean_prob":
        return float(np.mean(1.0 / (1.0 + np.exp(-logits))))
    if how == "max_logit":
        return float(np.max(logits))
    raise ValueError(f"unknown aggregation {how!r}")


def _encode_windows(encoder, windows: np.ndarray, chunk: int = 256):
    """Eval-mode encoder pass in chunks; returns (features, logits) as numpy."""
    feats, logits = [], []
    with torch.no_grad():
        for i in range(0, len(windows), chunk):
            f, z = encoder(torch.from_numpy(windows[i:i + chunk]))
            feats.append(f.numpy())
            logits.append(z.numpy())
    return np.concatenate(feats), np.concatenate(logits)


def _early_stop_loop(train_epoch, validate, cfg: TrainConfig, snapshot, restore):
    """Shared epoch loop: strict-improvement tracking and patience stopping."""
    best_auroc = -np.inf
    best_state = None
    bad = 0
    metrics = []
    epoch = 0
    while cfg.max_epochs is None or epoch < cfg.max_epochs:
        train_loss = train_epoch(epoch)
        val_auroc = validate(epoch)
        is_best = val_auroc > best_auroc + IMPROVEMENT_EPS
        if is_best:
            best_auroc = val_auroc
            best_state = snapshot()
            bad = 0
        else:
            # ties keep the newest equally-good weights (more training at the
            # same validation ranking) without resetting patience
            if val_auroc >= best_auroc:
                best_state = snapshot()
            bad += 1
        metrics.append({
            "epoch": epoch,
            "train_loss": float(train_loss),
            "val_auroc": float(val_auroc),
            "is_best": bool(is_best),
        })
        if bad >= cfg.patience:
            break
        epoch += 1
    if best_state is not None:
        restore(best_state)
    return metrics, best_auroc


def train_step1(labels, store, model_config: ModelConfig, cfg: TrainConfig) -> TrainOutcome:
    """Train the window encoder; windows inherit their recording's label.

    Validation score per epoch is the AUROC of aggregated window logits per
    validation recording, using a fixed (epoch-0) window plan for stability.
    """
    splits = _split_labels(labels)
    _require_two_class(splits["train"], "train")
    _require_two_class(splits["validation"], "validation")
    train_labels = sorted(splits["train"], key=lambda lab: lab.exam_id)
    val_labels = sorted(splits["validation"], key=lambda lab: lab.exam_id)
    pos_weight = compute_pos_weight(train_labels)

    encoder = build_encoder(model_config, seed=derive_seed(cfg.seed, "enc-init"))
    opt = torch.optim.Adam(encoder.parameters(), lr=cfg.lr)

    def train_epoch(epoch):
        encoder.train()
        xs, ys = [], []
        for lab in train_labels:
            plan = plan_step1(lab.exam_id, cfg.seed, epoch)
            windows, pad = store.windows(lab.exam_id, plan.offsets, WINDOW_LEN)
            keep = ~pad
            xs.append(windows[keep])
            ys.append(np.full(int(keep.sum()), 1.0 if lab.label == HF else 0.0, dtype=np.float32))
        x = np.concatenate(xs)
        y = np.concatenate(ys)
        order = np.random.default_rng(derive_seed(cfg.seed, "shuffle1", epoch)).permutation(len(x))
        total = 0.0
        batches = 0
        for i in range(0, len(order), cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            _, logits = encoder(torch.from_numpy(x[idx]))
            loss = weighted_bce(logits, torch.from_numpy(y[idx]), pos_weight)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.detach().item()
            batches += 1
        return total / max(batches, 1)

    def validate(_epoch):
        encoder.eval()
        scores, ys = [], []
        for lab in val_labels:
            plan = plan_step1(lab.exam_id, cfg.seed, epoch=0)
            windows, pad = store.windows(lab.exam_id, plan.offsets, WINDOW_LEN)
            _, logits = _encode_windows(encoder, windows[~pad])
            scores.append(aggregate_window_logits(logits, cfg.score_aggregation))
            ys.append(1 if lab.label == HF else 0)
        return auroc(scores, ys)

    def snapshot():
        return {k: v.detach().clone() for k, v in encoder.state_dict().items()}

    metrics, best = _early_stop_loop(train_epoch, validate, cfg, snapshot, encoder.load_state_dict)
    return TrainOutcome(encoder=encoder, head=None, metrics=metrics,
                        pos_weight=pos_weight, best_val_auroc=float(best))


def _precompute_features(encoder, store, labels, seed, canonical: bool):
    """Frozen-encoder features per recording under a step-2 plan.

    Training recordings get a per-recording random in-segment constant;
    validation/test use the canonical c=0 plan.
    """
    feats, masks = {}, {}
    for lab in labels:
        plan = plan_step2(lab.exam_id, seed, constant=0 if canonical else None)
        windows, pad = store.windows(lab.exam_id, plan.offsets, WINDOW_LEN)
        f, _ = _encode_windows(encoder, windows)
        feats[lab.exam_id] = f
        masks[lab.exam_id] = pad
    return feats, masks


def train_step2(encoder_ckpt: Checkpoint, labels, store, cfg: TrainConfig) -> TrainOutcome:
    """Train the sequential head on frozen-encoder features."""
    if not any(k.startswith("encoder.") for k in encoder_ckpt.params):
        raise IncompatibleCheckpoint("step-2 training needs an encoder checkpoint")
    model_config = encoder_ckpt.config
    splits = _split_labels(labels)
    _require_two_class(splits["train"], "train")
    _require_two_class(splits["validation"], "validation")
    train_labels = sorted(splits["train"], key=lambda lab: lab.exam_id)
    val_labels = sorted(splits["validation"], key=lambda lab: lab.exam_id)
    pos_weight = compute_pos_weight(train_labels)

    encoder = encoder_from_checkpoint(encoder_ckpt)
    encoder.eval().requires_grad_(False)
    head = build_head(model_config, seed=derive_seed(cfg.seed, "head-init"))
    opt = torch.optim.Adam(head.parameters(), lr=cfg.lr)

    feats, masks = _precompute_features(encoder, store, train_labels, cfg.seed, canonical=False)
    val_feats, val_masks = _precompute_features(encoder, store, val_labels, cfg.seed, canonical=True)

    train_y = {lab.exam_id: 1.0 if lab.label == HF else 0.0 for lab in train_labels}

    def batch_tensors(exam_ids, feat_map, mask_map):
        f = torch.from_numpy(np.stack([feat_map[e] for e in exam_ids]))
        m = torch.from_numpy(np.stack([mask_map[e] for e in exam_ids]))
        return f, m

    def train_epoch(epoch):
        head.train()
        ids = [lab.exam_id for lab in train_labels]
        order = np.random.default_rng(derive_seed(cfg.seed, "shuffle2", epoch)).permutation(len(ids))
        total = 0.0
        batches = 0
        for i in range(0, len(order), cfg.batch_size):
            batch = [ids[j] for j in order[i:i + cfg.batch_size]]
            f, m = batch_tensors(batch, feats, masks)
            logits = head(f, m)
            y = torch.tensor([train_y[e] for e in batch], dtype=torch.float32)
            loss = weighted_bce(logits, y, pos_weight)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.detach().item()
            batches += 1
        return total / max(batches, 1)

    def validate(_epoch):
        head.eval()
        ids = [lab.exam_id for lab in val_labels]
        with torch.no_grad():
            f, m = batch_tensors(ids, val_feats, val_masks)
            logits = head(f, m).numpy()
        ys = [1 if lab.label == HF else 0 for lab in val_labels]
        return auroc(logits, ys)

    def snapshot():
        return {k: v.detach().clone() for k, v in head.state_dict().items()}

    metrics, best = _early_stop_loop(train_epoch, validate, cfg, snapshot, head.load_state_dict)
    return TrainOutcome(encoder=encoder, head=head, metrics=metrics,
                        pos_weight=pos_weight, best_val_auroc=float(best))


def score_recording(encoder: WindowEncoder, head: SequentialHead, rec: EcgRecording) -> float:
    """Deterministic inference: normalize, canonical c=0 plan, encoder, head, sigmoid."""
    rec = normalize_duration(rec)
    plan = plan_step2(rec.exam_id, seed=0, constant=0)
    windows, pad = gather(rec, plan)
    encoder.eval()
    head.eval()
    features, _ = _encode_windows(encoder, windows)
    with torch.no_grad():
        logit = head(torch.from_numpy(features), torch.from_numpy(pad))
    return float(torch.sigmoid(logit))


def score_from_checkpoint(ckpt: Checkpoint, rec: EcgRecording) -> float:
    return score_recording(encoder_from_checkpoint(ckpt), head_from_checkpoint(ckpt), rec)


def write_metrics(path, metrics):
    """Metric log as CSV: epoch, train_loss, val_auroc, is_best."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["epoch", "train_loss", "val_auroc", "is_best"])
        writer.writeheader()
        for row in metrics:
            writer.writerow({**row, "is_best": int(row["is_best"])})
