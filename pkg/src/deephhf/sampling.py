"""Window sampling plans over a normalized 24-hour recording.

Two schemes feed the two training steps: a random 30-second window per
3-minute segment (480 windows, redrawn per epoch as augmentation) and a
constant-offset 30-second window per 2-minute segment (720 windows forming
an ordered sequence).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import OffsetOutOfRange
from .signal_io import FULL_DAY_SAMPLES, EcgRecording

WINDOW_LEN = 3840              # 30 s at 128 Hz
STEP1_SEGMENT = 23040          # 3 min
STEP1_COUNT = FULL_DAY_SAMPLES // STEP1_SEGMENT   # 480
STEP2_SEGMENT = 15360          # 2 min
STEP2_COUNT = FULL_DAY_SAMPLES // STEP2_SEGMENT   # 720


@dataclass(frozen=True)
class WindowPlan:
    exam_id: str
    window_len: int
    offsets: np.ndarray     # int64 sample offsets, one per segment
    mode: str               # "step1_random" | "step2_fixed"


def derive_seed(*parts) -> int:
    """Stable 64-bit seed from arbitrary parts (unlike hash(), not salted)."""
    digest = hashlib.blake2s(":".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:8], "little")


def plan_step1(exam_id: str, seed: int, epoch: int = 0) -> WindowPlan:
    """One uniformly random in-segment offset per 3-minute segment.

    The epoch index is folded into the seed so each epoch draws a fresh plan.
    """
    rng = np.random.default_rng(derive_seed(seed, exam_id, "step1", epoch))
    jitter = rng.integers(0, STEP1_SEGMENT - WINDOW_LEN + 1, size=STEP1_COUNT)
    offsets = np.arange(STEP1_COUNT, dtype=np.int64) * STEP1_SEGMENT + jitter
    return WindowPlan(exam_id, WINDOW_LEN, offsets, "step1_random")


def plan_step2(exam_id: str, seed: int, epoch: int = 0, constant: int | None = None) -> WindowPlan:
    """720 offsets with stride 15360 and a single per-recording constant c.

    ``constant`` overrides the random draw (c=0 is the canonical inference
    plan); position i maps to wall-clock start + i * 2 min + c / 128 s.
    """
    if constant is None:
        rng = np.random.default_rng(derive_seed(seed, exam_id, "step2", epoch))
        c = int(rng.integers(0, STEP2_SEGMENT - WINDOW_LEN + 1))
    else:
        c = int(constant)
        if not (0 <= c <= STEP2_SEGMENT - WINDOW_LEN):
            raise OffsetOutOfRange(f"step2 constant {c} outside [0, {STEP2_SEGMENT - WINDOW_LEN}]")
    offsets = np.arange(STEP2_COUNT, dtype=np.int64) * STEP2_SEGMENT + c
    return WindowPlan(exam_id, WINDOW_LEN, offsets, "step2_fixed")


def gather(rec: EcgRecording, plan: WindowPlan) -> tuple[np.ndarray, np.ndarray]:
    """Slice plan windows out of a normalized recording.

    Returns (windows, pad_mask): float32 uV rows plus a flag per row marking
    windows that start at or beyond valid_len (pure padding; downstream
    masks them from loss and attention).
    """
    n = len(rec.samples)
    if np.any(plan.offsets < 0) or np.any(plan.offsets + plan.window_len > n):
        raise OffsetOutOfRange(
            f"{plan.exam_id}: plan exceeds recording of {n} samples"
        )
    idx = plan.offsets[:, None] + np.arange(plan.window_len)
    windows = np.asarray(rec.samples, dtype=np.float32)[idx]
    pad_mask = plan.offsets >= rec.valid_len
    return windows, pad_mask
