"""Explainability: gradient attention rollout, circadian density, beat clustering.

The rollout composes gradient-weighted attention matrices across the head's
layers into one mass per sequence position; positions map back to wall-clock
time through the recording's start timestamp, which drives the circadian
analysis. Beats under high-attention positions are extracted around detected
R-peaks and clustered by morphology.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .cluster import kmeans, silhouette_score
from .errors import DegenerateClusters, NoAttentionCaptured, NoBeatsFound, TooFewBeats
from .model import SequentialHead, WindowEncoder
from .qrs import detect_r_peaks
from .sampling import gather, plan_step2
from .signal_io import FS, EcgRecording, normalize_duration
from .training import _encode_windows

DISCARD_RATIO = 0.9
BEAT_HALF = 50                 # samples each side of the R-peak
BEAT_LEN = 2 * BEAT_HALF
HIGH_ATTN_SEGMENT_S = 10       # seconds retained per high-attention interval
MIN_CLUSTER_SIZE = 30
MIN_BEATS = 60
K_RANGE = (2, 8)


@dataclass(frozen=True)
class AttentionProfile:
    exam_id: str
    mass: np.ndarray               # length-720, sums to 1 over unmasked positions
    wall_clock: np.ndarray         # datetime per position (window start)
    offsets: np.ndarray            # sample offset per position
    pad_mask: np.ndarray


@dataclass
class BeatClusterResult:
    beats: np.ndarray              # m x 100 uV
    assignments: np.ndarray        # retained cluster id per beat, -1 if dropped
    k: int                         # retained cluster count
    selected_k: int                # k chosen by silhouette before the size filter
    silhouette: dict               # k tried -> mean silhouette
    averaged_beats: np.ndarray     # k x 100
    sizes: list


def rollout_core(attentions, gradients, discard_ratio: float = DISCARD_RATIO,
                 pad_mask: np.ndarray | None = None) -> np.ndarray:
    """Compose per-layer (heads, S, S) attention/gradient pairs into position mass.

    Per layer: grad * attention, negatives clamped, mean over heads, entries
    strictly below the discard quantile zeroed, surviving rows normalized to
    unit mass (the per-layer scale must not matter), identity added, rows
    renormalized; layers compose by matrix product. The final mass is the
    column sum with the same discard applied once more (positions below its
    quantile are zeroed, as in the source technique's sparsified maps),
    renormalized over unmasked positions. Rows whose mass was entirely
    discarded fall back to the identity.
    """
    if not attentions:
        raise NoAttentionCaptured("no attention layers provided")
    s = attentions[0].shape[-1]
    result = np.eye(s)
    for attn, grad in zip(attentions, gradients):
        cam = np.clip(np.asarray(attn, dtype=np.float64) * np.asarray(grad, dtype=np.float64),
                      0.0, None).mean(axis=0)
        if pad_mask is not None:
            # padding queries must not propagate; their rows fall back to identity
            cam[np.asarray(pad_mask)] = 0.0
        thr = np.quantile(cam, discard_ratio)
        cam = np.where(cam < thr, 0.0, cam)
        row_mass = cam.sum(axis=1, keepdims=True)
        cam = np.divide(cam, row_mass, out=np.zeros_like(cam), where=row_mass > 0)
        m = cam + np.eye(s)
        m = m / m.sum(axis=1, keepdims=True)
        result = m @ result
    mass = result.sum(axis=0)
    if pad_mask is not None:
        mass = np.where(pad_mask, 0.0, mass)
    mass = np.where(mass < np.quantile(mass, discard_ratio), 0.0, mass)
    total = mass.sum()
    if total <= 0:
        raise NoAttentionCaptured("rollout mass vanished")
    return mass / total


def grad_attention_rollout(encoder: WindowEncoder, head: SequentialHead,
                           rec: EcgRecording, discard_ratio: float = DISCARD_RATIO) -> AttentionProfile:
    """Attention mass per 2-minute position, gradient-weighted w.r.t. the HF logit."""
    rec = normalize_duration(rec)
    plan = plan_step2(rec.exam_id, seed=0, constant=0)
    windows, pad = gather(rec, plan)
    encoder.eval()
    head.eval()
    features, _ = _encode_windows(encoder, windows)
    for p in head.parameters():
        p.requires_grad_(True)
    with torch.enable_grad():
        logit = head(torch.from_numpy(features), torch.from_numpy(pad), capture_attention=True)
        attns = head.last_attention
        if not attns:
            raise NoAttentionCaptured("head recorded no attention tensors")
        head.zero_grad(set_to_none=True)
        logit.backward()
    grads = [a.grad for a in attns]
    if any(g is None for g in grads):
        raise NoAttentionCaptured("attention gradients were not recorded")
    mass = rollout_core(
        [a.detach().numpy()[0] for a in attns],
        [g.numpy()[0] for g in grads],
        discard_ratio=discard_ratio,
        pad_mask=pad,
    )
    wall = np.array([rec.wall_clock_at(int(off)) for off in plan.offsets], dtype=object)
    return AttentionProfile(exam_id=rec.exam_id, mass=mass, wall_clock=wall,
                            offsets=np.asarray(plan.offsets), pad_mask=pad)


# ---------------------------------------------------------------------------
# Circadian density
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CircadianDensity:
    bin_min: int
    density: np.ndarray            # mean mass per time-of-day bin, sums to 1
    intervals: dict                # coverage -> (start_minute, end_minute, mass)


def _shortest_interval(density: np.ndarray, coverage: float, bin_min: int):
    """Shortest contiguous (circular) run of bins reaching the coverage."""
    n = len(density)
    doubled = np.concatenate([density, density])
    best = (n + 1, 0)
    for start in range(n):
        total = 0.0
        for length in range(1, n + 1):
            total += doubled[start + length - 1]
            if total >= coverage - 1e-12:
                if length < best[0]:
                    best = (length, start, total)
                break
    length, start = best[0], best[1]
    return (start * bin_min, (start + length) * bin_min, float(best[2]))


def circadian_density(profiles, bin_min: int = 30,
                      coverages=(0.95, 0.99)) -> CircadianDensity:
    """Attention mass by time of day, averaged over profiles.

    Each profile contributes a unit-mass histogram binned by the wall-clock
    minute of each window start; the reported intervals are the shortest
    contiguous spans covering the requested mass fractions (end minute may
    exceed 1440 when the span wraps midnight).
    """
    if 1440 % bin_min != 0:
        raise ValueError("bin_min must divide 1440")
    n_bins = 1440 // bin_min
    hists = []
    for prof in profiles:
        hist = np.zeros(n_bins)
        for mass, when in zip(prof.mass, prof.wall_clock):
            minute = when.hour * 60 + when.minute + when.second / 60.0
            hist[int(minute // bin_min) % n_bins] += mass
        hists.append(hist / max(hist.sum(), 1e-300))
    density = np.mean(hists, axis=0)
    intervals = {c: _shortest_interval(density, c, bin_min) for c in coverages}
    return CircadianDensity(bin_min=bin_min, density=density, intervals=intervals)


# ---------------------------------------------------------------------------
# High-attention beats
# ---------------------------------------------------------------------------

def high_attention_positions(profile: AttentionProfile) -> np.ndarray:
    """Positions whose mass survived the final discard (nonzero in the profile)."""
    return np.nonzero(profile.mass > 0)[0]


def extract_beats_at_positions(rec: EcgRecording, profile: AttentionProfile,
                               positions) -> np.ndarray:
    """Beats (m x 100 uV) from the first 10 s of each selected 2-minute segment."""
    rec = normalize_duration(rec)
    seg_len = HIGH_ATTN_SEGMENT_S * FS
    beats = []
    for pos in positions:
        start = int(profile.offsets[pos])
        segment = np.asarray(rec.samples[start:start + seg_len], dtype=np.float64)
        for r in detect_r_peaks(segment, FS):
            if r - BEAT_HALF >= 0 and r + BEAT_HALF <= len(segment):
                beats.append(segment[r - BEAT_HALF:r + BEAT_HALF])
    if not beats:
        raise NoBeatsFound("no beats under the high-attention positions")
    return np.asarray(beats)


def extract_high_attention_beats(encoder: WindowEncoder, head: SequentialHead,
                                 recordings, discard_ratio: float = DISCARD_RATIO) -> np.ndarray:
    """High-attention beats pooled over positive-class recordings."""
    all_beats = []
    for rec in recordings:
        profile = grad_attention_rollout(encoder, head, rec, discard_ratio)
        positions = high_attention_positions(profile, discard_ratio)
        try:
            all_beats.append(extract_beats_at_positions(rec, profile, positions))
        except NoBeatsFound:
            continue
    if not all_beats:
        raise NoBeatsFound("no beats across all recordings")
    return np.concatenate(all_beats)


def cluster_beats(beats: np.ndarray, seed: int = 0, k_range=K_RANGE,
                  min_cluster_size: int = MIN_CLUSTER_SIZE) -> BeatClusterResult:
    """K-means over beats with silhouette-selected k; small clusters are dropped."""
    beats = np.asarray(beats, dtype=np.float64)
    if beats.ndim != 2 or beats.shape[1] != BEAT_LEN:
        raise ValueError(f"beats must be (m, {BEAT_LEN})")
    if len(beats) < MIN_BEATS:
        raise TooFewBeats(f"{len(beats)} beats < {MIN_BEATS}")
    if np.ptp(beats) == 0:
        raise DegenerateClusters("all beats identical; silhouette undefined")
    silhouettes = {}
    runs = {}
    for k in range(k_range[0], k_range[1] + 1):
        if k >= len(beats):
            break
        run = kmeans(beats, k, seed=seed)
        runs[k] = run
        silhouettes[k] = silhouette_score(beats, run.labels)
    finite = {k: s for k, s in silhouettes.items() if np.isfinite(s)}
    if not finite:
        raise DegenerateClusters("silhouette undefined for every k")
    selected_k = max(sorted(finite), key=lambda k: finite[k])
    run = runs[selected_k]

    assignments = np.full(len(beats), -1, dtype=int)
    averaged, sizes = [], []
    next_id = 0
    for j in range(selected_k):
        members = run.labels == j
        if members.sum() < min_cluster_size:
            continue
        assignments[members] = next_id
        averaged.append(beats[members].mean(axis=0))
        sizes.append(int(members.sum()))
        next_id += 1
    return BeatClusterResult(
        beats=beats,
        assignments=assignments,
        k=next_id,
        selected_k=selected_k,
        silhouette=silhouettes,
        averaged_beats=np.asarray(averaged) if averaged else np.empty((0, BEAT_LEN)),
        sizes=sizes,
    )
