"""24-hour single-lead Holter recordings: container I/O, duration normalization, synthesis.

A recording is stored as two files next to each other:

* ``<exam_id>.hheader`` -- text header, one ``key=value`` per line with keys
  ``exam_id, patient_id, start_time, fs, n_samples, scale_uv_per_lsb``.
* ``<exam_id>.hsig`` -- little-endian signed 16-bit samples at 2.5 uV/LSB.

Amplitudes are dequantized to microvolts on read (raw * 2.5) and quantized
back on write with clipping at +/-5 mV (never wrapped).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from .errors import BadSampleRate, CorruptHeader, LengthMismatch, TooShort

FS = 128
SCALE_UV_PER_LSB = 2.5
AMP_LIMIT_UV = 5000.0          # dynamic range +/-5 mV
RAW_LIMIT = 2000               # AMP_LIMIT_UV / SCALE_UV_PER_LSB
FULL_DAY_SAMPLES = 24 * 3600 * FS    # 11_059_200
MIN_VALID_SAMPLES = 20 * 3600 * FS   # 9_216_000, exclusion bound

DAYTIME_START_H = 7.0          # daytime window for burst placement bias
DAYTIME_END_H = 20.0
BURST_LEN_RANGE_S = (60.0, 120.0)

_REQUIRED_HEADER_KEYS = (
    "exam_id", "patient_id", "start_time", "fs", "n_samples", "scale_uv_per_lsb"
)


@dataclass(frozen=True)
class EcgRecording:
    """Single-lead Holter recording with amplitudes in microvolts.

    ``samples[valid_len:]`` is zero padding added by duration normalization;
    the value is immutable after construction and safe to share across threads.
    """

    exam_id: str
    patient_id: str
    start_time: datetime
    fs: int
    samples: np.ndarray
    valid_len: int

    def __post_init__(self):
        if self.valid_len > len(self.samples):
            raise ValueError("valid_len exceeds sample count")

    @property
    def duration_h(self) -> float:
        return len(self.samples) / self.fs / 3600.0

    def wall_clock_at(self, sample_offset: int) -> datetime:
        """Wall-clock time of a sample offset."""
        return self.start_time + timedelta(seconds=sample_offset / self.fs)


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of the synthetic Holter generator."""

    seed: int
    duration_h: float = 24.0
    mean_hr: float = 70.0             # beats/min
    hr_circadian_amp: float = 8.0     # beats/min
    pvc_burst_rate: float = 0.0       # bursts/hour
    pvc_burst_daytime_bias: float = 0.0
    af_episode_prob: float = 0.0
    noise_rms: float = 0.0            # uV

    def __post_init__(self):
        if not (20.0 <= self.duration_h <= 30.0):
            raise ValueError("duration_h must be in [20, 30]")
        for name in ("mean_hr", "hr_circadian_amp", "pvc_burst_rate", "noise_rms"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not (0.0 <= self.pvc_burst_daytime_bias <= 1.0):
            raise ValueError("pvc_burst_daytime_bias must be in [0, 1]")
        if not (0.0 <= self.af_episode_prob <= 1.0):
            raise ValueError("af_episode_prob must be in [0, 1]")


@dataclass(frozen=True)
class SynthTruth:
    """Ground truth emitted alongside a synthetic recording (times in seconds)."""

    beat_times_s: np.ndarray
    burst_intervals_s: tuple[tuple[float, float], ...]
    af_intervals_s: tuple[tuple[float, float], ...]


def quantize(samples_uv: np.ndarray) -> np.ndarray:
    """Microvolts -> int16 LSB counts; out-of-range values clip, never wrap."""
    raw = np.rint(np.asarray(samples_uv, dtype=np.float64) / SCALE_UV_PER_LSB)
    return np.clip(raw, -RAW_LIMIT, RAW_LIMIT).astype(np.int16)


def dequantize(raw: np.ndarray) -> np.ndarray:
    return raw.astype(np.float32) * np.float32(SCALE_UV_PER_LSB)


def _header_path(base: Path, exam_id: str) -> Path:
    return base / f"{exam_id}.hheader"


def _signal_path(base: Path, exam_id: str) -> Path:
    return base / f"{exam_id}.hsig"


def write_recording(rec: EcgRecording, out_dir) -> Path:
    """Write the container pair; returns the header path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    raw = quantize(rec.samples)
    header = _header_path(out_dir, rec.exam_id)
    header.write_text(
        f"exam_id={rec.exam_id}\n"
        f"patient_id={rec.patient_id}\n"
        f"start_time={rec.start_time.strftime('%Y-%m-%dT%H:%M')}\n"
        f"fs={rec.fs}\n"
        f"n_samples={len(raw)}\n"
        f"scale_uv_per_lsb={SCALE_UV_PER_LSB}\n"
    )
    _signal_path(out_dir, rec.exam_id).write_bytes(raw.astype("<i2").tobytes())
    return header


def _parse_header(path: Path) -> dict:
    if not path.exists():
        raise CorruptHeader(f"header not found: {path}")
    fields = {}
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise CorruptHeader(f"bad header line in {path.name}: {line!r}")
        key, value = line.split("=", 1)
        fields[key.strip()] = value.strip()
    missing = [k for k in _REQUIRED_HEADER_KEYS if k not in fields]
    if missing:
        raise CorruptHeader(f"{path.name} missing fields: {missing}")
    try:
        fields["start_time"] = datetime.strptime(fields["start_time"], "%Y-%m-%dT%H:%M")
        fields["fs"] = int(fields["fs"])
        fields["n_samples"] = int(fields["n_samples"])
        fields["scale_uv_per_lsb"] = float(fields["scale_uv_per_lsb"])
    except ValueError as exc:
        raise CorruptHeader(f"{path.name}: {exc}") from exc
    return fields


def read_header(path) -> dict:
    """Parse a ``.hheader`` file without touching the sample blob."""
    return _parse_header(Path(path))


def read_recording(path) -> EcgRecording:
    """Read a container given its header path (or the bare ``<exam_id>`` stem).

    Raises CorruptHeader, LengthMismatch, or BadSampleRate.
    """
    path = Path(path)
    if path.suffix != ".hheader":
        path = path.with_suffix(".hheader")
    fields = _parse_header(path)
    if fields["fs"] != FS:
        raise BadSampleRate(f"fs={fields['fs']}, expected {FS}")
    sig_path = path.with_suffix(".hsig")
    if not sig_path.exists():
        raise LengthMismatch(f"signal blob not found: {sig_path}")
    blob = sig_path.read_bytes()
    expected = fields["n_samples"] * 2
    if len(blob) != expected:
        raise LengthMismatch(
            f"{sig_path.name}: blob is {len(blob)} bytes, header implies {expected}"
        )
    raw = np.frombuffer(blob, dtype="<i2")
    samples = raw.astype(np.float32) * np.float32(fields["scale_uv_per_lsb"])
    return EcgRecording(
        exam_id=fields["exam_id"],
        patient_id=fields["patient_id"],
        start_time=fields["start_time"],
        fs=fields["fs"],
        samples=samples,
        valid_len=fields["n_samples"],
    )


def normalize_duration(rec: EcgRecording) -> EcgRecording:
    """Trim or zero-pad to exactly 24 hours (11,059,200 samples).

    Longer recordings keep their first 24 h so the start timestamp stays
    aligned for circadian analysis; shorter ones are padded with zeros at the
    end. Idempotent. Raises TooShort below the 20-hour exclusion bound.
    """
    if rec.valid_len < MIN_VALID_SAMPLES:
        raise TooShort(
            f"{rec.exam_id}: {rec.valid_len} valid samples "
            f"< {MIN_VALID_SAMPLES} (20 h)"
        )
    n = len(rec.samples)
    if n == FULL_DAY_SAMPLES:
        return rec
    if n > FULL_DAY_SAMPLES:
        samples = np.array(rec.samples[:FULL_DAY_SAMPLES])
    else:
        samples = np.zeros(FULL_DAY_SAMPLES, dtype=rec.samples.dtype)
        samples[:n] = rec.samples
    return replace(
        rec,
        samples=samples,
        valid_len=min(rec.valid_len, FULL_DAY_SAMPLES),
    )


class SignalStore:
    """Lazy window access over a directory of containers.

    Reads int16 slices via memmap and dequantizes only the requested windows,
    applying the 24-hour normalization logically (virtual trim / zero pad) so
    full recordings never have to be materialized during training.
    """

    def __init__(self, data_dir):
        self.data_dir = Path(data_dir)
        self._headers: dict[str, dict] = {}

    def header(self, exam_id: str) -> dict:
        if exam_id not in self._headers:
            fields = _parse_header(_header_path(self.data_dir, exam_id))
            if fields["fs"] != FS:
                raise BadSampleRate(f"{exam_id}: fs={fields['fs']}")
            if fields["n_samples"] < MIN_VALID_SAMPLES:
                raise TooShort(f"{exam_id}: below 20 h")
            self._headers[exam_id] = fields
        return self._headers[exam_id]

    def valid_len(self, exam_id: str) -> int:
        return min(self.header(exam_id)["n_samples"], FULL_DAY_SAMPLES)

    def start_time(self, exam_id: str) -> datetime:
        return self.header(exam_id)["start_time"]

    def windows(self, exam_id: str, offsets, length: int):
        """Gather windows as (n, length) float32 uV plus an all-padding mask."""
        fields = self.header(exam_id)
        n_samples = fields["n_samples"]
        raw = np.memmap(_signal_path(self.data_dir, exam_id), dtype="<i2", mode="r")
        if len(raw) != n_samples:
            raise LengthMismatch(f"{exam_id}: blob/header size mismatch")
        valid = min(n_samples, FULL_DAY_SAMPLES)
        out = np.zeros((len(offsets), length), dtype=np.float32)
        mask = np.zeros(len(offsets), dtype=bool)
        scale = np.float32(fields["scale_uv_per_lsb"])
        for i, off in enumerate(offsets):
            stop = min(off + length, valid)
            if off >= valid:
                mask[i] = True
                continue
            out[i, : stop - off] = raw[off:stop].astype(np.float32) * scale
        return out, mask

    def load(self, exam_id: str) -> EcgRecording:
        """Full normalized recording (used for scoring and explainability)."""
        return normalize_duration(
            read_recording(_header_path(self.data_dir, exam_id))
        )

    def exam_ids(self) -> list[str]:
        return sorted(p.stem for p in self.data_dir.glob("*.hheader"))


# ---------------------------------------------------------------------------
# Synthetic generator
# ---------------------------------------------------------------------------

# Beat template constants (uV / samples at 128 Hz). Bumps are Gaussians
# truncated to a finite support with the edge value subtracted, so every bump
# is exactly zero outside its window.
P_WIDTH, P_AMP, P_LEAD_S = 12, 120.0, 0.18
T_WIDTH, T_AMP, T_LAG_S = 28, 280.0, 0.30
QRS_WIDTH, QRS_AMP = 12, 1100.0
PVC_QRS_WIDTH, PVC_QRS_AMP = 30, -2600.0
PVC_T_AMP = 600.0


def _bump(width: int, amp: float) -> np.ndarray:
    x = np.arange(width) - (width - 1) / 2.0
    sigma = width / 6.0
    g = np.exp(-0.5 * (x / sigma) ** 2)
    g -= g[0]
    return amp * (g / g.max())


def _add_bump(sig: np.ndarray, center: int, bump: np.ndarray):
    half = len(bump) // 2
    lo, hi = center - half, center - half + len(bump)
    if lo < 0 or hi > len(sig):
        return
    sig[lo:hi] += bump


def synthesize_with_truth(
    spec: SynthSpec,
    exam_id: str = "synth",
    patient_id: str = "patient",
    start_time: datetime | None = None,
) -> tuple[EcgRecording, SynthTruth]:
    """Deterministic synthetic Holter plus its ground truth.

    Sinus beats with circadian heart-rate modulation; optional PVC-like wide
    beats injected in bursts (count = round(rate * hours), placement biased
    toward 07:00-20:00 wall clock per ``pvc_burst_daytime_bias``); optional
    irregular-RR no-P episodes; additive Gaussian noise. Output amplitudes
    are pre-quantized to the 2.5 uV grid so a write/read round trip is
    bit-exact.
    """
    if start_time is None:
        start_time = datetime(2017, 6, 1, 9, 0)
    rng = np.random.default_rng(spec.seed)
    n = int(round(spec.duration_h * 3600)) * FS
    duration_s = n / FS
    sig = np.zeros(n, dtype=np.float64)

    start_h = start_time.hour + start_time.minute / 60.0

    def hr_at(t_s: float) -> float:
        h = (start_h + t_s / 3600.0) % 24.0
        return max(30.0, spec.mean_hr + spec.hr_circadian_amp * math.sin(2 * math.pi * (h - 8.0) / 24.0))

    def daytime(t_s: float) -> bool:
        h = (start_h + t_s / 3600.0) % 24.0
        return DAYTIME_START_H <= h < DAYTIME_END_H

    # burst placement
    n_bursts = int(round(spec.pvc_burst_rate * spec.duration_h))
    day_secs = np.array([s for s in range(0, int(duration_s), 60) if daytime(s)])
    bursts: list[tuple[float, float]] = []
    for _ in range(n_bursts):
        if spec.pvc_burst_daytime_bias > 0 and len(day_secs) and rng.random() < spec.pvc_burst_daytime_bias:
            t0 = float(rng.choice(day_secs)) + rng.uniform(0, 60)
        else:
            t0 = rng.uniform(0, duration_s - 120)
        bursts.append((t0, min(t0 + rng.uniform(*BURST_LEN_RANGE_S), duration_s)))
    bursts.sort()

    # AF episodes
    af: list[tuple[float, float]] = []
    if spec.af_episode_prob > 0 and rng.random() < spec.af_episode_prob:
        for _ in range(rng.integers(1, 4)):
            t0 = rng.uniform(0, duration_s - 1500)
            af.append((t0, t0 + rng.uniform(300.0, 1200.0)))
        af.sort()

    def inside(t: float, intervals) -> bool:
        return any(a <= t < b for a, b in intervals)

    p_bump = _bump(P_WIDTH, P_AMP)
    t_bump = _bump(T_WIDTH, T_AMP)
    qrs_bump = _bump(QRS_WIDTH, QRS_AMP)
    pvc_bump = _bump(PVC_QRS_WIDTH, PVC_QRS_AMP)
    pvc_t_bump = _bump(T_WIDTH, PVC_T_AMP)
    p_lead = int(round(P_LEAD_S * FS))
    t_lag = int(round(T_LAG_S * FS))

    beat_times = []
    t = 0.8  # leave room for the first beat's P wave
    while t < duration_s - 0.5:
        beat_times.append(t)
        rr = 60.0 / hr_at(t)
        if inside(t, bursts):
            rr *= 0.8
        elif inside(t, af):
            rr *= rng.uniform(0.75, 1.25)
        t += rr

    for bt in beat_times:
        r = int(round(bt * FS))
        if inside(bt, bursts):
            _add_bump(sig, r, pvc_bump)
            _add_bump(sig, r + t_lag, pvc_t_bump)
        elif inside(bt, af):
            _add_bump(sig, r, qrs_bump)
            _add_bump(sig, r + t_lag, t_bump)
        else:
            _add_bump(sig, r - p_lead, p_bump)
            _add_bump(sig, r, qrs_bump)
            _add_bump(sig, r + t_lag, t_bump)

    if spec.noise_rms > 0:
        sig += rng.normal(0.0, spec.noise_rms, n)

    samples = dequantize(quantize(sig))
    rec = EcgRecording(
        exam_id=exam_id,
        patient_id=patient_id,
        start_time=start_time,
        fs=FS,
        samples=samples,
        valid_len=n,
    )
    truth = SynthTruth(
        beat_times_s=np.asarray(beat_times),
        burst_intervals_s=tuple(bursts),
        af_intervals_s=tuple(af),
    )
    return rec, truth


def synthesize(spec: SynthSpec, exam_id: str = "synth", patient_id: str = "patient",
               start_time: datetime | None = None) -> EcgRecording:
    rec, _ = synthesize_with_truth(spec, exam_id, patient_id, start_time)
    return rec
