"""R-peak detection and QRS delineation for 128 Hz single-lead ECG.

Detection follows the classic bandpass + adaptive-threshold recipe with a
250 ms refractory period; delineation finds QRS onset/offset by walking away
from each R-peak until the local slope stays below a fraction of the
complex's maximum slope.
"""

from __future__ import annotations

import numpy as np
from scipy import signal as sps
from scipy.ndimage import median_filter

REFRACTORY_S = 0.25
BAND_HZ = (5.0, 25.0)
ENERGY_SMOOTH_S = 0.1
SLOPE_FRACTION = 0.05
SLOPE_MAX_WINDOW = 8      # samples around R used for the reference slope
WALK_WINDOW = 22          # samples; stays clear of the T wave (starts ~24)


def bandpass(sig: np.ndarray, fs: int, lo: float = BAND_HZ[0], hi: float = BAND_HZ[1]) -> np.ndarray:
    nyq = fs / 2.0
    b, a = sps.butter(3, [lo / nyq, hi / nyq], btype="band")
    return sps.filtfilt(b, a, sig)


def detect_r_peaks(sig: np.ndarray, fs: int = 128) -> np.ndarray:
    """Sample indices of R-peaks; empty array when nothing beats.

    Threshold adapts to the signal (fraction of the upper-percentile
    candidate energy), so detection is invariant to positive amplitude
    scaling and a flat line yields no peaks.
    """
    sig = np.asarray(sig, dtype=np.float64)
    if len(sig) < fs or np.ptp(sig) == 0:
        return np.array([], dtype=int)
    filt = bandpass(sig, fs)
    energy = filt ** 2
    win = max(3, int(ENERGY_SMOOTH_S * fs))
    smooth = np.convolve(energy, np.ones(win) / win, mode="same")
    cand, _ = sps.find_peaks(smooth, distance=int(REFRACTORY_S * fs))
    if len(cand) == 0:
        return np.array([], dtype=int)
    thr = 0.1 * np.percentile(smooth[cand], 95)
    if thr <= 0:
        return np.array([], dtype=int)
    keep = cand[smooth[cand] >= thr]
    # refine each peak to the largest absolute deflection of the raw signal
    centered = sig - np.median(sig)
    half = int(0.06 * fs)
    refined = []
    for c in keep:
        lo, hi = max(0, c - half), min(len(sig), c + half + 1)
        refined.append(lo + int(np.argmax(np.abs(centered[lo:hi]))))
    peaks = np.array(sorted(set(refined)), dtype=int)
    # enforce refractory after refinement
    out = []
    for p in peaks:
        if not out or p - out[-1] >= int(REFRACTORY_S * fs):
            out.append(p)
        elif np.abs(centered[p]) > np.abs(centered[out[-1]]):
            out[-1] = p
    return np.array(out, dtype=int)


def remove_baseline(sig: np.ndarray, fs: int = 128) -> np.ndarray:
    """Median-filter baseline removal; preserves QRS width."""
    win = int(2.0 * fs) + 1
    return sig - median_filter(np.asarray(sig, dtype=np.float64), size=win, mode="nearest")


def delineate_qrs(sig: np.ndarray, r_peaks: np.ndarray, fs: int = 128) -> tuple[np.ndarray, np.ndarray]:
    """Inclusive QRS (onset, offset) sample indices per R-peak.

    Walks outward from R until two consecutive samples have slope magnitude
    below SLOPE_FRACTION of the complex's maximum slope; the returned bounds
    are the outermost samples still belonging to the complex, so its width is
    ``offset - onset + 1`` samples. Beats too close to the array edges are
    dropped.
    """
    sig = np.asarray(sig, dtype=np.float64)
    d = np.gradient(sig)
    onsets, offsets = [], []
    for r in r_peaks:
        if r - WALK_WINDOW - 2 < 0 or r + WALK_WINDOW + 2 >= len(sig):
            continue
        core = slice(r - SLOPE_MAX_WINDOW, r + SLOPE_MAX_WINDOW + 1)
        m = np.max(np.abs(d[core]))
        if m <= 0:
            continue
        thr = SLOPE_FRACTION * m
        onset = r - WALK_WINDOW
        i = r - 1
        while i > r - WALK_WINDOW:
            if abs(d[i]) < thr and abs(d[i - 1]) < thr:
                onset = i
                break
            i -= 1
        offset = r + WALK_WINDOW
        i = r + 1
        while i < r + WALK_WINDOW:
            if abs(d[i]) < thr and abs(d[i + 1]) < thr:
                offset = i
                break
            i += 1
        onsets.append(onset + 1)
        offsets.append(offset - 1)
    return np.array(onsets, dtype=int), np.array(offsets, dtype=int)
