import numpy as np
import pytest
import torch
from datetime import datetime

from deephhf.signal_io import FS, EcgRecording, SynthSpec, synthesize_with_truth

torch.set_num_threads(2)


@pytest.fixture(scope="session")
def clean_recording():
    """20-hour noiseless sinus recording with circadian HR modulation."""
    spec = SynthSpec(seed=101, duration_h=20.0, mean_hr=70.0, hr_circadian_amp=6.0)
    rec, _ = synthesize_with_truth(spec, "clean20", "pat-clean", datetime(2017, 5, 2, 9, 0))
    return rec


@pytest.fixture(scope="session")
def burst_recording():
    """24-hour recording with daytime PVC bursts and mild noise."""
    spec = SynthSpec(seed=202, duration_h=24.0, pvc_burst_rate=2.0,
                     pvc_burst_daytime_bias=1.0, noise_rms=15.0)
    rec, truth = synthesize_with_truth(spec, "burst24", "pat-burst", datetime(2017, 5, 2, 8, 30))
    return rec, truth


def make_recording(samples, valid_len=None, exam_id="mem", patient_id="pat",
                   start=datetime(2017, 1, 1, 9, 0)):
    samples = np.asarray(samples, dtype=np.float32)
    return EcgRecording(
        exam_id=exam_id, patient_id=patient_id, start_time=start,
        fs=FS, samples=samples,
        valid_len=len(samples) if valid_len is None else valid_len,
    )
