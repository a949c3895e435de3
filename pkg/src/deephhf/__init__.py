"""Heart-failure risk prediction from 24-hour single-lead Holter ECG."""

__version__ = "0.1.0"
