"""Open-set recognition toolkit.

Trains a small numpy network whose penultimate feature space is reshaped by
a boundary/separation/compactness loss, rejects unknown test samples with
per-class distance thresholds, and benchmarks against cross-entropy and
OpenMax baselines under a seeded multi-run protocol.
"""

__version__ = "0.1.0"
