"""ECG linkage-attack evaluation toolkit.

Trains a small 1-D vision transformer on an adversary's ECG dataset,
matches probe windows to known identities, rejects unknowns with a
calibrated confidence threshold, and reports re-identification risk
metrics under partial / full / noisy adversarial scenarios.
"""

__version__ = "0.1.0"
