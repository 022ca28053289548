"""Deterministic ECG preprocessing: resampling, min-max normalization,
fixed-length segmentation, and the four training-time augmentations."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigError

DEFAULT_WINDOW_LEN = 2000
FLAT_EPS = 0.0  # exact max == min counts as flat


@dataclass
class EcgRecord:
    """One subject's raw signal with sampling rate and identity tag."""

    subject_id: str
    dataset_id: str
    sampling_rate_hz: float
    samples: np.ndarray

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.size == 0:
            raise ConfigError(f"record {self.subject_id!r} has no samples")
        if self.sampling_rate_hz <= 0:
            raise ConfigError(
                f"record {self.subject_id!r} sampling rate must be positive, "
                f"got {self.sampling_rate_hz}"
            )


@dataclass
class Window:
    """Fixed-length normalized segment, the unit of classification.

    `label` is a dense class index once assigned, or None for windows whose
    identity is outside the attacker's label set. `flat` marks degenerate
    (constant) source segments, which are excluded from training.
    """

    values: np.ndarray
    source: tuple[str, int]
    label: int | None = None
    flat: bool = False

    @property
    def window_id(self) -> str:
        return f"{self.source[0]}:{self.source[1]}"


@dataclass
class AugmentSpec:
    noise_sigma: float = 0.0
    scale_range: tuple[float, float] = (1.0, 1.0)
    flip_prob: float = 0.0
    max_shift: int = 0
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.scale_range
        if not (0 < lo <= hi):
            raise ConfigError(f"scale_range must satisfy 0 < lo <= hi, got {self.scale_range}")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ConfigError(f"flip_prob must lie in [0,1], got {self.flip_prob}")
        if self.noise_sigma < 0 or self.max_shift < 0:
            raise ConfigError("noise_sigma and max_shift must be non-negative")


def resample(record: EcgRecord, target_hz: float) -> EcgRecord:
    """Resample by linear interpolation on the original time grid.

    Duration is preserved to within one output sample.
    """
    if target_hz <= 0:
        raise ConfigError(f"target_hz must be positive, got {target_hz}")
    src_hz = record.sampling_rate_hz
    values = np.ascontiguousarray(record.samples)
    n_in = values.size
    if src_hz == target_hz:
        out = values.copy()
    else:
        ratio = src_hz / target_hz
        n_out = int((n_in - 1) * target_hz / src_hz + 1e-9) + 1
        out = kernels.resample_linear(values, ratio, n_out)
    return EcgRecord(record.subject_id, record.dataset_id, target_hz, out)


def minmax_normalize(values: np.ndarray) -> tuple[np.ndarray, bool]:
    """Affine map onto [0,1]. Flat input maps to all zeros with flag set."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ConfigError("cannot normalize an empty sequence")
    lo = values.min()
    hi = values.max()
    if hi - lo <= FLAT_EPS:
        return np.zeros_like(values), True
    return (values - lo) / (hi - lo), False


def segment(record: EcgRecord, window_len: int = DEFAULT_WINDOW_LEN) -> list[Window]:
    """Non-overlapping consecutive windows, each min-max normalized.

    The trailing remainder shorter than `window_len` is discarded; a record
    shorter than one window yields an empty list.
    """
    if window_len < 2:
        raise ConfigError(f"window_len must be >= 2, got {window_len}")
    out = []
    n_windows = record.samples.size // window_len
    for k in range(n_windows):
        start = k * window_len
        raw = record.samples[start:start + window_len]
        values, flat = minmax_normalize(raw)
        out.append(Window(values=values, source=(record.subject_id, start), flat=flat))
    return out


def polarity_flip(values: np.ndarray) -> np.ndarray:
    """Flip in normalized space: v -> 1 - v."""
    return 1.0 - values


def circular_shift(values: np.ndarray, k: int) -> np.ndarray:
    return np.roll(values, k)


def augment(window: Window, spec: AugmentSpec, rng: np.random.Generator) -> Window:
    """Noise, scaling, polarity flip, and circular temporal shift, in that
    order, then re-clamp to [0,1]. Deterministic given the generator state."""
    n = window.values.size
    if spec.max_shift >= n:
        raise ConfigError(f"max_shift {spec.max_shift} must be < window length {n}")
    values = window.values + rng.normal(0.0, spec.noise_sigma, size=n)
    values = values * rng.uniform(spec.scale_range[0], spec.scale_range[1])
    if rng.uniform() < spec.flip_prob:
        values = polarity_flip(values)
    shift = int(rng.integers(-spec.max_shift, spec.max_shift + 1))
    values = circular_shift(values, shift)
    values = np.clip(values, 0.0, 1.0)
    return Window(values=values, source=window.source, label=window.label, flat=window.flat)
