"""Long-range PPG-like waveforms: synthesis, preprocessing and segmentation."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np

from .errors import ConfigError, DataError

TARGET_FS = 128


@dataclass(frozen=True)
class SignalRecord:
    subject_id: str
    samples: np.ndarray
    fs: float
    label: int
    source: Literal["synthetic", "file"] = "synthetic"

    def __post_init__(self):
        if self.fs <= 0:
            raise DataError(f"{self.subject_id}: sampling frequency must be positive, got {self.fs}")
        if len(self.samples) == 0:
            raise DataError(f"{self.subject_id}: record has no samples")
        if self.label not in (0, 1):
            raise DataError(f"{self.subject_id}: label must be 0 or 1, got {self.label}")

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.fs


@dataclass(frozen=True)
class Segment:
    subject_id: str
    values: np.ndarray
    label: int
    segment_index: int


@dataclass(frozen=True)
class ClassParams:
    """Physiology knobs for one synthetic subject."""

    heart_rate_bpm: float
    hrv: float  # std of beat-to-beat interval, as a fraction of the mean interval
    noise: float  # std of additive white noise relative to pulse amplitude
    wander: float = 0.1  # amplitude of slow respiratory baseline drift

    def validate(self):
        problems = []
        if not self.heart_rate_bpm > 0:
            problems.append(f"heart_rate_bpm must be > 0, got {self.heart_rate_bpm}")
        if self.hrv < 0:
            problems.append(f"hrv must be >= 0, got {self.hrv}")
        if self.noise < 0:
            problems.append(f"noise must be >= 0, got {self.noise}")
        if problems:
            raise ConfigError(problems)


# elevated resting rate and reduced variability for the positive class
POSITIVE_CLASS = ClassParams(heart_rate_bpm=85.0, hrv=0.02, noise=0.05)
NEGATIVE_CLASS = ClassParams(heart_rate_bpm=60.0, hrv=0.10, noise=0.05)


def _beat_template(t: np.ndarray) -> np.ndarray:
    """One pulse over normalised beat phase ``t`` in [0, 1): systolic peak plus dicrotic wave."""
    systolic = np.exp(-0.5 * ((t - 0.18) / 0.07) ** 2)
    dicrotic = 0.45 * np.exp(-0.5 * ((t - 0.45) / 0.10) ** 2)
    return systolic + dicrotic


def generate_synthetic(
    subject_id: str,
    duration_s: float,
    class_params: ClassParams,
    rng_seed: int,
    fs: float = TARGET_FS,
    label: int | None = None,
) -> SignalRecord:
    """Quasi-periodic pulse train with jittered beat intervals.

    Each beat is a template pulse stretched to its own interval, so the
    waveform shape follows the instantaneous rate. ``label`` defaults to 1
    when the parameters are faster than 72 bpm.
    """
    if not duration_s > 0:
        raise ConfigError(f"duration_s must be > 0, got {duration_s}")
    class_params.validate()
    rng = np.random.default_rng(rng_seed)
    n = int(round(duration_s * fs))
    t = np.arange(n) / fs

    mean_rr = 60.0 / class_params.heart_rate_bpm
    # enough beats to cover the record even with negative jitter
    n_beats = int(np.ceil(duration_s / mean_rr * 1.5)) + 2
    rr = mean_rr * (1.0 + class_params.hrv * rng.standard_normal(n_beats))
    rr = np.clip(rr, 0.3 * mean_rr, 3.0 * mean_rr)
    onsets = np.concatenate([[-rng.uniform(0, mean_rr)], rr]).cumsum()

    beat = np.searchsorted(onsets, t, side="right") - 1
    phase = (t - onsets[beat]) / rr[np.minimum(beat, n_beats - 1)]
    amp = 1.0 + 0.05 * rng.standard_normal(n_beats + 1)
    x = amp[beat] * _beat_template(phase)

    resp_hz = rng.uniform(0.2, 0.3)
    x = x + class_params.wander * np.sin(2 * np.pi * resp_hz * t + rng.uniform(0, 2 * np.pi))
    x = x + class_params.noise * rng.standard_normal(n)

    if label is None:
        label = int(class_params.heart_rate_bpm > 72.0)
    return SignalRecord(subject_id, x.astype(np.float64), float(fs), label, "synthetic")


def resample(record: SignalRecord, target_hz: float = TARGET_FS) -> SignalRecord:
    """Linear-interpolation resampling to ``target_hz``."""
    if not target_hz > 0:
        raise ConfigError(f"target_hz must be > 0, got {target_hz}")
    x = np.asarray(record.samples, dtype=np.float64)
    if x.size == 0:
        raise DataError(f"{record.subject_id}: cannot resample an empty record")
    if record.fs == target_hz:
        return replace(record, samples=x.copy(), fs=float(target_hz))
    n_out = int(round(x.size * target_hz / record.fs))
    t_out = np.arange(n_out) / target_hz
    t_in = np.arange(x.size) / record.fs
    y = np.interp(t_out, t_in, x)
    return replace(record, samples=y, fs=float(target_hz))


def denoise(record: SignalRecord, window: int = 5) -> SignalRecord:
    """Centred moving average; windows shrink symmetrically near the edges."""
    if window < 1 or window % 2 == 0:
        raise ConfigError(f"denoise window must be odd and >= 1, got {window}")
    x = np.asarray(record.samples, dtype=np.float64)
    if window == 1:
        return replace(record, samples=x.copy())
    n = x.size
    half = window // 2
    idx = np.arange(n)
    radius = np.minimum(np.minimum(idx, n - 1 - idx), half)
    csum = np.concatenate([[0.0], np.cumsum(x)])
    y = (csum[idx + radius + 1] - csum[idx - radius]) / (2 * radius + 1)
    return replace(record, samples=y)


def zscore(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    sd = x.std()
    if sd == 0 or not np.isfinite(sd):
        return np.zeros_like(x)
    out = (x - x.mean()) / sd
    # a second centring pass removes the residual rounding bias of the first
    return out - out.mean()


def normalize(record: SignalRecord) -> SignalRecord:
    return replace(record, samples=zscore(record.samples))


def preprocess(record: SignalRecord, target_hz: float = TARGET_FS, window: int = 5) -> SignalRecord:
    return normalize(denoise(resample(record, target_hz), window))


def segment(
    record: SignalRecord, duration_s: float = 600, renormalize: bool = True
) -> list[Segment]:
    """Cut a 128 Hz record into consecutive non-overlapping windows.

    The trailing partial window is dropped; a record shorter than one window
    yields no segments.
    """
    if record.fs != TARGET_FS:
        raise DataError(
            f"{record.subject_id}: segment expects a {TARGET_FS} Hz record, got {record.fs} Hz"
        )
    L = segment_length(duration_s)
    x = np.asarray(record.samples, dtype=np.float64)
    out = []
    for i in range(x.size // L):
        chunk = x[i * L : (i + 1) * L]
        out.append(Segment(record.subject_id, zscore(chunk) if renormalize else chunk.copy(), record.label, i))
    return out


def segment_length(duration_s: float, fs: int = TARGET_FS) -> int:
    L = duration_s * fs
    if L != int(L) or L <= 0:
        raise ConfigError(f"duration {duration_s}s does not give a whole number of samples at {fs} Hz")
    return int(L)


def estimate_rate_bpm(x: np.ndarray, fs: float, lo_bpm: float = 35, hi_bpm: float = 200) -> float:
    """Heart rate from the highest autocorrelation peak within a physiological lag range."""
    x = np.asarray(x, dtype=np.float64)
    x = x - x.mean()
    n = x.size
    nfft = 1 << int(np.ceil(np.log2(2 * n)))
    spec = np.fft.rfft(x, nfft)
    ac = np.fft.irfft(spec * np.conj(spec), nfft)[:n]
    lo_lag = int(fs * 60.0 / hi_bpm)
    hi_lag = int(fs * 60.0 / lo_bpm)
    lag = lo_lag + int(np.argmax(ac[lo_lag : hi_lag + 1]))
    return 60.0 * fs / lag


@dataclass
class SegmentSet:
    """Stacked segments ready for batching."""

    values: np.ndarray  # (n, L)
    labels: np.ndarray  # (n,)
    subject_ids: list[str] = field(default_factory=list)

    def __len__(self):
        return len(self.labels)

    @classmethod
    def from_segments(cls, segments: list[Segment]) -> "SegmentSet":
        if not segments:
            raise DataError("no segments")
        return cls(
            np.stack([s.values for s in segments]),
            np.array([s.label for s in segments], dtype=np.int64),
            [s.subject_id for s in segments],
        )

    def subset(self, subjects) -> "SegmentSet":
        keep = set(subjects)
        idx = [i for i, s in enumerate(self.subject_ids) if s in keep]
        return SegmentSet(self.values[idx], self.labels[idx], [self.subject_ids[i] for i in idx])

    def check(self, L: int):
        """Raise if any segment breaks the length or normalisation invariants."""
        if self.values.shape[1] != L:
            raise DataError(f"segments have length {self.values.shape[1]}, expected {L}")
        means = np.abs(self.values.mean(axis=1))
        if np.any(means >= 1e-6):
            raise DataError(f"segment mean {means.max():.3g} not ~0")
        sds = self.values.std(axis=1)
        bad = (np.abs(sds - 1) > 1e-6) & (sds != 0)
        if np.any(bad):
            raise DataError(f"segment std {sds[bad][0]:.6g} not ~1")
