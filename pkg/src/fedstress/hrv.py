"""PPG preprocessing and heart-rate-variability feature extraction.

Pipeline: zero-phase Butterworth bandpass (cascaded biquads), centered
moving-average smoothing, adaptive-threshold beat detection with a
refractory period, inter-beat-interval construction with artifact
rejection, and the time-domain + Poincare feature set plus a spectral
breathing-rate estimate. Min-max normalization for model inputs lives
here too, since its bounds are fitted on extracted feature matrices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import interpolate
from scipy import signal as sps

from .errors import ConfigError, InsufficientDataError

# Plausible inter-beat intervals; anything outside is treated as an artifact.
IBI_MIN_MS = 300.0
IBI_MAX_MS = 2000.0

# Resampling rate for the breathing-rate periodogram and its spectral band.
_BR_RESAMPLE_HZ = 4.0
_BR_BAND_HZ = (0.1, 0.4)

FEATURE_NAMES = (
    "bpm", "ibi", "sdnn", "sdsd", "rmssd", "pnn20", "pnn50",
    "mad", "sd1", "sd2", "s", "sd1_sd2", "br",
)


@dataclass(frozen=True)
class PpgSignal:
    """Raw or filtered optical pulse signal with its sampling rate."""

    samples: np.ndarray
    sample_rate_hz: float

    def __post_init__(self) -> None:
        samples = np.asarray(self.samples, dtype=np.float64)
        object.__setattr__(self, "samples", samples)
        if samples.ndim != 1:
            raise ValueError(f"signal must be 1-D, got shape {samples.shape}")
        if not self.sample_rate_hz > 0:
            raise ConfigError(f"sample rate must be positive, got {self.sample_rate_hz}")

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz


@dataclass(frozen=True)
class FilterSpec:
    """Bandpass corners and order for the cardiac band of a PPG signal."""

    low_cut_hz: float = 0.5
    high_cut_hz: float = 8.0
    order: int = 2

    def __post_init__(self) -> None:
        if not 0 < self.low_cut_hz < self.high_cut_hz:
            raise ConfigError(
                f"need 0 < low_cut < high_cut, got {self.low_cut_hz}, {self.high_cut_hz}"
            )
        if self.order < 1:
            raise ConfigError(f"filter order must be >= 1, got {self.order}")


@dataclass(frozen=True)
class IbiSeries:
    """Inter-beat intervals in milliseconds."""

    intervals_ms: np.ndarray

    def __post_init__(self) -> None:
        iv = np.asarray(self.intervals_ms, dtype=np.float64)
        object.__setattr__(self, "intervals_ms", iv)
        if iv.ndim != 1 or iv.size == 0:
            raise ValueError("need a non-empty 1-D interval sequence")
        if not np.all(np.isfinite(iv)) or np.any(iv <= 0):
            raise ValueError("intervals must be positive and finite")

    def __len__(self) -> int:
        return len(self.intervals_ms)


def butterworth_bandpass(sig: PpgSignal, spec: FilterSpec = FilterSpec()) -> PpgSignal:
    """Zero-phase Butterworth bandpass via forward-backward biquads.

    Removes DC and baseline drift below the low corner and high-frequency
    noise above the high corner; output length equals input length.
    """
    nyquist = sig.sample_rate_hz / 2.0
    if spec.high_cut_hz >= nyquist:
        raise ConfigError(
            f"high cut {spec.high_cut_hz} Hz must be below the Nyquist rate "
            f"{nyquist} Hz"
        )
    sos = sps.butter(spec.order, [spec.low_cut_hz, spec.high_cut_hz],
                     btype="bandpass", output="sos", fs=sig.sample_rate_hz)
    n_sections = sos.shape[0]
    pad = 3 * (2 * n_sections + 1)
    if len(sig.samples) <= pad:
        raise ConfigError(
            f"signal too short for the filter warm-up: {len(sig.samples)} samples, "
            f"need more than {pad}"
        )
    return PpgSignal(sps.sosfiltfilt(sos, sig.samples), sig.sample_rate_hz)


def _centered_mean(x: np.ndarray, window: int) -> np.ndarray:
    half = window // 2
    n = len(x)
    csum = np.concatenate(([0.0], np.cumsum(x)))
    start = np.maximum(np.arange(n) - half, 0)
    end = np.minimum(np.arange(n) + half + 1, n)
    return (csum[end] - csum[start]) / (end - start)


def _centered_std(x: np.ndarray, window: int) -> np.ndarray:
    mean = _centered_mean(x, window)
    mean_sq = _centered_mean(x * x, window)
    return np.sqrt(np.maximum(mean_sq - mean * mean, 0.0))


def moving_average(sig: PpgSignal, window: int) -> PpgSignal:
    """Centered moving average; the window shrinks at the edges so the
    output keeps the input length."""
    n = len(sig.samples)
    if window < 1 or window % 2 == 0:
        raise ConfigError(f"window must be an odd positive count, got {window}")
    if window > n:
        raise ConfigError(f"window {window} exceeds signal length {n}")
    return PpgSignal(_centered_mean(sig.samples, window), sig.sample_rate_hz)


def detect_peaks(sig: PpgSignal, *, window_s: float = 0.75, k: float = 0.5,
                 refractory_ms: float = 300.0) -> np.ndarray:
    """Beat timestamps (ms from signal start) of a filtered, smoothed signal.

    A sample is a beat candidate when it is a local maximum above an
    adaptive threshold (rolling mean + k * rolling std over ``window_s``).
    Candidates closer than the refractory period to the previous accepted
    beat replace it only if taller, which suppresses double counting of
    split systolic peaks.
    """
    x = sig.samples
    n = len(x)
    if n < 3:
        return np.empty(0)
    window = int(round(window_s * sig.sample_rate_hz))
    window = max(1, min(window | 1, n | 1))
    if window > n:
        window = n if n % 2 == 1 else n - 1
    threshold = _centered_mean(x, window) + k * _centered_std(x, window)

    interior = (x[1:-1] > x[:-2]) & (x[1:-1] >= x[2:])
    candidates = np.flatnonzero(interior) + 1
    candidates = candidates[x[candidates] > threshold[candidates]]

    refractory = refractory_ms * sig.sample_rate_hz / 1000.0
    peaks: list[int] = []
    for idx in candidates:
        if peaks and idx - peaks[-1] < refractory:
            if x[idx] > x[peaks[-1]]:
                peaks[-1] = idx
        else:
            peaks.append(idx)
    return np.asarray(peaks, dtype=np.float64) / sig.sample_rate_hz * 1000.0


def to_ibi(timestamps_ms, min_ms: float = IBI_MIN_MS,
           max_ms: float = IBI_MAX_MS) -> IbiSeries:
    """Successive beat-to-beat differences with artifact rejection.

    Intervals outside [min_ms, max_ms] are dropped as artifacts (missed or
    spurious beats); fewer than two surviving intervals is an error.
    """
    ts = np.asarray(timestamps_ms, dtype=np.float64)
    if ts.size < 2:
        raise InsufficientDataError(f"need at least 2 beat timestamps, got {ts.size}")
    diffs = np.diff(ts)
    kept = diffs[(diffs >= min_ms) & (diffs <= max_ms)]
    if kept.size < 2:
        raise InsufficientDataError(
            f"only {kept.size} plausible intervals after artifact rejection"
        )
    return IbiSeries(kept)


@dataclass(frozen=True)
class HrvFeatures:
    """Heart-rate and heart-rate-variability summary of one IBI window.

    Units: bpm; ms for ibi_mean/sdnn/sdsd/rmssd/mad/sd1/sd2; fractions for
    pnn20/pnn50; ms^2 for s_area; ratio for sd1_sd2_ratio; breaths/min for
    br. Fields that cannot be computed are NaN.
    """

    bpm: float
    ibi_mean: float
    sdnn: float
    sdsd: float
    rmssd: float
    pnn20: float
    pnn50: float
    mad: float
    sd1: float
    sd2: float
    s_area: float
    sd1_sd2_ratio: float
    br: float

    def as_vector(self, include_br: bool = False) -> np.ndarray:
        base = [self.bpm, self.ibi_mean, self.sdnn, self.sdsd, self.rmssd,
                self.pnn20, self.pnn50, self.mad, self.sd1, self.sd2,
                self.s_area, self.sd1_sd2_ratio]
        if include_br:
            base.append(self.br)
        return np.asarray(base, dtype=np.float64)


def _breathing_rate(intervals: np.ndarray) -> float:
    # Respiratory sinus arrhythmia: the IBI series oscillates at the
    # breathing frequency. Resample the irregularly spaced series, then
    # take the dominant periodogram peak in the respiratory band.
    if intervals.size < 4:
        return math.nan
    beat_times_s = np.cumsum(intervals) / 1000.0
    duration = beat_times_s[-1] - beat_times_s[0]
    if duration <= 2.0 / _BR_BAND_HZ[0] / 2.0:  # need at least ~one slow breath
        return math.nan
    grid = np.arange(beat_times_s[0], beat_times_s[-1], 1.0 / _BR_RESAMPLE_HZ)
    if grid.size < 8:
        return math.nan
    spline = interpolate.interp1d(beat_times_s, intervals, kind="cubic")
    resampled = spline(grid)
    resampled = resampled - resampled.mean()
    freqs, power = sps.welch(resampled, fs=_BR_RESAMPLE_HZ,
                             nperseg=min(256, grid.size))
    band = (freqs >= _BR_BAND_HZ[0]) & (freqs <= _BR_BAND_HZ[1])
    if not band.any() or power[band].max() <= 0.0:
        return math.nan
    return float(freqs[band][np.argmax(power[band])] * 60.0)


def extract_features(ibi: IbiSeries) -> HrvFeatures:
    """Compute the HRV feature set from an interval series.

    sd1/sd2 are the Poincare short- and long-axis spreads derived from
    sdsd and sdnn, s_area is the ellipse area pi * sd1 * sd2, and the
    pNN thresholds use strict comparisons (|diff| > 20 / 50 ms).
    """
    x = ibi.intervals_ms
    n = x.size
    mean = float(x.mean())
    bpm = 60000.0 / mean
    mad = float(np.median(np.abs(x - np.median(x))))
    if n >= 2:
        sdnn = float(x.std())
        diffs = np.diff(x)
        sdsd = float(diffs.std())
        rmssd = float(np.sqrt(np.mean(diffs ** 2)))
        pnn20 = float(np.mean(np.abs(diffs) > 20.0))
        pnn50 = float(np.mean(np.abs(diffs) > 50.0))
        sd1 = sdsd / math.sqrt(2.0)
        sd2 = math.sqrt(max(0.0, 2.0 * sdnn ** 2 - sdsd ** 2 / 2.0))
        s_area = math.pi * sd1 * sd2
        ratio = sd1 / sd2 if sd2 > 0.0 else math.nan
    else:
        sdnn = sdsd = rmssd = pnn20 = pnn50 = sd1 = sd2 = s_area = ratio = math.nan
    return HrvFeatures(
        bpm=bpm, ibi_mean=mean, sdnn=sdnn, sdsd=sdsd, rmssd=rmssd,
        pnn20=pnn20, pnn50=pnn50, mad=mad, sd1=sd1, sd2=sd2,
        s_area=s_area, sd1_sd2_ratio=ratio, br=_breathing_rate(x),
    )


def default_smooth_window(sample_rate_hz: float, seconds: float = 0.1) -> int:
    """Odd sample count covering roughly ``seconds`` of signal."""
    return max(1, int(round(seconds * sample_rate_hz)) | 1)


def features_from_ppg(sig: PpgSignal, *, filter_spec: FilterSpec = FilterSpec(),
                      smooth_window: int | None = None,
                      accel: np.ndarray | None = None,
                      motion_z_limit: float = 4.0) -> HrvFeatures:
    """Full window pipeline: filter, smooth, detect beats, reject, summarize.

    When an accelerometer channel is given (|acceleration| per sample,
    aligned with the signal), beats landing on samples whose robust
    z-score exceeds ``motion_z_limit`` are discarded as motion artifacts
    before interval construction.
    """
    filtered = butterworth_bandpass(sig, filter_spec)
    window = smooth_window if smooth_window is not None else default_smooth_window(sig.sample_rate_hz)
    smoothed = moving_average(filtered, window)
    beats_ms = detect_peaks(smoothed)
    if accel is not None:
        accel = np.asarray(accel, dtype=np.float64)
        if accel.shape != sig.samples.shape:
            raise ValueError(
                f"accel channel has {accel.shape} samples, signal has {sig.samples.shape}"
            )
        med = np.median(accel)
        mad = np.median(np.abs(accel - med))
        scale = 1.4826 * mad if mad > 0 else 0.0
        if scale > 0:
            idx = np.clip((beats_ms / 1000.0 * sig.sample_rate_hz).astype(int),
                          0, len(accel) - 1)
            calm = np.abs(accel[idx] - med) / scale <= motion_z_limit
            beats_ms = beats_ms[calm]
    if beats_ms.size < 2:
        raise InsufficientDataError(
            f"found {beats_ms.size} beats; need at least 2 for intervals"
        )
    return extract_features(to_ibi(beats_ms))


# -- feature normalization ---------------------------------------------------


@dataclass(frozen=True)
class FeatureBounds:
    """Per-feature min/max fitted on training data only."""

    mins: np.ndarray
    maxs: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "mins", np.asarray(self.mins, dtype=np.float64))
        object.__setattr__(self, "maxs", np.asarray(self.maxs, dtype=np.float64))
        if self.mins.shape != self.maxs.shape or self.mins.ndim != 1:
            raise ValueError("bounds must be matching 1-D min/max vectors")
        if np.any(self.maxs < self.mins):
            raise ValueError("max bound below min bound")

    @classmethod
    def fit(cls, X) -> "FeatureBounds":
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] == 0:
            raise ValueError(f"need a non-empty (n, d) matrix, got shape {X.shape}")
        return cls(X.min(axis=0), X.max(axis=0))

    def transform(self, X) -> np.ndarray:
        """Scale into [0, 1]; constant features map to 0.5 and values
        outside the fitted range clamp to the unit interval."""
        X = np.asarray(X, dtype=np.float64)
        span = self.maxs - self.mins
        safe = np.where(span == 0.0, 1.0, span)
        scaled = (X - self.mins) / safe
        scaled = np.where(span == 0.0, 0.5, scaled)
        return np.clip(scaled, 0.0, 1.0)


def min_max_normalize(X, bounds: FeatureBounds | None = None
                      ) -> tuple[np.ndarray, FeatureBounds]:
    """Min-max scale a feature matrix into [0, 1].

    Fits bounds on ``X`` when none are supplied (training data); otherwise
    applies the given bounds with clamping, so held-out data can never
    leak into the scaling.
    """
    if bounds is None:
        bounds = FeatureBounds.fit(X)
    return bounds.transform(X), bounds
