"""Beat detection and beat-by-beat heart-rate scoring.

R-peaks come from a two-moving-average QRS detector (band-pass, square,
compare a QRS-scale moving average against a beat-scale one). PPG beats are
the point of maximum slope within each R-R interval; source-signal beats are
the maximum value within each interval. Metrics are RMSE and Pearson
correlation over index-paired beat-by-beat HR arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import signal as sps

from .preprocessing import Recording

QRS_BAND_HZ = (8.0, 20.0)
QRS_WINDOW_S = 0.12   # W1: moving average matched to QRS width
BEAT_WINDOW_S = 0.6   # W2: moving average matched to one beat
REFRACTORY_S = 0.3
HR_RANGE_BPM = (20.0, 300.0)


class HRError(Exception):
    pass


class MetricsUndefined(HRError):
    """Raised when too few or degenerate beat pairs make metrics meaningless."""


def _samples(signal) -> np.ndarray:
    data = signal.samples if isinstance(signal, Recording) else signal
    return np.asarray(data, dtype=np.float64)


@dataclass
class BeatSeries:
    """Strictly increasing beat sample indices and the HR array they imply."""

    beat_times: np.ndarray
    fs: float = 125.0
    hr: np.ndarray = field(init=False)

    def __post_init__(self):
        self.beat_times = np.asarray(self.beat_times, dtype=np.int64)
        if self.beat_times.size and np.any(np.diff(self.beat_times) <= 0):
            raise HRError("beat times must be strictly increasing")
        self.hr = 60.0 * self.fs / np.diff(self.beat_times.astype(np.float64)) \
            if self.beat_times.size >= 2 else np.empty(0)


@dataclass
class HRMetrics:
    rmse: float
    pearson_r: float
    n_beats: int


def hr_out_of_range(hr: np.ndarray) -> np.ndarray:
    """Flag beat-by-beat HR values outside the physiological (20, 300) band."""
    hr = np.asarray(hr, dtype=np.float64)
    return (hr <= HR_RANGE_BPM[0]) | (hr >= HR_RANGE_BPM[1])


def _moving_average(x: np.ndarray, width: int) -> np.ndarray:
    return np.convolve(x, np.ones(width) / width, mode="same")


def detect_r_peaks(ecg) -> np.ndarray:
    """Two-moving-average QRS detection; returns beat sample indices.

    Blocks where the QRS-scale average exceeds the beat-scale average and
    that last at least one QRS width yield one peak each, at the maximum of
    the squared band-passed signal; peaks closer than the refractory period
    keep only the stronger one.
    """
    fs = ecg.fs if isinstance(ecg, Recording) else 125.0
    x = _samples(ecg)
    w1 = max(1, int(round(QRS_WINDOW_S * fs)))
    w2 = max(1, int(round(BEAT_WINDOW_S * fs)))
    if x.size < 2 * w2:
        return np.empty(0, dtype=np.int64)

    sos = sps.butter(3, QRS_BAND_HZ, btype="bandpass", fs=fs, output="sos")
    # constant padding: reflection padding mirrors boundary beats into
    # ghosts that drag block maxima off the true peak
    band = sps.sosfiltfilt(sos, x, padtype="constant")
    sq = band * band
    ma_qrs = _moving_average(sq, w1)
    ma_beat = _moving_average(sq, w2)

    above = ma_qrs > ma_beat
    padded = np.concatenate([[False], above, [False]])
    flips = np.diff(padded.astype(np.int8))
    block_starts = np.flatnonzero(flips == 1)
    block_ends = np.flatnonzero(flips == -1)

    peaks = []
    for lo, hi in zip(block_starts, block_ends):
        if hi - lo >= w1:
            peaks.append(lo + int(np.argmax(sq[lo:hi])))

    refractory = REFRACTORY_S * fs
    kept: list[int] = []
    for p in peaks:
        if kept and p - kept[-1] < refractory:
            if sq[p] > sq[kept[-1]]:
                kept[-1] = p
        else:
            kept.append(p)
    return np.asarray(kept, dtype=np.int64)


def _interval_beats(values: np.ndarray, r_peaks: np.ndarray,
                    reduce_fn) -> np.ndarray:
    r_peaks = np.asarray(r_peaks, dtype=np.int64)
    if r_peaks.size == 0:
        raise HRError("reference R-peaks must be non-empty")
    beats = []
    for lo, hi in zip(r_peaks[:-1], r_peaks[1:]):
        lo = max(int(lo), 0)
        hi = min(int(hi), values.size)
        if hi - lo < 2:
            continue
        beats.append(lo + reduce_fn(values[lo:hi]))
    return np.asarray(beats, dtype=np.int64)


def detect_ppg_beats(ppg, r_peaks) -> np.ndarray:
    """One beat per R-R interval at the point of maximum slope (first
    difference); ties resolve to the earliest sample."""
    values = _samples(ppg)
    return _interval_beats(values, r_peaks,
                           lambda seg: int(np.argmax(np.diff(seg))))


def detect_source_beats(src, r_peaks) -> np.ndarray:
    """One beat per R-R interval at the maximum value; ties to the earliest."""
    values = _samples(src)
    return _interval_beats(values, r_peaks,
                           lambda seg: int(np.argmax(seg)))


def orient_positive_skew(x: np.ndarray) -> np.ndarray:
    """Flip sign when skewness is negative, so pulses point upward.

    Max-value beat detection assumes upward pulses; separated sources come
    out with arbitrary polarity.
    """
    x = np.asarray(x, dtype=np.float64)
    c = x - x.mean()
    sd = np.sqrt(np.mean(c * c))
    if sd == 0.0 or float(np.mean(c ** 3)) >= 0.0:
        return x.copy()
    return -x


def median_smooth(hr: np.ndarray, window: int = 5) -> np.ndarray:
    """Centered running median; edge windows shrink symmetrically, and the
    two outermost samples use a two-element window (the mean of the pair)."""
    if window < 1 or window % 2 == 0:
        raise HRError(f"window must be odd and positive, got {window}")
    hr = np.asarray(hr, dtype=np.float64)
    n = hr.size
    if n <= 1 or window == 1:
        return hr.copy()
    half = (window - 1) // 2
    out = np.empty_like(hr)
    for i in range(n):
        h = min(half, i, n - 1 - i)
        if h == 0:
            pair = hr[:2] if i == 0 else hr[-2:]
            out[i] = 0.5 * (pair[0] + pair[1])
        else:
            out[i] = np.median(hr[i - h:i + h + 1])
    return out


def _metrics_from_hr(ref_hr: np.ndarray, test_hr: np.ndarray) -> HRMetrics:
    if ref_hr.size != test_hr.size:
        raise HRError(
            f"HR arrays must pair index-wise: {ref_hr.size} vs {test_hr.size}"
        )
    if ref_hr.size < 3:
        raise MetricsUndefined(
            f"need at least 3 paired beats, got {ref_hr.size}"
        )
    diff = ref_hr - test_hr
    rmse = float(np.sqrt(np.mean(diff * diff)))
    ref_c = ref_hr - ref_hr.mean()
    test_c = test_hr - test_hr.mean()
    denom = np.sqrt(np.sum(ref_c ** 2) * np.sum(test_c ** 2))
    if denom == 0.0:
        if np.array_equal(ref_hr, test_hr):
            r = 1.0
        else:
            raise MetricsUndefined("constant HR series; correlation undefined")
    else:
        r = float(np.sum(ref_c * test_c) / denom)
    return HRMetrics(rmse=rmse, pearson_r=r, n_beats=int(ref_hr.size))


def align_and_score(reference: BeatSeries, test: BeatSeries) -> HRMetrics:
    """RMSE and Pearson correlation over index-paired beat-by-beat HR."""
    return _metrics_from_hr(reference.hr, test.hr)


def paired_hr_arrays(r_peaks, test_beats, fs: float) -> tuple[np.ndarray, np.ndarray]:
    """Index-pair detected-beat HR with the R-R interval each beat fell in.

    Pairs consecutive test beats (their spacing gives the test HR) with the
    reference interval containing the earlier beat, so lengths always match
    even when short intervals were skipped during detection.
    """
    r_peaks = np.asarray(r_peaks, dtype=np.int64)
    test_beats = np.asarray(test_beats, dtype=np.int64)
    ref_vals, test_vals = [], []
    for a, b in zip(test_beats[:-1], test_beats[1:]):
        j = int(np.searchsorted(r_peaks, a, side="right")) - 1
        if j < 0 or j + 1 >= r_peaks.size:
            continue
        ref_vals.append(60.0 * fs / (r_peaks[j + 1] - r_peaks[j]))
        test_vals.append(60.0 * fs / (b - a))
    return np.asarray(ref_vals), np.asarray(test_vals)


def score_beats(r_peaks, test_beats, fs: float,
                smooth_window: int | None = 5) -> HRMetrics:
    """Full scoring path: pair HR arrays, median-smooth both, compute metrics."""
    ref_hr, test_hr = paired_hr_arrays(r_peaks, test_beats, fs)
    if smooth_window is not None:
        ref_hr = median_smooth(ref_hr, smooth_window)
        test_hr = median_smooth(test_hr, smooth_window)
    return _metrics_from_hr(ref_hr, test_hr)


def bland_altman_pairs(ref_hr: np.ndarray,
                       test_hr: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-beat (mean HR, HR difference) pairs for agreement plots."""
    ref_hr = np.asarray(ref_hr, dtype=np.float64)
    test_hr = np.asarray(test_hr, dtype=np.float64)
    if ref_hr.size != test_hr.size:
        raise HRError("Bland-Altman needs index-paired HR arrays")
    return 0.5 * (ref_hr + test_hr), test_hr - ref_hr


METRICS_CSV_HEADER = "recording_id,method,encoder,rmse_bpm,pearson_r,n_beats"


def metrics_csv_line(recording_id: str, method: str, encoder: int,
                     metrics: HRMetrics) -> str:
    return ",".join([
        recording_id, method, str(encoder),
        repr(float(metrics.rmse)), repr(float(metrics.pearson_r)),
        str(metrics.n_beats),
    ])
