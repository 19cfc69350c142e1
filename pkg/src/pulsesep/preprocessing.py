"""Recording ingestion and preprocessing.

Pipeline: polyphase resample to 125 Hz, split into 48 s windows (6000
samples, trailing remainder dropped), drop exactly-flat windows, min-max
scale each surviving window to [0, 1], and frame it with 72 zeros on both
ends to form a 6144-sample segment.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy import signal as sps

TARGET_FS = 125.0
SEGMENT_SECONDS = 48.0
PAD_SAMPLES = 72
RESAMPLE_TAPS_PER_PHASE = 64
KAISER_BETA = 8.0

BINARY_MAGIC = b"SIG1"


class PipelineError(Exception):
    pass


@dataclass
class Recording:
    """A raw single-channel stream with its sampling rate and provenance."""

    samples: np.ndarray
    fs: float
    label: str = ""
    record_id: str = ""

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise PipelineError("samples must be a non-empty 1-D array")
        if not self.fs > 0:
            raise PipelineError(f"sampling rate must be > 0, got {self.fs}")

    @property
    def duration(self) -> float:
        return self.samples.size / self.fs


@dataclass
class Segment:
    """One network-ready window: zero pads framing a [0, 1] scaled core."""

    data: np.ndarray
    origin: tuple[str, int, int]  # (recording id, segment index, start sample)
    scale: tuple[float, float]    # (min, max) used by the affine map

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 1 or self.data.size <= 2 * PAD_SAMPLES:
            raise PipelineError(f"segment length {self.data.size} too short")
        if self.data[:PAD_SAMPLES].any() or self.data[-PAD_SAMPLES:].any():
            raise PipelineError("segment pads must be exactly zero")
        core = self.core
        if core.min() != 0.0 or core.max() != 1.0:
            raise PipelineError("segment core must span exactly [0, 1]")

    @property
    def core(self) -> np.ndarray:
        return self.data[PAD_SAMPLES:-PAD_SAMPLES]


def _rational_ratio(target_fs: float, fs: float) -> tuple[int, int]:
    ratio = (Fraction(target_fs).limit_denominator(10 ** 6)
             / Fraction(fs).limit_denominator(10 ** 6))
    return ratio.numerator, ratio.denominator


def resample(rec: Recording, target_fs: float) -> Recording:
    """Polyphase FIR resampling with a Kaiser-window anti-aliasing filter.

    The low-pass cuts at min(fs, target_fs)/2; output length is
    round(n * target_fs / fs).
    """
    if not target_fs > 0:
        raise PipelineError(f"target_fs must be > 0, got {target_fs}")
    if target_fs == rec.fs:
        return Recording(rec.samples.copy(), rec.fs, rec.label, rec.record_id)
    up, down = _rational_ratio(target_fs, rec.fs)
    # cutoff at 1/max(up, down) of the upsampled Nyquist; resample_poly
    # applies the gain of `up` that undoes zero-stuffing attenuation
    numtaps = RESAMPLE_TAPS_PER_PHASE * up + 1
    h = sps.firwin(numtaps, 1.0 / max(up, down),
                   window=("kaiser", KAISER_BETA))
    out = sps.resample_poly(rec.samples, up, down, window=h)
    n_target = int(np.floor(rec.samples.size * target_fs / rec.fs + 0.5))
    if out.size > n_target:
        out = out[:n_target]
    elif out.size < n_target:
        out = np.pad(out, (0, n_target - out.size), mode="edge")
    return Recording(out, target_fs, rec.label, rec.record_id)


def segment(rec: Recording, seconds: float = SEGMENT_SECONDS) -> list[np.ndarray]:
    """Consecutive non-overlapping windows; the trailing remainder is dropped."""
    window = seconds * rec.fs
    if window != int(window):
        raise PipelineError(
            f"window of {seconds}s at {rec.fs}Hz is not a whole sample count"
        )
    window = int(window)
    count = rec.samples.size // window
    return [rec.samples[i * window:(i + 1) * window].copy()
            for i in range(count)]


def reject_flat(window: np.ndarray) -> bool:
    """True when the window must be dropped: max equals min exactly."""
    window = np.asarray(window, dtype=np.float64)
    return float(window.max()) == float(window.min())


def scale_and_pad(window: np.ndarray,
                  origin: tuple[str, int, int] = ("", 0, 0)) -> Segment:
    """Min-max scale to [0, 1] and frame with zero pads on both ends."""
    window = np.asarray(window, dtype=np.float64)
    lo, hi = float(window.min()), float(window.max())
    if hi == lo:
        raise PipelineError("flat window reached scale_and_pad; filter first")
    scaled = (window - lo) / (hi - lo)
    data = np.concatenate([np.zeros(PAD_SAMPLES), scaled, np.zeros(PAD_SAMPLES)])
    return Segment(data, origin, (lo, hi))


def preprocess_recording(rec: Recording, target_fs: float = TARGET_FS,
                         seconds: float = SEGMENT_SECONDS) -> list[Segment]:
    """Full ingestion chain for one recording, preserving segment order."""
    resampled = resample(rec, target_fs)
    window_len = int(seconds * target_fs)
    segments = []
    for i, window in enumerate(segment(resampled, seconds)):
        if reject_flat(window):
            continue
        origin = (rec.record_id, i, i * window_len)
        segments.append(scale_and_pad(window, origin))
    return segments


# ---------------------------------------------------------------------------
# file formats


def load_csv(path) -> Recording:
    """Read the canonical CSV: '# fs=<Hz>' header then one sample per line."""
    path = Path(path)
    text = path.read_text()
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise PipelineError(f"{path}: empty file")
    header = lines[0].strip()
    if not header.startswith("#") or "fs=" not in header:
        raise PipelineError(f"{path}: missing '# fs=<Hz>' header line")
    try:
        fs = float(header.split("fs=", 1)[1].strip())
    except ValueError as err:
        raise PipelineError(f"{path}: malformed fs header {header!r}") from err
    body = lines[1:]
    if not body:
        raise PipelineError(f"{path}: no samples after header")
    try:
        samples = np.asarray(body, dtype=np.float64)
    except ValueError:
        for lineno, raw in enumerate(body, start=2):
            try:
                float(raw)
            except ValueError:
                raise PipelineError(
                    f"{path}: non-numeric sample {raw.strip()!r} at line "
                    f"{lineno}"
                ) from None
        raise
    return Recording(samples, fs, record_id=path.stem)


def save_csv(rec: Recording, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"# fs={rec.fs!r}\n")
        for v in rec.samples:
            fh.write(repr(float(v)) + "\n")


def load_binary(path) -> Recording:
    """Read the fast-path format: SIG1, fs as u32 ratio, u64 count, f32 LE."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 20:
        raise PipelineError(f"{path}: truncated binary recording")
    if raw[:4] != BINARY_MAGIC:
        raise PipelineError(f"{path}: bad magic {raw[:4]!r}")
    num, den = struct.unpack("<II", raw[4:12])
    if den == 0:
        raise PipelineError(f"{path}: zero fs denominator")
    (count,) = struct.unpack("<Q", raw[12:20])
    expected = 20 + 4 * count
    if len(raw) != expected:
        raise PipelineError(
            f"{path}: expected {expected} bytes for {count} samples, "
            f"got {len(raw)}"
        )
    samples = np.frombuffer(raw[20:], dtype="<f4").astype(np.float64)
    return Recording(samples, num / den, record_id=path.stem)


def save_binary(rec: Recording, path) -> None:
    frac = Fraction(rec.fs).limit_denominator(10 ** 6)
    with open(path, "wb") as fh:
        fh.write(BINARY_MAGIC)
        fh.write(struct.pack("<II", frac.numerator, frac.denominator))
        fh.write(struct.pack("<Q", rec.samples.size))
        fh.write(rec.samples.astype("<f4").tobytes())


def load_recording(path) -> Recording:
    """Dispatch on extension: .csv is canonical, .sig is the binary fast path."""
    path = Path(path)
    if path.suffix == ".sig":
        return load_binary(path)
    return load_csv(path)
