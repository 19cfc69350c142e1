"""Seeded synthetic mixtures with known ground truth.

A scene is one single-channel mixture of three sources, pulse (asymmetric
kernels placed by an integrated instantaneous rate), respiration-band
baseline wander, and gated random-walk motion bursts, plus white noise,
min-max scaled. Ground-truth beat indices make separation quality and HR
error directly measurable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .hr import HRMetrics, detect_source_beats, orient_positive_skew, score_beats
from .preprocessing import Recording

PULSE_RISE_S = 0.08
PULSE_DECAY_S = 0.3
# reference beats lead the pulse peaks, like an ECG leads the peripheral
# pulse by the transit time, so peaks fall mid-interval instead of on the
# interval boundary where detection jitter wraps around
REFERENCE_LEAD_S = 0.25
# decoded estimates with less dynamic range than this carry no beat
# structure (the zero-reconstruction objective drives empty channels here);
# max-value detection on them measures only the tie rule
ESTIMATE_RANGE_FLOOR = 1e-3


class SyntheticError(Exception):
    pass


@dataclass(frozen=True)
class SceneConfig:
    seed: int = 0
    duration_s: float = 48.0
    fs: float = 125.0
    hr_profile: tuple[float, ...] = (60.0,)  # BPM control points, interpolated
    gains: tuple[float, float, float] = (1.0, 0.6, 0.8)  # pulse, wander, artifact
    noise_sd: float = 0.05
    wander_freq: float = 0.25
    wander_amp: float = 1.0
    wander_jitter: float = 0.02
    artifact_rate: float = 4.0  # bursts per minute
    artifact_len: float = 2.0   # seconds per burst
    artifact_amp: float = 1.0


@dataclass
class SyntheticScene:
    config: SceneConfig
    sources: dict[str, np.ndarray]
    noise: np.ndarray
    ground_truth_beats: np.ndarray
    mixture: np.ndarray = field(init=False)

    def __post_init__(self):
        self.mixture = mix(self)

    @property
    def fs(self) -> float:
        return self.config.fs

    @property
    def duration_s(self) -> float:
        return self.config.duration_s

    @property
    def reference_beats(self) -> np.ndarray:
        """Beat anchors shifted earlier by the pulse transit lead, playing
        the role of the ECG R-peaks in interval-based detection."""
        lead = int(round(REFERENCE_LEAD_S * self.fs))
        shifted = self.ground_truth_beats - lead
        return shifted[shifted >= 0]


def _profile_to_samples(hr_profile, n: int) -> np.ndarray:
    points = np.atleast_1d(np.asarray(hr_profile, dtype=np.float64))
    if points.size == 1:
        return np.full(n, points[0])
    grid = np.linspace(0.0, 1.0, points.size)
    return np.interp(np.linspace(0.0, 1.0, n), grid, points)


def pulse_kernel(fs: float) -> tuple[np.ndarray, int]:
    """Asymmetric beat kernel: raised-cosine rise, tapered exponential decay.

    Returns (kernel, peak_index); the kernel peaks at exactly 1.0.
    """
    rise_n = int(round(PULSE_RISE_S * fs))
    decay_n = int(round(PULSE_DECAY_S * fs))
    rise = 0.5 - 0.5 * np.cos(np.pi * np.arange(rise_n + 1) / rise_n)
    t = np.arange(1, decay_n + 1) / decay_n
    decay = np.exp(-4.0 * t) * (1.0 - t)
    return np.concatenate([rise, decay]), rise_n


def gen_pulse_train(hr_profile, fs: float, duration: float
                    ) -> tuple[np.ndarray, np.ndarray]:
    """Pulse source and its beat indices from an instantaneous-rate profile.

    Beats fall where the integrated rate crosses successive integers; each
    beat places one kernel with its peak at the beat index.
    """
    n = int(round(duration * fs))
    hr = _profile_to_samples(hr_profile, n)
    if hr.min() < 30.0 or hr.max() > 200.0:
        raise SyntheticError(
            f"hr profile must stay within [30, 200] BPM, got "
            f"[{hr.min()}, {hr.max()}]"
        )
    phase = np.cumsum(hr / 60.0) / fs
    beats = np.flatnonzero(np.diff(np.floor(phase)) > 0) + 1
    kernel, peak = pulse_kernel(fs)
    out = np.zeros(n)
    kept = []
    for b in beats:
        lo = b - peak
        hi = lo + kernel.size
        k_lo = max(0, -lo)
        k_hi = kernel.size - max(0, hi - n)
        if k_hi <= k_lo:
            continue
        out[lo + k_lo:lo + k_hi] += kernel[k_lo:k_hi]
        kept.append(b)
    return out, np.asarray(kept, dtype=np.int64)


def gen_spike_train(hr_profile, fs: float, duration: float,
                    sigma_s: float = 0.015) -> tuple[np.ndarray, np.ndarray]:
    """Sharp ECG-like spike train on the same beat grid as gen_pulse_train.

    Narrow Gaussian spikes carry strong QRS-band energy, making this the
    reference signal of choice when exercising R-peak detection.
    """
    n = int(round(duration * fs))
    hr = _profile_to_samples(hr_profile, n)
    if hr.min() < 30.0 or hr.max() > 200.0:
        raise SyntheticError("hr profile must stay within [30, 200] BPM")
    phase = np.cumsum(hr / 60.0) / fs
    beats = np.flatnonzero(np.diff(np.floor(phase)) > 0) + 1
    half = int(round(4.0 * sigma_s * fs))
    t = np.arange(-half, half + 1) / fs
    kernel = np.exp(-t * t / (2.0 * sigma_s * sigma_s))
    out = np.zeros(n)
    for b in beats:
        lo, hi = b - half, b + half + 1
        k_lo, k_hi = max(0, -lo), kernel.size - max(0, hi - n)
        out[lo + k_lo:lo + k_hi] += kernel[k_lo:k_hi]
    return out, beats


def gen_wander(freq: float, amplitude: float, fs: float, duration: float,
               rng: np.random.Generator | None = None,
               jitter: float = 0.02) -> np.ndarray:
    """Respiration-band sinusoid with a small random-walk phase jitter."""
    n = int(round(duration * fs))
    if amplitude == 0.0:
        return np.zeros(n)
    t = np.arange(n) / fs
    phase = 2.0 * np.pi * freq * t
    if rng is not None and jitter > 0.0:
        phase = phase + np.cumsum(rng.normal(0.0, jitter / np.sqrt(fs), n))
    return amplitude * np.sin(phase)


def gen_artifact(burst_rate: float, burst_len: float, amplitude: float,
                 fs: float, duration: float,
                 rng: np.random.Generator | None = None) -> np.ndarray:
    """Random-walk bursts gated by a Poisson point process; zero elsewhere."""
    n = int(round(duration * fs))
    out = np.zeros(n)
    if burst_rate <= 0.0 or amplitude == 0.0 or burst_len <= 0.0:
        return out
    if rng is None:
        rng = np.random.default_rng(0)
    burst_n = max(2, int(round(burst_len * fs)))
    count = rng.poisson(burst_rate * duration / 60.0)
    starts = np.sort(rng.integers(0, max(1, n - burst_n), size=count))
    taper = np.hanning(burst_n)
    for s in starts:
        walk = np.cumsum(rng.normal(size=burst_n))
        walk -= np.linspace(walk[0], walk[-1], burst_n)  # bridge to zero ends
        sd = walk.std()
        if sd == 0.0:
            continue
        # normalize by spread, not peak: burst extremes then exceed the
        # nominal amplitude by 2-3x, the way motion swamps a pulse
        out[s:s + burst_n] += amplitude * taper * walk / sd
    return out


def mix(scene: SyntheticScene) -> np.ndarray:
    """Gain-weighted source sum plus noise, min-max scaled to [0, 1].

    An exactly flat mixture is returned unscaled; the preprocessing flat
    filter rejects it downstream.
    """
    cfg = scene.config
    m = (cfg.gains[0] * scene.sources["pulse"]
         + cfg.gains[1] * scene.sources["wander"]
         + cfg.gains[2] * scene.sources["artifact"]
         + scene.noise)
    lo, hi = float(m.min()), float(m.max())
    if hi == lo:
        return m
    return (m - lo) / (hi - lo)


def generate_scene(cfg: SceneConfig) -> SyntheticScene:
    """Build a scene reproducibly from its config; every random stream is
    derived from (seed, source index)."""
    n = int(round(cfg.duration_s * cfg.fs))
    pulse, beats = gen_pulse_train(cfg.hr_profile, cfg.fs, cfg.duration_s)
    wander = gen_wander(cfg.wander_freq, cfg.wander_amp, cfg.fs,
                        cfg.duration_s, rng=np.random.default_rng([cfg.seed, 1]),
                        jitter=cfg.wander_jitter)
    artifact = gen_artifact(cfg.artifact_rate, cfg.artifact_len,
                            cfg.artifact_amp, cfg.fs, cfg.duration_s,
                            rng=np.random.default_rng([cfg.seed, 2]))
    noise = np.random.default_rng([cfg.seed, 3]).normal(0.0, cfg.noise_sd, n) \
        if cfg.noise_sd > 0 else np.zeros(n)
    return SyntheticScene(
        config=cfg,
        sources={"pulse": pulse, "wander": wander, "artifact": artifact},
        noise=noise,
        ground_truth_beats=beats,
    )


@dataclass
class SeparationScore:
    correlations: dict[str, float]  # |Pearson r| per ground-truth source
    hr: HRMetrics


def _abs_correlation(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    denom = math.sqrt(float(np.sum(a * a)) * float(np.sum(b * b)))
    if denom == 0.0:
        return 0.0
    return abs(float(np.sum(a * b)) / denom)


def score_separation(estimate: np.ndarray, scene: SyntheticScene,
                     smooth_window: int | None = 5) -> SeparationScore:
    """Absolute correlation against every ground-truth source plus HR metrics
    using the scene's true beats as the reference intervals.

    The estimate is skew-oriented before beat detection: separated sources
    carry arbitrary polarity and max-value detection needs upward pulses.
    Correlations are absolute, so orientation does not affect them. An
    estimate flatter than ESTIMATE_RANGE_FLOOR raises MetricsUndefined.
    """
    from .hr import MetricsUndefined

    estimate = np.asarray(estimate, dtype=np.float64).reshape(-1)
    n = scene.mixture.size
    if estimate.size != n:
        raise SyntheticError(
            f"estimate length {estimate.size} != scene length {n}"
        )
    corr = {name: _abs_correlation(estimate, src)
            for name, src in scene.sources.items()}
    if estimate.max() - estimate.min() < ESTIMATE_RANGE_FLOOR:
        raise MetricsUndefined(
            "estimate has no beat structure (dynamic range below "
            f"{ESTIMATE_RANGE_FLOOR})"
        )
    oriented = orient_positive_skew(estimate)
    beats = detect_source_beats(oriented, scene.reference_beats)
    metrics = score_beats(scene.reference_beats, beats, scene.fs,
                          smooth_window)
    return SeparationScore(correlations=corr, hr=metrics)


def scene_recordings(scene: SyntheticScene) -> dict[str, Recording]:
    """Mixture and sources as Recording objects ready for CSV export."""
    out = {"mixture": Recording(scene.mixture, scene.fs, record_id="mixture")}
    for name, src in scene.sources.items():
        out[f"source_{name}"] = Recording(src, scene.fs,
                                          record_id=f"source_{name}")
    return out


def random_scene_configs(count: int, meta_seed: int = 0,
                         hr_low: float = 50.0, hr_high: float = 110.0,
                         **overrides) -> list[SceneConfig]:
    """Scene configs with per-scene seeds and randomized two-point HR ramps.

    Varying the rate across scenes keeps beat grids diverse (and beat-by-beat
    HR non-constant, which correlation metrics need).
    """
    rng = np.random.default_rng(meta_seed)
    configs = []
    for i in range(count):
        a, b = np.sort(rng.uniform(hr_low, hr_high, size=2))
        if rng.random() < 0.5:
            a, b = b, a
        configs.append(replace(SceneConfig(**overrides),
                               seed=int(rng.integers(0, 2 ** 31)),
                               hr_profile=(float(a), float(b))))
    return configs


def make_validation_fn(scenes: list[SyntheticScene], config,
                       batch_size: int = 8, smooth_window: int | None = 5):
    """Closure mapping model params to one mean HR RMSE per encoder.

    Each scene's mixture is padded once up front; every call runs masked
    source inference per encoder and scores the estimates against the
    scenes' true beats. Scenes whose metrics are undefined contribute NaN
    and are ignored in the mean.
    """
    from .autodiff import Tensor
    from .hr import HRError
    from .model import infer_source
    from .preprocessing import PAD_SAMPLES, scale_and_pad

    x = np.stack([scale_and_pad(s.mixture).data for s in scenes])[:, None, :]

    def validate(params) -> list[float]:
        rmse_per_encoder = []
        for enc in range(config.num_encoders):
            vals = []
            for lo in range(0, x.shape[0], batch_size):
                est = infer_source(params, config, Tensor(x[lo:lo + batch_size]),
                                   enc).data[:, 0, PAD_SAMPLES:-PAD_SAMPLES]
                for row, scene in zip(est, scenes[lo:lo + batch_size]):
                    if row.max() - row.min() < ESTIMATE_RANGE_FLOOR:
                        vals.append(np.nan)  # empty channel, no beats to read
                        continue
                    try:
                        ref = scene.reference_beats
                        beats = detect_source_beats(
                            orient_positive_skew(row), ref)
                        m = score_beats(ref, beats, scene.fs, smooth_window)
                        vals.append(m.rmse)
                    except HRError:
                        vals.append(np.nan)
            vals = np.asarray(vals)
            good = vals[np.isfinite(vals)]
            rmse_per_encoder.append(float(good.mean()) if good.size
                                    else float("inf"))
        return rmse_per_encoder

    return validate


# ---------------------------------------------------------------------------
# key = value scene config files


_SCALAR_FIELDS = {
    "seed": int,
    "duration_s": float,
    "fs": float,
    "noise_sd": float,
    "wander_freq": float,
    "wander_amp": float,
    "wander_jitter": float,
    "artifact_rate": float,
    "artifact_len": float,
    "artifact_amp": float,
}
_TUPLE_FIELDS = {"hr_profile", "gains"}


def parse_scene_config(path) -> SceneConfig:
    """Read a 'key = value' scene file; unknown keys are hard errors."""
    path = Path(path)
    values = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SyntheticError(f"{path}: line {lineno}: expected key = value")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        try:
            if key in _SCALAR_FIELDS:
                values[key] = _SCALAR_FIELDS[key](value)
            elif key in _TUPLE_FIELDS:
                values[key] = tuple(float(v) for v in value.split(","))
            else:
                raise SyntheticError(
                    f"{path}: line {lineno}: unknown key {key!r}"
                )
        except ValueError as err:
            raise SyntheticError(
                f"{path}: line {lineno}: bad value for {key!r}: {value!r}"
            ) from err
    if "gains" in values and len(values["gains"]) != 3:
        raise SyntheticError(f"{path}: gains needs exactly 3 values")
    return SceneConfig(**values)


def write_scene_config(cfg: SceneConfig, path) -> None:
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            lines.append(f"{f.name} = {','.join(repr(x) for x in v)}")
        else:
            lines.append(f"{f.name} = {v!r}")
    Path(path).write_text("\n".join(lines) + "\n")
