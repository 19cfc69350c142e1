import numpy as np
import pytest

from pulsesep.preprocessing import (
    PAD_SAMPLES,
    PipelineError,
    Recording,
    Segment,
    load_binary,
    load_csv,
    load_recording,
    preprocess_recording,
    reject_flat,
    resample,
    save_binary,
    save_csv,
    scale_and_pad,
    segment,
)


def test_recording_validation():
    with pytest.raises(PipelineError):
        Recording(np.array([]), 125.0)
    with pytest.raises(PipelineError):
        Recording(np.ones(10), 0.0)


def test_resample_length_ratio():
    rec = Recording(np.random.default_rng(0).normal(size=2560), 256.0)
    out = resample(rec, 125.0)
    assert out.samples.size == 1250
    assert out.fs == 125.0


def test_resample_preserves_pure_sine():
    fs = 256.0
    t = np.arange(int(20 * fs)) / fs
    rec = Recording(np.sin(2 * np.pi * 1.0 * t), fs)
    out = resample(rec, 125.0)
    t2 = np.arange(out.samples.size) / 125.0
    ref = np.sin(2 * np.pi * 1.0 * t2)
    edge = int(1.0 * 125.0)  # exclude one second at each end
    assert np.max(np.abs(out.samples[edge:-edge] - ref[edge:-edge])) < 1e-3


def test_resample_identity():
    rec = Recording(np.arange(100.0), 125.0)
    out = resample(rec, 125.0)
    np.testing.assert_array_equal(out.samples, rec.samples)
    assert out.samples is not rec.samples  # a copy, inputs never mutated


def test_segment_counts():
    fs = 125.0
    rec300 = Recording(np.arange(300 * 125.0), fs)
    windows = segment(rec300)
    assert len(windows) == 6
    assert all(w.size == 6000 for w in windows)
    # 300 s = 37500 samples; 6*6000 = 36000 -> 1500 dropped
    assert rec300.samples.size - 6 * 6000 == 1500

    assert segment(Recording(np.arange(47 * 125.0), fs)) == []

    rec96 = Recording(np.arange(96 * 125.0), fs)
    two = segment(rec96)
    assert len(two) == 2
    np.testing.assert_array_equal(two[0], np.arange(0.0, 6000.0))
    np.testing.assert_array_equal(two[1], np.arange(6000.0, 12000.0))


def test_reject_flat_rules():
    assert reject_flat(np.full(6000, 0.7))
    near_flat = np.zeros(6000)
    near_flat[-1] = 1e-12
    assert not reject_flat(near_flat)
    assert not reject_flat(np.array([1.0, 2.0]))


def test_scale_and_pad_affine_map():
    window = np.array([2.0, 4.0, 6.0] * 2000)
    seg = scale_and_pad(window)
    assert seg.data.size == 6000 + 2 * PAD_SAMPLES == 6144
    assert not seg.data[:72].any() and not seg.data[-72:].any()
    core = seg.core
    assert set(np.unique(core)) == {0.0, 0.5, 1.0}
    assert seg.scale == (2.0, 6.0)


def test_scale_and_pad_idempotent_on_normalized():
    rng = np.random.default_rng(1)
    window = rng.uniform(size=6000)
    window[0], window[1] = 0.0, 1.0  # already spans [0, 1]
    seg = scale_and_pad(window)
    np.testing.assert_array_equal(seg.core, window)


def test_scale_and_pad_affine_invariance():
    rng = np.random.default_rng(2)
    w = rng.normal(size=6000)
    a, b = 3.7, -11.0
    np.testing.assert_allclose(scale_and_pad(a * w + b).core,
                               scale_and_pad(w).core, atol=1e-12)


def test_scale_and_pad_rejects_flat():
    with pytest.raises(PipelineError):
        scale_and_pad(np.full(6000, 1.0))


def test_segment_invariants_enforced():
    data = np.zeros(6144)
    data[100] = 1.0  # nonzero pad is the only violation possible here
    good = np.concatenate([np.zeros(72), np.linspace(0, 1, 6000), np.zeros(72)])
    Segment(good, ("r", 0, 0), (0.0, 1.0))
    bad_pad = good.copy()
    bad_pad[10] = 0.5
    with pytest.raises(PipelineError):
        Segment(bad_pad, ("r", 0, 0), (0.0, 1.0))
    bad_core = good.copy()
    bad_core[72:-72] = np.linspace(0.1, 0.9, 6000)
    with pytest.raises(PipelineError):
        Segment(bad_core, ("r", 0, 0), (0.0, 1.0))


def test_preprocess_recording_end_to_end():
    rng = np.random.default_rng(3)
    fs = 256.0
    rec = Recording(rng.normal(size=int(150 * fs)), fs, record_id="recA")
    segments = preprocess_recording(rec)
    # 150 s -> 3 windows of 48 s
    assert len(segments) == 3
    for i, seg in enumerate(segments):
        assert seg.data.size == 6144
        assert seg.origin == ("recA", i, i * 6000)
        assert seg.core.min() == 0.0 and seg.core.max() == 1.0


def test_preprocess_drops_flat_windows():
    fs = 125.0
    samples = np.concatenate([np.full(6000, 2.0),
                              np.random.default_rng(4).normal(size=6000)])
    rec = Recording(samples, fs, record_id="flatfirst")
    segments = preprocess_recording(rec)
    assert len(segments) == 1
    assert segments[0].origin[1] == 1


def test_segment_resample_duration_preserved():
    rng = np.random.default_rng(5)
    rec = Recording(rng.normal(size=int(100 * 256.0)), 256.0)
    windows = segment(resample(rec, 125.0))
    covered = len(windows) * 48.0
    assert rec.duration - covered < 48.0


def test_csv_round_trip(tmp_path):
    path = tmp_path / "r.csv"
    path.write_text("# fs=125\n1.0\n2.0\n3.0\n")
    rec = load_csv(path)
    assert rec.fs == 125.0
    np.testing.assert_array_equal(rec.samples, [1.0, 2.0, 3.0])

    out = tmp_path / "w.csv"
    save_csv(rec, out)
    again = load_csv(out)
    np.testing.assert_array_equal(again.samples, rec.samples)
    assert again.fs == rec.fs


def test_csv_errors(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    with pytest.raises(PipelineError, match="empty"):
        load_csv(empty)

    no_header = tmp_path / "nh.csv"
    no_header.write_text("1.0\n2.0\n")
    with pytest.raises(PipelineError, match="fs"):
        load_csv(no_header)

    bad = tmp_path / "bad.csv"
    bad.write_text("# fs=125\n" + "\n".join("1.0" for _ in range(5))
                   + "\nabc\n2.0\n")
    with pytest.raises(PipelineError, match="line 7"):
        load_csv(bad)


def test_binary_round_trip(tmp_path):
    rng = np.random.default_rng(6)
    rec = Recording(rng.normal(size=500).astype(np.float32).astype(np.float64),
                    125.0, record_id="bin")
    path = tmp_path / "r.sig"
    save_binary(rec, path)
    again = load_binary(path)
    np.testing.assert_array_equal(again.samples, rec.samples)
    assert again.fs == 125.0

    raw = bytearray(path.read_bytes())
    raw[:4] = b"NOPE"
    (tmp_path / "bad.sig").write_bytes(bytes(raw))
    with pytest.raises(PipelineError, match="magic"):
        load_binary(tmp_path / "bad.sig")

    (tmp_path / "short.sig").write_bytes(path.read_bytes()[:-8])
    with pytest.raises(PipelineError):
        load_binary(tmp_path / "short.sig")


def test_load_recording_dispatch(tmp_path):
    rec = Recording(np.arange(10.0), 125.0)
    save_binary(rec, tmp_path / "a.sig")
    save_csv(rec, tmp_path / "a.csv")
    np.testing.assert_array_equal(load_recording(tmp_path / "a.sig").samples,
                                  load_recording(tmp_path / "a.csv").samples)
