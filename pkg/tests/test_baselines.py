import numpy as np
import pytest

from pulsesep.baselines import (
    BaselineError,
    best_component,
    fastica,
    nmf,
    orient_components,
    pseudo_copies,
)
from pulsesep.synthetic import gen_pulse_train


def test_pseudo_copies_shape():
    sig = np.arange(1000.0)
    m = pseudo_copies(sig, 8)
    assert m.shape == (8, 993)


def test_pseudo_copies_single_row():
    sig = np.arange(50.0)
    m = pseudo_copies(sig, 1)
    np.testing.assert_array_equal(m[0], sig)


def test_pseudo_copies_exact_shifts():
    rng = np.random.default_rng(0)
    sig = rng.normal(size=256)
    m = pseudo_copies(sig, 8)
    for k in range(8):
        np.testing.assert_array_equal(m[k], sig[k:k + m.shape[1]])
        # row k shifted back by k equals row 0 on the overlap
        np.testing.assert_array_equal(m[k][:m.shape[1] - k],
                                      m[0][k:])


def test_pseudo_copies_constant_signal_rows_identical():
    m = pseudo_copies(np.full(100, 3.3), 8)
    np.testing.assert_array_equal(m[0], m[1])


def test_pseudo_copies_too_short():
    with pytest.raises(BaselineError):
        pseudo_copies(np.arange(8.0), 8)


def test_fastica_recovers_planted_uniform_sources():
    rng = np.random.default_rng(42)
    s = rng.uniform(-1.0, 1.0, size=(2, 4000))
    mixing = np.array([[1.0, 0.6], [0.4, 1.0]])
    res = fastica(mixing @ s, seed=1)
    assert res.converged
    for i in range(2):
        best = max(abs(np.corrcoef(res.components[i], s[j])[0, 1])
                   for j in range(2))
        assert best > 0.95


def test_fastica_unit_variance_and_decorrelated():
    rng = np.random.default_rng(3)
    s = rng.uniform(-1.0, 1.0, size=(3, 5000))
    mixing = rng.normal(size=(3, 3)) + 2 * np.eye(3)
    res = fastica(mixing @ s, seed=2)
    assert res.converged
    for row in res.components:
        assert abs(row.var() - 1.0) < 1e-9
    for i in range(3):
        for j in range(i):
            assert abs(np.corrcoef(res.components[i],
                                   res.components[j])[0, 1]) < 1e-3


def test_fastica_independent_input_is_fixed_point():
    rng = np.random.default_rng(5)
    u = rng.uniform(-1.0, 1.0, size=(2, 4000))
    u = (u - u.mean(axis=1, keepdims=True)) / u.std(axis=1, keepdims=True)
    res = fastica(u, seed=4)
    cors = np.abs(np.corrcoef(np.vstack([res.components, u]))[:2, 2:])
    # recovered equals input up to permutation and sign
    assert sorted(np.argmax(cors, axis=1).tolist()) == [0, 1]
    assert np.all(np.max(cors, axis=1) > 0.99)


def test_fastica_rank_deficient_reduces_with_warning():
    g = np.random.default_rng(6).normal(size=4000)
    dup = np.vstack([g, g])
    with pytest.warns(RuntimeWarning, match="rank"):
        res = fastica(dup, seed=3)
    assert res.components.shape[0] == 1


def test_fastica_input_validation():
    with pytest.raises(BaselineError):
        fastica(np.ones((5, 4)))


def test_nmf_planted_factorization():
    rng = np.random.default_rng(42)
    w0, h0 = rng.random((8, 2)), rng.random((2, 300))
    x = w0 @ h0
    res = nmf(x, rank=2, seed=4, max_iter=2000, tol=1e-9)
    assert res.errors[-1] / np.linalg.norm(x) < 1e-3
    assert res.w.min() >= 0 and res.h.min() >= 0


def test_nmf_monotone_on_random_matrices():
    for k in range(20):
        x = np.random.default_rng(k).random((6, 80))
        res = nmf(x, rank=3, seed=k)
        errs = res.errors
        assert all(errs[i + 1] <= errs[i] for i in range(len(errs) - 1)), \
            f"objective increased for seed {k}"


def test_nmf_full_rank_error_never_exceeds_initial():
    x = np.random.default_rng(9).random((5, 40))
    res = nmf(x, rank=5, seed=1)
    assert res.errors[-1] <= res.errors[0]


def test_nmf_zero_matrix():
    res = nmf(np.zeros((4, 50)), rank=2, seed=0)
    assert res.errors[-1] == 0.0
    assert not res.w.any() and not res.h.any()


def test_nmf_negative_input_is_error():
    with pytest.raises(BaselineError):
        nmf(np.array([[1.0, -0.1], [0.2, 0.3], [0.1, 0.4]]), rank=1)


def test_orient_components_flips_negative_skew():
    pulse, _ = gen_pulse_train(60.0, 125.0, 30.0)
    flipped = orient_components(np.vstack([-pulse, pulse]))
    assert flipped[0].max() > abs(flipped[0].min())
    np.testing.assert_array_equal(flipped[1], pulse)


def test_best_component_selection():
    fs = 125.0
    pulse, beats = gen_pulse_train(60.0, fs, 60.0)
    rng = np.random.default_rng(11)
    noise = rng.normal(size=pulse.size)
    wander = np.sin(2 * np.pi * 0.25 * np.arange(pulse.size) / fs)

    idx, metrics = best_component(np.vstack([noise, pulse, wander]),
                                  beats, fs)
    assert idx == 1
    assert metrics.rmse < 2.0

    only, m = best_component(pulse[None, :], beats, fs)
    assert only == 0


def test_best_component_tie_breaks_to_lower_index():
    fs = 125.0
    pulse, beats = gen_pulse_train(60.0, fs, 60.0)
    idx, _ = best_component(np.vstack([pulse, pulse.copy()]), beats, fs)
    assert idx == 0


def test_best_component_requires_components():
    with pytest.raises(BaselineError):
        best_component(np.empty((0, 100)), np.array([0, 50]), 125.0)
