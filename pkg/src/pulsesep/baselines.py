"""Classical source-separation baselines over 1-sample-shift pseudo-copies.

A single-channel recording becomes an n x (L - n + 1) matrix of delayed
copies, which FastICA (symmetric fixed point, tanh contrast) or NMF
(Frobenius multiplicative updates) factorize; the component with the lowest
heart-rate error against the ECG reference is kept.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .hr import (
    BeatSeries,
    HRError,
    HRMetrics,
    detect_source_beats,
    orient_positive_skew,
    score_beats,
)


class BaselineError(Exception):
    pass


def pseudo_copies(signal: np.ndarray, n: int = 8) -> np.ndarray:
    """Row k is the input delayed by k samples, truncated to common length."""
    signal = np.asarray(signal, dtype=np.float64).reshape(-1)
    if signal.size <= n:
        raise BaselineError(
            f"signal of length {signal.size} too short for {n} pseudo-copies"
        )
    width = signal.size - n + 1
    return np.stack([signal[k:k + width] for k in range(n)])


@dataclass
class FastICAResult:
    components: np.ndarray  # [n_components, T], unit variance rows
    converged: bool
    n_iter: int


def fastica(x: np.ndarray, n_components: int | None = None,
            max_iter: int = 500, tol: float = 1e-6,
            seed: int = 0) -> FastICAResult:
    """Symmetric fixed-point ICA with tanh contrast on eigen-whitened data.

    Components whose covariance eigenvalue is numerically zero are dropped
    with a warning (rank-deficient mixtures). Without convergence within
    max_iter the last iterate is returned flagged non-converged.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise BaselineError(f"expected a 2-D matrix, got shape {x.shape}")
    n, t = x.shape
    if t <= n:
        raise BaselineError(f"need more samples than rows, got {x.shape}")
    if n_components is None:
        n_components = n

    x = x - x.mean(axis=1, keepdims=True)
    cov = (x @ x.T) / t
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    usable = int(np.sum(evals > max(evals[0], 0.0) * 1e-10))
    if usable < n_components:
        warnings.warn(
            f"covariance rank {usable} below requested {n_components} "
            f"components; reducing", RuntimeWarning, stacklevel=2)
        n_components = usable
    if n_components == 0:
        raise BaselineError("covariance is numerically zero; nothing to unmix")

    whiten = (evecs[:, :n_components] / np.sqrt(evals[:n_components])).T
    xw = whiten @ x

    def _sym_decorrelate(w):
        s, e = np.linalg.eigh(w @ w.T)
        s = np.maximum(s, 1e-12)
        return (e / np.sqrt(s)) @ e.T @ w

    rng = np.random.default_rng(seed)
    w = _sym_decorrelate(rng.normal(size=(n_components, n_components)))
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        u = w @ xw
        g = np.tanh(u)
        g_prime = 1.0 - g * g
        w_new = (g @ xw.T) / t - g_prime.mean(axis=1)[:, None] * w
        w_new = _sym_decorrelate(w_new)
        drift = np.max(np.abs(np.abs(np.sum(w_new * w, axis=1)) - 1.0))
        w = w_new
        if drift < tol:
            converged = True
            break
    if not converged:
        warnings.warn("FastICA did not converge; returning last iterate",
                      RuntimeWarning, stacklevel=2)
    return FastICAResult(components=w @ xw, converged=converged, n_iter=it)


@dataclass
class NMFResult:
    w: np.ndarray
    h: np.ndarray
    errors: list[float]  # Frobenius error at init and after every half-step


def nmf(x: np.ndarray, rank: int, max_iter: int = 500, tol: float = 1e-6,
        seed: int = 0) -> NMFResult:
    """Multiplicative-update NMF minimizing Frobenius error.

    The objective is non-increasing across every half-step (H update, then W
    update). Stops when the relative error change over one full iteration
    drops below tol. Negative input is a hard error: shift it first.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise BaselineError(f"expected a 2-D matrix, got shape {x.shape}")
    if x.min() < 0.0:
        raise BaselineError(
            f"NMF input must be non-negative (min {x.min()}); subtract the "
            "minimum first"
        )
    n, t = x.shape
    rng = np.random.default_rng(seed)
    scale = np.sqrt(max(x.mean(), 1e-12) / rank)
    w = scale * (rng.random((n, rank)) + 0.1)
    h = scale * (rng.random((rank, t)) + 0.1)
    eps = 1e-12

    def frob():
        return float(np.linalg.norm(x - w @ h))

    errors = [frob()]
    for _ in range(max_iter):
        prev = errors[-1]
        h *= (w.T @ x) / (w.T @ w @ h + eps)
        errors.append(frob())
        w *= (x @ h.T) / (w @ h @ h.T + eps)
        errors.append(frob())
        if abs(prev - errors[-1]) <= tol * max(errors[0], eps):
            break
    return NMFResult(w=w, h=h, errors=errors)


def orient_components(components: np.ndarray) -> np.ndarray:
    """Flip sign so each component has non-negative skewness (pulses point up,
    which max-value beat detection assumes)."""
    return np.stack([orient_positive_skew(row) for row in components])


def best_component(components: np.ndarray, r_peaks,
                   fs: float = 125.0,
                   smooth_window: int | None = 5) -> tuple[int, HRMetrics]:
    """Score every component's interval-max beats against the R-peak
    reference and return the index with the lowest HR RMSE (ties to the
    lower index)."""
    components = np.asarray(components, dtype=np.float64)
    if components.ndim != 2 or components.shape[0] == 0:
        raise BaselineError("need at least one component to select from")
    best: tuple[float, int, HRMetrics] | None = None
    failures = []
    for idx in range(components.shape[0]):
        try:
            beats = detect_source_beats(components[idx], r_peaks)
            metrics = score_beats(r_peaks, beats, fs, smooth_window)
        except HRError as err:
            failures.append(f"component {idx}: {err}")
            continue
        if best is None or metrics.rmse < best[0]:
            best = (metrics.rmse, idx, metrics)
    if best is None:
        raise BaselineError(
            "no component produced valid HR metrics: " + "; ".join(failures)
        )
    return best[1], best[2]
