"""Classical stereo baselines: joint two-channel NLMS canceller and STFT Wiener suppressor."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .dsp import ComplexSpectrogram, ParameterError, Waveform


@dataclass
class NlmsState:
    filter_len: int = 1600
    mu: float = 0.5
    delta: float = 1e-6
    w1: np.ndarray = field(default=None, repr=False)
    w2: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if not 0 < self.mu <= 2 and self.mu != 0:
            raise ParameterError(f"mu must be in (0, 2], got {self.mu}")
        if self.delta <= 0:
            raise ParameterError(f"delta must be positive, got {self.delta}")
        if self.w1 is None:
            self.w1 = np.zeros(self.filter_len)
        if self.w2 is None:
            self.w2 = np.zeros(self.filter_len)
        self.w1 = np.array(self.w1, dtype=float)
        self.w2 = np.array(self.w2, dtype=float)
        if self.w1.shape != (self.filter_len,) or self.w2.shape != (self.filter_len,):
            raise ParameterError("tap vectors must have filter_len entries")


def _samples(x):
    return x.samples if isinstance(x, Waveform) else np.asarray(x, dtype=float)


def nlms_cancel(y, x1, x2, state: NlmsState | None = None, return_history: bool = False):
    """Sample-by-sample stereo NLMS.

    Both tap vectors share one normalisation, ||x1_vec||^2 + ||x2_vec||^2 + delta.
    Returns ``(e, final_state)``; with ``return_history`` the echo estimate is
    appended as a third element.
    """
    y, x1, x2 = _samples(y), _samples(x1), _samples(x2)
    if not (len(y) == len(x1) == len(x2)):
        raise ParameterError(f"length mismatch: y={len(y)}, x1={len(x1)}, x2={len(x2)}")
    state = replace(state) if state is not None else NlmsState()
    L = state.filter_len
    w1 = state.w1.copy()
    w2 = state.w2.copy()
    # reversed, zero-prefixed copies so that x_vec(n) = rev[N-1-n : N-1-n+L]
    n_total = len(y)
    r1 = np.concatenate([x1[::-1], np.zeros(L)])
    r2 = np.concatenate([x2[::-1], np.zeros(L)])
    e = np.empty(n_total)
    d_hat = np.empty(n_total)
    energy = 0.0
    mu, delta = state.mu, state.delta
    for n in range(n_total):
        start = n_total - 1 - n
        v1 = r1[start:start + L]
        v2 = r2[start:start + L]
        # running window energy; recomputed periodically against drift
        if n % 1024 == 0:
            energy = float(v1 @ v1 + v2 @ v2)
        else:
            old = n - L
            if old >= 0:
                energy -= x1[old] ** 2 + x2[old] ** 2
            energy += x1[n] ** 2 + x2[n] ** 2
        est = w1 @ v1 + w2 @ v2
        err = y[n] - est
        d_hat[n] = est
        e[n] = err
        if mu:
            g = mu * err / (max(energy, 0.0) + delta)
            w1 += g * v1
            w2 += g * v2
    state.w1, state.w2 = w1, w2
    fs = y.sample_rate if isinstance(y, Waveform) else 16000
    out = Waveform(e, fs)
    if return_history:
        return out, state, d_hat
    return out, state


def misalignment_db(w: np.ndarray, h: np.ndarray) -> float:
    """10 log10(||h - w||^2 / ||h||^2) with both zero-padded to the longer length."""
    n = max(len(w), len(h))
    w = np.pad(np.asarray(w, float), (0, n - len(w)))
    h = np.pad(np.asarray(h, float), (0, n - len(h)))
    return 10 * np.log10(np.sum((h - w) ** 2) / np.sum(h ** 2))


@dataclass(frozen=True)
class WienerParams:
    alpha_psd: float = 0.92
    gain_floor: float = 0.05

    def __post_init__(self):
        if not 0 < self.alpha_psd < 1:
            raise ParameterError(f"alpha_psd must be in (0, 1), got {self.alpha_psd}")
        if not 0 <= self.gain_floor < 1:
            raise ParameterError(f"gain_floor must be in [0, 1), got {self.gain_floor}")


def wiener_gains(Y: ComplexSpectrogram, X1: ComplexSpectrogram, X2: ComplexSpectrogram,
                 p: WienerParams | None = None) -> np.ndarray:
    """Frame-recursive stereo echo-suppression gains, shape [T, F]."""
    p = p or WienerParams()
    if not (Y.shape == X1.shape == X2.shape):
        raise ParameterError(f"shape mismatch: {Y.shape}, {X1.shape}, {X2.shape}")
    T, F = Y.shape
    a = p.alpha_psd
    phi_yy = np.zeros(F)
    phi_11 = np.zeros(F)
    phi_22 = np.zeros(F)
    phi_12 = np.zeros(F, complex)
    phi_1y = np.zeros(F, complex)
    phi_2y = np.zeros(F, complex)
    gains = np.ones((T, F))
    for t in range(T):
        y, a1, a2 = Y.data[t], X1.data[t], X2.data[t]
        phi_yy = a * phi_yy + (1 - a) * np.abs(y) ** 2
        phi_11 = a * phi_11 + (1 - a) * np.abs(a1) ** 2
        phi_22 = a * phi_22 + (1 - a) * np.abs(a2) ** 2
        phi_12 = a * phi_12 + (1 - a) * np.conj(a1) * a2
        phi_1y = a * phi_1y + (1 - a) * np.conj(a1) * y
        phi_2y = a * phi_2y + (1 - a) * np.conj(a2) * y
        phi_dd = _echo_psd(phi_11, phi_22, phi_12, phi_1y, phi_2y)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(phi_yy > 0, phi_dd / phi_yy, 0.0)
        gains[t] = np.clip(1.0 - ratio, p.gain_floor, 1.0)
    return gains


def _echo_psd(p11, p22, p12, p1y, p2y):
    """phi_y x^H R_xx^{-1} phi_xy per bin for the 2x2 far-end covariance R_xx."""
    trace = p11 + p22
    det = p11 * p22 - np.abs(p12) ** 2
    # near-singular covariance (silence or identical channels) gets diagonal loading
    load = np.where(det <= 1e-10 * trace ** 2, 1e-6 * trace + 1e-20, 0.0)
    q11 = p11 + load
    q22 = p22 + load
    det = q11 * q22 - np.abs(p12) ** 2
    # R = [[q11, p12], [conj(p12), q22]] with R_ij = E[conj(x_i) x_j]
    h1 = (q22 * p1y - p12 * p2y) / det
    h2 = (q11 * p2y - np.conj(p12) * p1y) / det
    phi_dd = np.real(np.conj(p1y) * h1 + np.conj(p2y) * h2)
    return np.where(trace > 0, np.maximum(phi_dd, 0.0), 0.0)


def wiener_suppress(Y: ComplexSpectrogram, X1: ComplexSpectrogram, X2: ComplexSpectrogram,
                    p: WienerParams | None = None) -> ComplexSpectrogram:
    return Y.like(wiener_gains(Y, X1, X2, p) * Y.data)
