"""Per-bin multi-frame (convolutive transfer function) echo estimation.

Each frequency bin gets its own causal FIR filter running across STFT
frames.  The filter taps may change from frame to frame, which is what the
neural linear-echo stage emits.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dsp import ComplexSpectrogram, FrameParams, ParameterError

DEFAULT_TAPS = 10

_MAGIC = b"MFFB"


@dataclass
class MultiFrameFilterBank:
    """Four real [L, T, F] tap tensors, one RI pair per loudspeaker path."""

    h11_r: np.ndarray
    h11_i: np.ndarray
    h12_r: np.ndarray
    h12_i: np.ndarray

    def __post_init__(self):
        tensors = [np.asarray(t, dtype=np.float64) for t in
                   (self.h11_r, self.h11_i, self.h12_r, self.h12_i)]
        shape = tensors[0].shape
        if len(shape) != 3 or any(t.shape != shape for t in tensors):
            raise ParameterError(f"filter bank tensors must share one [L,T,F] shape, got "
                                 f"{[t.shape for t in tensors]}")
        if not all(np.all(np.isfinite(t)) for t in tensors):
            raise ParameterError("filter bank contains non-finite taps")
        self.h11_r, self.h11_i, self.h12_r, self.h12_i = tensors

    @property
    def taps(self) -> int:
        return self.h11_r.shape[0]

    @property
    def shape(self):
        return self.h11_r.shape

    @classmethod
    def zeros(cls, taps, n_frames, n_bins):
        z = np.zeros((taps, n_frames, n_bins))
        return cls(z, z.copy(), z.copy(), z.copy())

    @classmethod
    def from_complex(cls, h11: np.ndarray, h12: np.ndarray) -> "MultiFrameFilterBank":
        return cls(h11.real, h11.imag, h12.real, h12.imag)

    def stacked(self) -> np.ndarray:
        """[4, L, T, F] array in h11_r, h11_i, h12_r, h12_i order."""
        return np.stack([self.h11_r, self.h11_i, self.h12_r, self.h12_i])

    def save(self, path) -> None:
        """Flat little-endian container: magic, (L, T, F, 4) as uint32, then doubles."""
        L, T, F = self.shape
        payload = self.stacked().astype("<f8").tobytes()
        Path(path).write_bytes(_MAGIC + struct.pack("<4I", L, T, F, 4) + payload)

    @classmethod
    def load(cls, path) -> "MultiFrameFilterBank":
        raw = Path(path).read_bytes()
        if raw[:4] != _MAGIC:
            raise ParameterError(f"{path}: not a filter bank file")
        L, T, F, C = struct.unpack("<4I", raw[4:20])
        if C != 4:
            raise ParameterError(f"{path}: expected 4 channels, header says {C}")
        data = np.frombuffer(raw[20:], dtype="<f8")
        if data.size != 4 * L * T * F:
            raise ParameterError(f"{path}: payload size {data.size} != 4*{L}*{T}*{F}")
        data = data.reshape(4, L, T, F).astype(np.float64)
        return cls(*data)


def mf_apply(H: np.ndarray, X: np.ndarray) -> np.ndarray:
    """out[l, k] = sum_q H[q, l, k] * X[l - q, k], with X[<0] = 0.

    Works for real or complex arrays.  Taps are accumulated in increasing
    q so the summation order is fixed for every bin.
    """
    H = np.asarray(H)
    X = np.asarray(X)
    if H.ndim != 3 or X.ndim != 2 or H.shape[1:] != X.shape:
        raise ParameterError(f"mf_apply shape mismatch: H {H.shape}, X {X.shape}")
    L, T, _ = H.shape
    out = np.zeros(X.shape, dtype=np.result_type(H, X))
    for q in range(min(L, T)):
        out[q:] += H[q, q:] * X[: T - q]
    return out


def mf_apply_grad(H, X, grad_out):
    """Gradients of ``sum(grad_out * mf_apply(H, X))`` w.r.t. H and X (real)."""
    L, T, _ = H.shape
    gH = np.zeros_like(H)
    gX = np.zeros_like(X)
    for q in range(min(L, T)):
        gH[q, q:] = grad_out[q:] * X[: T - q]
        gX[: T - q] += grad_out[q:] * H[q, q:]
    return gH, gX


def _check_pair(a: ComplexSpectrogram, b: ComplexSpectrogram, what: str):
    if a.shape != b.shape:
        raise ParameterError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def estimate_echo(bank: MultiFrameFilterBank, X1: ComplexSpectrogram,
                  X2: ComplexSpectrogram) -> ComplexSpectrogram:
    """Linear echo spectrum from two far-end spectra, RI parts expanded explicitly."""
    _check_pair(X1, X2, "estimate_echo")
    if bank.shape[1:] != X1.shape:
        raise ParameterError(f"estimate_echo: bank {bank.shape} vs spectra {X1.shape}")
    x1r, x1i, x2r, x2i = X1.real, X1.imag, X2.real, X2.imag
    d_r = (mf_apply(bank.h11_r, x1r) - mf_apply(bank.h11_i, x1i)
           + mf_apply(bank.h12_r, x2r) - mf_apply(bank.h12_i, x2i))
    d_i = (mf_apply(bank.h11_r, x1i) + mf_apply(bank.h11_i, x1r)
           + mf_apply(bank.h12_r, x2i) + mf_apply(bank.h12_i, x2r))
    return ComplexSpectrogram.from_ri(d_r, d_i, X1.frame_params, X1.n_samples)


def subtract_echo(Y: ComplexSpectrogram, D: ComplexSpectrogram) -> ComplexSpectrogram:
    _check_pair(Y, D, "subtract_echo")
    return Y.like(Y.data - D.data)


@dataclass
class LsFitResult:
    bank: MultiFrameFilterBank
    residual_energy: float
    regularized: bool
    taps11: np.ndarray  # complex [L, F]
    taps12: np.ndarray


def _delay_matrix(x: np.ndarray, taps: int) -> np.ndarray:
    """[T, L] matrix whose column q is x delayed by q frames."""
    T = x.shape[0]
    A = np.zeros((T, taps), dtype=x.dtype)
    for q in range(taps):
        A[q:, q] = x[: T - q]
    return A


def ls_oracle_filter(X1: ComplexSpectrogram, X2: ComplexSpectrogram,
                     D: ComplexSpectrogram, taps: int = DEFAULT_TAPS,
                     channels: str = "both") -> LsFitResult:
    """Frame-invariant least-squares taps minimising ||D - estimate_echo||^2 per bin.

    ``channels`` may be "both", "first" or "second" to restrict the regressors
    (useful when only one loudspeaker carries signal).  Rank-deficient normal
    equations are solved with 1e-8 relative diagonal loading and flagged.
    """
    _check_pair(X1, X2, "ls_oracle_filter")
    _check_pair(X1, D, "ls_oracle_filter")
    T, F = X1.shape
    if T < taps:
        raise ParameterError(f"need at least {taps} frames, got {T}")
    use = {"both": (True, True), "first": (True, False), "second": (False, True)}[channels]
    h11 = np.zeros((taps, F), complex)
    h12 = np.zeros((taps, F), complex)
    regularized = False
    residual = 0.0
    for k in range(F):
        blocks = []
        if use[0]:
            blocks.append(_delay_matrix(X1.data[:, k], taps))
        if use[1]:
            blocks.append(_delay_matrix(X2.data[:, k], taps))
        A = np.concatenate(blocks, axis=1)
        d = D.data[:, k]
        R = A.conj().T @ A
        r = A.conj().T @ d
        scale = np.real(np.trace(R)) / R.shape[0]
        if scale == 0.0 or np.linalg.cond(R) > 1e12:
            regularized = True
            R = R + 1e-8 * max(scale, 1.0) * np.eye(R.shape[0])
        w = np.linalg.solve(R, r)
        residual += float(np.sum(np.abs(d - A @ w) ** 2))
        pos = 0
        if use[0]:
            h11[:, k] = w[:taps]
            pos = taps
        if use[1]:
            h12[:, k] = w[pos:pos + taps]
    if regularized:
        warnings.warn("ls_oracle_filter: rank-deficient normal equations, diagonal loading applied",
                      RuntimeWarning, stacklevel=2)
    bank = MultiFrameFilterBank.from_complex(
        np.broadcast_to(h11[:, None, :], (taps, T, F)).copy(),
        np.broadcast_to(h12[:, None, :], (taps, T, F)).copy())
    return LsFitResult(bank, residual, regularized, h11, h12)


__all__ = [
    "DEFAULT_TAPS", "FrameParams", "LsFitResult", "MultiFrameFilterBank", "estimate_echo",
    "ls_oracle_filter", "mf_apply", "mf_apply_grad", "subtract_echo",
]
