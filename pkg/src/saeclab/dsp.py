"""STFT analysis/synthesis, polar helpers and 16-bit WAV I/O."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile

DEFAULT_SAMPLE_RATE = 16000


class ParameterError(ValueError):
    """Raised for invalid shapes, lengths or configuration values."""


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if self.sample_rate <= 0:
            raise ParameterError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise ParameterError("waveform contains non-finite samples")

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


@dataclass(frozen=True)
class FrameParams:
    win_len: int = 320
    hop_len: int = 160
    fft_len: int = 320
    window: str = "hamming"

    def __post_init__(self):
        if not (0 < self.hop_len <= self.win_len <= self.fft_len):
            raise ParameterError(
                f"need 0 < hop_len <= win_len <= fft_len, got "
                f"{self.hop_len}, {self.win_len}, {self.fft_len}")
        if self.window not in _WINDOWS:
            raise ParameterError(f"unknown window {self.window!r}")

    @property
    def n_bins(self) -> int:
        return self.fft_len // 2 + 1

    def n_frames(self, n_samples: int) -> int:
        """Frames needed so every sample lands in at least one frame start region."""
        if n_samples <= 0:
            return 0
        return math.ceil(n_samples / self.hop_len)

    def analysis_window(self) -> np.ndarray:
        return _WINDOWS[self.window](self.win_len)


def _periodic_hamming(n):
    return 0.54 - 0.46 * np.cos(2 * np.pi * np.arange(n) / n)


def _periodic_hann(n):
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)


_WINDOWS = {
    "hamming": _periodic_hamming,
    "hann": _periodic_hann,
    "rect": np.ones,
}


@dataclass
class ComplexSpectrogram:
    """Complex [T x F] spectrogram; ``n_samples`` remembers the source length."""

    data: np.ndarray
    frame_params: FrameParams = field(default_factory=FrameParams)
    n_samples: int | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.complex128)
        if self.data.ndim != 2:
            raise ParameterError(f"spectrogram must be 2-D, got shape {self.data.shape}")

    @classmethod
    def from_ri(cls, real, imag, frame_params=None, n_samples=None):
        real = np.asarray(real, dtype=np.float64)
        imag = np.asarray(imag, dtype=np.float64)
        if real.shape != imag.shape:
            raise ParameterError(f"real/imag shape mismatch {real.shape} vs {imag.shape}")
        return cls(real + 1j * imag, frame_params or FrameParams(), n_samples)

    @property
    def real(self) -> np.ndarray:
        return self.data.real

    @property
    def imag(self) -> np.ndarray:
        return self.data.imag

    @property
    def shape(self):
        return self.data.shape

    def like(self, data) -> "ComplexSpectrogram":
        return ComplexSpectrogram(data, self.frame_params, self.n_samples)


def frame_signal(x: np.ndarray, p: FrameParams) -> np.ndarray:
    """Zero-padded [T, win_len] frame matrix (frame t starts at t*hop)."""
    n_frames = p.n_frames(len(x))
    if n_frames == 0:
        return np.zeros((0, p.win_len))
    padded_len = (n_frames - 1) * p.hop_len + p.win_len
    padded = np.zeros(padded_len)
    padded[: len(x)] = x
    idx = np.arange(p.win_len)[None, :] + p.hop_len * np.arange(n_frames)[:, None]
    return padded[idx]


def stft(x: Waveform | np.ndarray, p: FrameParams | None = None) -> ComplexSpectrogram:
    p = p or FrameParams()
    samples = x.samples if isinstance(x, Waveform) else np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(samples)):
        raise ParameterError("stft input contains non-finite samples")
    frames = frame_signal(samples, p) * p.analysis_window()
    if frames.shape[0] == 0:
        return ComplexSpectrogram(np.zeros((0, p.n_bins), complex), p, 0)
    spec = np.fft.rfft(frames, n=p.fft_len, axis=1)
    return ComplexSpectrogram(spec, p, len(samples))


def istft(S: ComplexSpectrogram, sample_rate: int = DEFAULT_SAMPLE_RATE,
          length: int | None = None) -> Waveform:
    """Weighted overlap-add inverse of :func:`stft`.

    The output is divided by the overlapped squared window, which makes
    ``istft(stft(x))`` exact wherever the window sum is non-zero.
    """
    p = S.frame_params
    if not np.all(np.isfinite(S.data)):
        raise ParameterError("istft input contains non-finite values")
    n_frames = S.shape[0]
    if length is None:
        length = S.n_samples if S.n_samples is not None else (
            0 if n_frames == 0 else (n_frames - 1) * p.hop_len + p.win_len)
    if n_frames == 0:
        return Waveform(np.zeros(length), sample_rate)
    win = p.analysis_window()
    frames = np.fft.irfft(S.data, n=p.fft_len, axis=1)[:, : p.win_len] * win
    out_len = (n_frames - 1) * p.hop_len + p.win_len
    out = np.zeros(out_len)
    norm = np.zeros(out_len)
    win_sq = win ** 2
    for t in range(n_frames):
        start = t * p.hop_len
        out[start:start + p.win_len] += frames[t]
        norm[start:start + p.win_len] += win_sq
    nz = norm > 1e-10
    out[nz] /= norm[nz]
    if length > out_len:
        out = np.concatenate([out, np.zeros(length - out_len)])
    return Waveform(out[:length], sample_rate)


def magnitude(S: ComplexSpectrogram) -> np.ndarray:
    return np.hypot(S.real, S.imag)


def phase(S: ComplexSpectrogram) -> np.ndarray:
    # atan2(0, 0) is 0 in numpy; the all-zero convention falls out for free
    return np.arctan2(S.imag, S.real)


def polar_to_complex(mag, ph, frame_params=None, n_samples=None) -> ComplexSpectrogram:
    mag = np.asarray(mag, dtype=np.float64)
    ph = np.asarray(ph, dtype=np.float64)
    if mag.shape != ph.shape:
        raise ParameterError(f"magnitude/phase shape mismatch {mag.shape} vs {ph.shape}")
    return ComplexSpectrogram(mag * np.exp(1j * ph), frame_params or FrameParams(), n_samples)


def read_wav(path, expected_rate: int = DEFAULT_SAMPLE_RATE) -> Waveform:
    """Read a 16-bit PCM mono WAV. Other sample rates are rejected (no resampling)."""
    rate, data = wavfile.read(str(path))
    if rate != expected_rate:
        raise ParameterError(f"{path}: sample rate {rate} Hz, expected {expected_rate} Hz")
    if data.ndim != 1:
        raise ParameterError(f"{path}: expected mono, got {data.shape[1]} channels")
    if data.dtype != np.int16:
        raise ParameterError(f"{path}: expected 16-bit PCM, got {data.dtype}")
    return Waveform(data.astype(np.float64) / 32768.0, rate)


def write_wav(path, wav: Waveform) -> None:
    pcm = np.clip(np.round(wav.samples * 32768.0), -32768, 32767).astype(np.int16)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    wavfile.write(str(path), int(wav.sample_rate), pcm)
