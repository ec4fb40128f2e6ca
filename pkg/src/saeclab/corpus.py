"""Utterance sources: WAV folders supplied by the user, or synthetic speech-like signals.

No corpus ships with the package.  The synthetic generator produces voiced
harmonic segments shaped by formant resonators, noisy fricative bursts and
pauses, which is enough structure for desk-scale experiments and tests.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .dsp import DEFAULT_SAMPLE_RATE, ParameterError, Waveform, read_wav

_VOWEL_FORMANTS = (
    (730, 1090, 2440), (270, 2290, 3010), (300, 870, 2240),
    (530, 1840, 2480), (660, 1720, 2410), (490, 1350, 1690),
)


def _resonator(x, freq, bw, fs):
    r = np.exp(-np.pi * bw / fs)
    theta = 2 * np.pi * freq / fs
    a = [1.0, -2 * r * np.cos(theta), r * r]
    return lfilter([1 - r], a, x)


def synthetic_utterance(duration: float, seed: int, sample_rate: int = DEFAULT_SAMPLE_RATE,
                        f0_range=(90.0, 240.0)) -> Waveform:
    """Speech-like signal: syllables of voiced harmonics plus fricatives, with pauses."""
    rng = np.random.default_rng(seed)
    n_total = int(duration * sample_rate)
    out = np.zeros(n_total)
    pos = int(rng.uniform(0.0, 0.15) * sample_rate)
    base_f0 = rng.uniform(*f0_range)
    while pos < n_total:
        syl = int(rng.uniform(0.12, 0.3) * sample_rate)
        seg_len = min(syl, n_total - pos)
        if seg_len <= 16:
            break
        t = np.arange(seg_len) / sample_rate
        if rng.random() < 0.8:
            f0 = base_f0 * (1 + 0.15 * rng.standard_normal()) * (1 + 0.1 * np.sin(2 * np.pi * rng.uniform(1, 4) * t))
            phase = 2 * np.pi * np.cumsum(f0) / sample_rate
            n_harm = int(min(40, (sample_rate / 2 - 200) / f0.max()))
            src = sum(np.sin(h * phase) / h for h in range(1, n_harm + 1))
            formants = _VOWEL_FORMANTS[rng.integers(len(_VOWEL_FORMANTS))]
            seg = sum(_resonator(src, f, 80 + 0.05 * f, sample_rate) * g
                      for f, g in zip(formants, (1.0, 0.6, 0.3)))
        else:
            noise = rng.standard_normal(seg_len)
            seg = _resonator(noise, rng.uniform(2500, 6000), 1500, sample_rate)
        env = np.sin(np.pi * np.arange(seg_len) / seg_len) ** 2
        seg = seg * env
        seg /= np.sqrt(np.mean(seg ** 2)) + 1e-12
        out[pos:pos + seg_len] += seg * rng.uniform(0.5, 1.0)
        pos += seg_len
        if rng.random() < 0.3:
            pos += int(rng.uniform(0.05, 0.3) * sample_rate)
    peak = np.max(np.abs(out))
    if peak > 0:
        out *= 0.5 / peak
    return Waveform(out, sample_rate)


def synthetic_noise(kind: str, duration: float, seed: int,
                    sample_rate: int = DEFAULT_SAMPLE_RATE) -> Waveform:
    """Non-stationary background noise.

    ``babble`` overlays several synthetic talkers; ``home`` is low-passed noise
    with slow level fluctuation and sporadic clatter; ``white`` is Gaussian.
    """
    rng = np.random.default_rng(seed)
    n = int(duration * sample_rate)
    if kind == "white":
        x = rng.standard_normal(n)
    elif kind == "babble":
        x = sum(synthetic_utterance(duration, int(rng.integers(1 << 30)), sample_rate).samples
                for _ in range(6))
    elif kind == "home":
        base = lfilter([1.0], [1.0, -0.95], rng.standard_normal(n))
        t = np.arange(n) / sample_rate
        level = 1 + 0.5 * np.sin(2 * np.pi * rng.uniform(0.1, 0.5) * t + rng.uniform(0, 2 * np.pi))
        x = base / np.std(base) * level
        for _ in range(max(1, int(duration * 2))):
            start = int(rng.integers(0, max(1, n - 800)))
            burst = rng.standard_normal(800) * np.exp(-np.arange(800) / 120) * 4
            x[start:start + 800] += burst[: n - start]
    else:
        raise ParameterError(f"unknown noise kind {kind!r}")
    x = np.asarray(x, dtype=float)
    return Waveform(x / (np.max(np.abs(x)) + 1e-12) * 0.5, sample_rate)


class UtteranceSource:
    """Draws utterances from a WAV folder, or synthesises them when ``folder`` is None."""

    def __init__(self, folder=None, sample_rate: int = DEFAULT_SAMPLE_RATE,
                 duration_range=(1.0, 2.0)):
        self.sample_rate = sample_rate
        self.duration_range = duration_range
        self.files = []
        if folder is not None:
            folder = Path(folder)
            if not folder.is_dir():
                raise FileNotFoundError(f"corpus folder {folder} does not exist")
            self.files = sorted(folder.rglob("*.wav"))
            if not self.files:
                raise FileNotFoundError(f"corpus folder {folder} contains no .wav files")

    def draw(self, seed: int) -> Waveform:
        rng = np.random.default_rng(seed)
        if self.files:
            return read_wav(self.files[rng.integers(len(self.files))], self.sample_rate)
        duration = rng.uniform(*self.duration_range)
        return synthetic_utterance(duration, int(rng.integers(1 << 30)), self.sample_rate)


class NoiseSource:
    def __init__(self, folder=None, kind: str = "babble", sample_rate: int = DEFAULT_SAMPLE_RATE):
        self.kind = kind
        self.sample_rate = sample_rate
        self.files = []
        if folder is not None:
            folder = Path(folder)
            if not folder.is_dir():
                raise FileNotFoundError(f"noise folder {folder} does not exist")
            self.files = sorted(folder.rglob("*.wav"))
            if not self.files:
                raise FileNotFoundError(f"noise folder {folder} contains no .wav files")

    def draw(self, n_samples: int, seed: int) -> Waveform:
        rng = np.random.default_rng(seed)
        if not self.files:
            return synthetic_noise(self.kind, n_samples / self.sample_rate,
                                   int(rng.integers(1 << 30)), self.sample_rate)
        x = read_wav(self.files[rng.integers(len(self.files))], self.sample_rate).samples
        reps = int(np.ceil(n_samples / max(len(x), 1)))
        x = np.tile(x, reps)
        start = int(rng.integers(0, len(x) - n_samples + 1))
        return Waveform(x[start:start + n_samples], self.sample_rate)
