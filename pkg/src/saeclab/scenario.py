"""Microphone mixtures y = x1*h11 + x2*h12 + s + v at prescribed SER and SNR."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dsp import DEFAULT_SAMPLE_RATE, ParameterError, Waveform, read_wav, write_wav
from .room import RirSet, convolve

PAPER_SER_DB = (0.0, 5.0, 10.0, 15.0)
PAPER_SNR_DB = (10.0, 15.0, 20.0, 25.0, 30.0)
ACTIVITY_FRAME = 320
ACTIVITY_RANGE_DB = 40.0


class ScalingError(ParameterError):
    """A reference signal needed for SER/SNR scaling carries no energy."""


def activity_mask(x: np.ndarray, frame: int = ACTIVITY_FRAME,
                  range_db: float = ACTIVITY_RANGE_DB) -> np.ndarray:
    """Per-sample mask of frames whose power is within ``range_db`` of the loudest frame."""
    x = np.asarray(x, float)
    n_frames = int(np.ceil(len(x) / frame))
    if n_frames == 0:
        return np.zeros(0, bool)
    padded = np.zeros(n_frames * frame)
    padded[: len(x)] = x
    power = np.mean(padded.reshape(n_frames, frame) ** 2, axis=1)
    peak = power.max()
    if peak <= 0:
        return np.zeros(len(x), bool)
    active = power > peak * 10 ** (-range_db / 10)
    return np.repeat(active, frame)[: len(x)]


def single_talk_mask(far: np.ndarray, near: np.ndarray) -> np.ndarray:
    """Samples where the far-end (or echo) is active and the near-end is silent."""
    near = np.asarray(near, float)
    near_active = activity_mask(near) if np.any(near) else np.zeros(len(near), bool)
    return activity_mask(far) & ~near_active


def _power(x, mask=None):
    x = np.asarray(x, float)
    if mask is not None:
        x = x[mask]
    return float(np.mean(x ** 2)) if x.size else 0.0


def make_far_end(r: Waveform, g1: Waveform, g2: Waveform):
    """Two far-end channels from one talker through the transmission-room RIRs."""
    return convolve(r, g1), convolve(r, g2)


def pad_near_end(s: Waveform, target_len: int, seed: int) -> Waveform:
    """Zero-pad front and rear to ``target_len`` with a seed-drawn split."""
    n = len(s)
    if target_len < n:
        raise ParameterError(f"target length {target_len} shorter than near-end ({n})")
    extra = target_len - n
    front = int(np.random.default_rng(seed).integers(0, extra + 1)) if extra else 0
    out = np.zeros(target_len)
    out[front:front + n] = s.samples
    return Waveform(out, s.sample_rate)


def concat_utterances(utts, sample_rate: int = DEFAULT_SAMPLE_RATE) -> Waveform:
    return Waveform(np.concatenate([u.samples for u in utts]), sample_rate)


@dataclass
class MixtureScenario:
    far_end_source: Waveform
    near_end: Waveform
    noise: Waveform | None
    transmission_rirs: RirSet
    receiving_rirs: RirSet
    ser_db: float | None = 5.0  # None: keep near-end unscaled (single-talk)
    snr_db: float | None = 20.0  # None: no noise
    seed: int = 0
    labels: dict = field(default_factory=dict)


@dataclass
class MixtureBundle:
    mic: Waveform
    far1: Waveform
    far2: Waveform
    echo: Waveform
    near: Waveform
    noise_scaled: Waveform
    info: dict = field(default_factory=dict)

    FILES = ("mic", "far1", "far2", "echo", "near", "noise")

    @property
    def sample_rate(self):
        return self.mic.sample_rate

    def _signals(self):
        return dict(zip(self.FILES, (self.mic, self.far1, self.far2, self.echo, self.near,
                                     self.noise_scaled)))

    def scaled(self, gain: float) -> "MixtureBundle":
        """Every signal times one common gain; the mixture sum, SER and SNR are unchanged."""
        sigs = [Waveform(w.samples * gain, w.sample_rate) for w in self._signals().values()]
        return MixtureBundle(*sigs, info=dict(self.info))

    def save(self, directory) -> None:
        """Float WAVs are written as 16-bit PCM after one shared gain so Eq. 1 survives quantisation
        up to rounding; the gain is recorded in the manifest."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        sigs = self._signals()
        peak = max(float(np.max(np.abs(w.samples))) if len(w) else 0.0 for w in sigs.values())
        gain = 0.9 / peak if peak > 0.9 else 1.0
        for name, w in sigs.items():
            write_wav(directory / f"{name}.wav", Waveform(w.samples * gain, w.sample_rate))
        manifest = dict(self.info)
        manifest["gain"] = gain
        (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))

    @classmethod
    def load(cls, directory) -> "MixtureBundle":
        directory = Path(directory)
        info = json.loads((directory / "manifest.json").read_text())
        sigs = [read_wav(directory / f"{n}.wav") for n in cls.FILES]
        return cls(*sigs, info=info)


def measure_ser(near, echo, mask=None) -> float:
    """10 log10(P_near / P_echo) over the near-end active region."""
    near = near.samples if isinstance(near, Waveform) else np.asarray(near)
    echo = echo.samples if isinstance(echo, Waveform) else np.asarray(echo)
    if mask is None:
        mask = activity_mask(near)
    return 10 * np.log10(_power(near, mask) / _power(echo, mask))


def measure_snr(near, echo, noise) -> float:
    """10 log10(P_{near+echo} / P_noise) over the whole utterance."""
    s = near.samples if isinstance(near, Waveform) else np.asarray(near)
    d = echo.samples if isinstance(echo, Waveform) else np.asarray(echo)
    v = noise.samples if isinstance(noise, Waveform) else np.asarray(noise)
    return 10 * np.log10(_power(s + d) / _power(v))


def make_mixture(sc: MixtureScenario) -> MixtureBundle:
    fs = sc.far_end_source.sample_rate
    r = sc.far_end_source
    n = len(r)
    g = sc.transmission_rirs
    h = sc.receiving_rirs
    x1, x2 = make_far_end(r, g[0, 0], g[0, 1])
    d = convolve(x1, h[0, 0]).samples + convolve(x2, h[1, 0]).samples

    near = sc.near_end.samples
    if len(near) != n:
        near = pad_near_end(sc.near_end, n, sc.seed).samples
    info = {"ser_db": sc.ser_db, "snr_db": sc.snr_db, "seed": sc.seed, "n_samples": n,
            "sample_rate": fs}
    info.update(sc.labels)

    if sc.ser_db is not None:
        mask = activity_mask(near)
        p_s = _power(near, mask)
        p_d = _power(d, mask)
        if p_s == 0.0:
            raise ScalingError("near-end signal is silent; cannot scale to the requested SER")
        if p_d == 0.0:
            raise ScalingError("echo is silent over the near-end active region; SER undefined")
        near = near * np.sqrt(p_d / p_s * 10 ** (sc.ser_db / 10))
        info["measured_ser_db"] = measure_ser(near, d, mask)
    else:
        info["measured_ser_db"] = None

    if sc.snr_db is not None:
        if sc.noise is None or len(sc.noise) < n:
            raise ScalingError("noise missing or shorter than the mixture")
        v = sc.noise.samples[:n]
        p_v = _power(v)
        p_sd = _power(near + d)
        if p_v == 0.0:
            raise ScalingError("noise is silent; cannot scale to the requested SNR")
        if p_sd == 0.0:
            raise ScalingError("near-end plus echo is silent; SNR undefined")
        v = v * np.sqrt(p_sd / p_v / 10 ** (sc.snr_db / 10))
        info["measured_snr_db"] = measure_snr(near, d, v)
    else:
        v = np.zeros(n)
        info["measured_snr_db"] = None

    mic = d + near + v
    info["mode"] = "double" if np.any(near) else "single"
    return MixtureBundle(Waveform(mic, fs), x1, x2, Waveform(d, fs), Waveform(near, fs),
                         Waveform(v, fs), info)
