"""Echo return loss enhancement and extended short-time objective intelligibility."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.signal import resample_poly

from .dsp import ParameterError, Waveform

ERLE_CLAMP_DB = 100.0

# ESTOI analysis constants (10 kHz, 256-sample frames, 15 third-octave bands, 384 ms segments)
ESTOI_FS = 10000
ESTOI_FRAME = 256
ESTOI_NFFT = 512
ESTOI_BANDS = 15
ESTOI_MIN_FREQ = 150.0
ESTOI_SEGMENT = 30
ESTOI_DYN_RANGE = 40.0
_EPS = np.finfo(float).eps


def _arr(x):
    return x.samples if isinstance(x, Waveform) else np.asarray(x, dtype=float)


def erle(y, e, mask=None, return_flag: bool = False):
    """10 log10(mean(y^2) / mean(e^2)) over ``mask`` (all samples when None).

    Perfect cancellation is clamped to +100 dB; ``return_flag`` adds a bool
    telling whether the clamp fired.
    """
    y, e = _arr(y), _arr(e)
    if y.shape != e.shape:
        raise ParameterError(f"erle: length mismatch {y.shape} vs {e.shape}")
    if mask is not None:
        y, e = y[mask], e[mask]
    p_y = float(np.mean(y ** 2)) if y.size else 0.0
    p_e = float(np.mean(e ** 2)) if e.size else 0.0
    if p_y == 0.0:
        raise ParameterError("erle: microphone signal has zero energy on the evaluation segment")
    clamped = p_e == 0.0 or 10 * np.log10(p_y / p_e) > ERLE_CLAMP_DB
    value = ERLE_CLAMP_DB if clamped else 10 * np.log10(p_y / p_e)
    return (value, clamped) if return_flag else value


def _third_octave_matrix(fs, nfft, num_bands, min_freq):
    f = np.linspace(0, fs, nfft + 1)[: nfft // 2 + 1]
    k = np.arange(num_bands)
    cf = min_freq * 2.0 ** (k / 3)
    lo = min_freq * 2.0 ** ((2 * k - 1) / 6)
    hi = min_freq * 2.0 ** ((2 * k + 1) / 6)
    obm = np.zeros((num_bands, len(f)))
    for i in range(num_bands):
        a = int(np.argmin((f - lo[i]) ** 2))
        b = int(np.argmin((f - hi[i]) ** 2))
        obm[i, a:b] = 1.0
    return obm, cf


def _hann(n):
    # symmetric Hann without the zero end points
    return np.hanning(n + 2)[1:-1]


def _frames(x, frame, hop):
    n = (len(x) - frame) // hop + 1
    if n <= 0:
        return np.zeros((0, frame))
    idx = np.arange(frame)[None, :] + hop * np.arange(n)[:, None]
    return x[idx]


def _remove_silent_frames(x, y, dyn_range, frame, hop):
    w = _hann(frame)
    fx = _frames(x, frame, hop) * w
    fy = _frames(y, frame, hop) * w
    energy = 20 * np.log10(np.linalg.norm(fx, axis=1) + _EPS)
    keep = energy > energy.max() - dyn_range
    fx, fy = fx[keep], fy[keep]
    n = fx.shape[0]
    out_len = (n - 1) * hop + frame if n else 0
    xs = np.zeros(out_len)
    ys = np.zeros(out_len)
    for i in range(n):
        xs[i * hop:i * hop + frame] += fx[i]
        ys[i * hop:i * hop + frame] += fy[i]
    return xs, ys


def _band_envelopes(x):
    frames = _frames(x, ESTOI_FRAME, ESTOI_FRAME // 2) * _hann(ESTOI_FRAME)
    spec = np.fft.rfft(frames, n=ESTOI_NFFT, axis=1)
    obm, _ = _third_octave_matrix(ESTOI_FS, ESTOI_NFFT, ESTOI_BANDS, ESTOI_MIN_FREQ)
    return np.sqrt(obm @ (np.abs(spec) ** 2).T)  # [bands, frames]


def _row_col_normalize(seg):
    # seg: [n_seg, bands, N]; rows = bands (normalised over time), then columns
    seg = seg - seg.mean(axis=2, keepdims=True)
    seg = seg / (np.linalg.norm(seg, axis=2, keepdims=True) + _EPS)
    seg = seg - seg.mean(axis=1, keepdims=True)
    return seg / (np.linalg.norm(seg, axis=1, keepdims=True) + _EPS)


def estoi(reference, degraded, sample_rate: int = 16000) -> float:
    """Extended STOI of ``degraded`` against the clean ``reference``."""
    x, y = _arr(reference), _arr(degraded)
    if x.shape != y.shape:
        raise ParameterError(f"estoi: length mismatch {x.shape} vs {y.shape}")
    if sample_rate != ESTOI_FS:
        g = np.gcd(int(sample_rate), ESTOI_FS)
        x = resample_poly(x, ESTOI_FS // g, int(sample_rate) // g)
        y = resample_poly(y, ESTOI_FS // g, int(sample_rate) // g)
    min_len = (ESTOI_SEGMENT + 1) * ESTOI_FRAME // 2
    if len(x) < min_len:
        raise ParameterError(f"estoi: signal shorter than one {ESTOI_SEGMENT}-frame segment")
    if not np.any(x):
        raise ParameterError("estoi: reference is silent")
    x, y = _remove_silent_frames(x, y, ESTOI_DYN_RANGE, ESTOI_FRAME, ESTOI_FRAME // 2)
    x_tob = _band_envelopes(x)
    y_tob = _band_envelopes(y)
    n_frames = x_tob.shape[1]
    if n_frames < ESTOI_SEGMENT:
        raise ParameterError(f"estoi: only {n_frames} active frames, need {ESTOI_SEGMENT}")
    idx = np.arange(ESTOI_SEGMENT)[None, :] + np.arange(n_frames - ESTOI_SEGMENT + 1)[:, None]
    xs = x_tob[:, idx].transpose(1, 0, 2)
    ys = y_tob[:, idx].transpose(1, 0, 2)
    xn = _row_col_normalize(xs)
    yn = _row_col_normalize(ys)
    return float(np.sum(xn * yn / ESTOI_SEGMENT) / xn.shape[0])


@dataclass
class MetricsReport:
    id: str
    algo: str
    mode: str
    noise: str = ""
    snr_db: float | None = None
    ser_db: float | None = None
    erle_db: float | None = None
    erle_clamped: bool = False
    estoi: float | None = None
    extra: dict = field(default_factory=dict)

    CSV_FIELDS = ("id", "mode", "noise", "snr_db", "ser_db", "algo", "erle_db", "estoi",
                  "erle_clamped")

    def row(self):
        d = asdict(self)
        return {k: ("" if d[k] is None else d[k]) for k in self.CSV_FIELDS}
