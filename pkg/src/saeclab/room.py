"""Shoebox room impulse responses via the image-source method.

Walls share one reflection coefficient derived from the requested T60.
Image delays are rounded to the nearest sample.
"""

from __future__ import annotations

import functools
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import fftconvolve

from .dsp import DEFAULT_SAMPLE_RATE, ParameterError, Waveform, read_wav, write_wav

SPEED_OF_SOUND = 343.0

PAPER_ROOMS = ((4.0, 3.0, 3.0), (6.0, 4.0, 3.0), (8.0, 7.0, 3.0))
PAPER_T60S = (0.3, 0.6, 0.9)
PAPER_TALKER_DISTANCES = (0.3, 0.7, 1.1)
LOUDSPEAKER_SPACING = 2.0
MIC_SPACING = 0.4
ARRAY_HEIGHT = 1.5
LOUDSPEAKER_OFFSET = 1.0
MAX_RIR_SECONDS = 1.0


@dataclass
class RoomScenario:
    room_dims: tuple
    t60: float
    source_pos: list
    mic_pos: list
    rir_len: int | None = None
    sample_rate: int = DEFAULT_SAMPLE_RATE
    speed_of_sound: float = SPEED_OF_SOUND
    absorption: float | None = None  # overrides the T60 inversion when set
    absorption_method: str = "calibrated"  # or "sabine"

    def __post_init__(self):
        self.room_dims = tuple(float(v) for v in self.room_dims)
        self.source_pos = [tuple(float(v) for v in p) for p in self.source_pos]
        self.mic_pos = [tuple(float(v) for v in p) for p in self.mic_pos]
        if len(self.room_dims) != 3 or min(self.room_dims) <= 0:
            raise ParameterError(f"room_dims must be three positive lengths, got {self.room_dims}")
        if self.t60 <= 0:
            raise ParameterError(f"t60 must be positive, got {self.t60}")
        for p in self.source_pos + self.mic_pos:
            if len(p) != 3 or not all(0 < c < d for c, d in zip(p, self.room_dims)):
                raise ParameterError(f"position {p} is not strictly inside room {self.room_dims}")
        if self.rir_len is None:
            self.rir_len = int(round(min(self.t60, MAX_RIR_SECONDS) * self.sample_rate))
        if self.rir_len <= 0:
            raise ParameterError(f"rir_len must be positive, got {self.rir_len}")
        if self.absorption_method not in ("calibrated", "sabine"):
            raise ParameterError(f"unknown absorption_method {self.absorption_method!r}")

    @property
    def volume(self) -> float:
        lx, ly, lz = self.room_dims
        return lx * ly * lz

    @property
    def surface(self) -> float:
        lx, ly, lz = self.room_dims
        return 2 * (lx * ly + lx * lz + ly * lz)

    def wall_absorption(self) -> float:
        """Uniform absorption coefficient from Sabine's formula (or the override)."""
        if self.absorption is not None:
            if not 0 <= self.absorption <= 1:
                raise ParameterError(f"absorption override must be in [0, 1], got {self.absorption}")
            return self.absorption
        sabine = 24 * math.log(10) / self.speed_of_sound
        alpha = sabine * self.volume / (self.surface * self.t60)
        if alpha > 1:
            raise ParameterError(
                f"T60={self.t60} s needs absorption {alpha:.3f} > 1 in a "
                f"{self.room_dims} room (Sabine: T60 >= {sabine * self.volume / self.surface:.3f} s)")
        return alpha

    def to_dict(self):
        return asdict(self)


@dataclass
class RirSet:
    rirs: list  # [num_sources][num_mics] of Waveform
    scenario: RoomScenario
    seed: int = 0

    def __getitem__(self, idx):
        src, mic = idx
        return self.rirs[src][mic]

    @property
    def shape(self):
        return len(self.rirs), len(self.rirs[0]) if self.rirs else 0

    def save(self, directory) -> None:
        """One WAV per source/mic pair plus ``manifest.json``.

        The WAVs are peak-normalised 16-bit PCM; the float scale lives in the manifest.
        """
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        entries = []
        for s, row in enumerate(self.rirs):
            for m, h in enumerate(row):
                name = f"rir_s{s}_m{m}.wav"
                peak = float(np.max(np.abs(h.samples))) or 1.0
                write_wav(directory / name, Waveform(h.samples / peak * 0.99, h.sample_rate))
                entries.append({"source": s, "mic": m, "file": name, "scale": peak / 0.99})
        manifest = {"scenario": self.scenario.to_dict(), "seed": self.seed, "rirs": entries}
        (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))

    @classmethod
    def load(cls, directory) -> "RirSet":
        directory = Path(directory)
        manifest = json.loads((directory / "manifest.json").read_text())
        scenario = RoomScenario(**manifest["scenario"])
        n_src, n_mic = len(scenario.source_pos), len(scenario.mic_pos)
        rirs = [[None] * n_mic for _ in range(n_src)]
        for e in manifest["rirs"]:
            w = read_wav(directory / e["file"], scenario.sample_rate)
            rirs[e["source"]][e["mic"]] = Waveform(w.samples * e["scale"], w.sample_rate)
        return cls(rirs, scenario, manifest["seed"])


def _image_rir(room, src, mic, beta, n_samples, fs, c):
    """Allen-Berkley image sum for a single source/mic pair with uniform beta."""
    room = np.asarray(room)
    src = np.asarray(src)
    mic = np.asarray(mic)
    h = np.zeros(n_samples)
    max_dist = n_samples * c / fs
    n_max = [int(math.ceil(max_dist / (2 * L))) + 1 for L in room]
    ranges = [np.arange(-n, n + 1) for n in n_max]
    ny, nz = np.meshgrid(ranges[1], ranges[2], indexing="ij")
    ny, nz = ny.ravel(), nz.ravel()
    for px in (0, 1):
        for py in (0, 1):
            for pz in (0, 1):
                for nx in ranges[0]:
                    dx = (1 - 2 * px) * src[0] + 2 * nx * room[0] - mic[0]
                    dy = (1 - 2 * py) * src[1] + 2 * ny * room[1] - mic[1]
                    dz = (1 - 2 * pz) * src[2] + 2 * nz * room[2] - mic[2]
                    dist = np.sqrt(dx * dx + dy * dy + dz * dz)
                    delay = np.rint(dist * fs / c).astype(np.int64)
                    keep = delay < n_samples
                    if not np.any(keep):
                        continue
                    order = (abs(nx - px) + abs(nx) + np.abs(ny - py) + np.abs(ny)
                             + np.abs(nz - pz) + np.abs(nz))[keep]
                    if beta == 0.0:
                        gain = (order == 0).astype(float)
                    else:
                        gain = beta ** order
                    np.add.at(h, delay[keep], gain / (4 * np.pi * dist[keep]))
    return h


def calibrate_absorption(scenario: RoomScenario, tol: float = 0.02, max_iter: int = 8) -> float:
    """Absorption whose image-method RIR decays with the requested T60.

    Starts from the Sabine value.  A shoebox image sum decays more slowly than
    Sabine predicts (grazing image paths hit few walls), so the value is
    refined with T60 ~ 1/-ln(1 - alpha) on a reference source/mic pair.
    The result depends only on room size, T60 and sample rate, and is cached.
    """
    alpha = scenario.wall_absorption()
    if scenario.absorption is not None or alpha >= 1.0:
        return alpha
    return _calibrated_alpha(scenario.room_dims, float(scenario.t60), int(scenario.sample_rate),
                             float(scenario.speed_of_sound), alpha, tol, max_iter)


@functools.lru_cache(maxsize=256)
def _calibrated_alpha(room_dims, t60, fs, c, alpha, tol, max_iter):
    room = np.asarray(room_dims)
    mic = room / 2
    src = room * np.array([0.3, 0.35, 0.45])
    # long enough for the -25 dB point even when the first guess decays slowly
    n = int(1.5 * t60 * fs)
    for _ in range(max_iter):
        h = _image_rir(room_dims, src, mic, math.sqrt(1.0 - alpha), n, fs, c)
        est = estimate_t60(h, fs)
        if abs(est / t60 - 1) < tol:
            break
        rate = -math.log(1.0 - alpha) * est / t60
        alpha = min(1.0 - math.exp(-rate), 1.0 - 1e-9)
    return alpha


def simulate_rir(scenario: RoomScenario, seed: int = 0) -> RirSet:
    """Image-method RIRs for every source/mic pair of ``scenario``.

    The image sum itself is deterministic; ``seed`` is carried along so the
    set can be traced back to the placement draw that produced it.
    """
    if scenario.absorption_method == "calibrated":
        alpha = calibrate_absorption(scenario)
    else:
        alpha = scenario.wall_absorption()
    beta = math.sqrt(1.0 - alpha)
    rirs = [[Waveform(_image_rir(scenario.room_dims, s, m, beta, scenario.rir_len,
                                 scenario.sample_rate, scenario.speed_of_sound),
                      scenario.sample_rate)
             for m in scenario.mic_pos]
            for s in scenario.source_pos]
    return RirSet(rirs, scenario, seed)


def convolve(x: Waveform | np.ndarray, h: Waveform | np.ndarray) -> Waveform:
    """Linear convolution truncated to ``len(x)`` so the output shares x's timeline."""
    xs = x.samples if isinstance(x, Waveform) else np.asarray(x, float)
    hs = h.samples if isinstance(h, Waveform) else np.asarray(h, float)
    fs = x.sample_rate if isinstance(x, Waveform) else DEFAULT_SAMPLE_RATE
    if len(xs) == 0 or len(hs) == 0:
        return Waveform(np.zeros(len(xs)), fs)
    if len(hs) < 64 or len(xs) < 64:
        y = np.convolve(xs, hs)
    else:
        y = fftconvolve(xs, hs)
    return Waveform(y[: len(xs)], fs)


def schroeder_curve(h: np.ndarray) -> np.ndarray:
    """Backward-integrated energy decay curve in dB (0 dB at t=0)."""
    energy = np.cumsum((np.asarray(h, float) ** 2)[::-1])[::-1]
    with np.errstate(divide="ignore"):
        return 10 * np.log10(energy / energy[0])


def estimate_t60(h: Waveform | np.ndarray, sample_rate: int | None = None,
                 fit_range=(-5.0, -25.0)) -> float:
    """T60 from a linear fit to the Schroeder curve between -5 and -25 dB."""
    hs = h.samples if isinstance(h, Waveform) else np.asarray(h, float)
    fs = sample_rate or (h.sample_rate if isinstance(h, Waveform) else DEFAULT_SAMPLE_RATE)
    if not np.any(hs):
        raise ParameterError("estimate_t60: impulse response is all zeros")
    edc = schroeder_curve(hs)
    hi, lo = fit_range
    finite = np.isfinite(edc)
    seg = np.nonzero(finite & (edc <= hi) & (edc >= lo))[0]
    if not np.any(finite & (edc < lo)) and not np.any(~finite):
        raise ParameterError(f"estimate_t60: decay never reaches {lo} dB")
    if seg.size < 3 or edc[finite].min() > lo:
        raise ParameterError(
            f"estimate_t60: less than {hi - lo:.0f} dB of usable decay "
            f"(minimum finite level {edc[finite].min():.1f} dB)")
    t = seg / fs
    slope, _ = np.polyfit(t, edc[seg], 1)
    if slope >= 0:
        raise ParameterError("estimate_t60: non-decaying energy curve")
    return -60.0 / slope


def paper_positions(room_dims, talker_distance: float, seed: int):
    """Placement convention used for both rooms.

    Returns ``(talker, loudspeakers, mics)``: a mic pair 0.4 m apart centred in
    the room at 1.5 m height, two loudspeakers 2.0 m apart centred 1.0 m in
    front of the array, and a talker at ``talker_distance`` from the array
    centre in a seed-drawn horizontal direction.
    """
    rng = np.random.default_rng(seed)
    cx, cy = room_dims[0] / 2, room_dims[1] / 2
    mics = [(cx - MIC_SPACING / 2, cy, ARRAY_HEIGHT), (cx + MIC_SPACING / 2, cy, ARRAY_HEIGHT)]
    ly = cy + LOUDSPEAKER_OFFSET
    speakers = [(cx - LOUDSPEAKER_SPACING / 2, ly, ARRAY_HEIGHT),
                (cx + LOUDSPEAKER_SPACING / 2, ly, ARRAY_HEIGHT)]
    # keep the talker off the mic axis so it never sits on a microphone
    angle = rng.uniform(0.25 * np.pi, 0.75 * np.pi) * rng.choice([-1, 1])
    talker = (cx + talker_distance * np.cos(angle), cy + talker_distance * np.sin(angle),
              ARRAY_HEIGHT)
    return talker, speakers, mics


@dataclass
class StereoRooms:
    """Transmission room (talker -> two mics) and receiving room (two loudspeakers -> mic)."""

    transmission: RirSet
    receiving: RirSet
    info: dict = field(default_factory=dict)


def make_stereo_rooms(room_far, room_near, t60_far, t60_near, talker_distance, seed,
                      sample_rate=DEFAULT_SAMPLE_RATE, rir_len=None) -> StereoRooms:
    talker, _, far_mics = paper_positions(room_far, talker_distance, seed)
    _, speakers, near_mics = paper_positions(room_near, talker_distance, seed + 1)
    trans = simulate_rir(RoomScenario(room_far, t60_far, [talker], far_mics, rir_len,
                                      sample_rate), seed)
    recv = simulate_rir(RoomScenario(room_near, t60_near, speakers, near_mics[:1], rir_len,
                                     sample_rate), seed + 1)
    info = {"room_far": list(room_far), "room_near": list(room_near), "t60_far": t60_far,
            "t60_near": t60_near, "talker_distance": talker_distance}
    return StereoRooms(trans, recv, info)
