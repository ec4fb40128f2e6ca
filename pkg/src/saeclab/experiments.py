"""Desk-scale dataset recipe and algorithm runners shared by the CLI and the test suite."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .baselines import NlmsState, WienerParams, nlms_cancel, wiener_suppress
from .corpus import NoiseSource, UtteranceSource
from .dsp import FrameParams, Waveform, istft, stft
from .metrics import MetricsReport, erle, estoi
from .room import PAPER_ROOMS, PAPER_T60S, PAPER_TALKER_DISTANCES, make_stereo_rooms
from .scenario import (PAPER_SER_DB, PAPER_SNR_DB, MixtureBundle, MixtureScenario,
                       concat_utterances, make_mixture, single_talk_mask)

log = logging.getLogger(__name__)

ALGORITHMS = ("none", "nlms", "wiener", "neural", "neural-stage1")


@dataclass
class BundleSpec:
    """One point of the synthesis grid."""

    room_far: tuple
    room_near: tuple
    t60: float
    ser_db: float | None
    snr_db: float | None
    talker_distance: float
    noise: str
    seed: int
    mode: str = "double"


@dataclass
class DatasetRecipe:
    duration: float = 2.0
    utterances_per_far_end: int = 3
    near_fraction: tuple = (0.4, 0.7)
    sample_rate: int = 16000
    near_dir: str | None = None
    far_dir: str | None = None
    noise_dir: str | None = None
    mic_level_dbfs: float | None = -25.0  # RMS level of the mic signal; None keeps raw levels


def synth_bundle(spec: BundleSpec, recipe: DatasetRecipe | None = None) -> MixtureBundle:
    """Build one mixture bundle, deterministic in ``spec.seed``."""
    recipe = recipe or DatasetRecipe()
    fs = recipe.sample_rate
    n = int(recipe.duration * fs)
    rng = np.random.default_rng(spec.seed)
    seeds = rng.integers(0, 2 ** 31, size=8)
    per_utt = recipe.duration / recipe.utterances_per_far_end
    far_src = UtteranceSource(recipe.far_dir, fs, (0.9 * per_utt, 1.1 * per_utt))
    near_src = UtteranceSource(recipe.near_dir, fs,
                               tuple(f * recipe.duration for f in recipe.near_fraction))
    utts = [far_src.draw(int(seeds[i])) for i in range(recipe.utterances_per_far_end)]
    r = concat_utterances(utts, fs).samples
    r = np.pad(r, (0, max(0, n - len(r))))[:n]
    rooms = make_stereo_rooms(spec.room_far, spec.room_near, spec.t60, spec.t60,
                              spec.talker_distance, int(seeds[3]) % 100000, fs)
    if spec.mode == "single":
        near = Waveform(np.zeros(n), fs)
        ser = None
    else:
        near = near_src.draw(int(seeds[4]))
        if len(near) > n:
            near = Waveform(near.samples[:n], fs)
        ser = spec.ser_db
    noise = NoiseSource(recipe.noise_dir, spec.noise, fs).draw(n, int(seeds[5])) \
        if spec.snr_db is not None else None
    labels = {"noise": spec.noise, "mode": spec.mode, "t60": spec.t60,
              "room_far": list(spec.room_far), "room_near": list(spec.room_near),
              "talker_distance": spec.talker_distance}
    sc = MixtureScenario(Waveform(r, fs), near, noise, rooms.transmission, rooms.receiving,
                         ser, spec.snr_db, int(seeds[6]), labels)
    bundle = make_mixture(sc)
    if recipe.mic_level_dbfs is not None:
        rms = float(np.sqrt(np.mean(bundle.mic.samples ** 2)))
        if rms > 0:
            gain = 10 ** (recipe.mic_level_dbfs / 20) / rms
            bundle = bundle.scaled(gain)
            bundle.info["level_gain"] = gain
    bundle.info["requested_ser_db"] = spec.ser_db if spec.mode != "single" else None
    return bundle


def random_specs(count: int, seed: int, mode: str = "double", noises=("babble", "home"),
                 snrs=PAPER_SNR_DB, sers=PAPER_SER_DB, rooms=PAPER_ROOMS, t60s=PAPER_T60S):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        out.append(BundleSpec(
            room_far=tuple(rooms[rng.integers(len(rooms))]),
            room_near=tuple(rooms[rng.integers(len(rooms))]),
            t60=float(t60s[rng.integers(len(t60s))]),
            ser_db=float(sers[rng.integers(len(sers))]),
            snr_db=float(snrs[rng.integers(len(snrs))]),
            talker_distance=float(PAPER_TALKER_DISTANCES[rng.integers(3)]),
            noise=noises[rng.integers(len(noises))],
            seed=int(rng.integers(0, 2 ** 31)),
            mode=mode))
    return out


def run_algorithm(algo: str, bundle: MixtureBundle, model=None, nlms: NlmsState | None = None,
                  wiener: WienerParams | None = None,
                  frame_params: FrameParams | None = None) -> Waveform:
    """Near-end estimate of ``bundle`` for one of :data:`ALGORITHMS`."""
    p = frame_params or FrameParams()
    fs = bundle.sample_rate
    if algo == "none":
        return Waveform(bundle.mic.samples.copy(), fs)
    if algo == "nlms":
        e, _ = nlms_cancel(bundle.mic, bundle.far1, bundle.far2, nlms or NlmsState())
        return e
    if algo == "wiener":
        Y = stft(bundle.mic, p)
        out = wiener_suppress(Y, stft(bundle.far1, p), stft(bundle.far2, p), wiener)
        return istft(out, fs, len(bundle.mic))
    if algo in ("neural", "neural-stage1"):
        from .neural import enhance
        if model is None:
            raise ValueError(f"algorithm {algo!r} needs a model")
        return enhance(model, bundle.mic, bundle.far1, bundle.far2,
                       stage=1 if algo == "neural-stage1" else 2, frame_params=p)
    raise ValueError(f"unknown algorithm {algo!r}; choose from {ALGORITHMS}")


def evaluate(bundle: MixtureBundle, enhanced: Waveform, algo: str, ident: str = "") -> MetricsReport:
    """ERLE on single-talk samples (far-end active, near-end silent); ESTOI when near-end speech exists."""
    info = bundle.info
    report = MetricsReport(ident, algo, info.get("mode", ""), info.get("noise", ""),
                           info.get("snr_db"), info.get("ser_db"))
    near = bundle.near.samples
    mask = single_talk_mask(bundle.echo.samples, near)
    if info.get("mode") == "single" and np.any(mask):
        report.erle_db, report.erle_clamped = erle(bundle.mic, enhanced, mask, return_flag=True)
    if np.any(near):
        report.estoi = estoi(near, enhanced.samples, bundle.sample_rate)
    return report


@dataclass
class TrendResult:
    estoi: dict = field(default_factory=dict)
    erle: dict = field(default_factory=dict)
    reports: list = field(default_factory=list)


def trend_table(test_double, test_single, runners: dict) -> TrendResult:
    """Mean ESTOI over double-talk bundles and mean ERLE over single-talk bundles per runner."""
    res = TrendResult()
    for name, fn in runners.items():
        e_vals = []
        r_vals = []
        for i, b in enumerate(test_double):
            rep = evaluate(b, fn(b), name, f"dt{i}")
            res.reports.append(rep)
            e_vals.append(rep.estoi)
        for i, b in enumerate(test_single):
            rep = evaluate(b, fn(b), name, f"st{i}")
            res.reports.append(rep)
            r_vals.append(rep.erle_db)
        res.estoi[name] = float(np.mean(e_vals)) if e_vals else float("nan")
        res.erle[name] = float(np.mean(r_vals)) if r_vals else float("nan")
    return res
