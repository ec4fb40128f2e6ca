"""Acceptance criteria, one test per criterion.

Each test prints a single ``PASS``/``FAIL`` line (collected again in the pytest
terminal summary).  Run standalone with ``python tests/test_acceptance.py``.
"""

import time

import numpy as np
import pytest

from gradcheck import EPS, check_layer, check_model, rel_err, tiny_model
from saeclab.baselines import NlmsState, misalignment_db, nlms_cancel
from saeclab.corpus import synthetic_noise, synthetic_utterance
from saeclab.dsp import ComplexSpectrogram, istft, stft
from saeclab.experiments import random_specs, run_algorithm, synth_bundle, trend_table
from saeclab.metrics import erle, estoi
from saeclab.multiframe import MultiFrameFilterBank, estimate_echo, ls_oracle_filter
from saeclab.neural import (GRU, Conv2d, ConvTranspose2d, SaesModel, Schedule, enhance,
                            loss_stage1, loss_stage2, make_config, train_two_stage)
from saeclab.room import (PAPER_ROOMS, PAPER_T60S, RoomScenario, estimate_t60, paper_positions,
                          simulate_rir)
from saeclab.scenario import single_talk_mask

FS = 16000
RESULTS = []


def report(number, title, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number} ({title}): {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


def test_criterion_1_stft_round_trip():
    rng = np.random.default_rng(100)
    worst_err, worst_time = 0.0, 0.0
    for _ in range(10):
        x = rng.uniform(-1, 1, FS)
        t0 = time.perf_counter()
        y = istft(stft(x)).samples
        worst_time = max(worst_time, time.perf_counter() - t0)
        worst_err = max(worst_err, float(np.max(np.abs(y[320:-320] - x[320:-320]))))
    report(1, "STFT round trip", worst_err < 1e-6 and worst_time < 1.0,
           f"max interior error {worst_err:.2e} (< 1e-6), slowest round trip {worst_time:.3f} s (< 1 s)")


def _complex_oracle(h11, h12, X1, X2):
    L, T, F = h11.shape
    out = np.zeros((T, F), complex)
    for l in range(T):
        for k in range(F):
            for q in range(L):
                if l - q >= 0:
                    out[l, k] += h11[q, l, k] * X1[l - q, k] + h12[q, l, k] * X2[l - q, k]
    return out


def test_criterion_2_multiframe_oracle():
    rng = np.random.default_rng(200)
    worst = 0.0
    for _ in range(100):
        L, T, F = int(rng.integers(1, 6)), int(rng.integers(1, 17)), int(rng.integers(1, 9))
        c = lambda *s: rng.standard_normal(s) + 1j * rng.standard_normal(s)
        h11, h12, X1, X2 = c(L, T, F), c(L, T, F), c(T, F), c(T, F)
        bank = MultiFrameFilterBank.from_complex(h11, h12)
        D = estimate_echo(bank, ComplexSpectrogram(X1), ComplexSpectrogram(X2)).data
        worst = max(worst, float(np.max(np.abs(D - _complex_oracle(h11, h12, X1, X2)), initial=0.0)))
    report(2, "multi-frame oracle", worst <= 1e-12, f"100 instances, max abs deviation {worst:.2e} (<= 1e-12)")


def test_criterion_3_ctf_capacity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(300)
    room = PAPER_ROOMS[1]
    _, speakers, mics = paper_positions(room, 0.7, 0)
    rirs = simulate_rir(RoomScenario(room, 0.3, speakers, mics[:1], rir_len=400))
    h1, h2 = rirs[0, 0].samples, rirs[1, 0].samples
    n = 4 * FS
    x1, x2 = rng.standard_normal((2, n))
    d = np.convolve(x1, h1)[:n] + np.convolve(x2, h2)[:n]
    X1, X2, D = stft(x1), stft(x2), stft(d)
    fit = ls_oracle_filter(X1, X2, D, 10)
    resid = istft(D.like(D.data - estimate_echo(fit.bank, X1, X2).data), FS, n).samples
    value = 10 * np.log10(np.sum(d ** 2) / np.sum(resid ** 2))
    elapsed = time.perf_counter() - t0
    report(3, "CTF capacity", value >= 20 and elapsed < 30,
           f"residual ERLE {value:.2f} dB (>= 20 dB), {elapsed:.1f} s (< 30 s)")


def _loss_grad_errors(rng):
    a, b = rng.random((4, 5)), rng.random((4, 5))
    _, g = loss_stage1(a, b)
    worst = 0.0
    for idx in np.ndindex(2, 2):
        ap, am = a.copy(), a.copy()
        ap[idx] += EPS
        am[idx] -= EPS
        num = (loss_stage1(ap, b)[0] - loss_stage1(am, b)[0]) / (2 * EPS)
        worst = max(worst, rel_err(num, g[idx]))
    s = rng.standard_normal((4, 5)) + 1j * rng.standard_normal((4, 5))
    r = rng.standard_normal((4, 5)) + 1j * rng.standard_normal((4, 5))
    _, g = loss_stage2(s, r, 0.3)
    for idx in np.ndindex(2, 2):
        for unit, part in ((1.0, g.real), (1j, g.imag)):
            num = (loss_stage2(s + EPS * unit * _onehot(s.shape, idx), r, 0.3)[0]
                   - loss_stage2(s - EPS * unit * _onehot(s.shape, idx), r, 0.3)[0]) / (2 * EPS)
            worst = max(worst, rel_err(num, part[idx]))
    return worst


def _onehot(shape, idx):
    e = np.zeros(shape)
    e[idx] = 1.0
    return e


def test_criterion_4_gradient_integrity():
    instances = 20
    worst = {"conv": 0.0, "tconv": 0.0, "gru": 0.0, "mask head": 0.0, "residual heads": 0.0, "losses": 0.0}
    for i in range(instances):
        rng = np.random.default_rng(400 + i)
        ci, co = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        kt = int(rng.integers(1, 4))
        worst["conv"] = max(worst["conv"], check_layer(
            Conv2d(ci, co, (kt, 3), (1, 2), rng), rng.standard_normal((ci, 4, int(rng.integers(5, 12)))), rng))
        worst["tconv"] = max(worst["tconv"], check_layer(
            ConvTranspose2d(ci, co, (kt, 3), (1, 2), int(rng.integers(0, 2)), rng),
            rng.standard_normal((ci, 4, int(rng.integers(2, 6)))), rng))
        worst["gru"] = max(worst["gru"], _gru_check(rng))
        model = tiny_model(seed=i)
        # randomise the zero-initialised heads so every path carries gradient
        for v in model.params().values():
            if not np.any(v):
                v[...] = rng.uniform(-0.3, 0.3, v.shape)
        worst["mask head"] = max(worst["mask head"], check_model(model, rng, stage=1, stages=("sle", "srn")))
        worst["residual heads"] = max(worst["residual heads"], check_model(model, rng, stage=2))
        worst["losses"] = max(worst["losses"], _loss_grad_errors(rng))
    ok = all(v < 1e-4 for v in worst.values())
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    report(4, "gradient integrity", ok, f"{instances} instances each, max relative error: {detail} (< 1e-4)")


def _gru_check(rng):
    d, h = int(rng.integers(1, 5)), int(rng.integers(1, 5))
    return check_layer(GRU(d, h, rng), rng.standard_normal((int(rng.integers(2, 7)), d)), rng)


OVERFIT_LR = 3e-3


def test_criterion_5_overfit():
    t0 = time.perf_counter()
    bundle = synth_bundle(random_specs(1, 5)[0])
    mask = single_talk_mask(bundle.echo.samples, bundle.near.samples)
    model = SaesModel(make_config(4), seed=0)

    def seg_erle():
        out = enhance(model, bundle.mic, bundle.far1, bundle.far2)
        return erle(bundle.mic, out, mask)

    before = seg_erle()
    res = train_two_stage([bundle], model, Schedule(300, 30, OVERFIT_LR, batch_size=1, seed=0))
    after = seg_erle()
    drop = res.stage1_loss[0] / min(res.stage1_loss)
    avgs = np.asarray(res.stage2_loss).reshape(-1, 5).mean(axis=1)
    decreasing = bool(np.all(np.diff(avgs) < 0))
    elapsed = time.perf_counter() - t0
    ok = drop >= 10 and decreasing and after - before >= 10 and elapsed < 900
    report(5, "overfit sanity", ok,
           f"stage-1 loss drop {drop:.1f}x (>= 10x), stage-2 5-epoch averages "
           f"{'decreasing' if decreasing else 'not decreasing'} {np.round(avgs, 5).tolist()}, "
           f"single-talk ERLE {before:.1f} -> {after:.1f} dB (gain >= 10 dB), {elapsed:.0f} s (< 900 s)")


def _stereo_echo(x1, x2, h1, h2):
    n = len(x1)
    return np.convolve(x1, h1)[:n] + np.convolve(x2, h2)[:n]


def test_criterion_6_nlms():
    rng = np.random.default_rng(600)
    decay = np.exp(-np.arange(64) / 16)
    h1, h2 = rng.standard_normal(64) * decay, rng.standard_normal(64) * decay
    n = 10 * FS
    tail = slice(int(0.75 * n), n)
    x1, x2 = rng.standard_normal((2, n))
    y = _stereo_echo(x1, x2, h1, h2)
    e, st = nlms_cancel(y, x1, x2, NlmsState(64, mu=0.5))
    erle_ind = 10 * np.log10(np.mean(y[tail] ** 2) / np.mean(e.samples[tail] ** 2))
    mis_ind = misalignment_db(np.concatenate([st.w1, st.w2]), np.concatenate([h1, h2]))
    r = rng.standard_normal(n)
    y = _stereo_echo(r, r, h1, h2)
    _, st = nlms_cancel(y, r, r, NlmsState(64, mu=0.5))
    mis_cor = misalignment_db(np.concatenate([st.w1, st.w2]), np.concatenate([h1, h2]))
    ok = erle_ind >= 20 and mis_cor - mis_ind >= 10
    report(6, "NLMS convergence", ok,
           f"independent ERLE {erle_ind:.1f} dB (>= 20), misalignment independent {mis_ind:.1f} dB vs "
           f"common source {mis_cor:.1f} dB (>= 10 dB worse)")


def test_criterion_7_metric_sanity():
    y = np.random.default_rng(700).standard_normal(FS)
    erle_ok = (erle(y, y) == 0.0 and abs(erle(y, y / 10) - 20.0) < 1e-12
               and erle(y, np.zeros(FS), return_flag=True) == (100.0, True))
    x = synthetic_utterance(3.0, 701).samples
    noise = synthetic_noise("babble", 3.0, 702).samples
    self_score = estoi(x, x)
    deg = x + noise * np.sqrt(np.mean(x ** 2) / np.mean(noise ** 2) / 10)
    base = estoi(x, deg)
    gain_dev = max(abs(estoi(x, g * deg) - base) for g in (0.5, 2.0))
    sweep = []
    for snr in range(0, 31, 5):
        v = noise * np.sqrt(np.mean(x ** 2) / np.mean(noise ** 2) / 10 ** (snr / 10))
        sweep.append(estoi(x, x + v))
    mono = all(a < b for a, b in zip(sweep, sweep[1:]))
    ok = erle_ok and self_score >= 0.99 and gain_dev <= 1e-6 and mono
    report(7, "metric sanity", ok,
           f"ERLE trivial cases {'exact' if erle_ok else 'wrong'}, ESTOI self {self_score:.4f} (>= 0.99), "
           f"gain deviation {gain_dev:.1e} (<= 1e-6), 0-30 dB sweep {np.round(sweep, 3).tolist()} "
           f"{'monotone' if mono else 'not monotone'}")


def test_criterion_8_room_t60():
    rows = []
    for room in PAPER_ROOMS:
        for t60 in PAPER_T60S:
            _, speakers, mics = paper_positions(room, 0.7, 0)
            h = simulate_rir(RoomScenario(room, t60, speakers[:1], mics[:1]))[0, 0]
            rows.append((room, t60, estimate_t60(h)))
    worst = max(abs(est - t) / t for _, t, est in rows)
    detail = "; ".join(f"{r[0]:.0f}x{r[1]:.0f}x{r[2]:.0f} {t}->{est:.3f}" for r, t, est in rows)
    report(8, "room T60", worst <= 0.2, f"worst relative error {100 * worst:.1f}% (<= 20%): {detail}")


TREND_LR, TREND_STAGE2_LR = 3e-3, 3e-4


def test_criterion_9_trend():
    t0 = time.perf_counter()
    train = ([synth_bundle(s) for s in random_specs(20, 1)]
             + [synth_bundle(s) for s in random_specs(5, 2, mode="single")])
    test_double = [synth_bundle(s) for s in random_specs(8, 100)]
    test_single = [synth_bundle(s) for s in random_specs(4, 200, mode="single")]
    model = SaesModel(make_config(4), seed=0)
    res = train_two_stage(train, model, Schedule(60, 20, TREND_LR, TREND_STAGE2_LR, batch_size=2, seed=0))
    stage1 = SaesModel(make_config(4), seed=0)
    for k, v in stage1.params().items():
        v[...] = res.stage1_params[k]
    runners = {
        "unprocessed": lambda b: run_algorithm("none", b),
        "wiener": lambda b: run_algorithm("wiener", b),
        "sle+srn": lambda b: run_algorithm("neural-stage1", b, stage1),
        "proposed": lambda b: run_algorithm("neural", b, model),
    }
    tr = trend_table(test_double, test_single, runners)
    order = list(runners)

    def ordered(d):
        return all(d[a] >= d[b] for a, b in zip(order[::-1], order[::-1][1:]))

    ok = ordered(tr.estoi) and ordered(tr.erle)
    fmt = lambda d: ", ".join(f"{k} {d[k]:.3f}" for k in order)
    report(9, "trend", ok,
           f"ESTOI (double talk) {fmt(tr.estoi)}; ERLE dB (single talk) {fmt(tr.erle)}; "
           f"required proposed >= sle+srn >= wiener >= unprocessed; {time.perf_counter() - t0:.0f} s")


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-q"]))
