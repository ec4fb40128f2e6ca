import numpy as np
import pytest

from gradcheck import check_layer, check_model, tiny_model
from saeclab.dsp import ParameterError
from saeclab.neural import (GRU, AdamState, Conv2d, ConvTranspose2d, Example, Schedule,
                            TrainingDiverged, adam_step, load_checkpoint, loss_stage1,
                            loss_stage2, make_config, save_checkpoint, train_two_stage)
from saeclab.neural.crn import CrnStage, bin_ladder
from saeclab.neural.layers import ELU, Sigmoid
from saeclab.neural.model import SaesModel


def conv_oracle(W, b, x, stride):
    co, ci, kt, kf = W.shape
    _, T, F = x.shape
    Fo = (F - kf) // stride + 1
    out = np.zeros((co, T, Fo))
    for o in range(co):
        for t in range(T):
            for f in range(Fo):
                acc = b[o]
                for c in range(ci):
                    for i in range(kt):
                        tt = t - (kt - 1) + i
                        if tt < 0:
                            continue
                        for j in range(kf):
                            acc += W[o, c, i, j] * x[c, tt, f * stride + j]
                out[o, t, f] = acc
    return out


def tconv_oracle(W, b, x, stride, pad):
    ci, co, kt, kf = W.shape
    _, T, Fi = x.shape
    out = np.zeros((co, T, (Fi - 1) * stride + kf + pad)) + b[:, None, None]
    for c in range(ci):
        for o in range(co):
            for t in range(T):
                for f in range(Fi):
                    for i in range(kt):
                        if t + i >= T:
                            continue
                        for j in range(kf):
                            out[o, t + i, f * stride + j] += W[c, o, i, j] * x[c, t, f]
    return out


def test_conv_identity_kernel():
    conv = Conv2d(1, 1, (1, 1), (1, 1))
    conv.params["W"][...] = 1.0
    conv.params["b"][...] = 0.0
    x = np.random.default_rng(0).standard_normal((1, 4, 7))
    np.testing.assert_array_equal(conv.forward(x), x)


@pytest.mark.parametrize("kernel,stride", [((1, 3), 2), ((3, 3), 2), ((2, 2), 1)])
def test_conv_matches_nested_loops(kernel, stride):
    rng = np.random.default_rng(1)
    conv = Conv2d(2, 3, kernel, (1, stride), rng)
    x = rng.standard_normal((2, 4, 8))
    np.testing.assert_allclose(conv.forward(x), conv_oracle(conv.params["W"], conv.params["b"], x, stride),
                               atol=1e-12)


@pytest.mark.parametrize("kernel,pad", [((1, 3), 0), ((3, 3), 1), ((2, 3), 1)])
def test_transposed_conv_matches_scatter_oracle(kernel, pad):
    rng = np.random.default_rng(2)
    layer = ConvTranspose2d(3, 2, kernel, (1, 2), pad, rng)
    x = rng.standard_normal((3, 5, 4))
    ref = tconv_oracle(layer.params["W"], layer.params["b"], x, 2, pad)
    np.testing.assert_allclose(layer.forward(x), ref, atol=1e-12)


def test_conv_rejects_wrong_channels():
    with pytest.raises(ParameterError):
        Conv2d(2, 3).forward(np.zeros((3, 4, 8)))


def test_gru_zero_fixed_point():
    g = GRU(3, 4)
    g.params["bx"][...] = 0.0
    g.params["bh"][...] = 0.0
    np.testing.assert_array_equal(g.forward(np.zeros((6, 3))), 0.0)


def test_gru_single_step_by_hand():
    rng = np.random.default_rng(3)
    g = GRU(2, 2, rng)
    p = g.params
    x = rng.standard_normal((1, 2))
    h = g.forward(x)[0]
    sig = lambda v: 1 / (1 + np.exp(-v))
    a = x[0] @ p["Wx"] + p["bx"]
    bh = p["bh"]  # previous state is zero so the hidden products vanish
    r = sig(a[0:2] + bh[0:2])
    z = sig(a[2:4] + bh[2:4])
    n = np.tanh(a[4:6] + r * bh[4:6])
    np.testing.assert_allclose(h, (1 - z) * n, atol=1e-14)


def test_gradients_conv_family():
    rng = np.random.default_rng(4)
    for seed in range(3):
        r = np.random.default_rng(seed)
        assert check_layer(Conv2d(2, 3, (3, 3), (1, 2), r), r.standard_normal((2, 4, 9)), rng) < 1e-4
        layer = ConvTranspose2d(3, 2, (3, 3), (1, 2), 1, r)
        assert check_layer(layer, r.standard_normal((3, 4, 4)), rng) < 1e-4


def test_gradients_gru_and_activations():
    rng = np.random.default_rng(5)
    assert check_layer(GRU(4, 3, rng), rng.standard_normal((6, 4)), rng) < 1e-4
    assert check_layer(ELU(), rng.standard_normal((2, 3, 4)), rng) < 1e-4
    assert check_layer(Sigmoid(), rng.standard_normal((2, 3, 4)), rng) < 1e-4


@pytest.mark.parametrize("stage", [1, 2])
def test_gradients_full_model(stage):
    rng = np.random.default_rng(6)
    assert check_model(tiny_model(stage), rng, stage=stage) < 1e-4


def test_zero_params_pass_mic_through_linear_stage():
    m = tiny_model()
    m.zero_params()
    rng = np.random.default_rng(7)
    Y, X1, X2 = (rng.standard_normal((4, 9)) + 1j * rng.standard_normal((4, 9)) for _ in range(3))
    bank, echo, y_tilde = m.sle_forward(Y, X1, X2)
    assert not np.any(bank) and not np.any(echo)
    np.testing.assert_array_equal(y_tilde, Y)


def test_toy_shape_contract():
    cfg = make_config(4)
    assert bin_ladder(161, cfg.srn) == [161, 80, 39, 19, 9, 4]
    m = SaesModel(cfg, 0)
    rng = np.random.default_rng(8)
    T = 3
    Y, X1, X2 = (rng.standard_normal((T, 161)) + 1j * rng.standard_normal((T, 161)) for _ in range(3))
    f = m.forward(Y, X1, X2)
    assert f.bank.shape == (4, 10, T, 161)
    assert f.y_tilde.shape == f.s_hat.shape == (T, 161)
    assert np.iscomplexobj(f.y_tilde)
    assert np.all((f.mask > 0) & (f.mask < 1))


def _force_head(stage, value):
    layers = stage.decoders
    for head in layers:
        conv = head[-1][0]
        conv.params["W"][...] = 0.0
        conv.params["b"][...] = value


@pytest.mark.parametrize("bias,expect", [(100.0, 1.0), (-100.0, 0.0)])
def test_forced_mask(bias, expect):
    m = tiny_model()
    _force_head(m.srn, bias)
    rng = np.random.default_rng(9)
    Y, X1, X2 = (rng.standard_normal((4, 9)) + 1j * rng.standard_normal((4, 9)) for _ in range(3))
    f = m.forward(Y, X1, X2, stage=1)
    np.testing.assert_allclose(f.mag_srn, expect * np.abs(f.y_tilde), atol=1e-30)


def test_zero_residual_returns_coarse():
    m = tiny_model()
    _force_head(m.csr, 0.0)
    rng = np.random.default_rng(10)
    Y, X1, X2 = (rng.standard_normal((4, 9)) + 1j * rng.standard_normal((4, 9)) for _ in range(3))
    f = m.forward(Y, X1, X2)
    np.testing.assert_array_equal(f.s_hat, f.coarse)


def test_causality_all_stages():
    m = tiny_model()
    rng = np.random.default_rng(11)
    Y, X1, X2 = (rng.standard_normal((8, 9)) + 1j * rng.standard_normal((8, 9)) for _ in range(3))
    a = m.forward(Y, X1, X2)
    Y2, X12 = Y.copy(), X1.copy()
    Y2[5:] += 3.0
    X12[5:] -= 2.0j
    b = m.forward(Y2, X12, X2)
    for name in ("echo", "mask", "s_hat"):
        np.testing.assert_array_equal(getattr(a, name)[:5], getattr(b, name)[:5])
    assert not np.allclose(a.s_hat[5:], b.s_hat[5:])


def test_stage_input_shape_checked():
    with pytest.raises(ParameterError):
        CrnStage(make_config(4).srn).forward(np.zeros((3, 2, 161)))


def test_loss_examples():
    rng = np.random.default_rng(12)
    a = rng.random((4, 5))
    assert loss_stage1(a, a)[0] == 0.0
    assert loss_stage1(np.full((3, 3), 2.0), np.zeros((3, 3)))[0] == pytest.approx(4.0)
    b = rng.random((4, 5))
    assert loss_stage1(a, b)[0] == pytest.approx(sum((x - y) ** 2 for x, y in zip(a.ravel(), b.ravel())) / 20)
    S = rng.standard_normal((3, 4)) + 1j * rng.standard_normal((3, 4))
    assert loss_stage2(S, S, 0.0)[0] == 0.0
    assert loss_stage2(S + (1 + 1j), S, 0.0)[0] == pytest.approx(1.0)
    assert loss_stage2(S, S, 2.0)[0] - loss_stage2(S, S, 1.0)[0] == pytest.approx(0.1)


def test_adam_zero_gradient():
    p = {"w": np.array([1.0, -2.0])}
    st = AdamState(m={"w": np.array([0.5, 0.5])}, v={"w": np.array([1.0, 1.0])})
    adam_step(p, {"w": np.zeros(2)}, st, lr=0.1)
    np.testing.assert_allclose(st.m["w"], 0.45)
    np.testing.assert_allclose(st.v["w"], 0.999)
    # decayed moments still move the parameters; with no history they would not
    q = {"w": np.array([1.0, -2.0])}
    adam_step(q, {"w": np.zeros(2)}, AdamState(), lr=0.1)
    np.testing.assert_array_equal(q["w"], [1.0, -2.0])


def test_adam_first_step_closed_form():
    g = np.array([0.3, -2.0, 1e-3])
    p = {"w": np.zeros(3)}
    adam_step(p, {"w": g}, AdamState(), lr=0.01)
    np.testing.assert_allclose(p["w"], -0.01 * g / (np.abs(g) + 1e-8), rtol=1e-12)


def test_adam_quadratic_bowl():
    p = {"w": np.array([1.0])}
    st = AdamState()
    for _ in range(2000):
        adam_step(p, {"w": 2 * p["w"]}, st, lr=0.01)
    assert abs(p["w"][0]) < 1e-3


def _examples(n=2, T=6, F=9, seed=13):
    rng = np.random.default_rng(seed)
    c = lambda: rng.standard_normal((T, F)) + 1j * rng.standard_normal((T, F))
    return [Example(c(), c(), c(), c()) for _ in range(n)]


def test_zero_lr_keeps_parameters_bit_identical():
    m = tiny_model()
    before = {k: v.copy() for k, v in m.params().items()}
    train_two_stage(_examples(), m, Schedule(3, 2, lr=0.0))
    for k, v in m.params().items():
        np.testing.assert_array_equal(v, before[k])


def test_training_is_deterministic():
    runs = []
    for _ in range(2):
        m = tiny_model(seed=4)
        res = train_two_stage(_examples(3), m, Schedule(4, 3, lr=1e-2, seed=7))
        runs.append((res.stage1_loss + res.stage2_loss, m.params()))
    assert runs[0][0] == runs[1][0]
    for k in runs[0][1]:
        np.testing.assert_array_equal(runs[0][1][k], runs[1][1][k])


def test_training_reduces_loss():
    m = tiny_model()
    res = train_two_stage(_examples(1), m, Schedule(40, 10, lr=1e-2))
    assert res.stage1_loss[-1] < 0.5 * res.stage1_loss[0]
    assert len(res.stage2_loss) == 10


def test_divergence_restores_last_good():
    m = tiny_model()
    exs = _examples(1)
    before = {k: v.copy() for k, v in m.params().items()}
    exs[0].Y[2, 3] = np.nan
    with pytest.raises(TrainingDiverged) as info:
        train_two_stage(exs, m, Schedule(2, 1, lr=1e-2))
    for k, v in m.params().items():
        np.testing.assert_array_equal(v, before[k])
        np.testing.assert_array_equal(info.value.last_good[k], before[k])


def test_checkpoint_round_trip(tmp_path):
    m = SaesModel(make_config(4), seed=3)
    save_checkpoint(m, tmp_path / "ck", extra={"note": "x"})
    assert (tmp_path / "ck.bin").stat().st_size == 8 * sum(v.size for v in m.params().values())
    back = load_checkpoint(tmp_path / "ck.json")
    for k, v in m.params().items():
        np.testing.assert_array_equal(back.params()[k], v)


def test_checkpoint_size_mismatch(tmp_path):
    m = tiny_model()
    save_checkpoint(m, tmp_path / "ck")
    raw = (tmp_path / "ck.bin").read_bytes()
    (tmp_path / "ck.bin").write_bytes(raw[:-8])
    with pytest.raises(ParameterError):
        load_checkpoint(tmp_path / "ck")
