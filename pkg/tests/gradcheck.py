"""Central finite-difference checks shared by the unit and acceptance tests."""

import numpy as np

from saeclab.neural.crn import StageConfig
from saeclab.neural.model import ModelConfig, SaesModel, loss_stage1, loss_stage2

EPS = 1e-5
FLOOR = 1e-6  # below this both derivatives are finite-difference noise


def rel_err(num, an):
    return abs(num - an) / max(abs(num), abs(an), FLOOR)


def _sample(shape, rng, k):
    total = int(np.prod(shape))
    flat = rng.choice(total, size=min(k, total), replace=False)
    return [np.unravel_index(i, shape) for i in flat]


def check_arrays(loss, arrays, grads, rng, per_array=6):
    """Worst relative error over sampled entries of every array in ``arrays``."""
    worst = 0.0
    for name, arr in arrays.items():
        for idx in _sample(arr.shape, rng, per_array):
            old = arr[idx]
            arr[idx] = old + EPS
            lp = loss()
            arr[idx] = old - EPS
            lm = loss()
            arr[idx] = old
            worst = max(worst, rel_err((lp - lm) / (2 * EPS), grads[name][idx]))
    return worst


def check_layer(layer, x, rng, per_array=6):
    """Gradient of sum(G * layer(x)) for every parameter and the input."""
    G = rng.standard_normal(layer.forward(x).shape)
    gx = layer.backward(G)
    grads = dict(layer.grads)
    grads["__x"] = gx
    arrays = dict(layer.params)
    arrays["__x"] = x

    def loss():
        return float(np.sum(G * layer.forward(x)))

    return check_arrays(loss, arrays, grads, rng, per_array)


def tiny_model(seed=0, taps=3, n_bins=9):
    cfg = ModelConfig(
        StageConfig(6, (2, 3), (2, 4 * taps), kernel=(3, 3), mf_taps=taps),
        StageConfig(4, (2, 3), (2, 1), head_activation="sigmoid"),
        StageConfig(4, (2, 3), (2, 1), output_heads=2),
        n_bins, taps)
    return SaesModel(cfg, seed)


def check_model(model, rng, frames=5, stage=2, stages=None, per_array=4):
    """Full pipeline loss (stage-1 magnitude or stage-2 total) against all stage parameters."""
    F = model.cfg.n_bins

    def c():
        return rng.standard_normal((frames, F)) + 1j * rng.standard_normal((frames, F))

    Y, X1, X2, S = c(), c(), c(), c()

    def evaluate():
        f = model.forward(Y, X1, X2, stage)
        l1, g1 = loss_stage1(f.mag_srn, np.abs(S))
        if stage == 1:
            return l1, g1, None
        l2, g2 = loss_stage2(f.s_hat, S, l1)
        return l2, 0.1 * g1, g2

    _, g1, g2 = evaluate()
    model.backward(g1, g2)
    names = stages or (("sle", "srn") if stage == 1 else ("sle", "srn", "csr"))
    grads = {k: v.copy() for k, v in model.grads(names).items()}
    return check_arrays(lambda: evaluate()[0], model.params(names), grads, rng, per_array)
