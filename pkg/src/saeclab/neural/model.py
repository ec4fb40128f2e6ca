"""Three-stage stereo echo suppressor.

Linear-echo stage: six RI planes (mic, far-end 1, far-end 2) -> 4*L planes of
time-varying per-bin filter taps -> multi-frame echo estimate, subtracted from
the mic spectrum.

Residual stage: four magnitude planes -> sigmoid mask applied to the
echo-reduced magnitude.

Refinement stage: coarse spectrum (estimated magnitude with mic phase) and
mic RI planes -> two residual heads added back to the coarse spectrum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..dsp import ParameterError
from ..multiframe import mf_apply, mf_apply_grad
from .crn import PAPER_DECODER, PAPER_ENCODER, CrnStage, StageConfig, scaled

STAGES = ("sle", "srn", "csr")


@dataclass
class ModelConfig:
    sle: StageConfig
    srn: StageConfig
    csr: StageConfig
    n_bins: int = 161
    taps: int = 10

    def to_dict(self):
        return {"sle": self.sle.to_dict(), "srn": self.srn.to_dict(), "csr": self.csr.to_dict(),
                "n_bins": self.n_bins, "taps": self.taps}

    @classmethod
    def from_dict(cls, d):
        return cls(StageConfig(**d["sle"]), StageConfig(**d["srn"]), StageConfig(**d["csr"]),
                   d["n_bins"], d["taps"])


def make_config(scale: int = 4, taps: int = 10, n_bins: int = 161, skip: bool = True,
                encoder=PAPER_ENCODER, decoder=PAPER_DECODER) -> ModelConfig:
    """Paper layout with every channel count divided by ``scale`` (1 = paper size)."""
    enc = scaled(encoder, scale)
    dec_body = scaled(decoder[:-1], scale)
    sle = StageConfig(6, enc, dec_body + (4 * taps,), kernel=(3, 3), mf_taps=taps, skip=skip,
                      zero_head=True)
    srn = StageConfig(4, enc, dec_body + (1,), head_activation="sigmoid", skip=skip)
    csr = StageConfig(4, enc, dec_body + (1,), output_heads=2, skip=skip, zero_head=True)
    return ModelConfig(sle, srn, csr, n_bins, taps)


def _safe_unit(re, im):
    mag = np.hypot(re, im)
    nz = mag > 0
    c = np.where(nz, re / np.where(nz, mag, 1.0), 0.0)
    s = np.where(nz, im / np.where(nz, mag, 1.0), 0.0)
    return mag, c, s


@dataclass
class Forward:
    """Intermediate results of one example; everything is a [T, F] array unless noted."""

    bank: np.ndarray  # [4, L, T, F] (h11_r, h11_i, h12_r, h12_i)
    echo: np.ndarray  # complex
    y_tilde: np.ndarray  # complex, mic minus estimated echo
    mask: np.ndarray
    mag_srn: np.ndarray
    coarse: np.ndarray | None = None  # complex
    residual: np.ndarray | None = None  # complex
    s_hat: np.ndarray | None = None  # complex


class SaesModel:
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        self.sle = CrnStage(cfg.sle, cfg.n_bins, seed)
        self.srn = CrnStage(cfg.srn, cfg.n_bins, seed + 1)
        self.csr = CrnStage(cfg.csr, cfg.n_bins, seed + 2)

    def stages(self):
        return {"sle": self.sle, "srn": self.srn, "csr": self.csr}

    def params(self, stages=STAGES):
        return {f"{s}.{k}": v for s in stages for k, v in self.stages()[s].params().items()}

    def grads(self, stages=STAGES):
        return {f"{s}.{k}": v for s in stages for k, v in self.stages()[s].grads().items()}

    def zero_params(self):
        for v in self.params().values():
            v[...] = 0.0

    # --- forward -----------------------------------------------------------------

    def sle_forward(self, Y, X1, X2):
        """Returns (bank [4, L, T, F], echo estimate, echo-reduced mic spectrum)."""
        Y, X1, X2 = (np.asarray(a, complex) for a in (Y, X1, X2))
        if not (Y.shape == X1.shape == X2.shape) or Y.shape[1] != self.cfg.n_bins:
            raise ParameterError(f"spectra must share shape [T, {self.cfg.n_bins}], got "
                                 f"{Y.shape}, {X1.shape}, {X2.shape}")
        T, F = Y.shape
        L = self.cfg.taps
        feats = np.stack([Y.real, Y.imag, X1.real, X1.imag, X2.real, X2.imag])
        out = self.sle.forward(feats)[0]
        bank = out.reshape(4, L, T, F)
        h11r, h11i, h12r, h12i = bank
        x1r, x1i, x2r, x2i = X1.real, X1.imag, X2.real, X2.imag
        d_r = (mf_apply(h11r, x1r) - mf_apply(h11i, x1i)
               + mf_apply(h12r, x2r) - mf_apply(h12i, x2i))
        d_i = (mf_apply(h11r, x1i) + mf_apply(h11i, x1r)
               + mf_apply(h12r, x2i) + mf_apply(h12i, x2r))
        echo = d_r + 1j * d_i
        self._sle_cache = (X1, X2)
        return bank, echo, Y - echo

    def srn_forward(self, mag_y, mag_x1, mag_x2, mag_yt):
        """Returns (mask, estimated near-end magnitude = mask * |Y~|)."""
        feats = np.stack([mag_y, mag_x1, mag_x2, mag_yt])
        mask = self.srn.forward(feats)[0][0]
        return mask, mask * mag_yt

    def csr_forward(self, coarse, Y):
        """Returns (residual, refined spectrum = coarse + residual)."""
        feats = np.stack([coarse.real, coarse.imag, Y.real, Y.imag])
        res_r, res_i = self.csr.forward(feats)
        residual = res_r[0] + 1j * res_i[0]
        return residual, coarse + residual

    def forward(self, Y, X1, X2, stage: int = 2) -> Forward:
        """Full pipeline; ``stage=1`` stops after the residual-suppression stage."""
        Y = np.asarray(Y, complex)
        bank, echo, y_tilde = self.sle_forward(Y, X1, X2)
        mag_yt, cyt, syt = _safe_unit(y_tilde.real, y_tilde.imag)
        mag_y, cy, sy = _safe_unit(Y.real, Y.imag)
        mask, mag_srn = self.srn_forward(mag_y, np.abs(X1), np.abs(X2), mag_yt)
        fwd = Forward(bank, echo, y_tilde, mask, mag_srn)
        self._cache = dict(mag_yt=mag_yt, cyt=cyt, syt=syt, cy=cy, sy=sy, mask=mask, stage=stage)
        if stage >= 2:
            fwd.coarse = mag_srn * (cy + 1j * sy)
            fwd.residual, fwd.s_hat = self.csr_forward(fwd.coarse, Y)
        return fwd

    # --- backward ----------------------------------------------------------------

    def backward(self, g_mag_srn=None, g_s_hat=None):
        """Backpropagate loss gradients through the last :meth:`forward` call.

        ``g_mag_srn``: dL/d|S~| (real [T, F]); ``g_s_hat``: dL/dRe + i dL/dIm of the
        refined spectrum.  Parameter gradients land in each stage's ``grads``.
        """
        c = self._cache
        for st in self.stages().values():
            st.zero_grad()
        g_mag = np.zeros_like(c["mag_yt"]) if g_mag_srn is None else np.array(g_mag_srn, float)
        if g_s_hat is not None:
            if c["stage"] < 2:
                raise ParameterError("refined-spectrum gradient given for a stage-1 forward pass")
            gr, gi = g_s_hat.real, g_s_hat.imag
            g_in = self.csr.backward([gr[None], gi[None]])
            g_coarse_r = gr + g_in[0]
            g_coarse_i = gi + g_in[1]
            g_mag = g_mag + g_coarse_r * c["cy"] + g_coarse_i * c["sy"]
        g_mask = g_mag * c["mag_yt"]
        g_mag_yt = g_mag * c["mask"]
        g_srn_in = self.srn.backward([g_mask[None]])
        g_mag_yt = g_mag_yt + g_srn_in[3]
        # Y~ = Y - D, so dL/dD = -dL/dY~
        g_dr = -g_mag_yt * c["cyt"]
        g_di = -g_mag_yt * c["syt"]
        X1, X2 = self._sle_cache
        gb = np.zeros((4, self.cfg.taps) + X1.shape)
        for k, (X, sr, si) in enumerate(((X1, 0, 1), (X2, 2, 3))):
            a, _ = mf_apply_grad(gb[0], X.real, g_dr)
            b, _ = mf_apply_grad(gb[0], X.imag, g_di)
            gb[sr] = a + b
            a, _ = mf_apply_grad(gb[0], X.imag, g_dr)
            b, _ = mf_apply_grad(gb[0], X.real, g_di)
            gb[si] = -a + b
        self.sle.backward([gb.reshape(4 * self.cfg.taps, *X1.shape)])


def loss_stage1(mag_est, mag_ref):
    """Mean squared magnitude error and its gradient w.r.t. ``mag_est``."""
    diff = np.asarray(mag_est, float) - np.asarray(mag_ref, float)
    return float(np.mean(diff ** 2)), 2.0 * diff / diff.size


def loss_stage2(s_hat, s_ref, stage1_loss):
    """0.5 MSE(real) + 0.5 MSE(imag) + 0.1 * stage1 loss, with dL/ds_hat (complex-packed)."""
    diff = np.asarray(s_hat, complex) - np.asarray(s_ref, complex)
    n = diff.size
    value = 0.5 * np.mean(diff.real ** 2) + 0.5 * np.mean(diff.imag ** 2) + 0.1 * stage1_loss
    return float(value), diff / n


STAGE1_WEIGHT = 0.1
