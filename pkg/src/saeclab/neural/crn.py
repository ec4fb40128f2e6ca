"""Convolutional recurrent network stage: conv encoder, GRU bottleneck, conv decoder heads."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..dsp import ParameterError
from .layers import ELU, GRU, Conv2d, ConvTranspose2d, Identity, Sigmoid

PAPER_ENCODER = (8, 16, 32, 64, 128)
PAPER_DECODER = (64, 32, 16, 8, 1)


@dataclass
class StageConfig:
    in_channels: int
    encoder_channels: tuple = PAPER_ENCODER
    decoder_channels: tuple = PAPER_DECODER  # last entry = channels of each head
    kernel: tuple = (1, 3)
    stride: tuple = (1, 2)
    gru_layers: int = 2
    gru_hidden: int | None = None  # None: flattened bottleneck width
    output_heads: int = 1
    mf_taps: int = 10
    skip: bool = True
    head_activation: str = "linear"  # or "sigmoid"
    zero_head: bool = False  # last decoder layer starts at zero (stage begins as a no-op)

    def __post_init__(self):
        self.encoder_channels = tuple(int(c) for c in self.encoder_channels)
        self.decoder_channels = tuple(int(c) for c in self.decoder_channels)
        self.kernel = tuple(self.kernel)
        self.stride = tuple(self.stride)
        if len(self.decoder_channels) != len(self.encoder_channels):
            raise ParameterError("encoder and decoder need the same number of layers")
        if self.head_activation not in ("linear", "sigmoid"):
            raise ParameterError(f"unknown head activation {self.head_activation!r}")

    def to_dict(self):
        return asdict(self)


def scaled(channels, factor):
    return tuple(max(1, c // factor) for c in channels)


def bin_ladder(n_bins, cfg: StageConfig):
    """Bin count at the input of every encoder level plus the bottleneck."""
    ladder = [n_bins]
    kf, s = cfg.kernel[1], cfg.stride[1]
    for _ in cfg.encoder_channels:
        ladder.append((ladder[-1] - kf) // s + 1)
        if ladder[-1] < 1:
            raise ParameterError(f"{n_bins} bins cannot pass {len(cfg.encoder_channels)} "
                                 f"stride-{s} encoder layers")
    return ladder


class CrnStage:
    """One network stage.  ``forward`` maps [C_in, T, F] to a list of [C_head, T, F] maps."""

    def __init__(self, cfg: StageConfig, n_bins: int = 161, seed: int = 0):
        self.cfg = cfg
        self.n_bins = n_bins
        rng = np.random.default_rng(seed)
        enc = cfg.encoder_channels
        dec = cfg.decoder_channels
        self.ladder = bin_ladder(n_bins, cfg)
        self.encoder = []
        c_prev = cfg.in_channels
        for c in enc:
            self.encoder.append((Conv2d(c_prev, c, cfg.kernel, cfg.stride, rng), ELU()))
            c_prev = c
        width = enc[-1] * self.ladder[-1]
        hidden = cfg.gru_hidden or width
        if hidden != width:
            raise ParameterError(f"gru_hidden must equal the flattened bottleneck width {width}")
        self.grus = [GRU(width, hidden, rng) for _ in range(cfg.gru_layers)]
        n = len(enc)
        self.decoders = []
        for _ in range(cfg.output_heads):
            layers = []
            c_prev = enc[-1]
            for i, c in enumerate(dec):
                level = n - i  # input bins = ladder[level]
                c_in = c_prev + (enc[level - 1] if cfg.skip else 0)
                layer = ConvTranspose2d(c_in, c, cfg.kernel, cfg.stride, 0, rng)
                layer.output_padding = self.ladder[level - 1] - layer.out_bins(self.ladder[level])
                if i < n - 1:
                    act = ELU()
                elif cfg.head_activation == "sigmoid":
                    act = Sigmoid()
                else:
                    act = Identity()
                layers.append((layer, act))
                c_prev = c
            if cfg.zero_head:
                for k in layers[-1][0].params.values():
                    k[...] = 0.0
            self.decoders.append(layers)

    def named_layers(self):
        for i, (conv, _) in enumerate(self.encoder):
            yield f"enc{i}", conv
        for i, g in enumerate(self.grus):
            yield f"gru{i}", g
        for h, layers in enumerate(self.decoders):
            for i, (conv, _) in enumerate(layers):
                yield f"dec{h}.{i}", conv

    def params(self):
        return {f"{name}.{k}": v for name, layer in self.named_layers()
                for k, v in layer.params.items()}

    def grads(self):
        return {f"{name}.{k}": v for name, layer in self.named_layers()
                for k, v in layer.grads.items()}

    def forward(self, x):
        if x.ndim != 3 or x.shape[0] != self.cfg.in_channels or x.shape[2] != self.n_bins:
            raise ParameterError(f"stage expects [{self.cfg.in_channels}, T, {self.n_bins}], "
                                 f"got {x.shape}")
        skips = []
        h = x
        for conv, act in self.encoder:
            h = act.forward(conv.forward(h))
            skips.append(h)
        C, T, Fb = h.shape
        seq = h.transpose(1, 0, 2).reshape(T, C * Fb)
        for g in self.grus:
            seq = g.forward(seq)
        bottleneck = seq.reshape(T, C, Fb).transpose(1, 0, 2)
        outs = []
        n = len(self.encoder)
        for layers in self.decoders:
            h = bottleneck
            for i, (conv, act) in enumerate(layers):
                if self.cfg.skip:
                    h = np.concatenate([h, skips[n - 1 - i]], axis=0)
                h = act.forward(conv.forward(h))
            outs.append(h)
        self._shape = (C, T, Fb)
        return outs

    def backward(self, head_grads):
        """Accumulate parameter gradients; returns the gradient w.r.t. the stage input."""
        C, T, Fb = self._shape
        n = len(self.encoder)
        enc = self.cfg.encoder_channels
        g_skips = [None] * n
        g_bottleneck = np.zeros((C, T, Fb))
        for layers, g in zip(self.decoders, head_grads):
            if g is None:
                for conv, _ in layers:
                    conv.zero_grad()
                continue
            for i in range(n - 1, -1, -1):
                conv, act = layers[i]
                g = conv.backward(act.backward(g))
                if self.cfg.skip:
                    c_skip = enc[n - 1 - i]
                    gs = g[-c_skip:]
                    g = g[:-c_skip]
                    k = n - 1 - i
                    g_skips[k] = gs if g_skips[k] is None else g_skips[k] + gs
            g_bottleneck += g
        gseq = g_bottleneck.transpose(1, 0, 2).reshape(T, C * Fb)
        for gru in reversed(self.grus):
            gseq = gru.backward(gseq)
        g = gseq.reshape(T, C, Fb).transpose(1, 0, 2)
        for k in range(n - 1, -1, -1):
            if g_skips[k] is not None:
                g = g + g_skips[k]
            conv, act = self.encoder[k]
            g = conv.backward(act.backward(g))
        return g

    def zero_grad(self):
        for _, layer in self.named_layers():
            layer.zero_grad()
