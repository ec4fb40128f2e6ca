"""Numpy layers with hand-written backward passes.

Feature maps are [C, T, F] (channels, frames, bins) for a single example.
Every layer caches what its backward pass needs during ``forward``; calling
``backward`` fills ``self.grads`` (same keys as ``self.params``) and returns
the gradient with respect to the layer input.
"""

from __future__ import annotations

import numpy as np

from ..dsp import ParameterError


def sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class Layer:
    def __init__(self):
        self.params = {}
        self.grads = {}

    def zero_grad(self):
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}


def _uniform(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Conv2d(Layer):
    """Cross-correlation with causal time padding and valid frequency extent.

    Output frame t sees input frames t-kt+1 .. t.  With frequency stride s the
    bin count goes F -> (F - kf) // s + 1.
    """

    def __init__(self, c_in, c_out, kernel=(1, 3), stride=(1, 2), rng=None):
        super().__init__()
        if stride[0] != 1:
            raise ParameterError("time stride must be 1 (frame-synchronous processing)")
        self.kernel = tuple(kernel)
        self.stride = tuple(stride)
        rng = rng or np.random.default_rng(0)
        kt, kf = self.kernel
        fan_in = c_in * kt * kf
        self.params = {"W": _uniform(rng, fan_in, (c_out, c_in, kt, kf)),
                       "b": _uniform(rng, fan_in, (c_out,))}
        self.zero_grad()

    def out_bins(self, n_bins):
        kf, s = self.kernel[1], self.stride[1]
        return (n_bins - kf) // s + 1

    def forward(self, x):
        W, b = self.params["W"], self.params["b"]
        c_out, c_in, kt, kf = W.shape
        if x.ndim != 3 or x.shape[0] != c_in:
            raise ParameterError(f"Conv2d expects [{c_in}, T, F], got {x.shape}")
        _, T, F = x.shape
        s = self.stride[1]
        Fo = self.out_bins(F)
        if Fo < 1:
            raise ParameterError(f"Conv2d: {F} bins too few for kernel {kf}")
        xp = np.concatenate([np.zeros((c_in, kt - 1, F)), x], axis=1) if kt > 1 else x
        out = np.broadcast_to(b[:, None, None], (c_out, T, Fo)).copy()
        span = s * (Fo - 1) + 1
        for i in range(kt):
            for j in range(kf):
                xs = xp[:, i:i + T, j:j + span:s]
                out += np.tensordot(W[:, :, i, j], xs, axes=(1, 0))
        self._cache = (xp, x.shape)
        return out

    def backward(self, g):
        xp, in_shape = self._cache
        W = self.params["W"]
        _, _, kt, kf = W.shape
        c_in, T, F = in_shape
        s = self.stride[1]
        Fo = g.shape[2]
        span = s * (Fo - 1) + 1
        gW = np.zeros_like(W)
        gxp = np.zeros_like(xp)
        for i in range(kt):
            for j in range(kf):
                xs = xp[:, i:i + T, j:j + span:s]
                gW[:, :, i, j] = np.tensordot(g, xs, axes=([1, 2], [1, 2]))
                gxp[:, i:i + T, j:j + span:s] += np.tensordot(W[:, :, i, j], g, axes=(0, 0))
        self.grads = {"W": gW, "b": g.sum(axis=(1, 2))}
        return gxp[:, kt - 1:, :]


class ConvTranspose2d(Layer):
    """Transposed counterpart of :class:`Conv2d` (frequency upsampling, causal in time).

    ``output_padding`` appends bins so decoder sizes can mirror odd encoder sizes.
    """

    def __init__(self, c_in, c_out, kernel=(1, 3), stride=(1, 2), output_padding=0, rng=None):
        super().__init__()
        if stride[0] != 1:
            raise ParameterError("time stride must be 1 (frame-synchronous processing)")
        self.kernel = tuple(kernel)
        self.stride = tuple(stride)
        self.output_padding = output_padding
        rng = rng or np.random.default_rng(0)
        kt, kf = self.kernel
        fan_in = c_in * kt * kf
        self.params = {"W": _uniform(rng, fan_in, (c_in, c_out, kt, kf)),
                       "b": _uniform(rng, fan_in, (c_out,))}
        self.zero_grad()

    def out_bins(self, n_bins):
        return (n_bins - 1) * self.stride[1] + self.kernel[1] + self.output_padding

    def forward(self, x):
        W, b = self.params["W"], self.params["b"]
        c_in, c_out, kt, kf = W.shape
        if x.ndim != 3 or x.shape[0] != c_in:
            raise ParameterError(f"ConvTranspose2d expects [{c_in}, T, F], got {x.shape}")
        _, T, Fi = x.shape
        s = self.stride[1]
        Fo = self.out_bins(Fi)
        out = np.broadcast_to(b[:, None, None], (c_out, T, Fo)).copy()
        span = s * (Fi - 1) + 1
        for i in range(kt):
            xs = x if i == 0 else np.concatenate([np.zeros((c_in, i, Fi)), x[:, :T - i]], axis=1)
            for j in range(kf):
                out[:, :, j:j + span:s] += np.tensordot(W[:, :, i, j], xs, axes=(0, 0))
        self._cache = x
        return out

    def backward(self, g):
        x = self._cache
        W = self.params["W"]
        c_in, _, kt, kf = W.shape
        _, T, Fi = x.shape
        s = self.stride[1]
        span = s * (Fi - 1) + 1
        gW = np.zeros_like(W)
        gx = np.zeros_like(x)
        for i in range(kt):
            xs = x if i == 0 else np.concatenate([np.zeros((c_in, i, Fi)), x[:, :T - i]], axis=1)
            gxs = np.zeros_like(x)
            for j in range(kf):
                gs = g[:, :, j:j + span:s]
                gW[:, :, i, j] = np.tensordot(xs, gs, axes=([1, 2], [1, 2]))
                gxs += np.tensordot(W[:, :, i, j], gs, axes=(1, 0))
            if i == 0:
                gx += gxs
            else:
                gx[:, :T - i] += gxs[:, i:]
        self.grads = {"W": gW, "b": g.sum(axis=(1, 2))}
        return gx


class ELU(Layer):
    def forward(self, x):
        self._x = x
        return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))

    def backward(self, g):
        x = self._x
        return g * np.where(x > 0, 1.0, np.exp(np.minimum(x, 0.0)))


class Sigmoid(Layer):
    def forward(self, x):
        self._y = sigmoid(x)
        return self._y

    def backward(self, g):
        return g * self._y * (1.0 - self._y)


class Identity(Layer):
    def forward(self, x):
        return x

    def backward(self, g):
        return g


class GRU(Layer):
    """Single GRU layer over a [T, D] sequence, zero initial state.

    r = sig(x Wxr + bxr + h Whr + bhr)
    z = sig(x Wxz + bxz + h Whz + bhz)
    n = tanh(x Wxn + bxn + r * (h Whn + bhn))
    h' = (1 - z) * n + z * h
    Gate blocks are packed as [r | z | n] along the last axis.
    """

    def __init__(self, input_size, hidden_size, rng=None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        H = hidden_size
        self.hidden_size = H
        self.params = {
            "Wx": _uniform(rng, H, (input_size, 3 * H)),
            "Wh": _uniform(rng, H, (H, 3 * H)),
            "bx": _uniform(rng, H, (3 * H,)),
            "bh": _uniform(rng, H, (3 * H,)),
        }
        self.zero_grad()

    def forward(self, x):
        p = self.params
        H = self.hidden_size
        T = x.shape[0]
        xg = x @ p["Wx"] + p["bx"]
        hs = np.zeros((T + 1, H))
        r = np.zeros((T, H))
        z = np.zeros((T, H))
        n = np.zeros((T, H))
        hn = np.zeros((T, H))
        Wh, bh = p["Wh"], p["bh"]
        for t in range(T):
            hg = hs[t] @ Wh + bh
            rz = sigmoid(xg[t, :2 * H] + hg[:2 * H])
            r[t], z[t] = rz[:H], rz[H:]
            hn[t] = hg[2 * H:]
            n[t] = np.tanh(xg[t, 2 * H:] + r[t] * hn[t])
            hs[t + 1] = (1.0 - z[t]) * n[t] + z[t] * hs[t]
        self._cache = (x, hs, r, z, n, hn)
        return hs[1:].copy()

    def backward(self, g):
        x, hs, r, z, n, hn = self._cache
        p = self.params
        H = self.hidden_size
        T = x.shape[0]
        Wh_T = p["Wh"].T
        dxg = np.zeros((T, 3 * H))
        dhg = np.zeros((T, 3 * H))
        dh_next = np.zeros(H)
        for t in range(T - 1, -1, -1):
            dh = g[t] + dh_next
            dn = dh * (1.0 - z[t])
            dz = dh * (hs[t] - n[t])
            dn_pre = dn * (1.0 - n[t] ** 2)
            dr = dn_pre * hn[t]
            dr_pre = dr * r[t] * (1.0 - r[t])
            dz_pre = dz * z[t] * (1.0 - z[t])
            dxg[t, :H] = dr_pre
            dxg[t, H:2 * H] = dz_pre
            dxg[t, 2 * H:] = dn_pre
            dhg[t, :H] = dr_pre
            dhg[t, H:2 * H] = dz_pre
            dhg[t, 2 * H:] = dn_pre * r[t]
            dh_next = dh * z[t] + dhg[t] @ Wh_T
        self.grads = {
            "Wx": x.T @ dxg,
            "Wh": hs[:-1].T @ dhg,
            "bx": dxg.sum(axis=0),
            "bh": dhg.sum(axis=0),
        }
        return dxg @ p["Wx"].T
