"""Untrained encoder-decoder prior with built-in reverse-mode gradients.

The network is a small fixed layer set (3x3 convolutions, stride-2
downsampling, nearest-neighbor upsampling plus convolution, channel
concatenation skips, LeakyReLU, linear 1x1 head) implemented directly in
numpy, channels-last, float64. Training state (Adam moments, the variance
based early stopper) lives outside the network so a solve can persist the
weights across outer iterations.
"""

from __future__ import annotations

from collections import deque

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import HsiCube, HsiError, MaskCube

LEAKY_SLOPE = 0.1
INIT_SCALE = 0.02


def _lrelu(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, x, LEAKY_SLOPE * x)


def _dlrelu(pre: np.ndarray) -> np.ndarray:
    return np.where(pre > 0, 1.0, LEAKY_SLOPE)


def _upsample_crop(x: np.ndarray, target_hw: tuple[int, int]) -> np.ndarray:
    up = np.repeat(np.repeat(x, 2, axis=0), 2, axis=1)
    return up[:target_hw[0], :target_hw[1], :]


def _upsample_crop_backward(g: np.ndarray, src_shape: tuple[int, int, int]) -> np.ndarray:
    h, w, c = src_shape
    buf = np.zeros((2 * h, 2 * w, c))
    buf[:g.shape[0], :g.shape[1], :] = g
    return buf.reshape(h, 2, w, 2, c).sum(axis=(1, 3))


class Conv2d:
    """2-D convolution on (H, W, C) arrays via im2col, zero 'same' padding.

    Forward returns the output together with an opaque cache that the
    matching backward call consumes; backward stores the weight/bias
    gradients on the layer and returns the input gradient.
    """

    def __init__(self, c_in: int, c_out: int, kernel: int, stride: int,
                 rng: np.random.Generator):
        self.kernel = kernel
        self.stride = stride
        self.pad = kernel // 2
        self.w = rng.normal(0.0, INIT_SCALE, size=(kernel, kernel, c_in, c_out))
        self.b = rng.normal(0.0, INIT_SCALE, size=(c_out,))
        self.gw = np.zeros_like(self.w)
        self.gb = np.zeros_like(self.b)

    def forward(self, x: np.ndarray):
        k, s, p = self.kernel, self.stride, self.pad
        xp = np.pad(x, ((p, p), (p, p), (0, 0))) if p else x
        view = sliding_window_view(xp, (k, k), axis=(0, 1))[::s, ::s]
        ho, wo = view.shape[0], view.shape[1]
        cols = np.ascontiguousarray(view.transpose(0, 1, 3, 4, 2))
        cols = cols.reshape(ho * wo, k * k * x.shape[2])
        y = cols @ self.w.reshape(-1, self.w.shape[3]) + self.b
        return y.reshape(ho, wo, -1), (cols, x.shape, ho, wo)

    def backward(self, cache, gy: np.ndarray) -> np.ndarray:
        cols, x_shape, ho, wo = cache
        k, s, p = self.kernel, self.stride, self.pad
        h, w, c_in = x_shape
        c_out = self.w.shape[3]
        g = gy.reshape(ho * wo, c_out)
        self.gw = (cols.T @ g).reshape(self.w.shape)
        self.gb = g.sum(axis=0)
        gcols = (g @ self.w.reshape(-1, c_out).T).reshape(ho, wo, k, k, c_in)
        gxp = np.zeros((h + 2 * p, w + 2 * p, c_in))
        for i in range(k):
            for j in range(k):
                gxp[i:i + s * ho:s, j:j + s * wo:s, :] += gcols[:, :, i, j, :]
        return gxp[p:p + h, p:p + w, :] if p else gxp


class DipNet:
    """Encoder-decoder with concatenation skips and a linear 1x1 head.

    ``channels`` sets the width per scale (depth is its length); each
    encoder level is a 3x3 convolution plus a stride-2 downsampling
    convolution, each decoder level upsamples, convolves, concatenates the
    matching skip and merges. All parameters are drawn from a seeded
    Gaussian(0, 0.02).
    """

    def __init__(self, bands: int, channels: tuple[int, ...] = (16, 32, 64),
                 seed: int = 0):
        if bands < 1 or len(channels) < 1 or min(channels) < 1:
            raise HsiError("bad-config", "bands and channel widths must be positive")
        self.bands = bands
        self.channels = tuple(int(c) for c in channels)
        self.reinitialize(seed)

    def reinitialize(self, seed: int) -> None:
        rng = np.random.default_rng(seed)
        ch = self.channels
        d = len(ch)
        self.enc = [Conv2d(self.bands if i == 0 else ch[i - 1], ch[i], 3, 1, rng)
                    for i in range(d)]
        self.down = [Conv2d(ch[i], ch[i], 3, 2, rng) for i in range(d - 1)]
        self.up = [Conv2d(ch[i + 1], ch[i], 3, 1, rng) for i in range(d - 1)]
        self.merge = [Conv2d(2 * ch[i], ch[i], 3, 1, rng) for i in range(d - 1)]
        self.head = Conv2d(ch[0], self.bands, 1, 1, rng)
        self.last_output: np.ndarray | None = None

    @property
    def depth(self) -> int:
        return len(self.channels)

    def _layers(self) -> list[Conv2d]:
        return [*self.enc, *self.down, *self.up, *self.merge, self.head]

    def parameters(self) -> list[np.ndarray]:
        out = []
        for layer in self._layers():
            out.append(layer.w)
            out.append(layer.b)
        return out

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def _forward(self, x: np.ndarray):
        d = self.depth
        tape = {"enc": [], "down": [], "dec": [None] * (d - 1), "head": None}
        a = x
        skips = []
        for i in range(d - 1):
            pre, cache = self.enc[i].forward(a)
            a = _lrelu(pre)
            tape["enc"].append((cache, pre))
            skips.append(a)
            pre, cache = self.down[i].forward(a)
            a = _lrelu(pre)
            tape["down"].append((cache, pre))
        pre, cache = self.enc[d - 1].forward(a)
        tape["enc"].append((cache, pre))
        a = _lrelu(pre)
        for i in range(d - 2, -1, -1):
            src_shape = a.shape
            up_in = _upsample_crop(a, skips[i].shape[:2])
            pre_u, cache_u = self.up[i].forward(up_in)
            act_u = _lrelu(pre_u)
            cat = np.concatenate([act_u, skips[i]], axis=2)
            pre_m, cache_m = self.merge[i].forward(cat)
            a = _lrelu(pre_m)
            tape["dec"][i] = (src_shape, cache_u, pre_u, cache_m, pre_m, act_u.shape[2])
        out, tape["head"] = self.head.forward(a)
        return out, tape

    def _backward(self, tape, gout: np.ndarray):
        d = self.depth
        g = self.head.backward(tape["head"], gout)
        gskip = [None] * (d - 1)
        for i in range(d - 1):
            src_shape, cache_u, pre_u, cache_m, pre_m, split = tape["dec"][i]
            gcat = self.merge[i].backward(cache_m, g * _dlrelu(pre_m))
            gskip[i] = gcat[:, :, split:]
            g_up_in = self.up[i].backward(cache_u, gcat[:, :, :split] * _dlrelu(pre_u))
            g = _upsample_crop_backward(g_up_in, src_shape)
        gz = None
        for i in range(d - 1, -1, -1):
            cache, pre = tape["enc"][i]
            gin = self.enc[i].backward(cache, g * _dlrelu(pre))
            if i == 0:
                gz = gin
                break
            cache_d, pre_d = tape["down"][i - 1]
            g = self.down[i - 1].backward(cache_d, gin * _dlrelu(pre_d)) + gskip[i - 1]
        grads = []
        for layer in self._layers():
            grads.append(layer.gw)
            grads.append(layer.gb)
        return grads, gz


class Adam:
    """Adam with bias correction; updates parameter arrays in place."""

    def __init__(self, params: list[np.ndarray], lr: float = 0.1,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.step_count = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


class WmvStopper:
    """Early stop on the windowed moving variance of the network outputs.

    Tracks the running minimum of the variance over the last ``window``
    outputs; fires after the variance has sat strictly above that minimum
    for ``patience`` consecutive checks. Fires at most once.
    """

    def __init__(self, window: int = 30, patience: int = 15):
        if window < 2 or patience < 1:
            raise HsiError("bad-config", "WMV stopper needs window >= 2, patience >= 1")
        self.window = window
        self.patience = patience
        self.buffer: deque = deque(maxlen=window)
        self.var_min = np.inf
        self.strikes = 0
        self.fired = False
        self.steps_seen = 0
        self.fired_step: int | None = None

    def update(self, output: np.ndarray) -> bool:
        if self.fired:
            return True
        self.steps_seen += 1
        self.buffer.append(np.asarray(output, dtype=np.float64).ravel().copy())
        if len(self.buffer) < self.window:
            return False
        wmv = float(np.stack(self.buffer).var(axis=0).mean())
        if wmv < self.var_min:
            self.var_min = wmv
            self.strikes = 0
        elif wmv > self.var_min:
            self.strikes += 1
        else:
            self.strikes = 0
        if self.strikes >= self.patience:
            self.fired = True
            self.fired_step = self.steps_seen
        return self.fired


def forward(net: DipNet, z: HsiCube) -> HsiCube:
    """Deterministic forward pass; output shape equals input shape."""
    if z.bands != net.bands:
        raise HsiError("shape-mismatch",
                       f"input has {z.bands} bands, network expects {net.bands}")
    out, _ = net._forward(z.values)
    return HsiCube(out)


def dip_step(net: DipNet, adam: Adam, z: HsiCube, y: HsiCube, m: MaskCube) -> float:
    """One masked-MSE training step; returns the pre-update loss.

    The loss is ``||m * (f(z) - y)||^2 / sum(m)``; gradients are exact and
    the Adam update is applied in place. The forward output is kept on
    ``net.last_output`` for the early stopper.
    """
    if z.dims != y.dims or y.dims != m.dims:
        raise HsiError("shape-mismatch", "z, y and mask must be congruent")
    if z.bands != net.bands:
        raise HsiError("shape-mismatch",
                       f"input has {z.bands} bands, network expects {net.bands}")
    msum = float(m.values.sum())
    if msum == 0.0:
        raise HsiError("empty-mask", "empty mask: nothing observed to fit")
    out, tape = net._forward(z.values)
    diff = m.values * (out - y.values)
    loss = float(np.sum(diff * diff) / msum)
    if not np.isfinite(loss):
        raise HsiError("dip-diverged", "DIP diverged (non-finite loss)")
    grads, _ = net._backward(tape, (2.0 / msum) * diff)
    adam.step(net.parameters(), grads)
    net.last_output = out
    return loss


def dip_update(net: DipNet, adam: Adam, stopper: WmvStopper | None,
               z: HsiCube, y: HsiCube, m: MaskCube, inner_steps: int,
               loss_sink: list | None = None) -> HsiCube:
    """Train for up to ``inner_steps`` steps (stopper permitting) and return
    the refreshed reconstruction ``f(z)``.

    The stopper persists across calls; once it has fired no further
    training happens and the frozen weights are evaluated.
    """
    if inner_steps < 1:
        raise HsiError("bad-config", "inner_steps must be >= 1")
    for _ in range(inner_steps):
        if stopper is not None and stopper.fired:
            break
        loss = dip_step(net, adam, z, y, m)
        if loss_sink is not None:
            loss_sink.append(loss)
        if stopper is not None:
            stopper.update(net.last_output)
    return forward(net, z)


def save_checkpoint(net: DipNet, path) -> None:
    """Dump the flattened parameter vector in the cube container format."""
    from .container import write_cube

    flat = np.concatenate([p.ravel() for p in net.parameters()])
    write_cube(path, HsiCube(flat.reshape(flat.size, 1, 1)))


def load_checkpoint(net: DipNet, path) -> None:
    """Restore parameters dumped by :func:`save_checkpoint` (f32 precision)."""
    from .container import read_cube

    cube = read_cube(path)
    flat = cube.values.reshape(-1)
    if flat.size != net.parameter_count():
        raise HsiError("shape-mismatch",
                       f"checkpoint holds {flat.size} values, network has "
                       f"{net.parameter_count()} parameters")
    offset = 0
    for p in net.parameters():
        p[...] = flat[offset:offset + p.size].reshape(p.shape)
        offset += p.size
