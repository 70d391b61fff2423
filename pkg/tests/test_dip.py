"""Untrained-network prior: exact gradients, Adam, early stopping."""

import numpy as np
import pytest

from hsinpaint.core import HsiCube, HsiError, MaskCube
from hsinpaint.dip import (Adam, Conv2d, DipNet, WmvStopper, _dlrelu, _lrelu,
                           _upsample_crop, _upsample_crop_backward, dip_step,
                           dip_update, forward, load_checkpoint,
                           save_checkpoint)

RTOL = 1e-4


def _fd_close(analytic, fd):
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(fd)), 1e-8)
    return np.max(np.abs(analytic - fd)) <= RTOL * scale


def _check_conv_gradients(c_in, c_out, kernel, stride, hw, seed):
    rng = np.random.default_rng(seed)
    layer = Conv2d(c_in, c_out, kernel, stride, rng)
    x = rng.standard_normal((hw[0], hw[1], c_in))
    y, cache = layer.forward(x)
    probe = rng.standard_normal(y.shape)

    def scalar(*, w=None, b=None, xin=None):
        saved_w, saved_b = layer.w, layer.b
        if w is not None:
            layer.w = w
        if b is not None:
            layer.b = b
        out, _ = layer.forward(x if xin is None else xin)
        layer.w, layer.b = saved_w, saved_b
        return float(np.sum(out * probe))

    gx = layer.backward(cache, probe)
    h = 1e-6

    fd_w = np.zeros_like(layer.w)
    for idx in np.ndindex(layer.w.shape):
        up = layer.w.copy(); up[idx] += h
        dn = layer.w.copy(); dn[idx] -= h
        fd_w[idx] = (scalar(w=up) - scalar(w=dn)) / (2 * h)
    assert _fd_close(layer.gw, fd_w)

    fd_b = np.zeros_like(layer.b)
    for idx in np.ndindex(layer.b.shape):
        up = layer.b.copy(); up[idx] += h
        dn = layer.b.copy(); dn[idx] -= h
        fd_b[idx] = (scalar(b=up) - scalar(b=dn)) / (2 * h)
    assert _fd_close(layer.gb, fd_b)

    fd_x = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        up = x.copy(); up[idx] += h
        dn = x.copy(); dn[idx] -= h
        fd_x[idx] = (scalar(xin=up) - scalar(xin=dn)) / (2 * h)
    assert _fd_close(gx, fd_x)


def test_conv3x3_gradients():
    _check_conv_gradients(2, 3, kernel=3, stride=1, hw=(5, 6), seed=0)


def test_downsample_conv_gradients():
    _check_conv_gradients(3, 2, kernel=3, stride=2, hw=(6, 5), seed=1)


def test_head_1x1_gradients():
    _check_conv_gradients(3, 2, kernel=1, stride=1, hw=(4, 4), seed=2)


def test_leaky_relu_gradient():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((4, 4, 2))
    x[np.abs(x) < 1e-3] = 0.5  # keep away from the kink
    probe = rng.standard_normal(x.shape)
    analytic = probe * _dlrelu(x)
    h = 1e-6
    fd = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        up = x.copy(); up[idx] += h
        dn = x.copy(); dn[idx] -= h
        fd[idx] = np.sum((_lrelu(up) - _lrelu(dn)) * probe) / (2 * h)
    assert _fd_close(analytic, fd)


def test_upsample_crop_adjoint_and_gradient():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((3, 4, 2))
    target = (5, 7)  # odd crop exercises the non-trivial path
    y = _upsample_crop(x, target)
    assert y.shape == (5, 7, 2)
    g = rng.standard_normal(y.shape)
    gx = _upsample_crop_backward(g, x.shape)
    # linear map: adjoint identity <up(x), g> == <x, up^T(g)>
    assert abs(np.sum(y * g) - np.sum(x * gx)) < 1e-10
    h = 1e-6
    fd = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        up = x.copy(); up[idx] += h
        dn = x.copy(); dn[idx] -= h
        fd[idx] = np.sum((_upsample_crop(up, target) - _upsample_crop(dn, target)) * g) / (2 * h)
    assert _fd_close(gx, fd)


def test_concat_skip_gradient_via_network():
    # the concatenation split is exercised by the full-network check below;
    # here a direct check that gradients flow into both halves
    net = DipNet(bands=2, channels=(2, 3), seed=5)
    z = np.random.default_rng(6).standard_normal((4, 4, 2))
    out, tape = net._forward(z)
    grads, gz = net._backward(tape, np.ones_like(out))
    assert gz.shape == z.shape
    assert all(np.any(g != 0) for g in grads)


def test_full_network_gradient_finite_differences():
    rng = np.random.default_rng(7)
    net = DipNet(bands=2, channels=(3, 4, 5), seed=8)
    # scale the weights up so every path carries O(1) signal; with the tiny
    # default init the deepest gradients sit below finite-difference noise
    for p in net.parameters():
        p *= 25.0
    z = HsiCube(rng.random((6, 6, 2)))
    y = HsiCube(rng.random((6, 6, 2)))
    mvals = (rng.random((6, 6, 2)) > 0.3).astype(float)
    m = MaskCube(mvals)
    msum = mvals.sum()

    def loss_value():
        out, _ = net._forward(z.values)
        d = mvals * (out - y.values)
        return float(np.sum(d * d) / msum)

    out, tape = net._forward(z.values)
    diff = mvals * (out - y.values)
    grads, _ = net._backward(tape, (2.0 / msum) * diff)
    params = net.parameters()
    h = 1e-6
    for p, g in zip(params, grads):
        fd = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + h
            up = loss_value()
            p[idx] = orig - h
            dn = loss_value()
            p[idx] = orig
            fd[idx] = (up - dn) / (2 * h)
        assert _fd_close(g, fd)


# -- forward contracts ----------------------------------------------------

def test_zero_weights_give_zero_output():
    net = DipNet(bands=3, channels=(4, 6), seed=9)
    for p in net.parameters():
        p[...] = 0.0
    z = HsiCube(np.random.default_rng(10).random((8, 8, 3)))
    out = forward(net, z)
    assert np.all(out.values == 0.0)


def test_identity_configured_head():
    rng = np.random.default_rng(11)
    head = Conv2d(1, 1, kernel=1, stride=1, rng=rng)
    head.w[...] = 1.0
    head.b[...] = 0.0
    x = rng.standard_normal((5, 5, 1))
    y, _ = head.forward(x)
    assert np.array_equal(y, x)


def test_forward_deterministic_and_shape_preserving():
    net = DipNet(bands=4, channels=(4, 8, 8), seed=12)
    z = HsiCube(np.random.default_rng(13).random((9, 7, 4)))  # odd dims
    a = forward(net, z)
    b = forward(net, z)
    assert a.dims == z.dims
    assert np.array_equal(a.values, b.values)
    twin = DipNet(bands=4, channels=(4, 8, 8), seed=12)
    c = forward(twin, z)
    assert np.array_equal(a.values, c.values)


def test_forward_band_mismatch():
    net = DipNet(bands=3, channels=(4,), seed=14)
    with pytest.raises(HsiError):
        forward(net, HsiCube(np.zeros((4, 4, 2))))


# -- Adam ------------------------------------------------------------------

def test_adam_scalar_reference():
    theta = np.array([1.0])
    adam = Adam([theta], lr=0.1, beta1=0.9, beta2=0.999, eps=1e-8)
    g = np.array([0.5])
    adam.step([theta], [g])
    m = 0.1 * 0.5
    v = 0.001 * 0.25
    m_hat = m / (1 - 0.9)
    v_hat = v / (1 - 0.999)
    expected = 1.0 - 0.1 * m_hat / (np.sqrt(v_hat) + 1e-8)
    assert abs(theta[0] - expected) < 1e-12


# -- training step ----------------------------------------------------------

def _toy_problem(seed=15, dims=(8, 8, 2)):
    rng = np.random.default_rng(seed)
    base = np.outer(np.linspace(0.2, 0.9, dims[0]), np.linspace(0.3, 1.0, dims[1]))
    y = HsiCube(np.stack([base * (0.5 + 0.5 * b) for b in range(dims[2])], axis=2))
    m = MaskCube((rng.random(dims) > 0.25).astype(float))
    z = HsiCube(y.values * m.values)
    return z, y, m


def test_dip_step_empty_mask_error():
    net = DipNet(bands=2, channels=(3,), seed=16)
    adam = Adam(net.parameters())
    z, y, _ = _toy_problem()
    with pytest.raises(HsiError) as err:
        dip_step(net, adam, z, y, MaskCube(np.zeros(z.dims)))
    assert err.value.code == "empty-mask"


def test_dip_step_returns_pre_update_loss_and_trains():
    net = DipNet(bands=2, channels=(4, 6), seed=17)
    adam = Adam(net.parameters(), lr=0.05)
    z, y, m = _toy_problem()
    first = dip_step(net, adam, z, y, m)
    out, _ = net._forward(z.values)
    post = float(np.sum((m.values * (out - y.values)) ** 2) / m.values.sum())
    assert first > 0
    assert post != first  # parameters moved
    losses = [first]
    for _ in range(60):
        losses.append(dip_step(net, adam, z, y, m))
    assert losses[-1] < losses[0]


def test_dip_loss_window_trend_on_rank1_target():
    rng = np.random.default_rng(18)
    spatial = np.outer(np.linspace(0.1, 1.0, 12), np.linspace(1.0, 0.2, 12))
    y = HsiCube(np.stack([spatial * s for s in (0.4, 0.7, 1.0)], axis=2))
    m = MaskCube(np.ones(y.dims))
    z = HsiCube(y.values + 0.01 * rng.standard_normal(y.dims))
    net = DipNet(bands=3, channels=(6, 8), seed=19)
    adam = Adam(net.parameters(), lr=0.1)
    losses = [dip_step(net, adam, z, y, m) for _ in range(500)]
    window = 50
    means = np.array([np.mean(losses[t:t + window])
                      for t in range(0, len(losses) - window)])
    violations = np.sum(means[1:] > means[:-1])
    assert violations / len(means[1:]) <= 0.05


def test_dip_update_contracts():
    net = DipNet(bands=2, channels=(3, 4), seed=20)
    adam = Adam(net.parameters())
    z, y, m = _toy_problem()
    with pytest.raises(HsiError):
        dip_update(net, adam, None, z, y, m, inner_steps=0)
    shapes = [p.shape for p in net.parameters()]
    sink = []
    u = dip_update(net, adam, None, z, y, m, inner_steps=5, loss_sink=sink)
    assert u.dims == z.dims
    assert len(sink) == 5
    assert [p.shape for p in net.parameters()] == shapes


def test_stopper_freezes_training():
    net = DipNet(bands=2, channels=(3,), seed=21)
    adam = Adam(net.parameters())
    z, y, m = _toy_problem()
    stopper = WmvStopper(window=2, patience=1)
    stopper.fired = True  # pretend it already fired
    before = [p.copy() for p in net.parameters()]
    dip_update(net, adam, stopper, z, y, m, inner_steps=5)
    for p, q in zip(net.parameters(), before):
        assert np.array_equal(p, q)


# -- WMV stopper -------------------------------------------------------------

def test_wmv_fires_exactly_on_schedule():
    window, patience = 5, 3
    stopper = WmvStopper(window=window, patience=patience)
    rng = np.random.default_rng(22)
    flat_steps = 20
    fired_at = None
    step = 0
    # plateau: identical outputs, variance 0, never fires
    for _ in range(flat_steps):
        step += 1
        assert not stopper.update(np.ones(16))
    # variance spike: outputs jitter from here on
    while fired_at is None and step < 100:
        step += 1
        if stopper.update(np.ones(16) + 0.1 * rng.standard_normal(16)):
            fired_at = step
    # the first window containing a jittered output has positive variance;
    # that is step flat_steps + 1, and strikes accumulate each check
    assert fired_at == flat_steps + patience
    assert stopper.fired_step == fired_at
    # fires at most once: further updates keep reporting fired
    assert stopper.update(np.ones(16))


def test_wmv_resets_on_new_minimum():
    stopper = WmvStopper(window=2, patience=3)
    seq = [np.zeros(4) + v for v in (0.0, 1.0, 1.0, 1.0, 1.0)]
    for arr in seq:
        stopper.update(arr)
    # variance dropped to 0 within the window at the end; min renewed
    assert stopper.strikes == 0 or not stopper.fired


def test_checkpoint_roundtrip(tmp_path):
    net = DipNet(bands=2, channels=(3, 4), seed=23)
    path = tmp_path / "theta.hsib"
    save_checkpoint(net, path)
    twin = DipNet(bands=2, channels=(3, 4), seed=99)
    load_checkpoint(twin, path)
    for p, q in zip(net.parameters(), twin.parameters()):
        assert np.max(np.abs(p - q)) < 1e-6  # f32 storage
