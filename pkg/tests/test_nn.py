"""Backprop substrate: finite-difference oracles for every layer.

Each check pushes a fixed random linear functional through forward,
pulls it back with backward, and compares against central differences
in float64.  Central differences at 1e-4 steps resolve these gradients
to ~1e-8 relative error, so the assertions here are far tighter than
any real indexing or transpose bug.
"""

import numpy as np
import pytest

from semcom import ConfigError
from semcom.nn import (
    Adam,
    BatchNorm2d,
    Conv2d,
    ConvTranspose2d,
    GELU,
    GroupNorm,
    Identity,
    Linear,
    Module,
    ModuleList,
    Parameter,
    ReLU,
    Sequential,
    conv_out_size,
    gather_windows,
    gelu,
    gelu_grad,
    scatter_windows,
)

RTOL = 1e-5
ATOL = 1e-8
H = 1e-4


def _loss_and_grads(module: Module, x: np.ndarray, c: np.ndarray):
    module.zero_grad()
    out = module(x)
    assert out.shape == c.shape
    dx = module.backward(c)
    return float(np.sum(out * c)), dx


def _check_param_grads(module: Module, x: np.ndarray, c: np.ndarray,
                       max_per_param: int = 6):
    _loss_and_grads(module, x, c)
    rng = np.random.default_rng(99)
    for name, p in module.named_parameters():
        flat = p.data.reshape(-1)
        idx = rng.choice(flat.size, size=min(max_per_param, flat.size),
                         replace=False)
        for i in idx:
            keep = flat[i]
            flat[i] = keep + H
            up = float(np.sum(module(x) * c))
            flat[i] = keep - H
            down = float(np.sum(module(x) * c))
            flat[i] = keep
            fd = (up - down) / (2 * H)
            got = p.grad.reshape(-1)[i]
            assert got == pytest.approx(fd, rel=RTOL, abs=ATOL), (name, i)


def _check_input_grad(module: Module, x: np.ndarray, c: np.ndarray,
                      n_checks: int = 8):
    _, dx = _loss_and_grads(module, x, c)
    rng = np.random.default_rng(77)
    flat = x.reshape(-1)
    for i in rng.choice(flat.size, size=min(n_checks, flat.size),
                        replace=False):
        xp, xm = x.copy(), x.copy()
        xp.reshape(-1)[i] += H
        xm.reshape(-1)[i] -= H
        fd = (float(np.sum(module(xp) * c)) -
              float(np.sum(module(xm) * c))) / (2 * H)
        assert dx.reshape(-1)[i] == pytest.approx(fd, rel=RTOL, abs=ATOL)


def test_linear_gradients():
    rng = np.random.default_rng(0)
    m = Linear(3, 4, rng)
    x = rng.standard_normal((2, 3))
    c = rng.standard_normal((2, 4))
    _check_param_grads(m, x, c)
    _check_input_grad(m, x, c)


def test_linear_zero_init():
    m = Linear(3, 4, np.random.default_rng(0), zero_init=True)
    assert np.array_equal(m(np.ones((2, 3))), np.zeros((2, 4)))


@pytest.mark.parametrize("stride,pad", [(1, 1), (2, 1), (1, 0)])
def test_conv2d_gradients(stride, pad):
    rng = np.random.default_rng(1)
    m = Conv2d(2, 3, 3, rng, stride=stride, pad=pad)
    x = rng.standard_normal((2, 2, 5, 5))
    c = rng.standard_normal(m(x).shape)
    _check_param_grads(m, x, c)
    _check_input_grad(m, x, c)


@pytest.mark.parametrize("k,stride,pad", [(4, 2, 1), (3, 1, 1)])
def test_conv_transpose_gradients(k, stride, pad):
    rng = np.random.default_rng(2)
    m = ConvTranspose2d(3, 2, k, rng, stride=stride, pad=pad)
    x = rng.standard_normal((2, 3, 4, 4))
    c = rng.standard_normal(m(x).shape)
    _check_param_grads(m, x, c)
    _check_input_grad(m, x, c)


def test_conv_transpose_output_size():
    m = ConvTranspose2d(1, 1, 4, np.random.default_rng(0), stride=2, pad=1)
    assert m(np.zeros((1, 1, 8, 8))).shape == (1, 1, 16, 16)


def test_conv_channel_mismatch():
    m = Conv2d(2, 3, 3, np.random.default_rng(0))
    with pytest.raises(ConfigError):
        m(np.zeros((1, 4, 8, 8)))
    with pytest.raises(ConfigError):
        conv_out_size(2, 5, 1, 0)


def test_gather_scatter_are_adjoint():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2, 3, 6, 6))
    for k, stride, pad in ((3, 1, 1), (3, 2, 1), (2, 2, 0)):
        oh = conv_out_size(6, k, stride, pad)
        ow = oh
        cols = gather_windows(x, k, stride, pad, oh, ow)
        c = rng.standard_normal(cols.shape)
        back = scatter_windows(c, k, stride, pad, x.shape, oh, ow)
        lhs = float(np.sum(cols * c))
        rhs = float(np.sum(x * back))
        assert lhs == pytest.approx(rhs, rel=1e-12)


def test_groupnorm_gradients():
    rng = np.random.default_rng(4)
    m = GroupNorm(2, 4)
    m.gamma.data[:] = rng.normal(1.0, 0.2, size=4)
    m.beta.data[:] = rng.normal(0.0, 0.2, size=4)
    x = rng.standard_normal((2, 4, 3, 3))
    c = rng.standard_normal(x.shape)
    _check_param_grads(m, x, c)
    _check_input_grad(m, x, c)
    with pytest.raises(ConfigError):
        GroupNorm(3, 4)


def test_groupnorm_normalizes_groups():
    rng = np.random.default_rng(5)
    m = GroupNorm(2, 4)
    y = m(rng.standard_normal((2, 4, 8, 8)))
    grouped = y.reshape(2, 2, 2, 8, 8)
    assert np.allclose(grouped.mean(axis=(2, 3, 4)), 0.0, atol=1e-10)
    assert np.allclose(grouped.var(axis=(2, 3, 4)), 1.0, atol=1e-3)


def test_batchnorm_gradients_training_mode():
    rng = np.random.default_rng(6)
    m = BatchNorm2d(3)
    m.gamma.data[:] = rng.normal(1.0, 0.2, size=3)
    x = rng.standard_normal((4, 3, 3, 3))
    c = rng.standard_normal(x.shape)
    _check_param_grads(m, x, c)
    _check_input_grad(m, x, c)


def test_batchnorm_eval_uses_running_stats():
    rng = np.random.default_rng(7)
    m = BatchNorm2d(2, momentum=1.0)
    x = rng.standard_normal((8, 2, 4, 4)) * 3.0 + 1.0
    m(x)  # one train pass with momentum 1 adopts the batch stats
    m.eval()
    y = m(x)
    mbatch = x.mean(axis=(0, 2, 3))
    count = 8 * 4 * 4
    vbatch = x.var(axis=(0, 2, 3)) * count / (count - 1)
    want = (x - mbatch[None, :, None, None]) / np.sqrt(
        vbatch[None, :, None, None] + m.eps)
    assert np.allclose(y, want, atol=1e-10)
    # eval-mode backward
    c = rng.standard_normal(x.shape)
    _check_input_grad(m, x, c)


def test_gelu_matches_its_derivative():
    x = np.linspace(-4.0, 4.0, 41)
    fd = (gelu(x + H) - gelu(x - H)) / (2 * H)
    assert np.allclose(gelu_grad(x), fd, rtol=1e-6, atol=1e-9)
    m = GELU()
    rng = np.random.default_rng(8)
    xx = rng.standard_normal((3, 5))
    c = rng.standard_normal((3, 5))
    _check_input_grad(m, xx, c)


def test_relu_masks_gradient():
    m = ReLU()
    x = np.array([[-1.0, 2.0, 0.0]])
    assert np.array_equal(m(x), [[0.0, 2.0, 0.0]])
    assert np.array_equal(m.backward(np.ones((1, 3))), [[0.0, 1.0, 0.0]])


def test_sequential_composite_gradients():
    rng = np.random.default_rng(9)
    m = Sequential(
        Conv2d(1, 4, 3, rng, stride=2, pad=1),
        GroupNorm(2, 4),
        GELU(),
        Conv2d(4, 2, 3, rng, pad=1),
    )
    x = rng.standard_normal((2, 1, 8, 8))
    c = rng.standard_normal(m(x).shape)
    _check_param_grads(m, x, c, max_per_param=3)
    _check_input_grad(m, x, c)


def test_gradient_accumulation_across_calls():
    rng = np.random.default_rng(10)
    m = Linear(3, 3, rng)
    x = rng.standard_normal((2, 3))
    c = rng.standard_normal((2, 3))
    m.zero_grad()
    m(x)
    m.backward(c)
    once = m.weight.grad.copy()
    m(x)
    m.backward(c)
    assert np.allclose(m.weight.grad, 2.0 * once)
    m.zero_grad()
    assert np.all(m.weight.grad == 0.0)


def test_adam_single_step_closed_form():
    p = Parameter(np.array([1.0, -2.0, 0.5]))
    opt = Adam([p], lr=0.1)
    g = np.array([0.3, -0.7, 0.0])
    p.grad[:] = g
    opt.step()
    want = np.array([1.0, -2.0, 0.5]) - 0.1 * g / (np.abs(g) + 1e-8)
    assert np.allclose(p.data, want, atol=1e-12)
    # constant gradient keeps the normalized step constant
    before = p.data.copy()
    p.grad[:] = g
    opt.step()
    assert np.allclose(before - p.data, 0.1 * g / (np.abs(g) + 1e-8),
                       atol=1e-9)


def test_module_registration_and_naming():
    class Net(Module):
        def __init__(self):
            super().__init__()
            rng = np.random.default_rng(0)
            self.fc = Linear(2, 2, rng)
            self.blocks = ModuleList([Linear(2, 2, rng), GELU()])

    names = [n for n, _ in Net().named_parameters()]
    assert names == ["fc.weight", "fc.bias",
                     "blocks.m0.weight", "blocks.m0.bias"]


def test_state_dict_round_trip_with_buffers():
    rng = np.random.default_rng(11)
    m = Sequential(Conv2d(1, 2, 3, rng, pad=1), BatchNorm2d(2))
    m(rng.standard_normal((4, 1, 5, 5)))   # move the running stats
    sd = m.state_dict()
    assert any(k.startswith("buffer:") for k in sd)
    ref = {k: v.copy() for k, v in sd.items()}
    for p in m.parameters():
        p.data += 1.0
    m.layers[1].running_mean += 5.0
    m.load_state_dict(sd)
    now = m.state_dict()
    for k in ref:
        assert np.array_equal(now[k], ref[k]), k
    # returned dict holds copies, not views
    sd["layers.m0.weight"][...] = 0.0
    assert not np.array_equal(m.layers[0].weight.data,
                              sd["layers.m0.weight"])


def test_state_dict_mismatch_errors():
    rng = np.random.default_rng(12)
    m = Linear(2, 2, rng)
    sd = m.state_dict()
    extra = dict(sd)
    extra["ghost"] = np.zeros(1)
    with pytest.raises(ConfigError):
        m.load_state_dict(extra)
    missing = {"weight": sd["weight"]}
    with pytest.raises(ConfigError):
        m.load_state_dict(missing)
    wrong = {"weight": np.zeros((3, 3)), "bias": sd["bias"]}
    with pytest.raises(ConfigError):
        m.load_state_dict(wrong)


def test_train_eval_propagates():
    m = Sequential(BatchNorm2d(1), Identity())
    assert m.training and m.layers[0].training
    m.eval()
    assert not m.training and not m.layers[0].training
    m.train()
    assert m.layers[0].training
