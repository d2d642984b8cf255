"""Benchmark pipelines: VAE head math and the matched decoder.

The KL and reparameterization checks run against scalar re-derivations;
decoder gradients run against central finite differences.
"""

import numpy as np
import pytest

from semcom.baselines import (
    LOG_VAR_MAX,
    LOG_VAR_MIN,
    MatchedDecoder,
    VaeEncoder,
    VaeHead,
    _ClampLogVar,
    matched_decode,
    vae_kl,
    vae_loss,
    vae_reparameterize,
)
from semcom.channel import SemanticLatent, normalize_rows
from semcom.encoder import EncoderConfig
from semcom.errors import ConfigError

# Small enough for finite differences, deep enough to cross every
# layer kind the real presets use.
TINY = EncoderConfig(input_channels=1, image_size=8, conv_channels=(3, 4),
                     conv_strides=(2, 2), cbr_list=(0.125, 0.25))


def test_vae_head_validation():
    with pytest.raises(ConfigError):
        VaeHead(mu=np.zeros(4), log_var=np.zeros(5))
    with pytest.raises(ConfigError):
        VaeHead(mu=np.array([np.nan, 0.0]), log_var=np.zeros(2))
    with pytest.raises(ConfigError):
        VaeHead(mu=np.zeros(2), log_var=np.array([0.0, np.inf]))


def test_kl_matches_scalar_loop():
    rng = np.random.default_rng(7)
    mu = rng.normal(size=(5, 6))
    lv = rng.normal(size=(5, 6))
    head = VaeHead(mu=mu, log_var=lv)

    # Independent route: per-element scalar accumulation.
    per_sample = []
    for b in range(5):
        acc = 0.0
        for j in range(6):
            m, v = float(mu[b, j]), float(lv[b, j])
            acc += 0.5 * (m * m + np.exp(v) - v - 1.0)
        per_sample.append(acc)
    expected = sum(per_sample) / 5.0

    assert vae_kl(head) == pytest.approx(expected, rel=1e-12, abs=1e-10)


def test_kl_hand_case_and_zero_point():
    # KL is zero exactly at the standard normal.
    assert vae_kl(VaeHead(mu=np.zeros(3), log_var=np.zeros(3))) == 0.0
    # mu=[1,0], sigma^2=[1,2]: 0.5*1 + 0.5*(2 - ln 2 - 1).
    head = VaeHead(mu=np.array([1.0, 0.0]),
                   log_var=np.array([0.0, np.log(2.0)]))
    expected = 0.5 + 0.5 * (2.0 - np.log(2.0) - 1.0)
    assert vae_kl(head) == pytest.approx(expected, rel=1e-12)


def test_kl_nonnegative():
    rng = np.random.default_rng(11)
    for _ in range(50):
        head = VaeHead(mu=rng.normal(scale=3.0, size=8),
                       log_var=rng.normal(scale=2.0, size=8))
        assert vae_kl(head) >= 0.0


def test_vae_loss_is_mse_plus_kl():
    rng = np.random.default_rng(3)
    x0 = rng.normal(size=(2, 1, 4, 4))
    x_hat = rng.normal(size=(2, 1, 4, 4))
    head = VaeHead(mu=rng.normal(size=(2, 5)), log_var=rng.normal(size=(2, 5)))
    expected = float(np.mean((x0 - x_hat) ** 2)) + vae_kl(head)
    assert vae_loss(x0, x_hat, head) == pytest.approx(expected, rel=1e-12)
    with pytest.raises(ConfigError):
        vae_loss(x0, x_hat[:1], head)


def test_reparameterize_zero_variance_limit():
    # log_var pinned at the lower clamp: sigma = e^-15 ~ 3e-7, so the
    # draw collapses to the normalized mean.
    rng = np.random.default_rng(0)
    mu = rng.normal(size=(3, 8))
    head = VaeHead(mu=mu, log_var=np.full((3, 8), LOG_VAR_MIN))
    z = vae_reparameterize(head, np.random.default_rng(1))
    expected, _ = normalize_rows(mu)
    np.testing.assert_allclose(z, expected, atol=1e-5)


def test_reparameterize_structure_and_pre_normalization_mean():
    """Replay the draw with a twin generator to expose z before the
    power normalization, then check E[z_pre] = mu by Monte Carlo."""
    n = 20000
    mu_row = np.array([0.8, -0.4, 1.3, 0.1])
    lv_row = np.log(np.full(4, 0.25))  # sigma = 0.5
    head = VaeHead(mu=np.tile(mu_row, (n, 1)), log_var=np.tile(lv_row, (n, 1)))

    rng = np.random.default_rng(42)
    twin = np.random.default_rng(42)
    z = vae_reparameterize(head, rng, power=1.0)

    eps = twin.standard_normal((n, 4))
    z_pre = head.mu + 0.5 * eps
    expected, _ = normalize_rows(z_pre, 1.0)
    np.testing.assert_allclose(z, expected, atol=1e-12)

    se = 0.5 / np.sqrt(n)
    np.testing.assert_allclose(z_pre.mean(axis=0), mu_row, atol=3.0 * se)


def test_clamp_log_var_forward_backward():
    layer = _ClampLogVar()
    x = np.array([LOG_VAR_MIN - 5.0, 0.0, LOG_VAR_MAX + 5.0, 3.0])
    out = layer.forward(x)
    np.testing.assert_array_equal(out, [LOG_VAR_MIN, 0.0, LOG_VAR_MAX, 3.0])
    grad = layer.backward(np.ones(4))
    np.testing.assert_array_equal(grad, [0.0, 1.0, 0.0, 1.0])


def test_vae_encoder_shapes_and_head_errors():
    rng = np.random.default_rng(5)
    enc = VaeEncoder(TINY, rng)
    x = rng.normal(size=(3, 1, 8, 8))
    head = enc.forward(x, 0.125)
    assert head.mu.shape == (3, TINY.latent_dim(0.125))
    assert head.log_var.shape == head.mu.shape
    assert np.all(head.log_var >= LOG_VAR_MIN)
    assert np.all(head.log_var <= LOG_VAR_MAX)
    with pytest.raises(ConfigError):
        enc.forward(x, 0.5)


def test_vae_encoder_no_phantom_children():
    rng = np.random.default_rng(5)
    enc = VaeEncoder(TINY, rng)
    before = [name for name, _ in enc.named_parameters()]
    enc.forward(rng.normal(size=(2, 1, 8, 8)), 0.25)
    after = [name for name, _ in enc.named_parameters()]
    assert before == after
    assert len(after) == len(set(after))


def test_vae_encoder_gradients_fd():
    rng = np.random.default_rng(9)
    enc = VaeEncoder(TINY, rng)
    x = rng.normal(size=(2, 1, 8, 8))
    a = rng.normal(size=(2, TINY.latent_dim(0.125)))
    b = rng.normal(size=(2, TINY.latent_dim(0.125)))

    def loss():
        head = enc.forward(x, 0.125)
        return float(np.sum(head.mu * a) + np.sum(head.log_var * b))

    loss()
    enc.zero_grad()
    enc.backward(a, b)

    h = 1e-5
    checked = 0
    rng_pick = np.random.default_rng(77)
    for name, p in enc.named_parameters():
        flat = p.data.reshape(-1)
        gflat = p.grad.reshape(-1)
        for idx in rng_pick.choice(flat.size, size=min(2, flat.size),
                                   replace=False):
            keep = flat[idx]
            flat[idx] = keep + h
            up = loss()
            flat[idx] = keep - h
            down = loss()
            flat[idx] = keep
            fd = (up - down) / (2.0 * h)
            assert gflat[idx] == pytest.approx(fd, rel=1e-4, abs=1e-7), name
            checked += 1
    assert checked >= 20


def test_matched_decoder_shapes():
    rng = np.random.default_rng(2)
    dec = MatchedDecoder(TINY, rng)
    z = rng.normal(size=(3, TINY.latent_dim(0.25)))
    out = dec.forward(z, 0.25)
    assert out.shape == (3, 1, 8, 8)
    with pytest.raises(ConfigError):
        dec.forward(z[0], 0.25)
    with pytest.raises(ConfigError):
        dec.forward(z, 0.9)


def test_matched_decoder_mirrors_cifar_trunk():
    # Stride-1 tail stage must come back as a size-preserving transpose
    # and the overall map must land on the input resolution.
    cfg = EncoderConfig(input_channels=3, image_size=16,
                        conv_channels=(4, 8, 8), conv_strides=(2, 2, 1),
                        batch_norm=True, cbr_list=(0.1,))
    rng = np.random.default_rng(4)
    dec = MatchedDecoder(cfg, rng)
    dec.eval()  # frozen batch-norm stats; shape is what matters here
    z = rng.normal(size=(2, cfg.latent_dim(0.1)))
    assert dec.forward(z, 0.1).shape == (2, 3, 16, 16)


def test_matched_decoder_gradients_fd():
    rng = np.random.default_rng(6)
    dec = MatchedDecoder(TINY, rng)
    z = rng.normal(size=(2, TINY.latent_dim(0.125)))
    c = rng.normal(size=(2, 1, 8, 8))

    def loss():
        return float(np.sum(dec.forward(z, 0.125) * c))

    loss()
    dec.zero_grad()
    dz = dec.backward(c)
    assert dz.shape == z.shape

    h = 1e-5
    checked = 0
    rng_pick = np.random.default_rng(78)
    for name, p in dec.named_parameters():
        flat = p.data.reshape(-1)
        gflat = p.grad.reshape(-1)
        for idx in rng_pick.choice(flat.size, size=min(3, flat.size),
                                   replace=False):
            keep = flat[idx]
            flat[idx] = keep + h
            up = loss()
            flat[idx] = keep - h
            down = loss()
            flat[idx] = keep
            fd = (up - down) / (2.0 * h)
            assert gflat[idx] == pytest.approx(fd, rel=1e-4, abs=1e-7), name
            checked += 1
    assert checked >= 20

    # Input gradient along a few coordinates.
    zf = z.reshape(-1)
    dzf = dz.reshape(-1)
    for idx in rng_pick.choice(zf.size, size=6, replace=False):
        keep = zf[idx]
        zf[idx] = keep + h
        up = loss()
        zf[idx] = keep - h
        down = loss()
        zf[idx] = keep
        assert dzf[idx] == pytest.approx((up - down) / (2.0 * h),
                                         rel=1e-4, abs=1e-7)


def test_matched_decoder_no_phantom_children():
    rng = np.random.default_rng(2)
    dec = MatchedDecoder(TINY, rng)
    before = [name for name, _ in dec.named_parameters()]
    dec.forward(rng.normal(size=(1, TINY.latent_dim(0.125))), 0.125)
    after = [name for name, _ in dec.named_parameters()]
    assert before == after
    assert len(after) == len(set(after))


def test_matched_decode_single_latent():
    rng = np.random.default_rng(8)
    dec = MatchedDecoder(TINY, rng)
    values = rng.normal(size=TINY.latent_dim(0.25))
    latent = SemanticLatent(values=values, cbr=0.25)
    img = matched_decode(latent, dec)
    assert img.shape == (1, 8, 8)
    batched = dec.forward(values[None], 0.25)[0]
    np.testing.assert_array_equal(img, batched)

    with pytest.raises(ConfigError):
        matched_decode(SemanticLatent(values=values), dec)


def test_matched_decoder_deterministic_construction():
    a = MatchedDecoder(TINY, np.random.default_rng(31))
    b = MatchedDecoder(TINY, np.random.default_rng(31))
    for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb
        np.testing.assert_array_equal(pa.data, pb.data)
