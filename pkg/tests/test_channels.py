import math

import numpy as np
import pytest

from pcshape import autodiff as ad
from pcshape import constellation as cst
from pcshape.channels import (
    AwgnParams,
    ImddParams,
    awgn_channel,
    awgn_noise,
    awgn_transmit,
    imdd_channel,
    imdd_noise,
    imdd_transmit,
)
from pcshape.distribution import make_rng

from helpers import central_fd


def _scalar_root(tape, idx):
    return ad.Var(tape, int(tape.tree_sum(np.asarray(idx))[0]))


def test_awgn_params():
    p = AwgnParams(10.0)
    assert p.sigma2 == pytest.approx(0.1, rel=1e-15)
    assert p.esn0 == pytest.approx(10.0, rel=1e-15)


def test_imdd_params_positive():
    with pytest.raises(ValueError):
        ImddParams(0.0, 0.1)
    with pytest.raises(ValueError):
        ImddParams(0.1, -1.0)


def test_awgn_noiseless_limit():
    x = np.array([1 + 1j, -0.5j])
    y = awgn_channel(x, AwgnParams(400.0), make_rng(0))
    np.testing.assert_allclose(y, x, atol=1e-15)


def test_imdd_noiseless_limit():
    x = np.array([0.3, 1.7])
    y = imdd_channel(x, ImddParams(1e-300, 1e-300), make_rng(0))
    np.testing.assert_allclose(y, x**2, rtol=1e-15)


def test_awgn_noise_variance_moment():
    params = AwgnParams(5.0)
    n = awgn_noise(100_000, params, make_rng(1))
    e = np.abs(n) ** 2
    se = e.std(ddof=1) / math.sqrt(e.size)
    assert abs(e.mean() - params.sigma2) <= 3 * se
    # circular: equal split between real and imaginary parts
    assert np.var(n.real) == pytest.approx(params.sigma2 / 2, rel=0.02)


def test_awgn_snr_calibration():
    params = AwgnParams(12.0)
    rng = make_rng(2)
    c = cst.build_qam(16)
    u = np.full(16, 1 / 16)
    pts = cst.normalize(c, u).points
    x = pts[rng.integers(0, 16, 1 << 20)]
    y = awgn_channel(x, params, rng)
    snr_db = 10 * math.log10(np.mean(np.abs(x) ** 2) / np.mean(np.abs(y - x) ** 2))
    assert abs(snr_db - 12.0) <= 0.05


@pytest.mark.parametrize("x", [0.3, 1.0, 2.5])
def test_imdd_mean(x):
    params = ImddParams(0.2, 0.1)
    y = imdd_channel(np.full(100_000, x), params, make_rng(3))
    se = y.std(ddof=1) / math.sqrt(y.size)
    assert abs(y.mean() - (x**2 + 0.04)) <= 3 * se


def test_awgn_transmit_unit_gradient(backend):
    t = ad.Tape()
    xre = t.leaves(np.array([0.5, -1.0]))
    xim = t.leaves(np.array([0.2, 0.7]))
    yre, yim, noise = awgn_transmit(t, xre, xim, AwgnParams(10.0), make_rng(4))
    np.testing.assert_allclose(t.val(yre), [0.5, -1.0] + noise.real, rtol=1e-15)
    g = t.gradient(ad.Var(t, int(yre[0])), xre)
    np.testing.assert_array_equal(g, [1.0, 0.0])
    g = t.gradient(ad.Var(t, int(yim[1])), xim)
    np.testing.assert_array_equal(g, [0.0, 1.0])


def test_imdd_transmit_gradient(backend):
    params = ImddParams(0.1, 0.05)
    x0 = np.array([0.4, 1.1, 2.0])
    noise = imdd_noise(3, params, make_rng(5))
    t = ad.Tape()
    ix = t.leaves(x0)
    y, _ = imdd_transmit(t, ix, params, noise=noise)
    n1, n2 = noise
    np.testing.assert_allclose(t.val(y), (x0 + n1) ** 2 + n2, rtol=1e-15)
    for i in range(3):
        g = t.gradient(ad.Var(t, int(y[i])), ix)
        assert g[i] == pytest.approx(2 * (x0[i] + n1[i]), rel=1e-15)


def test_reparameterized_output_matches_fd(backend):
    """Fixed noise makes the output a smooth function of x."""
    params_i = ImddParams(0.1, 0.05)
    params_a = AwgnParams(8.0)
    x0 = np.array([0.4, 1.1, 2.0])
    noise_i = imdd_noise(3, params_i, make_rng(6))
    noise_a = awgn_noise(3, params_a, make_rng(7))
    coef = np.array([0.3, -1.2, 0.8])

    def f_imdd(x):
        return float(coef @ ((x + noise_i[0]) ** 2 + noise_i[1]) ** 2)

    def f_awgn(x):
        return float(coef @ np.abs(x + noise_a) ** 2)

    t = ad.Tape()
    ix = t.leaves(x0)
    y, _ = imdd_transmit(t, ix, params_i, noise=noise_i)
    sq = t.unary("square", y, t.val(y) ** 2, 2 * t.val(y))
    terms = t.unary("scale", sq, coef * t.val(sq), coef)
    g = t.gradient(_scalar_root(t, terms), ix)
    fd = central_fd(f_imdd, x0)
    assert np.max(np.abs(g - fd) / np.maximum(1e-12, np.abs(fd))) <= 1e-6

    t = ad.Tape()
    ire = t.leaves(x0)
    iim = t.leaves(np.zeros(3))
    yre, yim, _ = awgn_transmit(t, ire, iim, params_a, noise=noise_a)
    yr, yi = t.val(yre), t.val(yim)
    m = t.binary("magsq", yre, yim, yr**2 + yi**2, 2 * yr, 2 * yi)
    terms = t.unary("scale", m, coef * t.val(m), coef)
    g = t.gradient(_scalar_root(t, terms), ire)
    fd = central_fd(f_awgn, x0)
    assert np.max(np.abs(g - fd) / np.maximum(1e-12, np.abs(fd))) <= 1e-6


def test_noise_reproducible():
    a = awgn_noise(8, AwgnParams(3.0), make_rng(9))
    b = awgn_noise(8, AwgnParams(3.0), make_rng(9))
    np.testing.assert_array_equal(a, b)
