import math
from fractions import Fraction

import numpy as np
import pytest

from pcshape import autodiff as ad
from pcshape import constellation as cst
from pcshape import demappers as dm
from pcshape.errors import GridTooNarrow

from helpers import central_fd


# likelihoods --------------------------------------------------------------

def test_awgn_likelihood_peak_and_symmetry():
    s2 = 0.3
    assert dm.awgn_likelihood(0.5 + 0.5j, 0.5 + 0.5j, s2) == pytest.approx(1 / (math.pi * s2))
    a, b = dm.awgn_likelihood(0.2j, np.array([1.0, -1.0]), s2)
    assert a == b


def test_awgn_likelihood_integrates_to_one():
    s2 = 0.2
    g = np.linspace(-4, 4, 801)
    re, im = np.meshgrid(g, g)
    f = dm.awgn_likelihood(re + 1j * im, 0.3 - 0.1j, s2)
    assert np.trapezoid(np.trapezoid(f, g, axis=1), g) == pytest.approx(1.0, abs=1e-6)


def test_awgn_loglik_matches_likelihood():
    pts = np.array([1 + 1j, -1 + 0.5j])
    y = np.array([0.1 + 0.2j, -2.0 + 0j])
    ll = dm.awgn_loglik(y, pts, 0.4)
    np.testing.assert_allclose(np.exp(ll), dm.awgn_likelihood(y[:, None], pts[None, :], 0.4),
                               rtol=1e-14)


@pytest.mark.parametrize("x,s1,s2", [(0.3, 0.02, 0.05), (1.0, 0.1, 0.05), (2.2, 0.2, 0.1),
                                     (0.5, 0.05, 0.01)])
def test_imdd_likelihood_integrates_to_one(backend, x, s1, s2):
    lo, hi = -8 * s2, (x + 8 * s1) ** 2 + 8 * s2
    y = np.linspace(lo, hi, 40_001)
    f = dm.imdd_likelihood(y, x, s1, s2)[:, 0]
    assert abs(np.trapezoid(f, y) - 1.0) <= 1e-4


def test_imdd_grid_too_narrow():
    with pytest.raises(GridTooNarrow):
        dm.imdd_loglik([1.0], [1.0], 0.1, 0.1, coverage=6.0)


def test_imdd_rejects_negative_amplitude():
    with pytest.raises(ValueError):
        dm.imdd_loglik([1.0], [-0.5], 0.1, 0.1)


@pytest.mark.parametrize("s1,s2", [(0.02, 0.05), (0.1, 0.05), (0.2, 0.1), (0.05, 0.2)])
def test_imdd_quadrature_matches_cf(backend, s1, s2):
    rng = np.random.default_rng(17)
    worst = 0.0
    for _ in range(100):
        x = rng.uniform(0.3, 2.7)
        y = rng.uniform(-3 * s2, (x + 3 * s1) ** 2 + 3 * s2)
        a = dm.imdd_likelihood([y], [x], s1, s2)[0, 0]
        b = dm.imdd_density_via_cf([y], x, s1, s2)[0]
        worst = max(worst, abs(a - b))
    assert worst <= 1e-6


def test_imdd_gradients_match_fd(backend):
    s1, s2 = 0.1, 0.05
    y0, x0 = 1.3, 1.1
    _, dy, dx = dm.imdd_loglik([y0], [x0], s1, s2, n_nodes=4096, with_grad=True)
    fy = central_fd(lambda v: dm.imdd_loglik(v, [x0], s1, s2, n_nodes=4096)[0, 0], [y0])
    fx = central_fd(lambda v: dm.imdd_loglik([y0], v, s1, s2, n_nodes=4096)[0, 0], [x0])
    assert dy[0, 0] == pytest.approx(fy[0], rel=1e-6)
    assert dx[0, 0] == pytest.approx(fx[0], rel=1e-6)


# characteristic function ----------------------------------------------------

def test_cf_at_zero():
    assert dm.imdd_cf(0.0, 1.3, 0.1, 0.05) == 1.0


def test_cf_central_special_case():
    t = np.linspace(-50, 50, 101)
    s1 = 0.3
    np.testing.assert_allclose(dm.imdd_cf(t, 0.0, s1, 0.0), (1 - 2j * s1**2 * t) ** -0.5,
                               rtol=1e-15)


def test_cf_bounded():
    t = np.linspace(-500, 500, 10_001)
    for x, s1, s2 in [(0.3, 0.02, 0.05), (2.0, 0.2, 0.1)]:
        assert np.all(np.abs(dm.imdd_cf(t, x, s1, s2)) <= 1 + 1e-15)


@pytest.mark.parametrize("x,s1,s2", [(1.0, 0.1, 0.05), (0.4, 0.05, 0.1)])
def test_density_via_cf_properties(x, s1, s2):
    y = np.linspace(-10 * s2, (x + 9 * s1) ** 2 + 10 * s2, 6001)
    f = dm.imdd_density_via_cf(y, x, s1, s2)
    assert abs(np.trapezoid(f, y) - 1.0) <= 1e-4
    assert f.min() >= -1e-8


# posteriors ---------------------------------------------------------------

def test_bpsk_symmetric_posterior():
    pts = np.array([-1.0 + 0j, 1.0 + 0j])
    row = dm.posterior(0.0, lambda y, c: dm.awgn_loglik(y, c, 0.5), pts, [0.5, 0.5],
                       np.array([[0], [1]]))
    np.testing.assert_allclose(row.symbol, [0.5, 0.5], rtol=1e-15)
    np.testing.assert_allclose(row.bit, [[0.5, 0.5]], rtol=1e-15)


def test_prior_dominance():
    c = cst.build_qam(16)
    p = np.full(16, 1e-300)
    p[3] = 1.0
    lq = dm.log_posteriors(dm.awgn_loglik([0.0], c.points, 1.0), p / p.sum())
    assert np.exp(lq[0, 3]) == pytest.approx(1.0, abs=1e-12)


def test_rational_bayes_three_points():
    like = [Fraction(3, 10), Fraction(1, 7), Fraction(5, 11)]
    prior = [Fraction(1, 2), Fraction(1, 3), Fraction(1, 6)]
    z = sum(a * b for a, b in zip(like, prior))
    exact = [a * b / z for a, b in zip(like, prior)]
    bits = np.array([[0, 0], [0, 1], [1, 1]])

    def loglik(y, pts):
        return np.log(np.array([[float(v) for v in like]]))

    row = dm.posterior(0.0, loglik, np.zeros(3), [float(v) for v in prior], bits)
    np.testing.assert_allclose(row.symbol, [float(v) for v in exact], rtol=1e-15, atol=0)
    b0_one = exact[2]
    b1_one = exact[1] + exact[2]
    np.testing.assert_allclose(row.bit, [[float(1 - b0_one), float(b0_one)],
                                         [float(1 - b1_one), float(b1_one)]], rtol=1e-14)


def test_log_domain_never_underflows():
    pts = np.array([0.0 + 0j, 1.0 + 0j])
    ll = dm.awgn_loglik([1e4 + 0j], pts, 1e-3)
    assert np.all(np.exp(ll) == 0.0)
    lq = dm.log_posteriors(ll, [0.5, 0.5])
    assert np.all(np.isfinite(lq))
    assert np.exp(lq[0, 1]) == pytest.approx(1.0)


def _check_rows(lq, bits):
    q = np.exp(lq)
    assert np.max(np.abs(q.sum(axis=1) - 1)) <= 1e-9
    b = np.exp(dm.bit_log_posteriors(lq, bits))
    assert np.max(np.abs(b.sum(axis=2) - 1)) <= 1e-9
    for k in range(bits.shape[1]):
        marg = q[:, bits[:, k] == 1].sum(axis=1)
        assert np.max(np.abs(b[:, k, 1] - marg)) <= 1e-12


def test_posterior_invariants_awgn():
    rng = np.random.default_rng(21)
    c = cst.build_qam(16)
    for _ in range(100):
        p = rng.dirichlet(np.ones(16))
        pts = cst.normalize(c, p).points
        y = rng.normal(size=100) * 1.5 + 1j * rng.normal(size=100) * 1.5
        lq = dm.log_posteriors(dm.awgn_loglik(y, pts, rng.uniform(0.01, 1.0)), p)
        _check_rows(lq, c.bits)


def test_posterior_invariants_imdd():
    rng = np.random.default_rng(22)
    c = cst.build_imdd_pam(8)
    x = c.points.real
    for _ in range(100):
        p = rng.dirichlet(np.ones(8))
        y = rng.uniform(-0.2, 8.0, size=100)
        lq = dm.log_posteriors(dm.imdd_loglik(y, x, 0.1, 0.05), p)
        _check_rows(lq, c.bits)


# on-tape gradients --------------------------------------------------------

def _awgn_logpost(p, cre, cim, y, sym, s2):
    ll = dm.awgn_loglik(y, cre + 1j * cim, s2)
    return dm.log_posteriors(ll, p)[np.arange(y.size), sym]


def test_tape_logpost_gradients_awgn(backend):
    rng = np.random.default_rng(4)
    c = cst.build_qam(16)
    p0 = rng.dirichlet(np.ones(16) * 3)
    pts = cst.normalize(c, p0).points
    s2 = 0.2
    y = np.array([0.3 - 0.2j, -0.9 + 0.4j])
    sym = np.array([5, 2])

    t = ad.Tape()
    ip = t.leaves(p0)
    logp = t.ln(ip)
    cre, cim = t.leaves(pts.real), t.leaves(pts.imag)
    yre, yim = t.leaves(y.real), t.leaves(y.imag)
    lg = dm.record_awgn_logits(t, yre, yim, cre, cim, logp, s2)
    nodes, _ = dm.record_symbol_logpost(t, lg, sym)
    np.testing.assert_allclose(t.val(nodes), _awgn_logpost(p0, pts.real, pts.imag, y, sym, s2),
                               rtol=1e-13)
    root = ad.Var(t, int(nodes[0]))
    gp = t.gradient(root, ip)
    fd = central_fd(lambda v: _awgn_logpost(v, pts.real, pts.imag, y, sym, s2)[0], p0)
    assert np.max(np.abs(gp - fd) / np.maximum(1e-3, np.abs(fd))) <= 1e-5
    gc = t.gradient(root, cre)
    fd = central_fd(lambda v: _awgn_logpost(p0, v, pts.imag, y, sym, s2)[0], pts.real)
    assert np.max(np.abs(gc - fd) / np.maximum(1e-3, np.abs(fd))) <= 1e-5


def test_tape_bit_logpost_matches_offtape(backend):
    rng = np.random.default_rng(8)
    c = cst.build_qam(16)
    p0 = rng.dirichlet(np.ones(16))
    pts = cst.normalize(c, p0).points
    y = rng.normal(size=6) + 1j * rng.normal(size=6)
    sym = rng.integers(0, 16, 6)
    t = ad.Tape()
    ip = t.leaves(p0)
    lg = dm.record_awgn_logits(t, t.leaves(y.real), t.leaves(y.imag), t.leaves(pts.real),
                               t.leaves(pts.imag), t.ln(ip), 0.3)
    nodes = dm.record_bit_logpost(t, lg, sym, c.bits)

    def f(v):
        lq = dm.log_posteriors(dm.awgn_loglik(y, pts, 0.3), v)
        lb = dm.bit_log_posteriors(lq, c.bits)
        tb = c.bits[sym]
        return lb[0, np.arange(4), tb[0]].sum()

    assert t.val(nodes)[0] == pytest.approx(f(p0), rel=1e-12)
    g = t.gradient(ad.Var(t, int(nodes[0])), ip)
    fd = central_fd(f, p0)
    assert np.max(np.abs(g - fd) / np.maximum(1e-3, np.abs(fd))) <= 1e-5


def test_tape_logpost_gradients_imdd(backend):
    c = cst.build_imdd_pam(4)
    x = c.points.real
    p0 = np.array([0.4, 0.3, 0.2, 0.1])
    y = np.array([0.5, 2.0])
    sym = np.array([1, 2])
    s1, s2 = 0.1, 0.05

    def f(v):
        lq = dm.log_posteriors(dm.imdd_loglik(y, x, s1, s2, n_nodes=2048), v)
        return lq[0, sym[0]]

    t = ad.Tape()
    ip = t.leaves(p0)
    lg = dm.record_imdd_logits(t, t.leaves(y), t.leaves(x), t.ln(ip), s1, s2, n_nodes=2048)
    nodes, _ = dm.record_symbol_logpost(t, lg, sym)
    assert t.val(nodes)[0] == pytest.approx(f(p0), rel=1e-12)
    g = t.gradient(ad.Var(t, int(nodes[0])), ip)
    fd = central_fd(f, p0)
    assert np.max(np.abs(g - fd) / np.maximum(1e-3, np.abs(fd))) <= 1e-5
