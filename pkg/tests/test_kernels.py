import numpy as np
import pytest

from pcshape import _kernels
from pcshape import constellation as cst
from pcshape import losses
from pcshape.channels import AwgnParams, ImddParams
from pcshape.distribution import approximate_vd, draw_batch, make_rng

needs_compiled = pytest.mark.skipif(_kernels.compiled is None,
                                    reason="compiled extension not built")


def test_select():
    assert _kernels.select("python") is _kernels.python
    assert _kernels.BACKEND in ("compiled", "python")
    with pytest.raises(ValueError):
        _kernels.select("fortran")


@needs_compiled
def test_select_compiled():
    assert _kernels.select("compiled") is _kernels.compiled
    with pytest.raises(ValueError):
        _kernels.select("fortran")


@needs_compiled
def test_awgn_pair_terms_parity():
    rng = np.random.default_rng(0)
    n, m = 257, 64
    args = [np.ascontiguousarray(a) for a in (
        rng.normal(size=n), rng.normal(size=n), rng.normal(size=m), rng.normal(size=m),
        np.log(rng.dirichlet(np.ones(m))))]
    a = _kernels.python.awgn_pair_terms(*args, 12.5)
    b = _kernels.compiled.awgn_pair_terms(*args, 12.5)
    for x, y in zip(a, b):
        np.testing.assert_allclose(x, y, rtol=1e-13, atol=1e-300)


@needs_compiled
@pytest.mark.parametrize("s1,s2", [(0.02, 0.05), (0.1, 0.05), (0.3, 0.2)])
def test_imdd_loglik_parity(s1, s2):
    rng = np.random.default_rng(1)
    x = np.sort(rng.uniform(0.2, 2.8, 8))
    y = rng.uniform(-0.3, 9.0, 300)
    n = _kernels.imdd_nodes(x, s1, s2, 512)
    a = _kernels.python.imdd_loglik(y, x, s1, s2, n)
    b = _kernels.compiled.imdd_loglik(y, x, s1, s2, n)
    for u, v in zip(a, b):
        np.testing.assert_allclose(u, v, rtol=1e-11, atol=1e-11)


def _grad(kind, M, channel, metric, seed):
    c = cst.build(kind, M)
    constraint = "none" if kind == "imdd-pam" else "average-power"
    setup = losses.LossSetup(c, channel, metric, constraint)
    p = np.random.default_rng(seed).dirichlet(np.ones(M) * 3)
    t = approximate_vd(p, 2048)
    rng = make_rng(seed)
    batch = losses.Batch(draw_batch(t, rng), t.counts, losses.draw_noise(setup, t.N, rng))
    return losses.loss_and_grad(p / t.q, batch, setup)


@needs_compiled
@pytest.mark.parametrize("kind,M,channel,metric", [
    ("qam", 16, AwgnParams(9.0), "mi"),
    ("qam", 64, AwgnParams(14.0), "bmi"),
    ("imdd-pam", 8, ImddParams(0.1, 0.05), "bmi"),
])
def test_end_to_end_gradient_parity(monkeypatch, kind, M, channel, metric):
    out = {}
    for name in ("python", "compiled"):
        mod = _kernels.select(name)
        for fn in ("backward_sweep", "awgn_pair_terms", "imdd_loglik"):
            monkeypatch.setattr(_kernels, fn, getattr(mod, fn))
        out[name] = _grad(kind, M, channel, metric, 3)
    assert out["python"][0] == pytest.approx(out["compiled"][0], rel=1e-12)
    np.testing.assert_allclose(out["python"][1], out["compiled"][1], rtol=1e-9, atol=1e-12)
