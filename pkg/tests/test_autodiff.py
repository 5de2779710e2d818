import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pcshape import autodiff as ad
from pcshape.errors import DomainError, InvalidValue, TapeMismatch

from helpers import central_fd


def test_lift_values():
    t = ad.Tape()
    assert ad.lift(t, 3.0).value == 3.0
    assert ad.lift(t, 0.0).value == 0.0


@pytest.mark.parametrize("bad", [float("nan"), float("inf"), -float("inf")])
def test_lift_rejects_non_finite(bad):
    with pytest.raises(InvalidValue):
        ad.lift(ad.Tape(), bad)


def test_apply_examples():
    t = ad.Tape()
    assert ad.apply("mul", ad.lift(t, 2.0), ad.lift(t, 3.0)).value == 6.0
    assert ad.apply("log2", ad.lift(t, 8.0)).value == 3.0
    with pytest.raises(DomainError):
        ad.apply("ln", ad.lift(t, 0.0))


@pytest.mark.parametrize("op", ["ln", "log2", "sqrt"])
@pytest.mark.parametrize("x", [0.0, -1.0])
def test_domain_errors_name_the_node(op, x):
    t = ad.Tape()
    with pytest.raises(DomainError, match="node"):
        ad.apply(op, ad.lift(t, x))


def test_division_by_zero():
    t = ad.Tape()
    with pytest.raises(DomainError):
        ad.lift(t, 1.0) / ad.lift(t, 0.0)


def test_backward_product(backend):
    t = ad.Tape()
    x, y = ad.lift(t, 2.0), ad.lift(t, 3.0)
    g = ad.backward(t, x * y)
    assert g == {x.index: 3.0, y.index: 2.0}


def test_backward_log2(backend):
    t = ad.Tape()
    x = ad.lift(t, 2.0)
    g = ad.backward(t, ad.log2(x))
    assert g[x.index] == pytest.approx(1.0 / (2.0 * math.log(2.0)), rel=1e-15)


def test_backward_entropy_like_sum(backend):
    t = ad.Tape()
    w = [ad.lift(t, 0.5), ad.lift(t, 0.5)]
    root = ad.sum_reduce([wi * ad.log2(wi) for wi in w])
    g = ad.backward(t, root)

    def f(v):
        return float(np.sum(v * np.log2(v)))

    fd = central_fd(f, [0.5, 0.5])
    for wi, ref in zip(w, fd):
        assert g[wi.index] == pytest.approx(math.log2(0.5) + 1 / math.log(2), abs=1e-12)
        assert g[wi.index] == pytest.approx(ref, abs=1e-8)


def test_root_from_other_tape():
    t1, t2 = ad.Tape(), ad.Tape()
    ad.lift(t1, 1.0)
    r = ad.lift(t2, 1.0) * 2.0
    with pytest.raises(TapeMismatch):
        ad.backward(t1, r)


def test_root_from_cleared_recording():
    t = ad.Tape()
    r = ad.exp(ad.lift(t, 1.0))
    t.clear()
    ad.lift(t, 1.0)
    with pytest.raises(TapeMismatch):
        ad.backward(t, r)


def test_mixed_tapes_rejected():
    a = ad.lift(ad.Tape(), 1.0)
    b = ad.lift(ad.Tape(), 1.0)
    with pytest.raises(TapeMismatch):
        a + b


def test_sum_partials_are_exactly_one(backend):
    t = ad.Tape()
    xs = [ad.lift(t, v) for v in (0.1, -2.0, 7.5, 1e3)]
    g = ad.backward(t, ad.apply("sum", xs))
    assert all(g[x.index] == 1.0 for x in xs)
    idx = t.leaves(np.arange(37.0))
    root = ad.Var(t, int(t.tree_sum(idx)[0]))
    assert np.all(t.gradient(root, idx) == 1.0)


def test_constants_fold_into_values():
    t = ad.Tape()
    x = ad.lift(t, 2.0)
    n0 = len(t)
    y = (3.0 - x) / 4.0 + 1.0
    assert y.value == 1.25
    # each constant operation is one node with a single parent
    assert len(t) - n0 == 3


def test_magsq_and_sqrt(backend):
    t = ad.Tape()
    a, b = ad.lift(t, 3.0), ad.lift(t, 4.0)
    r = ad.sqrt(ad.magsq(a, b))
    assert r.value == 5.0
    g = ad.backward(t, r)
    assert g[a.index] == pytest.approx(0.6, rel=1e-15)
    assert g[b.index] == pytest.approx(0.8, rel=1e-15)


def test_backward_is_deterministic(backend):
    rng = np.random.default_rng(1)
    t = ad.Tape()
    xs = [ad.lift(t, v) for v in rng.uniform(0.5, 2.0, 50)]
    acc = xs[0]
    for x in xs[1:]:
        acc = acc * ad.exp(x * 0.01) + ad.ln(x)
    g1 = ad.backward(t, acc)
    g2 = ad.backward(t, acc)
    assert g1 == g2


def test_group_sum_matches_numpy(backend):
    t = ad.Tape()
    vals = np.arange(1.0, 11.0)
    idx = t.leaves(vals)
    out = t.group_sum(idx, [3, 1, 6])
    np.testing.assert_array_equal(t.val(out), [6.0, 4.0, 45.0])


# random expression property ------------------------------------------------

_UNARY = ["exp", "ln", "sqrt", "square", "neg", "log2"]
_BINARY = ["add", "sub", "mul", "div"]


def _build(ops, xs, lib):
    """Evaluate a fixed op program with either Vars or floats."""
    stack = list(xs)
    for kind, name, i, j in ops:
        a = stack[i % len(stack)]
        if kind == "u":
            if name == "exp":
                v = lib.exp(a * 0.1)
            elif name == "ln":
                v = lib.ln(a * a + 1.0)
            elif name == "log2":
                v = lib.log2(a * a + 0.5)
            elif name == "sqrt":
                v = lib.sqrt(a * a + 1.0)
            elif name == "square":
                v = a * a
            else:
                v = -a
        else:
            b = stack[j % len(stack)]
            if name == "add":
                v = a + b
            elif name == "sub":
                v = a - b
            elif name == "mul":
                v = a * b * 0.5
            else:
                v = a / (b * b + 1.0)
        stack.append(v)
    return stack[-1]


class _Float:
    exp = staticmethod(math.exp)
    ln = staticmethod(math.log)
    log2 = staticmethod(math.log2)
    sqrt = staticmethod(math.sqrt)


op_st = st.one_of(
    st.tuples(st.just("u"), st.sampled_from(_UNARY), st.integers(0, 50), st.just(0)),
    st.tuples(st.just("b"), st.sampled_from(_BINARY), st.integers(0, 50), st.integers(0, 50)),
)
# log-uniform magnitudes over [1e-3, 1e3], either sign
mag = st.tuples(st.floats(-3.0, 3.0), st.booleans()).map(lambda t: (-1) ** t[1] * 10.0 ** t[0])


@settings(max_examples=400)
@given(xs=st.lists(mag, min_size=1, max_size=3), ops=st.lists(op_st, min_size=1, max_size=8))
def test_gradient_matches_finite_differences(xs, ops):
    def f(v):
        return _build(ops, list(v), _Float)

    try:
        f0 = f(xs)
        fd = central_fd(f, xs)
    except (OverflowError, ValueError, ZeroDivisionError):
        return
    if not (math.isfinite(f0) and np.all(np.isfinite(fd)) and abs(f0) <= 1e3):
        return
    t = ad.Tape()
    leaves = [ad.lift(t, v) for v in xs]
    root = _build(ops, leaves, ad)
    if not isinstance(root, ad.Var) or root.index in [x.index for x in leaves]:
        return
    g = ad.backward(t, root)
    auto = np.array([g[x.index] for x in leaves])
    assert root.value == pytest.approx(f0, rel=1e-12, abs=1e-12)
    err = np.abs(auto - fd) / np.maximum(1.0, np.abs(fd))
    assert np.all(err <= 1e-6)
