"""Matched demappers: likelihoods, symbol and bit posteriors.

Off-tape functions work on plain arrays and serve validation. The
``record_*`` functions put the same quantities on an autodiff tape so that
gradients reach both the priors and the normalized constellation.

All posteriors are computed in the log domain with max subtraction.
"""
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import GridTooNarrow

IMDD_MIN_NODES = 512
IMDD_COVERAGE = 8.0
_TINY = 1e-300


# likelihoods --------------------------------------------------------------

def awgn_loglik(y, points, sigma2):
    """(len(y), M) matrix of log p(y | c_m) for circular complex AWGN."""
    y = np.asarray(y, dtype=complex).ravel()
    d = y[:, None] - np.asarray(points, dtype=complex)[None, :]
    return -(d.real**2 + d.imag**2) / sigma2 - math.log(math.pi * sigma2)


def awgn_likelihood(y, c, sigma2):
    """exp(-|y - c|^2 / sigma2) / (pi sigma2)."""
    d = np.asarray(y, dtype=complex) - c
    return np.exp(-(d.real**2 + d.imag**2) / sigma2) / (math.pi * sigma2)


def imdd_node_count(x, sigma1, sigma2, n_min=IMDD_MIN_NODES, coverage=IMDD_COVERAGE):
    return _kernels.imdd_nodes(np.asarray(x, dtype=float), sigma1, sigma2, n_min, coverage)


def imdd_loglik(y, x, sigma1, sigma2, n_nodes=None, coverage=IMDD_COVERAGE,
                with_grad=False):
    """(len(y), len(x)) matrix of log p(y|x) for y = (x + n1)^2 + n2.

    p(y|x) = int_0^inf [N(u; x, s1) + N(u; -x, s1)] N(y - u^2; 0, s2) du,
    trapezoid rule on [0, x + coverage*s1]. With ``with_grad`` the partials
    d/dy and d/dx of the log-density are returned as well.
    """
    if coverage < IMDD_COVERAGE:
        raise GridTooNarrow(
            f"quadrature grid [0, x + {coverage} sigma1] does not cover [0, x + 8 sigma1]"
        )
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float)).ravel()
    if np.any(x < 0):
        raise ValueError("IM/DD amplitudes must be non-negative")
    if n_nodes is None:
        n_nodes = imdd_node_count(x, sigma1, sigma2, coverage=coverage)
    ll, dy, dx = _kernels.imdd_loglik(y, x, float(sigma1), float(sigma2), int(n_nodes),
                                      float(coverage))
    return (ll, dy, dx) if with_grad else ll


def imdd_likelihood(y, x, sigma1, sigma2, **kw):
    return np.exp(imdd_loglik(y, x, sigma1, sigma2, **kw))


def imdd_cf(t, x, sigma1, sigma2):
    """Characteristic function of y = (x + n1)^2 + n2 (real n1, 1 dof)."""
    t = np.asarray(t, dtype=float)
    d = 1.0 - 2j * sigma1**2 * t
    return np.exp(1j * x**2 * t / d - 0.5 * sigma2**2 * t**2) / np.sqrt(d)


def imdd_density_via_cf(y, x, sigma1, sigma2, tail=1e-12):
    """Density by trapezoid inversion of :func:`imdd_cf` on [-T, T].

    T makes the Gaussian envelope exp(-s2^2 T^2 / 2) drop below ``tail``;
    the step keeps the aliasing period well above the support width.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    t_max = math.sqrt(-2.0 * math.log(tail)) / sigma2
    lo = -10.0 * sigma2
    hi = (x + 10.0 * sigma1) ** 2 + 10.0 * sigma2
    span = max(hi, float(y.max())) - min(lo, float(y.min()))
    dt = 2.0 * math.pi / (2.0 * span)
    n = int(math.ceil(t_max / dt))
    t = np.arange(-n, n + 1) * dt
    phi = imdd_cf(t, x, sigma1, sigma2)
    out = np.empty(y.size)
    for lo_i in range(0, y.size, 256):
        yy = y[lo_i:lo_i + 256, None]
        out[lo_i:lo_i + 256] = (phi[None, :] * np.exp(-1j * t[None, :] * yy)).real.sum(axis=1)
    return out * dt / (2.0 * math.pi)


# off-tape posteriors --------------------------------------------------------

def log_posteriors(loglik, priors):
    """Row-normalized log Q(c_m | y) from a likelihood matrix and priors."""
    priors = np.asarray(priors, dtype=float)
    with np.errstate(divide="ignore"):
        a = loglik + np.log(priors)[None, :]
    mx = a.max(axis=1, keepdims=True)
    return a - mx - np.log(np.exp(a - mx).sum(axis=1, keepdims=True))


def bit_log_posteriors(log_q, bits):
    """(N, K, 2) array of log Q(b_k = b | y) by marginalizing symbol posteriors."""
    bits = np.asarray(bits)
    n, k = log_q.shape[0], bits.shape[1]
    out = np.empty((n, k, 2))
    mx = log_q.max(axis=1, keepdims=True)
    e = np.exp(log_q - mx)
    for kk in range(k):
        for b in (0, 1):
            sel = bits[:, kk] == b
            with np.errstate(divide="ignore"):
                out[:, kk, b] = np.log(e[:, sel].sum(axis=1)) + mx[:, 0]
    return out


@dataclass(frozen=True)
class PosteriorRow:
    symbol: np.ndarray  # (M,)
    bit: np.ndarray  # (K, 2)


def posterior(y, loglik_fn, points, priors, bits):
    """Posterior row at one received value.

    ``loglik_fn(y_array, points)`` returns the (1, M) log-likelihood matrix.
    """
    lq = log_posteriors(loglik_fn(np.atleast_1d(y), points), priors)
    lb = bit_log_posteriors(lq, bits)
    return PosteriorRow(np.exp(lq[0]), np.exp(lb[0]))


# on-tape posteriors -------------------------------------------------------

@dataclass
class TapeLogits:
    """Nodes of the logits l[n, m] = log p(y_n | c_m) + log p_m (up to a
    per-row constant), their shifted exponentials and the shifts."""

    logit: np.ndarray  # (N, M) node indices
    e: np.ndarray  # (N, M) node indices of exp(logit - mx)
    mx: np.ndarray  # (N,) float shifts


def _finish_logits(tape, i_logit):
    v = tape.val(i_logit)
    mx = v.max(axis=1)
    ev = np.exp(v - mx[:, None])
    i_e = tape.unary("exp", i_logit, ev, ev).reshape(i_logit.shape)
    return TapeLogits(i_logit, i_e, mx)


def record_awgn_logits(tape, yre, yim, cre, cim, logp, sigma2):
    """Record AWGN logits -|y_n - c_m|^2/sigma2 + logp_m (constant log(pi s2) dropped)."""
    inv = 1.0 / sigma2
    dre, dim, logit, ev, mx = _kernels.awgn_pair_terms(
        np.ascontiguousarray(tape.val(yre)), np.ascontiguousarray(tape.val(yim)),
        np.ascontiguousarray(tape.val(cre)), np.ascontiguousarray(tape.val(cim)),
        np.ascontiguousarray(tape.val(logp)), inv,
    )
    n, m = dre.shape
    Y_re = np.broadcast_to(yre[:, None], (n, m))
    Y_im = np.broadcast_to(yim[:, None], (n, m))
    C_re = np.broadcast_to(cre[None, :], (n, m))
    C_im = np.broadcast_to(cim[None, :], (n, m))
    i_dre = tape.binary("sub", Y_re, C_re, dre, 1.0, -1.0)
    i_dim = tape.binary("sub", Y_im, C_im, dim, 1.0, -1.0)
    q = -(dre * dre + dim * dim) * inv
    i_q = tape.binary("magsq", i_dre, i_dim, q, -2.0 * inv * dre, -2.0 * inv * dim)
    lp = np.broadcast_to(logp[None, :], (n, m))
    i_logit = tape.binary("add", i_q, lp, logit, 1.0, 1.0).reshape(n, m)
    i_e = tape.unary("exp", i_logit, ev, ev).reshape(n, m)
    return TapeLogits(i_logit, i_e, mx)


def record_imdd_logits(tape, y, x, logp, sigma1, sigma2, n_nodes=None):
    """Record IM/DD logits log p(y_n | x_m) + logp_m with quadrature partials."""
    ll, dy, dx = imdd_loglik(tape.val(y), tape.val(x), sigma1, sigma2, n_nodes=n_nodes, with_grad=True)
    n, m = ll.shape
    Y = np.broadcast_to(y[:, None], (n, m))
    X = np.broadcast_to(x[None, :], (n, m))
    i_ll = tape.binary("imdd_loglik", Y, X, ll, dy, dx)
    lp = np.broadcast_to(logp[None, :], (n, m))
    logit = ll + tape.val(logp)[None, :]
    i_logit = tape.binary("add", i_ll, lp, logit, 1.0, 1.0).reshape(n, m)
    return _finish_logits(tape, i_logit)


def record_symbol_logpost(tape, lg, sym):
    """Nodes of log Q(x_n | y_n) (nats) at the transmitted symbols ``sym``."""
    n = sym.size
    rows = np.arange(n)
    i_s = tape.tree_sum(lg.e)
    i_lns = tape.ln(i_s)
    at = lg.logit[rows, sym]
    v = tape.val(at) - lg.mx - tape.val(i_lns)
    return tape.binary("lincomb", at, i_lns, v, 1.0, -1.0), i_lns


def record_bit_logpost(tape, lg, sym, bits, i_lns=None):
    """Nodes of sum_k log Q(b_k(x_n) | y_n) (nats), one per sample."""
    bits = np.asarray(bits)
    n, m = lg.logit.shape
    k = bits.shape[1]
    rows = np.arange(n)
    if i_lns is None:
        i_lns = tape.ln(tape.tree_sum(lg.e))
    if m == 2:
        # one bit pins the symbol: reuse the symbol log-posterior exactly
        at = lg.logit[rows, sym]
        v = tape.val(at) - lg.mx - tape.val(i_lns)
        return tape.binary("lincomb", at, i_lns, v, 1.0, -1.0)
    # cols[kk, b] lists the symbols whose k-th bit equals b
    cols = np.stack([
        np.stack([np.flatnonzero(bits[:, kk] == b) for b in (0, 1)]) for kk in range(k)
    ])
    tb = bits[sym]  # (N, K) transmitted bits
    sel = cols[np.arange(k)[None, :], tb]  # (N, K, M/2)
    e_sub = lg.e[rows[:, None, None], sel].reshape(n * k, -1)
    i_sub = tape.tree_sum(e_sub)
    shift = np.repeat(lg.mx, k)
    sub_v = tape.val(i_sub)
    bad = np.flatnonzero(sub_v < _TINY)
    if bad.size:
        # subset far below the global max: redo with its own shift
        l_sub = lg.logit[rows[:, None, None], sel].reshape(n * k, -1)[bad]
        lv = tape.val(l_sub)
        mx2 = lv.max(axis=1)
        ev = np.exp(lv - mx2[:, None])
        i_e2 = tape.unary("exp", l_sub, ev, ev).reshape(l_sub.shape)
        i_sub = i_sub.copy()
        i_sub[bad] = tape.tree_sum(i_e2)
        shift[bad] = mx2
    i_lnsub = tape.ln(i_sub)
    lns_rep = np.repeat(i_lns, k)
    v = tape.val(i_lnsub) + shift - np.repeat(lg.mx, k) - tape.val(lns_rep)
    i_lb = tape.binary("lincomb", i_lnsub, lns_rep, v, 1.0, -1.0).reshape(n, k)
    return tape.tree_sum(i_lb)
