"""Reference metrics and baselines.

Gauss-Hermite quadrature gives deterministic MI/BMI values for AWGN,
Monte Carlo estimates cover IM/DD, and the Maxwell-Boltzmann scan and
Blahut-Arimoto provide the baselines the learned distributions are
compared against.

BMI throughout is the bit-metric rate H(X) + sum_k E[log2 Q(b_k | Y)],
the quantity the training loss estimates.
"""
import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import _kernels, demappers
from .channels import AwgnParams, ImddParams, awgn_noise, imdd_noise
from .constellation import entropy_bits, mb_distribution, mb_nu_for_entropy, normalize
from .distribution import check_simplex
from .errors import BoundaryWarning, ConvergenceError

LOG2E = 1.0 / math.log(2.0)


def _lse(a, axis):
    mx = a.max(axis=axis, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    with np.errstate(divide="ignore"):
        return (np.log(np.exp(a - mx).sum(axis=axis, keepdims=True)) + mx).squeeze(axis)


# quadrature ---------------------------------------------------------------

@dataclass(frozen=True)
class QuadratureSpec:
    """2-D Gauss-Hermite rule for E[f(n)], n circular complex Gaussian."""

    nodes: int = 64

    def __post_init__(self):
        if self.nodes < 16:
            raise ValueError("at least 16 Gauss-Hermite nodes per dimension are required")

    def rule(self, sigma2):
        """Complex noise samples and weights (summing to 1) for variance sigma2."""
        t, w = np.polynomial.hermite.hermgauss(self.nodes)
        s = math.sqrt(sigma2)
        n = (s * t[:, None] + 1j * s * t[None, :]).ravel()
        ww = (w[:, None] * w[None, :]).ravel() / math.pi
        return n, ww


def _awgn_terms(points, p, sigma2, spec, bits=None):
    """Per-symbol quadrature expectations of log2 Q(x|y) and sum_k log2 Q(b_k|y)."""
    points = np.asarray(points, dtype=complex)
    p = check_simplex(p, tol=1e-9)
    n, ww = spec.rule(sigma2)
    with np.errstate(divide="ignore"):
        logp = np.ascontiguousarray(np.log(p))
    m_tot = points.size
    e_sym = np.zeros(m_tot)
    e_bit = np.zeros(m_tot)
    if bits is not None:
        bits = np.asarray(bits)
        masks = [(bits[:, k] == 0, bits[:, k] == 1) for k in range(bits.shape[1])]
    cre = np.ascontiguousarray(points.real)
    cim = np.ascontiguousarray(points.imag)
    for m in np.flatnonzero(p > 0):
        y = points[m] + n
        _, _, logit, e, mx = _kernels.awgn_pair_terms(
            np.ascontiguousarray(y.real), np.ascontiguousarray(y.imag), cre, cim,
            logp, 1.0 / sigma2)
        lse = np.log(e.sum(axis=1)) + mx
        e_sym[m] = ww @ (logit[:, m] - lse) * LOG2E
        if bits is not None:
            acc = np.zeros(n.size)
            for k, (m0, m1) in enumerate(masks):
                sel = m1 if bits[m, k] else m0
                s_sub = e[:, sel].sum(axis=1)
                low = s_sub < 1e-300
                with np.errstate(divide="ignore"):
                    l_sub = np.log(s_sub) + mx
                if low.any():
                    # subset far below the row maximum: use its own shift
                    l_sub[low] = _lse(logit[low][:, sel], 1)
                acc += l_sub - lse
            e_bit[m] = ww @ acc * LOG2E
    return p, e_sym, e_bit


def gh_mi_awgn(points, p, sigma2, spec=QuadratureSpec()):
    """MI (bits/symbol) of normalized ``points`` with priors ``p`` over AWGN."""
    p, e_sym, _ = _awgn_terms(points, p, sigma2, spec)
    return float(entropy_bits(p) + p @ e_sym)


def gh_bmi_awgn(points, bits, p, sigma2, spec=QuadratureSpec()):
    """Bit-metric rate H(p) + sum_m p_m E[sum_k log2 Q(b_k(m) | y)]."""
    p, _, e_bit = _awgn_terms(points, p, sigma2, spec, bits)
    return float(entropy_bits(p) + p @ e_bit)


def gh_metric_awgn(points, bits, p, sigma2, metric="mi", spec=QuadratureSpec()):
    if metric == "mi":
        return gh_mi_awgn(points, p, sigma2, spec)
    return gh_bmi_awgn(points, bits, p, sigma2, spec)


def shannon_capacity(esn0):
    """log2(1 + Es/N0), linear ``esn0``."""
    if esn0 <= 0:
        raise ValueError("esn0 must be positive (linear scale)")
    return math.log2(1.0 + esn0)


# Monte Carlo --------------------------------------------------------------

@dataclass(frozen=True)
class Estimate:
    value: float
    stderr: float


def _loglik_fn(channel, points, y_all=None, grid_points=16384):
    """Returns f(y) -> (len(y), M) log-likelihood matrix for the channel."""
    if isinstance(channel, AwgnParams):
        return lambda y: demappers.awgn_loglik(y, points, channel.sigma2)
    x = np.asarray(points).real
    if y_all is None:
        return lambda y: demappers.imdd_loglik(y, x, channel.sigma1, channel.sigma2)
    # tabulate on a fine y-grid spanning the samples and interpolate per symbol
    grid = np.linspace(float(y_all.min()), float(y_all.max()), grid_points)
    table = demappers.imdd_loglik(grid, x, channel.sigma1, channel.sigma2)

    def f(y):
        return np.stack([np.interp(y, grid, table[:, m]) for m in range(x.size)], axis=1)
    return f


def sample_values(sym, y, points, p, channel, metric="mi", bits=None, loglik=None):
    """Per-sample log2 Q(x|y)/p_x (MI) or sum_k log2 Q(b_k|y) - log2 p_x (BMI)."""
    p = np.asarray(p, dtype=float)
    sym = np.asarray(sym)
    loglik = loglik or _loglik_fn(channel, points)
    lq = demappers.log_posteriors(loglik(y), p)
    rows = np.arange(sym.size)
    with np.errstate(divide="ignore"):
        logp = np.log(p)[sym]
    if metric == "mi":
        return (lq[rows, sym] - logp) * LOG2E
    bits = np.asarray(bits)
    lb = demappers.bit_log_posteriors(lq, bits)
    tb = bits[sym]
    k = np.arange(bits.shape[1])
    return (lb[rows[:, None], k[None, :], tb].sum(axis=1) - logp) * LOG2E


def plain_estimate(sym, y, points, p, channel, metric="mi", bits=None):
    """Sample mean of :func:`sample_values` (plug-in estimator, no weights)."""
    return float(sample_values(sym, y, points, p, channel, metric, bits).mean())


def transmit(points, sym, channel, rng):
    x = np.asarray(points)[sym]
    if isinstance(channel, AwgnParams):
        return x + awgn_noise(sym.size, channel, rng)
    n1, n2 = imdd_noise(sym.size, channel, rng)
    return (x.real + n1) ** 2 + n2


def mc_metric(channel, points, p, n, rng, metric="mi", bits=None, chunk=1 << 16):
    """i.i.d. Monte Carlo estimate of MI/BMI (bits/symbol) with standard error."""
    if n < 100_000:
        raise ValueError("Monte Carlo metric needs at least 1e5 samples")
    p = check_simplex(p, tol=1e-9)
    points = np.asarray(points)
    sym = rng.choice(p.size, size=n, p=p)
    y = transmit(points, sym, channel, rng)
    loglik = None
    if isinstance(channel, ImddParams):
        loglik = _loglik_fn(channel, points, y_all=y)
    vals = np.concatenate([
        sample_values(sym[i:i + chunk], y[i:i + chunk], points, p, channel, metric, bits,
                      loglik)
        for i in range(0, n, chunk)
    ])
    return Estimate(float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n)))


# Maxwell-Boltzmann scan ---------------------------------------------------

@dataclass(frozen=True)
class MBScanResult:
    nu: float
    p: np.ndarray
    metric: float
    grid: np.ndarray
    values: np.ndarray


def mb_nu_max(c):
    """Upper end of the default scan: entropy max(K/4, floor + 0.5) bits."""
    e = c.energies
    floor = math.log2(int(np.isclose(e, e.min()).sum()))
    return mb_nu_for_entropy(c, max(c.K / 4.0, floor + 0.5))


def mb_scan(c, sigma2, nu_grid=None, metric="mi", spec=QuadratureSpec(), tol=1e-4):
    """Best Maxwell-Boltzmann prior for AWGN under average-power normalization.

    Evaluates the metric on ``nu_grid`` (default 41 points on [0, nu_max]),
    then refines the grid argmax by golden-section search on the neighbouring
    interval.
    """
    if nu_grid is None:
        nu_grid = np.linspace(0.0, mb_nu_max(c), 41)
    nu_grid = np.asarray(nu_grid, dtype=float)

    def f(nu):
        p = mb_distribution(c, nu)
        pts = normalize(c, p, "average-power").points
        return gh_metric_awgn(pts, c.bits, p, sigma2, metric, spec)

    values = np.array([f(v) for v in nu_grid])
    i = int(np.argmax(values))
    if i == nu_grid.size - 1:
        warnings.warn("MB scan optimum at the upper grid boundary", BoundaryWarning,
                      stacklevel=2)
    lo = nu_grid[max(i - 1, 0)]
    hi = nu_grid[min(i + 1, nu_grid.size - 1)]
    best_nu, best = nu_grid[i], values[i]
    g = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    x1, x2 = b - g * (b - a), a + g * (b - a)
    f1, f2 = f(x1), f(x2)
    while b - a > tol * max(1.0, abs(b)):
        if f1 >= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - g * (b - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + g * (b - a)
            f2 = f(x2)
    for nu, v in ((x1, f1), (x2, f2)):
        if v > best:
            best_nu, best = nu, v
    return MBScanResult(float(best_nu), mb_distribution(c, best_nu), float(best),
                        nu_grid, values)


# Blahut-Arimoto -----------------------------------------------------------

@dataclass(frozen=True)
class BAResult:
    capacity: float
    p: np.ndarray
    history: np.ndarray
    iterations: int


def _divergences(L, logL, r):
    """D(L_m || r) in bits for every row of the transition matrix."""
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(L > 0, L * (logL - np.log(r)[None, :]), 0.0)
    return t.sum(axis=1) * LOG2E


def blahut_arimoto(L, tol=1e-9, max_iter=100_000, p0=None):
    """Capacity (bits) and optimal input of the channel with rows ``L[m]``.

    Rows are normalized to sum 1. Iterates p <- p * 2^D(L_m || pL) until the
    gap between the upper bound max_m D_m and the rate I(p) is below ``tol``
    (which bounds the remaining capacity change).
    """
    L = np.asarray(L, dtype=float)
    if np.any(L < 0):
        raise ValueError("transition matrix must be non-negative")
    L = L / L.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore"):
        logL = np.log(L)
    m = L.shape[0]
    p = np.full(m, 1.0 / m) if p0 is None else np.asarray(p0, dtype=float)
    hist = []
    for it in range(1, max_iter + 1):
        d = _divergences(L, logL, p @ L)
        rate = float(p @ d)
        hist.append(rate)
        if d.max() - rate < tol:
            return BAResult(rate, p, np.array(hist), it)
        p = p * np.exp2(d - d.max())
        p /= p.sum()
    raise ConvergenceError(f"Blahut-Arimoto did not converge in {max_iter} iterations",
                           last_iterate=BAResult(hist[-1], p, np.array(hist), max_iter))


def awgn_pam_matrix(x, sigma2, cells=2048, span=8.0):
    """Transition matrix of real amplitudes ``x`` over complex AWGN (real part only).

    The imaginary noise carries no information about a real input, so the
    channel reduces to a 1-D Gaussian of variance sigma2/2. Trapezoid cell
    weights on a y-grid covering +-span standard deviations beyond the points.
    """
    x = np.asarray(x, dtype=float)
    s = math.sqrt(sigma2 / 2.0)
    y = np.linspace(x.min() - span * s, x.max() + span * s, cells)
    h = y[1] - y[0]
    cw = np.full(cells, h)
    cw[[0, -1]] *= 0.5
    dens = np.exp(-((y[None, :] - x[:, None]) ** 2) / (2 * s * s)) / (math.sqrt(2 * math.pi) * s)
    return dens * cw[None, :], y


def imdd_matrix(x, sigma1, sigma2, cells=2048, span=8.0):
    """IM/DD transition matrix on a y-grid covering the output support."""
    x = np.asarray(x, dtype=float)
    y = np.linspace(-span * sigma2, (x.max() + span * sigma1) ** 2 + span * sigma2, cells)
    h = y[1] - y[0]
    cw = np.full(cells, h)
    cw[[0, -1]] *= 0.5
    dens = np.exp(demappers.imdd_loglik(y, x, sigma1, sigma2)).T
    return dens * cw[None, :], y


# gradient check -----------------------------------------------------------

def gradient_exactness_check(setup, N=512, batch_seed=0, p=None, h=1e-6):
    """Max relative error between autodiff and finite-difference dLoss/dp.

    One batch (composition and noise) is frozen. The autodiff gradient in the
    weights is divided by q_m; the reference perturbs p_m directly (w = p/q,
    normalization and posteriors recomputed) with central differences.
    Relative errors use max(1, |fd|) as denominator.
    """
    from . import losses
    from .distribution import approximate_vd, draw_batch, make_rng

    c = setup.constellation
    p = np.full(c.M, 1.0 / c.M) if p is None else np.asarray(p, dtype=float)
    rng = make_rng(batch_seed)
    t = approximate_vd(p, N)
    sym = draw_batch(t, rng)
    batch = losses.Batch(sym, t.counts, losses.draw_noise(setup, N, rng))
    q = t.q
    _, g = losses.loss_and_grad(p / q, batch, setup)
    auto = g / q
    fd = np.empty(c.M)
    for m in range(c.M):
        hi, lo = p.copy(), p.copy()
        hi[m] += h
        lo[m] -= h
        fd[m] = (losses.loss_value(hi / q, batch, setup)
                 - losses.loss_value(lo / q, batch, setup)) / (2 * h)
    return float(np.max(np.abs(auto - fd) / np.maximum(1.0, np.abs(fd))))
