"""Pure numpy implementations of the hot kernels.

Every function here has a twin in ``_ckernels.pyx`` with the same signature
and semantics; results agree to rounding (not bitwise).
"""
import math

import numpy as np

_SMALL_SEGMENT = 16
_IMDD_CHUNK_ELEMS = 1 << 21


def backward_sweep(p1, p2, d1, d2, root, seg_starts):
    """Reverse sweep over a tape; returns the adjoint of every node <= root.

    ``seg_starts`` lists the first node of every segment. Nodes inside one
    segment never depend on each other, so a segment's contributions can be
    scattered in one vectorized step once its own adjoints are final.
    """
    n = root + 1
    adj = np.zeros(n)
    adj[root] = 1.0
    bounds = np.append(seg_starts, np.iinfo(np.int64).max)
    last = int(np.searchsorted(bounds, root, side="right")) - 1
    for s in range(last, -1, -1):
        lo = int(bounds[s])
        hi = min(int(bounds[s + 1]), n)
        if hi - lo <= _SMALL_SEGMENT:
            for i in range(hi - 1, lo - 1, -1):
                g = adj[i]
                if g == 0.0:
                    continue
                j = p1[i]
                if j >= 0:
                    adj[j] += g * d1[i]
                j = p2[i]
                if j >= 0:
                    adj[j] += g * d2[i]
            continue
        g = adj[lo:hi]
        live = g != 0.0
        if not live.any():
            continue
        for par, part in ((p1[lo:hi], d1[lo:hi]), (p2[lo:hi], d2[lo:hi])):
            mask = live & (par >= 0)
            if not mask.any():
                continue
            idx = par[mask]
            contrib = g[mask] * part[mask]
            base = int(idx.min())
            acc = np.bincount(idx - base, weights=contrib,
                              minlength=int(idx.max()) - base + 1)
            adj[base:base + acc.size] += acc
    return adj


def awgn_pair_terms(yre, yim, cre, cim, logp, inv_sigma2):
    """Per (sample, symbol) terms of the matched AWGN log-posterior.

    Returns ``dre, dim, logit, e, mx`` where ``logit = logp - |y - c|^2/s2``,
    ``mx`` is the row max of ``logit`` and ``e = exp(logit - mx)``.
    """
    dre = yre[:, None] - cre[None, :]
    dim = yim[:, None] - cim[None, :]
    logit = -(dre * dre + dim * dim) * inv_sigma2 + logp[None, :]
    mx = logit.max(axis=1)
    e = np.exp(logit - mx[:, None])
    return dre, dim, logit, e, mx


def imdd_nodes(x, sigma1, sigma2, n_min, coverage=8.0):
    """Shared quadrature node count for amplitudes ``x``."""
    u_max = float(np.max(x)) + coverage * sigma1
    h_req = 0.5 * min(sigma1, sigma2 / (2.0 * u_max))
    return max(int(n_min), int(math.ceil(u_max / h_req)) + 1)


def imdd_loglik(y, x, sigma1, sigma2, n_nodes, coverage=8.0):
    """log p(y|x) for y = (x + n1)^2 + n2 and its partials in y and x.

    Trapezoid rule over the amplitude u = |x + n1| on [0, x + coverage*sigma1] with
    ``n_nodes`` nodes; the integrand is even in u so the rule converges
    spectrally. Returns three (len(y), len(x)) arrays.
    """
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    n_y, n_x = y.size, x.size
    ll = np.empty((n_y, n_x))
    dy = np.empty((n_y, n_x))
    dx = np.empty((n_y, n_x))
    t = np.linspace(0.0, 1.0, n_nodes)
    tw = np.ones(n_nodes)
    tw[0] = tw[-1] = 0.5
    a1 = 0.5 / sigma1**2
    a2 = 0.5 / sigma2**2
    norm = math.log(2.0 * math.pi * sigma1 * sigma2)
    rows = max(1, _IMDD_CHUNK_ELEMS // n_nodes)
    for m in range(n_x):
        xm = x[m]
        u_max = xm + coverage * sigma1
        h = u_max / (n_nodes - 1)
        u = t * u_max
        um = (u - xm)[None, :]
        up = (u + xm)[None, :]
        u2 = (u * u)[None, :]
        # N(u; -x) / N(u; x)
        rho = np.exp(-4.0 * a1 * u * xm)[None, :]
        for lo in range(0, n_y, rows):
            yc = y[lo:lo + rows, None]
            r = yc - u2
            base = -a2 * r * r
            g1 = base - a1 * um * um
            amax = g1.max(axis=1, keepdims=True)
            e1 = np.exp(g1 - amax) * tw
            e2 = e1 * rho
            es = e1 + e2
            s = es.sum(axis=1)
            sx = (e1 * um - e2 * up).sum(axis=1) * (2.0 * a1)
            sy = -(es * r).sum(axis=1) * (2.0 * a2)
            ll[lo:lo + rows, m] = amax[:, 0] + np.log(s * h) - norm
            dx[lo:lo + rows, m] = sx / s
            dy[lo:lo + rows, m] = sy / s
    return ll, dy, dx
