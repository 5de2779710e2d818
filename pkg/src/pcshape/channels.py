"""Differentiable stochastic channels with reparameterized noise.

SNR convention for AWGN: complex baseband, unit average symbol energy after
normalization and N0 equal to the total complex noise variance, so
Es/N0 = 1/sigma^2 (sigma^2/2 per real dimension).

The noise realization enters the tape as a constant, so the channel output is
a deterministic differentiable function of the transmitted amplitudes.
"""
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class AwgnParams:
    esn0_db: float

    @property
    def sigma2(self):
        return 10.0 ** (-self.esn0_db / 10.0)

    @property
    def esn0(self):
        return 10.0 ** (self.esn0_db / 10.0)


@dataclass(frozen=True)
class ImddParams:
    sigma1: float
    sigma2: float

    def __post_init__(self):
        if not (self.sigma1 > 0 and self.sigma2 > 0):
            raise ValueError("IM/DD noise standard deviations must be positive")


def awgn_noise(n, params, rng):
    z = rng.standard_normal((n, 2)) * np.sqrt(params.sigma2 / 2.0)
    return z[:, 0] + 1j * z[:, 1]


def imdd_noise(n, params, rng):
    z = rng.standard_normal((2, n))
    return params.sigma1 * z[0], params.sigma2 * z[1]


def awgn_channel(x, params, rng):
    """Plain (off-tape) AWGN: y = x + n."""
    return np.asarray(x, dtype=complex) + awgn_noise(np.size(x), params, rng)


def imdd_channel(x, params, rng):
    """Plain (off-tape) square-law channel: y = (x + n1)^2 + n2 with real n1."""
    n1, n2 = imdd_noise(np.size(x), params, rng)
    return (np.asarray(x, dtype=float) + n1) ** 2 + n2


def awgn_transmit(tape, xre, xim, params, rng=None, noise=None):
    """Record y = x + n on ``tape`` for node arrays ``xre``, ``xim``.

    Pass a fixed ``noise`` (complex array) to replay a realization.
    Returns ``(yre, yim, noise)`` with the output node indices.
    """
    xre = np.asarray(xre)
    xim = np.asarray(xim)
    if noise is None:
        noise = awgn_noise(xre.size, params, rng)
    yre = tape.unary("add", xre, tape.val(xre) + noise.real, 1.0)
    yim = tape.unary("add", xim, tape.val(xim) + noise.imag, 1.0)
    return yre, yim, noise


def imdd_transmit(tape, x, params, rng=None, noise=None):
    """Record y = (x + n1)^2 + n2; dy/dx = 2 (x + n1).

    ``noise`` is an ``(n1, n2)`` pair to replay a realization.
    """
    x = np.asarray(x)
    if noise is None:
        noise = imdd_noise(x.size, params, rng)
    n1, n2 = noise
    a = tape.val(x) + n1
    y = tape.unary("square", x, a * a + n2, 2.0 * a)
    return y, noise
