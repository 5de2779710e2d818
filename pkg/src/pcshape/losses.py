"""Importance-sampled MI and BMI estimators recorded on an autodiff tape.

For a batch whose symbol m occurs exactly n_m times (q_m = n_m/N) and
weights w_m = p_m/q_m, the estimators are

    -(1/N) sum_m n_m w_m (log2 q_m + log2 w_m)
        + (1/N) sum_m w_m sum_{n in B_m} log2 Q(x_n | y_n)           (MI)

with the last sum replaced by sum_k log2 Q(b_k | y_n) for BMI. The weights
enter as tape leaves; the batch composition and the noise do not depend on
them, so the tape gradient is the exact gradient of the estimator.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from . import demappers
from .autodiff import LN2, Tape, Var, sqrt
from .channels import (
    AwgnParams,
    ImddParams,
    awgn_noise,
    awgn_transmit,
    imdd_noise,
    imdd_transmit,
)
from .errors import InvalidComposition

METRICS = ("mi", "bmi")


@dataclass(frozen=True)
class LossSetup:
    """Everything a batch loss needs besides the weights and the batch."""

    constellation: object
    channel: object  # AwgnParams or ImddParams
    metric: str = "mi"
    constraint: str = "average-power"
    imdd_nodes: int = None  # None: chosen per batch from the current amplitudes

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}, got {self.metric!r}")
        if not isinstance(self.channel, (AwgnParams, ImddParams)):
            raise TypeError("channel must be AwgnParams or ImddParams")


@dataclass
class Batch:
    """One frozen batch: symbol order, composition and noise realization."""

    sym: np.ndarray
    counts: np.ndarray
    noise: object = None

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if np.any(counts < 1):
            raise InvalidComposition("empty bin: every symbol must occur in the batch")
        if not np.array_equal(np.bincount(self.sym, minlength=counts.size), counts):
            raise InvalidComposition("symbol sequence does not match the composition")

    @property
    def N(self):
        return int(self.sym.size)


@dataclass
class Recorded:
    loss: Var
    w_nodes: np.ndarray
    extras: dict = field(default_factory=dict)


def _record_points(tape, setup, iw, w, q):
    """Normalized constellation nodes (real, imag) as functions of the weights."""
    c = setup.constellation
    energies = c.energies
    if setup.constraint == "average-power":
        coef = q * energies
        i_e = tape.unary("scale", iw, w * coef, coef)
        energy = Var(tape, int(tape.tree_sum(i_e)[0]))
        inv_scale = 1.0 / sqrt(energy)
        m = c.M
        src = np.full(m, inv_scale.index)
        s = inv_scale.value
        cre = tape.unary("scale", src, c.points.real * s, c.points.real)
        cim = tape.unary("scale", src, c.points.imag * s, c.points.imag)
        return cre, cim
    if setup.constraint == "peak-power":
        s = 1.0 / math.sqrt(energies.max())
    elif setup.constraint == "none":
        s = 1.0
    else:
        raise ValueError(f"unknown constraint {setup.constraint!r}")
    return tape.leaves(c.points.real * s), tape.leaves(c.points.imag * s)


def record_loss(tape, w, batch, setup):
    """Record the batch estimator as a function of weight leaves.

    Returns a :class:`Recorded` with the loss Var (bits/symbol) and the
    weight leaf indices.
    """
    w = np.asarray(w, dtype=float)
    counts = np.asarray(batch.counts, dtype=np.int64)
    n_tot = batch.N
    c = setup.constellation
    if w.size != c.M or counts.size != c.M:
        raise ValueError("weights, composition and constellation sizes differ")
    q = counts / n_tot
    logq = np.log(counts) - math.log(n_tot)

    iw = tape.leaves(w)
    lw = tape.ln(iw)
    lw_v = tape.val(lw)
    logp = tape.unary("add", lw, lw_v + logq, 1.0)
    cre, cim = _record_points(tape, setup, iw, w, q)

    sym = np.asarray(batch.sym)
    ch = setup.channel
    if isinstance(ch, AwgnParams):
        yre, yim, noise = awgn_transmit(tape, cre[sym], cim[sym], ch, noise=batch.noise)
        lg = demappers.record_awgn_logits(tape, yre, yim, cre, cim, logp, ch.sigma2)
    else:
        y, noise = imdd_transmit(tape, cre[sym], ch, noise=batch.noise)
        lg = demappers.record_imdd_logits(
            tape, y, cre, logp, ch.sigma1, ch.sigma2, n_nodes=setup.imdd_nodes
        )

    if setup.metric == "mi":
        per_sample, _ = demappers.record_symbol_logpost(tape, lg, sym)
    else:
        per_sample = demappers.record_bit_logpost(tape, lg, sym, c.bits)

    order = np.argsort(sym, kind="stable")
    t_bins = tape.group_sum(per_sample[order], counts)
    t_v = tape.val(t_bins)
    a_coef = lw_v + logq
    i_a = tape.binary("mul", iw, lw, w * a_coef, a_coef, w)
    i_b = tape.binary("mul", iw, t_bins, w * t_v, t_v, w)
    ca = -counts / (n_tot * LN2)
    cb = 1.0 / (n_tot * LN2)
    term_v = ca * tape.val(i_a) + cb * tape.val(i_b)
    i_term = tape.binary("lincomb", i_a, i_b, term_v, ca, cb)
    loss = Var(tape, int(tape.tree_sum(i_term)[0]))
    return Recorded(loss, iw, {"noise": noise})


def loss_and_grad(w, batch, setup, tape=None):
    """Estimator value and its gradient with respect to the weights."""
    tape = tape if tape is not None else Tape()
    tape.clear()
    rec = record_loss(tape, w, batch, setup)
    return rec.loss.value, tape.gradient(rec.loss, rec.w_nodes)


def loss_value(w, batch, setup, tape=None):
    tape = tape if tape is not None else Tape()
    tape.clear()
    return record_loss(tape, w, batch, setup).loss.value


def draw_noise(setup, n, rng):
    if isinstance(setup.channel, AwgnParams):
        return awgn_noise(n, setup.channel, rng)
    return imdd_noise(n, setup.channel, rng)


def mi_importance(w, batch, setup, tape=None):
    """Importance-sampled MI estimate (bits/symbol) for one frozen batch."""
    return loss_value(w, batch, _with_metric(setup, "mi"), tape)


def bmi_importance(w, batch, setup, tape=None):
    """Importance-sampled BMI estimate (bits/symbol) for one frozen batch."""
    return loss_value(w, batch, _with_metric(setup, "bmi"), tape)


def _with_metric(setup, metric):
    if setup.metric == metric:
        return setup
    return LossSetup(setup.constellation, setup.channel, metric, setup.constraint,
                     setup.imdd_nodes)
