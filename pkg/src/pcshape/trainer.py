"""Weight learning: epochs with fresh type approximations, batches with
gradient-ascent steps on the importance-sampled estimator.

Each epoch approximates the current P by an integer composition Q, resets
W = P/Q and runs B batch updates of W. Between updates the weights are
projected back so that P~ = W Q stays a distribution; at the end of the
epoch P = W Q.
"""
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import constellation as cst
from . import losses
from .autodiff import Tape
from .channels import AwgnParams, ImddParams
from .distribution import (
    approximate_vd,
    check_simplex,
    draw_batch,
    make_rng,
    probs_from,
    random_dirichlet,
    weights_from,
)
from .errors import DomainError, InvalidValue, OptimizerAbort, TrainingAborted

OPTIMIZERS = ("cocob", "adam", "sgd")
INITS = ("uniform", "mb", "explicit", "random-dirichlet")


# configuration ------------------------------------------------------------

@dataclass(frozen=True)
class ChannelSpec:
    kind: str  # "awgn" or "imdd"
    esn0_db: float = None
    sigma1: float = None
    sigma2: float = None

    def params(self):
        if self.kind == "awgn":
            if self.esn0_db is None:
                raise ValueError("AWGN channel needs esn0_db")
            return AwgnParams(float(self.esn0_db))
        if self.kind == "imdd":
            if self.sigma1 is None or self.sigma2 is None:
                raise ValueError("IM/DD channel needs sigma1 and sigma2")
            return ImddParams(float(self.sigma1), float(self.sigma2))
        raise ValueError(f"unknown channel kind {self.kind!r}")


@dataclass(frozen=True)
class ConstellationSpec:
    kind: str
    M: int

    def build(self):
        return cst.build(self.kind, int(self.M))


@dataclass(frozen=True)
class OptimizerSpec:
    name: str = "cocob"
    alpha: float = 100.0  # COCOB
    lr: float = 1e-2  # Adam / SGD
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    reset: str = "epoch"  # optimizer state: fresh every epoch, or "persist"

    def __post_init__(self):
        if self.name not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}, got {self.name!r}")
        if self.reset not in ("epoch", "persist"):
            raise ValueError("optimizer reset must be 'epoch' or 'persist'")


@dataclass(frozen=True)
class TrainingConfig:
    channel: ChannelSpec
    constellation: ConstellationSpec
    metric: str = "mi"
    constraint: str = "average-power"
    epochs: int = 200
    batches: int = 20
    batch_size: int = 1 << 15
    optimizer: OptimizerSpec = OptimizerSpec()
    seed: int = 0
    init: str = "uniform"
    init_nu: float = None  # mb: None picks H(P) = K - 1 bits
    init_p: tuple = None  # explicit
    restarts: int = 0  # extra Dirichlet(1) starts
    project: bool = True
    tangent: bool = True  # step along the gradient's tangent to sum w q = 1
    validate_every: int = 1  # epochs between quadrature checks (0: never)
    imdd_nodes: int = None

    def __post_init__(self):
        if self.epochs < 1 or self.batches < 1:
            raise ValueError("epochs and batches must be at least 1")
        if self.metric not in losses.METRICS:
            raise ValueError(f"metric must be one of {losses.METRICS}")
        if self.constraint not in cst.CONSTRAINTS:
            raise ValueError(f"constraint must be one of {cst.CONSTRAINTS}")
        if self.init not in INITS:
            raise ValueError(f"init must be one of {INITS}")
        if self.batch_size < self.constellation.M:
            raise ValueError("batch size must be at least the constellation size")
        if self.restarts < 0:
            raise ValueError("restarts must be non-negative")
        self.channel.params()
        self.constellation.build()

    def setup(self):
        return losses.LossSetup(self.constellation.build(), self.channel.params(),
                                self.metric, self.constraint, self.imdd_nodes)

    def to_dict(self):
        d = asdict(self)
        if d["init_p"] is not None:
            d["init_p"] = [float(v) for v in d["init_p"]]
        return d


# optimizers ---------------------------------------------------------------

def _check_grads(grads):
    grads = np.asarray(grads, dtype=float)
    if not np.all(np.isfinite(grads)):
        raise OptimizerAbort(f"non-finite gradient at index {int(np.flatnonzero(~np.isfinite(grads))[0])}")
    return grads


@dataclass
class CocobState:
    """Coin-betting accumulators; ``x1`` is the betting anchor."""

    x1: np.ndarray
    L: np.ndarray = None
    G: np.ndarray = None
    R: np.ndarray = None
    theta: np.ndarray = None
    alpha: float = 100.0

    def __post_init__(self):
        self.x1 = np.array(self.x1, dtype=float)
        zeros = np.zeros_like(self.x1)
        for name in ("L", "G", "R", "theta"):
            if getattr(self, name) is None:
                setattr(self, name, zeros.copy())


def cocob_step(state, params, grads):
    """One COCOB-Backprop step; ``grads`` are ascent directions (maximizing).

    Coordinates that have not yet seen a non-zero gradient stay put.
    """
    params = np.asarray(params, dtype=float)
    if params.shape != state.x1.shape:
        raise ValueError("optimizer state and parameters differ in shape")
    g = -_check_grads(grads)
    a = np.abs(g)
    state.L = np.maximum(state.L, a)
    state.G = state.G + a
    state.R = np.maximum(state.R - (params - state.x1) * g, 0.0)
    state.theta = state.theta + g
    L = state.L
    out = params.copy()
    live = L > 0
    denom = L[live] * np.maximum(state.G[live] + L[live], state.alpha * L[live])
    out[live] = state.x1[live] - state.theta[live] / denom * (L[live] + state.R[live])
    return out


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_step(state, params, grads, lr=1e-2, beta1=0.9, beta2=0.999, eps=1e-8):
    """Bias-corrected Adam ascent step."""
    g = _check_grads(grads)
    state.t += 1
    state.m = beta1 * state.m + (1 - beta1) * g
    state.v = beta2 * state.v + (1 - beta2) * g * g
    mh = state.m / (1 - beta1**state.t)
    vh = state.v / (1 - beta2**state.t)
    out = np.asarray(params, dtype=float) + lr * mh / (np.sqrt(vh) + eps)
    if not np.all(np.isfinite(state.m)) or not np.all(np.isfinite(state.v)):
        raise OptimizerAbort("Adam moments became non-finite")
    return out


def sgd_step(params, grads, lr=1e-2):
    return np.asarray(params, dtype=float) + lr * _check_grads(grads)


def tangent_gradient(g, q):
    """Component of ``g`` orthogonal to q, the normal of sum w_m q_m = 1."""
    q = np.asarray(q, dtype=float)
    return g - q * (np.dot(g, q) / np.dot(q, q))


def project_weights(w, q):
    """Clamp w_m to at least 1e-6/(q_m M), then rescale so sum w_m q_m = 1."""
    q = np.asarray(q, dtype=float)
    w = np.maximum(np.asarray(w, dtype=float), 1e-6 / (q * q.size))
    return w / np.dot(w, q)


class _Optimizer:
    def __init__(self, spec, n):
        self.spec = spec
        self.n = n
        self.state = None

    def start_epoch(self, w_start, w_prev_end=None):
        s = self.spec
        if self.state is None or s.reset == "epoch":
            if s.name == "cocob":
                self.state = CocobState(w_start, alpha=s.alpha)
            elif s.name == "adam":
                self.state = AdamState.zeros(self.n)
            else:
                self.state = True
        elif s.name == "cocob":
            # keep the betting history; move the anchor with the reparameterization
            self.state.x1 = self.state.x1 + (w_start - w_prev_end)

    def step(self, w, g):
        s = self.spec
        if s.name == "cocob":
            return cocob_step(self.state, w, g)
        if s.name == "adam":
            return adam_step(self.state, w, g, s.lr, s.beta1, s.beta2, s.eps)
        return sgd_step(w, g, s.lr)


# training -----------------------------------------------------------------

@dataclass
class TrainingResult:
    p: np.ndarray
    trace: np.ndarray  # (E*B,) batch losses in bits/symbol
    epoch_metric: list  # (epoch, value) pairs from quadrature
    config: dict
    seed: int
    wall_time: float = 0.0
    final_metric: float = None
    restarts: list = field(default_factory=list)
    constellation: dict = None

    def to_dict(self, include_timing=False):
        d = {
            "p": [float(v) for v in self.p],
            "trace": [float(v) for v in self.trace],
            "epoch_metric": [[int(e), float(v)] for e, v in self.epoch_metric],
            "final_metric": None if self.final_metric is None else float(self.final_metric),
            "config": self.config,
            "seed": int(self.seed),
            "constellation": self.constellation,
            "restarts": self.restarts,
        }
        if include_timing:
            d["wall_time"] = float(self.wall_time)
        return d


def initial_distribution(config, c, rng):
    if config.init == "uniform":
        return np.full(c.M, 1.0 / c.M)
    if config.init == "mb":
        nu = config.init_nu
        if nu is None:
            nu = cst.mb_nu_for_entropy(c, c.K - 1.0)
        return cst.mb_distribution(c, nu)
    if config.init == "explicit":
        if config.init_p is None or len(config.init_p) != c.M:
            raise ValueError("explicit init needs init_p with M entries")
        return check_simplex(config.init_p)
    return random_dirichlet(c.M, rng)


def quadrature_metric(setup, p):
    """Quadrature MI/BMI at P for AWGN; None where no quadrature exists."""
    from .validation import gh_metric_awgn

    if not isinstance(setup.channel, AwgnParams):
        return None
    c = setup.constellation
    pts = cst.normalize(c, p, setup.constraint).points
    return gh_metric_awgn(pts, c.bits, p, setup.channel.sigma2, setup.metric)


def _run(config, setup, p, rng, progress=None):
    c = setup.constellation
    E, B, N = config.epochs, config.batches, config.batch_size
    opt = _Optimizer(config.optimizer, c.M)
    tape = Tape(1 << 16)
    trace = np.empty(E * B)
    epoch_metric = []
    w_end = None
    for epoch in range(E):
        t = approximate_vd(p, N)
        q = t.q
        w = weights_from(p, q)
        opt.start_epoch(w, w_end)
        for b in range(B):
            snap = {"epoch": epoch, "batch": b}
            sym = draw_batch(t, rng)
            batch = losses.Batch(sym, t.counts, losses.draw_noise(setup, N, rng))
            try:
                loss, grad = losses.loss_and_grad(w, batch, setup, tape)
            except (DomainError, InvalidValue) as exc:
                snap["node"] = str(exc)
                raise TrainingAborted(f"non-finite value while recording: {exc}", snap) from exc
            if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
                bad = np.flatnonzero(~np.isfinite(grad))
                snap["node"] = "loss" if not math.isfinite(loss) else f"w[{int(bad[0])}]"
                raise TrainingAborted("non-finite loss or gradient", snap)
            trace[epoch * B + b] = loss
            if config.tangent:
                grad = tangent_gradient(grad, q)
            try:
                w = opt.step(w, grad)
            except OptimizerAbort as exc:
                snap["node"] = str(exc)
                raise TrainingAborted(str(exc), snap) from exc
            if config.project:
                w = project_weights(w, q)
        w_end = w
        p = probs_from(w, q)
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise TrainingAborted("weights left the simplex (projection disabled?)",
                                  {"epoch": epoch, "batch": B - 1, "node": "p"})
        p = p / p.sum()
        if config.validate_every and ((epoch + 1) % config.validate_every == 0
                                      or epoch == E - 1):
            v = quadrature_metric(setup, p)
            if v is not None:
                epoch_metric.append((epoch, v))
        if progress is not None:
            progress(epoch, p, trace[epoch * B:(epoch + 1) * B])
    return p, trace, epoch_metric


def _score(p, trace, epoch_metric, B):
    if epoch_metric:
        return epoch_metric[-1][1]
    return float(trace[-B:].mean())


def train(config, progress=None):
    """Run weight learning and return a :class:`TrainingResult`.

    With ``restarts`` > 0 additional runs start from Dirichlet(1) draws on
    independent random streams; the run with the best final metric (quadrature
    if available, else the last epoch's mean batch loss) is returned.
    """
    t0 = time.perf_counter()
    setup = config.setup()
    c = setup.constellation
    streams = np.random.SeedSequence(config.seed).spawn(config.restarts + 1)
    best = None
    summary = []
    for r, ss in enumerate(streams):
        rng = make_rng(ss)
        if r == 0:
            p0 = initial_distribution(config, c, rng)
        else:
            p0 = random_dirichlet(c.M, rng)
        p, trace, em = _run(config, setup, p0, rng, progress)
        score = _score(p, trace, em, config.batches)
        summary.append({"restart": r, "score": float(score)})
        if best is None or score > best[0]:
            best = (score, p, trace, em)
    _, p, trace, em = best
    return TrainingResult(
        p=p,
        trace=trace,
        epoch_metric=em,
        config=config.to_dict(),
        seed=int(config.seed),
        wall_time=time.perf_counter() - t0,
        final_metric=em[-1][1] if em else None,
        restarts=summary,
        constellation=c.to_dict(),
    )


def config_from_dict(d):
    """Inverse of :meth:`TrainingConfig.to_dict`."""
    d = dict(d)
    d["channel"] = ChannelSpec(**d["channel"])
    d["constellation"] = ConstellationSpec(**d["constellation"])
    d["optimizer"] = OptimizerSpec(**d["optimizer"])
    if d.get("init_p") is not None:
        d["init_p"] = tuple(d["init_p"])
    return TrainingConfig(**d)
