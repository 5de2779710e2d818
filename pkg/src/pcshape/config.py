"""Experiment configuration files.

Configs are YAML documents. Errors name the offending field and, where the
field exists in the file, its line number. Example::

    schema_version: 1
    channel: {kind: awgn, esn0_db: 14.0}
    constellation: {kind: qam, M: 64}
    metric: mi
    constraint: average-power
    seed: 1
    training: {epochs: 50, batches: 10, batch_size: 8192, init: uniform}
    optimizer: {name: cocob}
    sweep: {esn0_db: [10, 14, 18]}
    baseline: {method: mb-scan}
    output: runs/qam64
"""
import re
from dataclasses import dataclass, field, replace

import yaml

from . import losses
from .constellation import CONSTRAINTS, KINDS
from .errors import ConfigError
from .trainer import (
    INITS,
    OPTIMIZERS,
    ChannelSpec,
    ConstellationSpec,
    OptimizerSpec,
    TrainingConfig,
)

SCHEMA_VERSION = 1
BASELINES = ("mb-scan", "blahut-arimoto", "uniform")

_TOP = {"schema_version", "channel", "constellation", "metric", "constraint", "seed",
        "training", "optimizer", "sweep", "baseline", "validation", "output"}
_TRAINING = {"epochs", "batches", "batch_size", "init", "init_nu", "init_p", "restarts",
             "project", "tangent", "validate_every", "imdd_nodes"}
_OPTIMIZER = {"name", "alpha", "lr", "beta1", "beta2", "eps", "reset"}
_CHANNEL = {"kind", "esn0_db", "sigma1", "sigma2"}
_CONSTELLATION = {"kind", "M"}
_SWEEP = {"esn0_db", "sigma1", "sigma2", "levels"}
_BASELINE = {"method", "tol", "cells", "nu_points"}
_VALIDATION = {"mc_samples", "quadrature_nodes"}


@dataclass(frozen=True)
class SweepSpec:
    esn0_db: tuple = ()
    sigma1: tuple = ()
    sigma2: tuple = ()
    levels: tuple = ()


@dataclass(frozen=True)
class BaselineSpec:
    method: str = "uniform"
    tol: float = 1e-9
    cells: int = 2048
    nu_points: int = 41


@dataclass(frozen=True)
class ExperimentConfig:
    training: TrainingConfig
    sweep: SweepSpec = SweepSpec()
    baseline: BaselineSpec = BaselineSpec()
    mc_samples: int = 1_000_000
    quadrature_nodes: int = 64
    output: str = "out"
    raw: dict = field(default_factory=dict, compare=False)

    def with_seed(self, seed):
        return replace(self, training=replace(self.training, seed=int(seed)))


class _Loader(yaml.SafeLoader):
    """Safe loader that also reads exponent floats without a dot (1e-6)."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"^[-+]?[0-9][0-9_]*(?:\.[0-9_]*)?[eE][-+]?[0-9]+$"),
    list("-+0123456789"),
)


# line lookup ----------------------------------------------------------------

def _line_map(text):
    """Map dotted field paths to 1-based line numbers."""
    out = {}

    def walk(node, path):
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                p = f"{path}.{k.value}" if path else str(k.value)
                out[p] = k.start_mark.line + 1
                walk(v, p)

    try:
        root = yaml.compose(text, Loader=_Loader)
    except yaml.YAMLError:
        return out
    if root is not None:
        walk(root, "")
    return out


class _Reader:
    def __init__(self, data, lines):
        self.data = data
        self.lines = lines

    def fail(self, path, msg):
        line = self.lines.get(path)
        if line is None and "." in path:
            line = self.lines.get(path.rsplit(".", 1)[0])
        raise ConfigError(msg, field=path, line=line)

    def section(self, name, allowed, required=False):
        sec = self.data.get(name)
        if sec is None:
            if required:
                self.fail(name, "missing required field")
            return {}
        if not isinstance(sec, dict):
            self.fail(name, "expected a mapping")
        for k in sec:
            if k not in allowed:
                self.fail(f"{name}.{k}", "unknown field")
        return sec

    def num(self, sec, path, key, kind=float, default=None, required=False, lo=None,
            lo_open=False):
        if key not in sec or sec[key] is None:
            if required:
                self.fail(f"{path}.{key}" if path else key, "missing required field")
            return default
        v = sec[key]
        name = f"{path}.{key}" if path else key
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            self.fail(name, f"expected a number, got {v!r}")
        if kind is int:
            if float(v) != int(v):
                self.fail(name, f"expected an integer, got {v!r}")
            v = int(v)
        else:
            v = float(v)
        if lo is not None and (v <= lo if lo_open else v < lo):
            self.fail(name, f"must be {'>' if lo_open else '>='} {lo}")
        return v

    def choice(self, sec, path, key, options, default=None, required=False):
        name = f"{path}.{key}" if path else key
        if key not in sec or sec[key] is None:
            if required:
                self.fail(name, "missing required field")
            return default
        v = sec[key]
        if v not in options:
            self.fail(name, f"must be one of {', '.join(map(str, options))}; got {v!r}")
        return v

    def flag(self, sec, path, key, default):
        if key not in sec:
            return default
        if not isinstance(sec[key], bool):
            self.fail(f"{path}.{key}", "expected true or false")
        return sec[key]

    def num_list(self, sec, path, key, lo=None, lo_open=False):
        if key not in sec:
            return ()
        v = sec[key]
        name = f"{path}.{key}"
        if not isinstance(v, list) or not v:
            self.fail(name, "expected a non-empty list of numbers")
        return tuple(self.num({key: x}, path, key, lo=lo, lo_open=lo_open) for x in v)


def parse_config(text, source="<config>"):
    """Parse and validate a config document; raises :class:`ConfigError`."""
    try:
        data = yaml.load(text, Loader=_Loader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"{source}: not valid YAML ({getattr(exc, 'problem', exc)})",
                          line=None if mark is None else mark.line + 1) from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    r = _Reader(data, _line_map(text))
    for k in data:
        if k not in _TOP:
            r.fail(str(k), "unknown field")

    ver = r.num(data, "", "schema_version", int, required=True)
    if ver != SCHEMA_VERSION:
        r.fail("schema_version", f"unsupported schema version {ver} (expected {SCHEMA_VERSION})")

    ch = r.section("channel", _CHANNEL, required=True)
    kind = r.choice(ch, "channel", "kind", ("awgn", "imdd"), required=True)
    if kind == "awgn":
        chan = ChannelSpec("awgn", esn0_db=r.num(ch, "channel", "esn0_db", required=True))
    else:
        chan = ChannelSpec("imdd",
                           sigma1=r.num(ch, "channel", "sigma1", required=True, lo=0, lo_open=True),
                           sigma2=r.num(ch, "channel", "sigma2", required=True, lo=0, lo_open=True))

    cs = r.section("constellation", _CONSTELLATION, required=True)
    ckind = r.choice(cs, "constellation", "kind", KINDS, required=True)
    M = r.num(cs, "constellation", "M", int, required=True, lo=2)
    try:
        ConstellationSpec(ckind, M).build()
    except ValueError as exc:
        r.fail("constellation.M", str(exc))
    if kind == "imdd" and ckind != "imdd-pam":
        r.fail("constellation.kind", "the IM/DD channel needs an imdd-pam constellation")
    if kind == "awgn" and ckind == "imdd-pam":
        r.fail("constellation.kind", "imdd-pam constellations belong to the IM/DD channel")

    metric = r.choice(data, "", "metric", losses.METRICS, required=True)
    constraint = r.choice(data, "", "constraint", CONSTRAINTS, default="average-power")
    seed = r.num(data, "", "seed", int, default=0, lo=0)

    tr = r.section("training", _TRAINING)
    epochs = r.num(tr, "training", "epochs", int, default=200, lo=1)
    batches = r.num(tr, "training", "batches", int, default=20, lo=1)
    n = r.num(tr, "training", "batch_size", int, default=1 << 15, lo=1)
    if n < M:
        r.fail("training.batch_size", f"must be at least the constellation size {M}")
    init = r.choice(tr, "training", "init", INITS, default="uniform")
    init_nu = r.num(tr, "training", "init_nu", default=None, lo=0)
    init_p = None
    if init == "explicit":
        raw = tr.get("init_p")
        if not isinstance(raw, list) or len(raw) != M:
            r.fail("training.init_p", f"explicit init needs a list of {M} probabilities")
        init_p = r.num_list(tr, "training", "init_p", lo=0)
        if abs(sum(init_p) - 1.0) > 1e-9:
            r.fail("training.init_p", "probabilities must sum to 1")

    op = r.section("optimizer", _OPTIMIZER)
    opt = OptimizerSpec(
        name=r.choice(op, "optimizer", "name", OPTIMIZERS, default="cocob"),
        alpha=r.num(op, "optimizer", "alpha", default=100.0, lo=0, lo_open=True),
        lr=r.num(op, "optimizer", "lr", default=1e-2, lo=0, lo_open=True),
        beta1=r.num(op, "optimizer", "beta1", default=0.9, lo=0),
        beta2=r.num(op, "optimizer", "beta2", default=0.999, lo=0),
        eps=r.num(op, "optimizer", "eps", default=1e-8, lo=0, lo_open=True),
        reset=r.choice(op, "optimizer", "reset", ("epoch", "persist"), default="epoch"),
    )

    training = TrainingConfig(
        channel=chan,
        constellation=ConstellationSpec(ckind, M),
        metric=metric,
        constraint=constraint,
        epochs=epochs,
        batches=batches,
        batch_size=n,
        optimizer=opt,
        seed=seed,
        init=init,
        init_nu=init_nu,
        init_p=init_p,
        restarts=r.num(tr, "training", "restarts", int, default=0, lo=0),
        project=r.flag(tr, "training", "project", True),
        tangent=r.flag(tr, "training", "tangent", True),
        validate_every=r.num(tr, "training", "validate_every", int, default=1, lo=0),
        imdd_nodes=r.num(tr, "training", "imdd_nodes", int, default=None, lo=2),
    )

    sw = r.section("sweep", _SWEEP)
    sweep = SweepSpec(
        esn0_db=r.num_list(sw, "sweep", "esn0_db"),
        sigma1=r.num_list(sw, "sweep", "sigma1", lo=0, lo_open=True),
        sigma2=r.num_list(sw, "sweep", "sigma2", lo=0, lo_open=True),
        levels=r.num_list(sw, "sweep", "levels"),
    )

    bl = r.section("baseline", _BASELINE)
    baseline = BaselineSpec(
        method=r.choice(bl, "baseline", "method", BASELINES, default="uniform"),
        tol=r.num(bl, "baseline", "tol", default=1e-9, lo=0, lo_open=True),
        cells=r.num(bl, "baseline", "cells", int, default=2048, lo=16),
        nu_points=r.num(bl, "baseline", "nu_points", int, default=41, lo=3),
    )

    va = r.section("validation", _VALIDATION)
    out = data.get("output", "out")
    if not isinstance(out, str) or not out:
        r.fail("output", "expected a directory path")
    return ExperimentConfig(
        training=training,
        sweep=sweep,
        baseline=baseline,
        mc_samples=r.num(va, "validation", "mc_samples", int, default=1_000_000, lo=100_000),
        quadrature_nodes=r.num(va, "validation", "quadrature_nodes", int, default=64, lo=16),
        output=out,
        raw=data,
    )


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    return parse_config(text, str(path))
