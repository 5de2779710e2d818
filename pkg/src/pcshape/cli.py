"""Command-line experiment runner.

Subcommands: optimize, sweep, validate, baseline. Exit codes: 0 success,
1 validation failure, 2 configuration or input error, 3 numerical abort.

All result files are deterministic given the config and seed; timings go to
stderr only.
"""
import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import constellation as cst
from . import validation as val
from .config import load_config
from .distribution import make_rng
from .errors import ConfigError, ConvergenceError, PCShapeError, TrainingAborted
from .losses import LossSetup
from .trainer import ChannelSpec, ConstellationSpec, config_from_dict, train

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

TRACE_HEADER = ["epoch", "batch", "loss_bits"]
DIST_HEADER = ["index", "label", "re", "im", "p"]


# file helpers ---------------------------------------------------------------

def _num(v):
    if v is None or (isinstance(v, float) and not math.isfinite(v)):
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([c if isinstance(c, str) else _num(c) for c in row])
    return buf.getvalue()


def _json_text(obj):
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _write(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)
    return path


def _manifest(out, files, command):
    entries = []
    for f in sorted(files, key=lambda p: str(p)):
        data = Path(f).read_bytes()
        entries.append({"file": str(Path(f).relative_to(out)),
                        "sha256": hashlib.sha256(data).hexdigest()})
    _write(Path(out) / "manifest.json", _json_text({"command": command, "files": entries}))


def _distribution_rows(c, p, constraint):
    pts = cst.normalize(c, p, constraint).points
    return [[i, lab, z.real, z.imag, pi]
            for i, (lab, z, pi) in enumerate(zip(c.label_strings, pts, p))]


def _log(msg):
    print(msg, file=sys.stderr)


# metrics ----------------------------------------------------------------------

def _reference_metric(tc, p, mc_samples, nodes, rng_seed):
    """Quadrature (AWGN) or Monte Carlo (IM/DD) metric at ``p``; returns (value, stderr)."""
    c = tc.constellation.build()
    ch = tc.channel.params()
    pts = cst.normalize(c, p, tc.constraint).points
    if tc.channel.kind == "awgn":
        v = val.gh_metric_awgn(pts, c.bits, p, ch.sigma2, tc.metric, val.QuadratureSpec(nodes))
        return v, 0.0
    est = val.mc_metric(ch, pts, p, mc_samples, make_rng(rng_seed), tc.metric, c.bits)
    return est.value, est.stderr


# optimize -------------------------------------------------------------------------

def write_training_outputs(out, result, tc, extra=None):
    out = Path(out)
    c = tc.constellation.build()
    d = result.to_dict()
    if extra:
        d.update(extra)
    files = [
        _write(out / "result.json", _json_text(d)),
        _write(out / "trace.csv", _csv_text(
            TRACE_HEADER,
            ([i // tc.batches, i % tc.batches, v] for i, v in enumerate(result.trace)))),
        _write(out / "distribution.csv", _csv_text(
            DIST_HEADER, _distribution_rows(c, result.p, tc.constraint))),
    ]
    return files


def cmd_optimize(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    out = Path(args.out or cfg.output)
    tc = cfg.training
    t0 = time.perf_counter()
    result = train(tc)
    files = write_training_outputs(out, result, tc)
    _manifest(out, files, "optimize")
    _log(f"optimize: seed {tc.seed}, final metric {result.final_metric}, "
         f"{time.perf_counter() - t0:.1f} s, outputs in {out}")
    return EXIT_OK


# sweep ------------------------------------------------------------------------------

def _point_seeds(seed, n):
    kids = np.random.SeedSequence(seed).spawn(n)
    return [int(k.generate_state(1, np.uint64)[0] >> 1) for k in kids]


def _awgn_point(args):
    tc, esn0_db, seed, nodes = args
    tc = replace(tc, channel=ChannelSpec("awgn", esn0_db=float(esn0_db)), seed=seed)
    c = tc.constellation.build()
    s2 = tc.channel.params().sigma2
    spec = val.QuadratureSpec(nodes)
    uni = np.full(c.M, 1.0 / c.M)
    pts_u = cst.normalize(c, uni, tc.constraint).points
    m_uni = val.gh_metric_awgn(pts_u, c.bits, uni, s2, tc.metric, spec)
    res = train(tc)
    pts_l = cst.normalize(c, res.p, tc.constraint).points
    m_learned = val.gh_metric_awgn(pts_l, c.bits, res.p, s2, tc.metric, spec)
    m_mb, nu = None, None
    if tc.constraint == "average-power":
        mb = val.mb_scan(c, s2, metric=tc.metric, spec=spec)
        m_mb, nu = mb.metric, mb.nu
    cap = val.shannon_capacity(10.0 ** (esn0_db / 10.0))
    return {
        "esn0_db": float(esn0_db), "seed": seed, "capacity": cap,
        "uniform": m_uni, "learned": m_learned, "mb_opt": m_mb, "mb_nu": nu,
        "p": [float(v) for v in res.p],
    }


def _imdd_point(args):
    tc, s1, s2, seed, mc_samples = args
    tc = replace(tc, channel=ChannelSpec("imdd", sigma1=float(s1), sigma2=float(s2)), seed=seed)
    c = tc.constellation.build()
    ch = tc.channel.params()
    uni = np.full(c.M, 1.0 / c.M)
    res = train(tc)
    ss = np.random.SeedSequence(seed).spawn(2)
    est_u = val.mc_metric(ch, cst.normalize(c, uni, tc.constraint).points, uni, mc_samples,
                          make_rng(ss[0]), tc.metric, c.bits)
    est_l = val.mc_metric(ch, cst.normalize(c, res.p, tc.constraint).points, res.p, mc_samples,
                          make_rng(ss[1]), tc.metric, c.bits)
    return {
        "sigma1": float(s1), "sigma2": float(s2), "seed": seed,
        "uniform": est_u.value, "uniform_se": est_u.stderr,
        "learned": est_l.value, "learned_se": est_l.stderr,
        "gain": est_l.value - est_u.value,
        "gain_se": math.hypot(est_u.stderr, est_l.stderr),
        "p": [float(v) for v in res.p],
    }


def _run_points(fn, jobs, tasks):
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as ex:
        return list(ex.map(fn, tasks))


def contour_levels(values, n=5):
    """Evenly spaced interior levels across the range of ``values``."""
    lo, hi = float(np.min(values)), float(np.max(values))
    if hi <= lo:
        return [lo]
    return [float(v) for v in np.round(np.linspace(lo, hi, n + 2)[1:-1], 6)]


def cmd_sweep(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    tc = cfg.training
    out = Path(args.out or cfg.output)
    sw = cfg.sweep
    m = tc.metric
    t0 = time.perf_counter()
    files = []
    if tc.channel.kind == "awgn":
        if not sw.esn0_db:
            raise ConfigError("AWGN sweep needs a non-empty esn0_db list", field="sweep.esn0_db")
        seeds = _point_seeds(tc.seed, len(sw.esn0_db))
        tasks = [(tc, e, s, cfg.quadrature_nodes) for e, s in zip(sw.esn0_db, seeds)]
        points = _run_points(_awgn_point, args.jobs, tasks)
        header = ["esn0_db", "capacity", f"{m}_uniform", f"{m}_learned", f"{m}_mb_opt",
                  "gap_uniform", "gap_learned", "gap_mb_opt", "mb_nu"]
        rows = []
        for r in points:
            gap = [r["capacity"] - r[k] if r[k] is not None else None
                   for k in ("uniform", "learned", "mb_opt")]
            rows.append([r["esn0_db"], r["capacity"], r["uniform"], r["learned"],
                         r["mb_opt"], *gap, r["mb_nu"]])
        files.append(_write(out / "sweep.csv", _csv_text(header, rows)))
    else:
        if not (sw.sigma1 and sw.sigma2):
            raise ConfigError("IM/DD sweep needs non-empty sigma1 and sigma2 lists",
                              field="sweep.sigma1" if not sw.sigma1 else "sweep.sigma2")
        grid = [(s1, s2) for s1 in sw.sigma1 for s2 in sw.sigma2]
        seeds = _point_seeds(tc.seed, len(grid))
        tasks = [(tc, s1, s2, s, cfg.mc_samples) for (s1, s2), s in zip(grid, seeds)]
        points = _run_points(_imdd_point, args.jobs, tasks)
        header = ["sigma1", "sigma2", f"{m}_uniform", f"{m}_uniform_se", f"{m}_learned",
                  f"{m}_learned_se", "gain", "gain_se"]
        rows = [[r["sigma1"], r["sigma2"], r["uniform"], r["uniform_se"], r["learned"],
                 r["learned_se"], r["gain"], r["gain_se"]] for r in points]
        files.append(_write(out / "sweep.csv", _csv_text(header, rows)))
        levels = list(sw.levels) or contour_levels([r["gain"] for r in points])
        files.append(_write(out / "levels.txt", "".join(f"{_num(v)}\n" for v in levels)))
    for i, r in enumerate(points):
        files.append(_write(out / "points" / f"point_{i:03d}.json", _json_text(r)))
    _manifest(out, files, "sweep")
    _log(f"sweep: {len(points)} points, {time.perf_counter() - t0:.1f} s, outputs in {out}")
    return EXIT_OK


# validate ------------------------------------------------------------------------------

def _load_result(path):
    try:
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
        tc = config_from_dict(d["config"])
        p = np.asarray(d["p"], dtype=float)
        trace = np.asarray(d["trace"], dtype=float)
    except OSError as exc:
        raise ConfigError(f"cannot read result file {path}: {exc.strerror}") from exc
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"corrupt result file {path}: {exc}") from exc
    if p.shape != (tc.constellation.M,):
        raise ConfigError(f"corrupt result file {path}: p has the wrong length", field="p")
    return d, tc, p, trace


def _trace_stderr(trace, batches):
    """Standard error of the last epoch's mean batch loss.

    The batch variance is pooled within epochs over the whole trace, since a
    single epoch has too few batches for a stable estimate.
    """
    if batches < 2:
        return 0.0
    per_epoch = trace.reshape(-1, batches)
    dev = per_epoch - per_epoch.mean(axis=1, keepdims=True)
    var = float((dev**2).sum() / (per_epoch.shape[0] * (batches - 1)))
    return math.sqrt(var / batches)


def toy_gradient_check(tc, N=512, seed=0):
    """Finite-difference check on a small instance of the result's channel."""
    if tc.channel.kind == "awgn":
        setup = LossSetup(ConstellationSpec("qam", 4).build(), tc.channel.params(), tc.metric)
    else:
        setup = LossSetup(ConstellationSpec("imdd-pam", 4).build(), tc.channel.params(),
                          tc.metric)
    return val.gradient_exactness_check(setup, N=N, batch_seed=seed)


def cmd_validate(args):
    d, tc, p, trace = _load_result(args.result)
    ok = True
    lines = []
    if not (np.all(np.isfinite(p)) and np.all(p >= 0) and abs(p.sum() - 1.0) <= 1e-9):
        lines.append(f"FAIL distribution: not on the simplex (sum {p.sum()!r}, min {p.min()!r})")
        ok = False
    else:
        lines.append("ok   distribution: on the simplex")
        value, se = _reference_metric(tc, p, args.mc_samples, 64, tc.seed)
        tail = trace[-tc.batches:]
        final = float(tail.mean())
        se_trace = _trace_stderr(trace, tc.batches)
        diff = abs(final - value)
        bound = args.tol + 3.0 * math.hypot(se, se_trace)
        how = "quadrature" if tc.channel.kind == "awgn" else f"Monte Carlo (se {se:.2e})"
        status = "ok  " if diff <= bound else "FAIL"
        ok &= diff <= bound
        lines.append(f"{status} {tc.metric}: trace-final {final:.6f}, {how} {value:.6f}, "
                     f"|diff| {diff:.2e} (limit {bound:.2e})")
        if d.get("final_metric") is not None and tc.channel.kind == "awgn":
            drift = abs(d["final_metric"] - value)
            lines.append(f"{'ok  ' if drift < 1e-9 else 'FAIL'} stored metric reproduces "
                         f"(|diff| {drift:.2e})")
            ok &= drift < 1e-9
    err = toy_gradient_check(tc)
    lines.append(f"{'ok  ' if err <= 1e-4 else 'FAIL'} gradient check: max rel. error "
                 f"{err:.2e} (limit 1e-4)")
    ok &= err <= 1e-4
    print("\n".join(lines))
    return EXIT_OK if ok else EXIT_FAIL


# baseline ---------------------------------------------------------------------------------

def cmd_baseline(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    tc = cfg.training
    bl = cfg.baseline
    method = args.method or bl.method
    out = Path(args.out or cfg.output)
    c = tc.constellation.build()
    ch = tc.channel.params()
    info = {"method": method}
    if method == "uniform":
        p = np.full(c.M, 1.0 / c.M)
        metric, se = _reference_metric(tc, p, cfg.mc_samples, cfg.quadrature_nodes, tc.seed)
    elif method == "mb-scan":
        if tc.channel.kind != "awgn" or tc.constraint != "average-power":
            raise ConfigError("mb-scan needs an AWGN channel with average-power normalization",
                              field="baseline.method")
        grid = np.linspace(0.0, val.mb_nu_max(c), bl.nu_points)
        res = val.mb_scan(c, ch.sigma2, grid, tc.metric, val.QuadratureSpec(cfg.quadrature_nodes))
        p, metric, se = res.p, res.metric, 0.0
        info["nu"] = res.nu
    else:
        if np.any(c.points.imag != 0):
            raise ConfigError("blahut-arimoto needs a real (PAM) constellation",
                              field="constellation.kind")
        # the constellation is fixed: average power is set by the uniform prior
        uni = np.full(c.M, 1.0 / c.M)
        x = cst.normalize(c, uni, tc.constraint).points.real
        if tc.channel.kind == "awgn":
            L, _ = val.awgn_pam_matrix(x, ch.sigma2, bl.cells)
        else:
            L, _ = val.imdd_matrix(x, ch.sigma1, ch.sigma2, bl.cells)
        res = val.blahut_arimoto(L, tol=bl.tol)
        p, metric, se = res.p, res.capacity, 0.0
        info["metric"] = "mi"  # channel capacity of the fixed constellation
        info["iterations"] = res.iterations
        info["normalization_prior"] = "uniform"
    d = {
        "p": [float(v) for v in p],
        "final_metric": float(metric),
        "metric_stderr": float(se),
        "config": tc.to_dict(),
        "seed": int(tc.seed),
        "constellation": c.to_dict(),
        "baseline": info,
    }
    if method == "blahut-arimoto":
        pts = x.astype(complex)
    else:
        pts = cst.normalize(c, p, tc.constraint).points
    files = [
        _write(out / "result.json", _json_text(d)),
        _write(out / "distribution.csv", _csv_text(
            DIST_HEADER,
            [[i, lab, z.real, z.imag, pi]
             for i, (lab, z, pi) in enumerate(zip(c.label_strings, pts, p))])),
        _write(out / "metric.csv", _csv_text(
            ["method", "metric", "value", "stderr", "nu"],
            [[method, info.get("metric", tc.metric), metric, se, info.get("nu")]])),
    ]
    _manifest(out, files, "baseline")
    _log(f"baseline {method}: {tc.metric} {metric:.6f}, outputs in {out}")
    return EXIT_OK


# entry point --------------------------------------------------------------------------------

def build_parser():
    ap = argparse.ArgumentParser(prog="pcshape", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("config", help="YAML experiment config")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="output directory (default: config 'output')")

    p = sub.add_parser("optimize", help="learn a distribution for one operating point")
    common(p)
    p.set_defaults(fn=cmd_optimize)

    p = sub.add_parser("sweep", help="run the sweep axes of a config")
    common(p)
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1,
                   help="parallel sweep points (default: CPU count)")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("validate", help="check a result.json against reference metrics")
    p.add_argument("result", help="result.json written by optimize")
    p.add_argument("--tol", type=float, default=0.01,
                   help="allowed |trace-final - reference| in bits on top of three "
                        "combined standard errors (default 0.01)")
    p.add_argument("--mc-samples", type=int, default=200_000,
                   help="Monte Carlo samples for IM/DD (default 2e5)")
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("baseline", help="compute a baseline distribution")
    common(p)
    p.add_argument("--method", choices=("mb-scan", "blahut-arimoto", "uniform"), default=None)
    p.set_defaults(fn=cmd_baseline)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        _log(f"config error: {exc}")
        return EXIT_CONFIG
    except TrainingAborted as exc:
        snap = ", ".join(f"{k}={v}" for k, v in exc.snapshot.items())
        _log(f"training aborted: {exc} ({snap})")
        return EXIT_NUMERIC
    except ConvergenceError as exc:
        _log(f"numerical failure: {exc}")
        return EXIT_NUMERIC
    except (PCShapeError, FloatingPointError) as exc:
        _log(f"numerical failure: {exc}")
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
