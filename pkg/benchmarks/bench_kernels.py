"""Compare the compiled and pure-numpy kernel backends.

Times each kernel on its own, then one full loss-and-gradient evaluation with
every kernel swapped to the given backend. Run with ``python benchmarks/bench_kernels.py``.
"""
import argparse
import timeit

import numpy as np

from pcshape import _kernels
from pcshape import constellation as cst
from pcshape import losses
from pcshape.channels import AwgnParams, ImddParams
from pcshape.distribution import approximate_vd, draw_batch, make_rng

KERNELS = ("backward_sweep", "awgn_pair_terms", "imdd_loglik")


def best_of(fn, repeat):
    """Fastest wall time of one call, in milliseconds."""
    number = max(1, int(0.2 / max(timeit.timeit(fn, number=1), 1e-6)))
    return 1e3 * min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def kernel_cases(n):
    rng = np.random.default_rng(0)
    m = 64
    awgn = [np.ascontiguousarray(a) for a in (
        rng.normal(size=n), rng.normal(size=n), rng.normal(size=m), rng.normal(size=m),
        np.log(rng.dirichlet(np.ones(m))))] + [12.5]
    x = np.sort(rng.uniform(0.2, 2.8, 8))
    y = rng.uniform(-0.3, 9.0, n)
    nodes = _kernels.imdd_nodes(x, 0.1, 0.05, 512)
    return {
        f"awgn_pair_terms ({n} x {m})": lambda mod: mod.awgn_pair_terms(*awgn),
        f"imdd_loglik ({n} x 8, {nodes} nodes)":
            lambda mod: mod.imdd_loglik(y, x, 0.1, 0.05, nodes),
    }


def loss_cases(n):
    cases = {}
    for kind, M, ch, metric in [("qam", 64, AwgnParams(14.0), "mi"),
                                ("qam", 64, AwgnParams(14.0), "bmi"),
                                ("imdd-pam", 8, ImddParams(0.1, 0.05), "bmi")]:
        setup = losses.LossSetup(cst.build(kind, M), ch, metric)
        t = approximate_vd(np.full(M, 1 / M), n)
        rng = make_rng(1)
        batch = losses.Batch(draw_batch(t, rng), t.counts, losses.draw_noise(setup, t.N, rng))
        w = np.ones(M)
        cases[f"loss_and_grad {kind}-{M} {metric} (N={n})"] = (
            lambda setup=setup, batch=batch, w=w: losses.loss_and_grad(w, batch, setup))
    return cases


def use(mod):
    for name in KERNELS:
        setattr(_kernels, name, getattr(mod, name))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=8192, help="samples per batch")
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    backends = {"python": _kernels.python}
    if _kernels.compiled is None:
        print("compiled extension not built; timing the numpy backend only")
    else:
        backends["compiled"] = _kernels.compiled

    rows = []
    for label, fn in kernel_cases(args.n).items():
        rows.append((label, {b: best_of(lambda: fn(mod), args.repeat)
                             for b, mod in backends.items()}))
    saved = {name: getattr(_kernels, name) for name in KERNELS}
    try:
        for label, fn in loss_cases(args.n).items():
            times = {}
            for b, mod in backends.items():
                use(mod)
                times[b] = best_of(fn, args.repeat)
            rows.append((label, times))
    finally:
        for name, fn in saved.items():
            setattr(_kernels, name, fn)

    width = max(len(r[0]) for r in rows)
    names = list(backends)
    print(f"{'case':<{width}}  " + "  ".join(f"{b + ' ms':>12}" for b in names)
          + ("     speedup" if len(names) == 2 else ""))
    for label, t in rows:
        line = f"{label:<{width}}  " + "  ".join(f"{t[b]:12.3f}" for b in names)
        if len(names) == 2:
            line += f"  {t['python'] / t['compiled']:9.2f}x"
        print(line)


if __name__ == "__main__":
    main()
