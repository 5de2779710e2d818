"""Hot-loop kernels, compiled when available.

The compiled extension is used unless it failed to build or
``PCSHAPE_BACKEND=python`` is set. ``BACKEND`` names the active choice.
"""
import os

from . import _pykernels

python = _pykernels

try:
    from . import _ckernels as compiled
except ImportError:  # extension not built
    compiled = None


def select(name=None):
    """Return the kernel module for ``name`` ('compiled' or 'python')."""
    if name is None:
        name = os.environ.get("PCSHAPE_BACKEND", "compiled")
    if name not in ("compiled", "python"):
        raise ValueError(f"unknown kernel backend {name!r}")
    if name == "python" or compiled is None:
        return _pykernels
    return compiled


active = select()
BACKEND = "compiled" if active is compiled else "python"

backward_sweep = active.backward_sweep
awgn_pair_terms = active.awgn_pair_terms
imdd_loglik = active.imdd_loglik
imdd_nodes = _pykernels.imdd_nodes
