import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from pcshape import _kernels

settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

BACKENDS = ["python"] + (["compiled"] if _kernels.compiled is not None else [])


def pytest_collection_modifyitems(config, items):
    if os.environ.get("PCSHAPE_LONG") == "1":
        return
    skip = pytest.mark.skip(reason="long run; set PCSHAPE_LONG=1")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture(params=BACKENDS)
def backend(request, monkeypatch):
    """Route every kernel call through one backend."""
    mod = _kernels.select(request.param)
    for name in ("backward_sweep", "awgn_pair_terms", "imdd_loglik"):
        monkeypatch.setattr(_kernels, name, getattr(mod, name))
    return request.param


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE

    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
