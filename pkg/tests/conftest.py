import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from qbm.model import ModelParameters

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile(
    "default", max_examples=40, deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")

# Acceptance outcomes collected by tests/test_acceptance.py, reported once
# at the end of the session.
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")


def random_model(rng, n_visible, n_hidden=0, gamma_scale=1.0, scale=1.0,
                 topology="full", shared_gamma=False):
    n = n_visible + n_hidden
    p = ModelParameters.create(n_visible, n_hidden, topology=topology)
    b = rng.normal(scale=scale, size=n)
    w = np.where(p.mask, rng.normal(scale=scale, size=(n, n)), 0.0)
    if shared_gamma:
        gamma = np.full(n, rng.uniform(0, gamma_scale))
    else:
        gamma = rng.uniform(0, gamma_scale, size=n)
    return p.evolve(b=b, w=w, gamma=gamma, shared_gamma=shared_gamma)


def random_distribution(rng, n, sparsity=0.0):
    d = rng.random(1 << n)
    d[rng.random(1 << n) < sparsity] = 0.0
    if not d.any():
        d[0] = 1.0
    return d / d.sum()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
