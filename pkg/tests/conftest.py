import math

import numpy as np
import pytest


def naive_icc_map(z):
    """Pure-Python evaluation of exp(z_i z_j) / sum_uv exp(z_u z_v)."""
    a = [[zi * zj for zj in z] for zi in z]
    top = max(max(r) for r in a)
    e = [[math.exp(x - top) for x in r] for r in a]
    total = sum(sum(r) for r in e)
    return np.array([[x / total for x in r] for r in e])


def naive_kl(p, q):
    return sum(pi * math.log(pi / qi) for pi, qi in zip(np.ravel(p), np.ravel(q)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
