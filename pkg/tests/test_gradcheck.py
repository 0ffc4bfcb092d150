import numpy as np
import pytest

from icct import gradcheck
from icct.errors import NumericError
from icct.gradcheck import FIXTURE_ICC_GRAD, GradReport, central_diff, check_all, compare
from icct.icc import icc_loss


def test_central_diff_quadratic_and_constant():
    np.testing.assert_allclose(central_diff(lambda x: np.sum(x**2), np.array([1.0, 2.0])), [2, 4], atol=1e-8)
    np.testing.assert_allclose(central_diff(lambda x: 3.0, np.zeros(4)), 0, atol=1e-10)


def test_central_diff_non_finite():
    with pytest.raises(NumericError):
        central_diff(lambda x: np.inf, np.zeros(2))


def test_central_diff_does_not_mutate_input():
    x = np.array([0.5, -1.0])
    central_diff(lambda v: float(v @ v), x)
    np.testing.assert_array_equal(x, [0.5, -1.0])


def test_icc_oracle():
    t = np.zeros((1, 2))
    np.testing.assert_allclose(central_diff(lambda z: icc_loss(z, t), np.array([[1.0, 0.0]])),
                               FIXTURE_ICC_GRAD, atol=1e-6)


def test_compare_relative_floor():
    r = compare("x", [0.0, 1.0], [0.0, 1.0 + 1e-7])
    assert r.passed and r.max_rel_err == pytest.approx(1e-7, rel=1e-3) and r.worst_coord == 1
    assert not compare("x", [1.0], [-1.0]).passed


@pytest.fixture(scope="module")
def reports():
    return check_all(seed=0)


def test_default_battery_passes(reports):
    assert reports and all(r.passed for r in reports), gradcheck.worst(reports).line()
    names = {r.target.split("[")[0] for r in reports}
    assert names == {"icc_fixture", "icc_per_sample", "icc_averaged", "kd", "lt", "ce", "net_ce",
                     "net_ce+icc_per_sample", "net_ce+icc_averaged", "net_ce+kd", "net_ce+lt"}
    shapes = {r.target.split("[")[1] for r in reports if r.target.startswith("kd[")}
    assert len(shapes) == 9


def test_negative_control_names_target():
    reports = []
    for target, f, x, g in gradcheck.battery(seed=0, batch_sizes=(4,), class_counts=(5,)):
        if target.startswith("icc_per_sample"):
            g = lambda z, g=g: -g(z)
        reports.append(gradcheck.check(target, f, x, g(x)))
    bad = [r for r in reports if not r.passed]
    assert [r.target for r in bad] == ["icc_per_sample[b=4,N=5]"]
    assert gradcheck.worst(reports).target == "icc_per_sample[b=4,N=5]"


def test_overrides_hook():
    reports = check_all(seed=1, overrides={"lt": lambda z: np.zeros_like(z)})
    failed = {r.target.split("[")[0] for r in reports if not r.passed}
    assert failed == {"lt"}


def test_h_sweep_best_step_passes():
    best = {}
    for h in (1e-4, 1e-5, 1e-6):
        for r in check_all(seed=2, h=h):
            best[r.target] = min(best.get(r.target, np.inf), r.max_rel_err)
    assert max(best.values()) < 1e-5


def test_report_line():
    line = GradReport("kd[b=1,N=2]", 1e-9, 1e-12, 0, 1e-5).line()
    assert line.startswith("PASS kd[b=1,N=2]")
