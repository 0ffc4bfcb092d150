"""Exit criteria for the package. Each test prints one PASS/FAIL line.

Criteria 5-7 are multi-seed desk-scale experiments and take a few minutes each.
"""

import time
from dataclasses import replace

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, naive_icc_map, naive_kl
from icct import gradcheck
from icct.config import reference_config
from icct.distiller import distill, train_solo, train_teacher
from icct.experiment import run_born_again, run_transfer
from icct.gradcheck import central_diff, cross_term_contrast
from icct.icc import icc_loss, icc_loss_grad, icc_map_per_sample
from icct.kd import KdConfig, kd_loss, kd_loss_grad


def record(number, name, ok, detail):
    line = f"[criterion {number}] {'PASS' if ok else 'FAIL'} {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def test_1_gradient_fidelity():
    t0 = time.perf_counter()
    reports = gradcheck.check_all(seed=0, tolerance=1e-5)
    elapsed = time.perf_counter() - t0
    worst = gradcheck.worst(reports)
    ok = all(r.passed for r in reports) and worst.max_rel_err < 1e-5 and elapsed < 30
    record(1, "gradient fidelity", ok,
           f"{len(reports)} checks, worst {worst.target} rel {worst.max_rel_err:.2e}, {elapsed:.1f}s")


def test_2_icc_map_invariants():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst_sum = worst_sym = worst_flip = 0.0
    nonneg = True
    for trial in range(1000):
        n = (2, 10, 100)[trial % 3]
        z = 3.0 * rng.standard_normal(n)
        m = icc_map_per_sample(z)
        nonneg &= bool(np.all(m >= 0))
        worst_sum = max(worst_sum, abs(m.sum() - 1))
        worst_sym = max(worst_sym, float(np.max(np.abs(m - m.T))))
        worst_flip = max(worst_flip, float(np.max(np.abs(icc_map_per_sample(-z) - m))))
    elapsed = time.perf_counter() - t0
    ok = nonneg and worst_sum <= 1e-12 and worst_sym <= 1e-12 and worst_flip <= 1e-15 and elapsed < 5
    record(2, "ICC map invariants", ok,
           f"sum {worst_sum:.1e}, sym {worst_sym:.1e}, flip {worst_flip:.1e}, {elapsed:.2f}s")


def test_3_fixture_values():
    s, t = np.array([[1.0, 0.0]]), np.array([[0.0, 0.0]])
    # independent confirmation first: pure-Python map/KL and finite differences
    oracle_map = naive_icc_map([1.0, 0.0])
    oracle_kl = naive_kl(naive_icc_map([0.0, 0.0]), oracle_map)
    oracle_grad = central_diff(lambda z: naive_kl(naive_icc_map([0.0, 0.0]), naive_icc_map(list(z[0]))), s)
    oracle_kd_grad = central_diff(lambda z: kd_loss(z, t, KdConfig(1.0)), s)
    frozen = {
        "map": (np.array([[0.475367, 0.174878], [0.174878, 0.174878]]), oracle_map, icc_map_per_sample([1.0, 0.0])),
        "kl": (0.107373, oracle_kl, icc_loss(s, t)),
        "icc grad": (np.array([0.450734, -0.150244]), oracle_grad[0], icc_loss_grad(s, t)[0]),
        "kd grad": (np.array([0.231059, -0.231059]), oracle_kd_grad[0], kd_loss_grad(s, t, KdConfig(1.0))[0]),
    }
    worst = 0.0
    for expected, oracle, got in frozen.values():
        worst = max(worst, float(np.max(np.abs(np.asarray(oracle) - expected))),
                    float(np.max(np.abs(np.asarray(got) - expected))))
    record(3, "fixture values", worst < 1e-5, f"max deviation {worst:.1e} over {len(frozen)} fixtures")


def test_4_lambda_zero_equivalence():
    exp = reference_config(seeds=[0])
    data = exp.data.load()
    cfg = exp.distill_config(0, 0.0)
    teacher, _ = train_teacher(replace(cfg, teacher_epochs=5), data)
    solo, _ = train_solo(cfg.student_spec, data, cfg.optimizer, cfg.epochs, cfg.seed, cfg.batch_size)
    dist, _ = distill(teacher, cfg, data)
    record(4, "lambda=0 equals solo", dist.equal(solo), "final parameters bit-identical" if dist.equal(solo)
           else "final parameters differ")


@pytest.fixture(scope="module")
def teacher_larger():
    exp = reference_config("teacher_larger")
    data = exp.data.load()
    t0 = time.perf_counter()
    result = run_transfer(exp, data)
    return exp, data, result, time.perf_counter() - t0


def _per_seed(result):
    return " ".join(f"s{s}:{result.solo[s].final_test_error:.2f}->{result.student[s].final_test_error:.2f}"
                    for s in result.solo)


def test_5_teacher_larger(teacher_larger):
    exp, _, res, elapsed = teacher_larger
    wins = sum(res.student[s].final_test_error < res.solo[s].final_test_error for s in exp.seeds)
    solo, icct = res.mean("solo"), res.mean("student")
    ok = icct < solo and wins >= 4 and elapsed < 300
    record(5, "Cap_T > Cap_S", ok,
           f"lambda {res.lam:g}; solo {solo:.2f}% vs ICCT {icct:.2f}%, wins {wins}/5, "
           f"teacher {res.mean('teacher'):.2f}%, {elapsed:.0f}s [{_per_seed(res)}]")


def test_6_born_again():
    exp = reference_config("equal")
    data = exp.data.load()
    t0 = time.perf_counter()
    res = run_born_again(exp, data)
    elapsed = time.perf_counter() - t0
    base = [res.generations[s][0].final_test_error for s in exp.seeds]
    gen1 = [res.generations[s][1].final_test_error for s in exp.seeds]
    wins = sum(g <= b for g, b in zip(gen1, base))
    ok = wins >= 4 and elapsed < 300
    record(6, "Cap_T = Cap_S (born-again)", ok,
           f"lambda {res.lam:g}; baseline {np.mean(base):.2f}% vs Gen #1 {np.mean(gen1):.2f}%, "
           f"Gen #1 <= baseline in {wins}/5, {elapsed:.0f}s")


def test_7_teacher_smaller():
    exp = reference_config("teacher_smaller")
    data = exp.data.load()
    t0 = time.perf_counter()
    res = run_transfer(exp, data)
    elapsed = time.perf_counter() - t0
    solo, icct = res.mean("solo"), res.mean("student")
    ok = icct <= solo + 0.2 and elapsed < 300
    record(7, "Cap_T < Cap_S", ok,
           f"lambda {res.lam:g}; solo {solo:.2f}% vs ICCT {icct:.2f}% (allowed <= {solo + 0.2:.2f}), "
           f"teacher {res.mean('teacher'):.2f}%, {elapsed:.0f}s [{_per_seed(res)}]")


def test_8_determinism(teacher_larger, tmp_path):
    exp, data, first, _ = teacher_larger
    again = run_transfer(exp.model_copy(update={"seeds": [0]}, deep=True), data)
    same = again.lam == first.lam
    for which in ("teacher", "solo", "student"):
        a, b = tmp_path / f"{which}_a.csv", tmp_path / f"{which}_b.csv"
        getattr(first, which)[0].to_csv(a)
        getattr(again, which)[0].to_csv(b)
        same &= a.read_bytes() == b.read_bytes()
    record(8, "determinism", same, "seed-0 teacher/solo/ICCT RunReport CSVs byte-identical on rerun"
           if same else "RunReport CSVs differ between runs")


def test_9_comprehensive_vs_mimicking():
    r = cross_term_contrast([1.0, 0.0], [0.0, 0.0], k=0, i=1, temperature=1.0)
    ok = (abs(r.icc_residual) > 1e-6 and abs(r.icc_residual - r.icc_expected) < 1e-8
          and abs(r.kd_residual) < 1e-8)
    record(9, "ICC cross-term vs KD", ok,
           f"ICC explicit term {r.icc_residual:.6f} (expected 2*gap {r.icc_expected:.6f}), "
           f"KD beyond denominator {r.kd_residual:.1e}")
