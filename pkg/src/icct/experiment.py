"""Multi-seed scenario experiments and the summary/comparison CSVs built from them."""

import csv
import glob
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from icct.distiller import (
    EQUAL,
    born_again,
    distill,
    select_lambda,
    train_solo,
    train_teacher,
)
from icct.errors import UsageError

log = logging.getLogger(__name__)

SUMMARY_COLUMNS = ("method", "generation", "n_seeds", "mean_test_err", "per_seed")


def n_threads():
    try:
        return max(1, int(os.environ.get("ICCT_THREADS", "1")))
    except ValueError:
        return 1


def map_seeds(fn, seeds):
    """Run ``fn(seed)`` for each seed, in parallel up to ICCT_THREADS; results keep seed order."""
    workers = min(n_threads(), len(seeds))
    if workers <= 1:
        return [fn(s) for s in seeds]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(fn, seeds))


def resolve_lambda(exp, train, teacher=None):
    """The configured transfer weight, running the held-out sweep when it is ``"sweep"``."""
    lam = exp.transfer.lam
    if lam != "sweep":
        return float(lam), {}
    sw = exp.lambda_sweep
    cfg = exp.distill_config(sw.seed)
    return select_lambda(cfg, train, sw.grid, sw.holdout_fraction, sw.seed, teacher=teacher,
                         repeats=sw.repeats)


@dataclass
class ScenarioResult:
    lam: float
    sweep: dict
    solo: dict = field(default_factory=dict)       # seed -> RunReport
    teacher: dict = field(default_factory=dict)    # seed -> RunReport
    student: dict = field(default_factory=dict)    # seed -> RunReport
    generations: dict = field(default_factory=dict)  # seed -> [RunReport, ...]

    def mean(self, which):
        return float(np.mean([r.final_test_error for r in getattr(self, which).values()]))


def run_transfer(exp, data):
    """Teacher, solo student and transferred student for every seed in the config."""
    train, _ = data
    lam, sweep = resolve_lambda(exp, train)
    result = ScenarioResult(lam, sweep)

    def one(seed):
        cfg = exp.distill_config(seed, lam)
        teacher, t_rep = train_teacher(cfg, data)
        _, s_rep = train_solo(cfg.student_spec, data, cfg.optimizer, cfg.epochs, seed, cfg.batch_size)
        _, d_rep = distill(teacher, cfg, data)
        for rep in (t_rep, s_rep, d_rep):
            rep.scenario = exp.scenario
        return seed, t_rep, s_rep, d_rep

    for seed, t_rep, s_rep, d_rep in map_seeds(one, exp.seeds):
        result.teacher[seed], result.solo[seed], result.student[seed] = t_rep, s_rep, d_rep
    return result


def run_born_again(exp, data):
    train, _ = data
    exp = exp.model_copy(update={"scenario": EQUAL})
    lam, sweep = resolve_lambda(exp, train)
    result = ScenarioResult(lam, sweep)

    def one(seed):
        gens = born_again(exp.distill_config(seed, lam), data)
        for _, rep in gens:
            rep.scenario = EQUAL
        return seed, [rep for _, rep in gens]

    for seed, reps in map_seeds(one, exp.seeds):
        result.generations[seed] = reps
        result.solo[seed] = reps[0]
    return result


# --- summaries ----------------------------------------------------------------

def summary_rows(reports):
    """Group reports by (method, generation) in first-seen order."""
    groups = {}
    for rep in reports:
        groups.setdefault((rep.method, rep.generation), []).append(rep)
    rows = []
    for (method, gen), reps in groups.items():
        errs = [r.final_test_error for r in reps]
        per_seed = ";".join(f"{r.seed}:{r.final_test_error:.4f}" for r in reps)
        rows.append((method, gen, len(reps), f"{np.mean(errs):.4f}", per_seed))
    return rows


def write_summary(path, reports):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        w.writerows(summary_rows(reports))


COMPARISON_COLUMNS = ("scenario", "method", "generation", "n_seeds", "S(B)", "T(B)", "error")


def _fmt(values):
    return f"{np.mean(values):.4f}" if values else ""


def comparison_table(runs_dir):
    """Comparison rows (student, teacher and transfer error per method), built from every JSON sidecar under ``runs_dir``."""
    paths = sorted(glob.glob(os.path.join(runs_dir, "**", "*.json"), recursive=True))
    sidecars = []
    for p in paths:
        with open(p) as fh:
            try:
                obj = json.load(fh)
            except json.JSONDecodeError:
                continue
        if isinstance(obj, dict) and "final_test_error" in obj and "method" in obj:
            sidecars.append(obj)
    if not sidecars:
        raise UsageError(f"no run reports found under {runs_dir}")

    by_scenario = {}
    for sc in sidecars:
        by_scenario.setdefault(sc.get("scenario") or "", []).append(sc)
    rows = []
    for scenario in sorted(by_scenario):
        items = by_scenario[scenario]
        # a born-again generation-0 run is the student baseline
        base = [s["final_test_error"] for s in items
                if s["method"] == "Baseline" and s.get("generation", "") in ("", "Baseline")]
        teach = [s["final_test_error"] for s in items if s["method"] == "Teacher"]
        methods = {}
        for s in items:
            if s["method"] == "Teacher":
                continue
            methods.setdefault((s["method"], s.get("generation", "")), []).append(s["final_test_error"])
        for (method, gen) in sorted(methods, key=lambda k: (k[0] != "Baseline", k[0], k[1])):
            errs = methods[(method, gen)]
            rows.append((scenario, method, gen, len(errs), _fmt(base), _fmt(teach), _fmt(errs)))
    return rows


def write_comparison(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COMPARISON_COLUMNS)
        w.writerows(rows)
