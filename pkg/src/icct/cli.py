"""Command-line entry point: ``icct <subcommand> ...``.

Exit status: 0 success, 2 usage, 3 data, 4 configuration, 5 numeric, 6 run error.
"""

import argparse
import logging
import os
import sys

import numpy as np

from icct import datasets, gradcheck, icc
from icct.config import SynthModel, load_config
from icct.distiller import born_again, distill, train_solo, train_teacher
from icct.errors import ConfigError, IcctError, NumericError, RunError, UsageError
from icct.experiment import comparison_table, map_seeds, resolve_lambda, write_comparison, write_summary
from icct.mlp import load_checkpoint, predict_logits, save_checkpoint

log = logging.getLogger("icct")


def _ensure_dir(path):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {path}: {exc.strerror}") from None
    if not os.access(path, os.W_OK):
        raise UsageError(f"output directory {path} is not writable")
    return path


def cmd_gen_data(args):
    spec = load_config(args.spec, SynthModel).to_spec()
    out = _ensure_dir(args.out)
    train, test = datasets.gen_synthetic(spec)
    datasets.write_csv(os.path.join(out, "train.csv"), train)
    datasets.write_csv(os.path.join(out, "test.csv"), test)
    print(f"wrote {len(train)} train / {len(test)} test rows to {out}")


def _check_teacher(teacher, exp, data):
    train, _ = data
    n = exp.student.layer_sizes[-1]
    if teacher.n_classes != n:
        raise ConfigError(f"student.layer_sizes: {n} classes but teacher checkpoint has {teacher.n_classes}")
    if teacher.layer_sizes[0] != train.dim:
        raise ConfigError(f"data: dimension {train.dim} but teacher checkpoint expects {teacher.layer_sizes[0]}")
    if exp.student.layer_sizes[0] != train.dim:
        raise ConfigError(f"student.layer_sizes: input {exp.student.layer_sizes[0]} but data has {train.dim}")


def _write_run(out, stem, params, report):
    if params is not None:
        save_checkpoint(os.path.join(out, f"{stem}.ckpt"), params)
    report.write(os.path.join(out, stem))


def cmd_train(args):
    exp = load_config(args.config)
    data = exp.data.load()
    out = _ensure_dir(exp.output_dir)
    if args.role == "teacher" and exp.teacher is None:
        raise ConfigError("teacher: required for --role teacher")

    def one(seed):
        cfg = exp.distill_config(seed)
        if args.role == "teacher":
            params, rep = train_teacher(cfg, data)
        else:
            params, rep = train_solo(cfg.student_spec, data, cfg.optimizer, cfg.epochs, seed, cfg.batch_size)
        rep.scenario = exp.scenario
        _write_run(out, f"{args.role}_seed{seed}", params, rep)
        return rep

    reports = map_seeds(one, exp.seeds)
    write_summary(os.path.join(out, f"summary_{args.role}.csv"), reports)
    _print_reports(reports)


def cmd_distill(args):
    exp = load_config(args.config)
    data = exp.data.load()
    teacher = load_checkpoint(args.teacher)
    _check_teacher(teacher, exp, data)
    out = _ensure_dir(exp.output_dir)
    lam, scores = resolve_lambda(exp, data[0], teacher=teacher)
    for k, v in scores.items():
        print(f"lambda sweep {k:g}: validation error {v:.2f}%")

    def one(seed):
        params, rep = distill(teacher, exp.distill_config(seed, lam), data)
        _write_run(out, f"{rep.method.lower()}_seed{seed}", params, rep)
        return rep

    reports = map_seeds(one, exp.seeds)
    write_summary(os.path.join(out, "summary_distill.csv"), reports)
    _print_reports(reports)


def cmd_born_again(args):
    exp = load_config(args.config)
    exp = exp.model_copy(update={"scenario": "equal"})
    data = exp.data.load()
    out = _ensure_dir(exp.output_dir)
    lam, _ = resolve_lambda(exp, data[0])

    failures = []

    def one(seed):
        gens = born_again(exp.distill_config(seed, lam), data)
        for g, (params, rep) in enumerate(gens):
            _write_run(out, f"gen{g}_seed{seed}", params, rep)
            if rep.failed:
                failures.append(f"seed {seed} {rep.generation}: {rep.failed}")
        return [rep for _, rep in gens]

    reports = [r for reps in map_seeds(one, exp.seeds) for r in reps]
    write_summary(os.path.join(out, "summary_born_again.csv"), reports)
    _print_reports(reports)
    if failures:
        raise RunError("; ".join(failures))


def _print_reports(reports):
    for rep in reports:
        gen = f" {rep.generation}" if rep.generation else ""
        print(f"{rep.method}{gen} seed={rep.seed}: test error {rep.final_test_error:.2f}% "
              f"({rep.wall_time:.1f}s)")


def cmd_gradcheck(args):
    reports = gradcheck.check_all(seed=args.seed, tolerance=args.tol, h=args.h)
    for r in reports:
        print(r.line())
    bad = [r for r in reports if not r.passed]
    if bad:
        worst = gradcheck.worst(bad)
        raise NumericError(f"{len(bad)} gradient checks failed; worst: {worst.target} "
                           f"(max_rel={worst.max_rel_err:.3e})")
    print(f"all {len(reports)} gradient checks passed at tol {args.tol:g}")


def cmd_icc_dump(args):
    params = load_checkpoint(args.checkpoint)
    ds = datasets.load_csv(args.data)
    if params.layer_sizes[0] != ds.dim:
        raise ConfigError(f"checkpoint expects {params.layer_sizes[0]} inputs but data has {ds.dim}")
    n_batches = -(-len(ds) // args.batch_size)
    if not 0 <= args.batch < n_batches:
        raise UsageError(f"batch {args.batch} out of range [0, {n_batches})")
    sl = slice(args.batch * args.batch_size, (args.batch + 1) * args.batch_size)
    logits = predict_logits(params, ds.features[sl])
    m = icc.icc_map_batch(logits)
    icc.write_icc_csv(args.out, m)
    print(f"wrote {m.shape[0]}x{m.shape[1]} ICC map to {args.out}")
    if args.reference:
        ref = icc.read_icc_csv(args.reference)
        if ref.shape != m.shape:
            raise ConfigError(f"reference map is {ref.shape}, dump is {m.shape}")
        print(f"KL(reference || dump) = {icc.kl_divergence(ref, icc.read_icc_csv(args.out)):.9g}")


def cmd_report(args):
    if not os.path.isdir(args.runs):
        raise UsageError(f"{args.runs} is not a directory")
    rows = comparison_table(args.runs)
    out = args.out or os.path.join(args.runs, "comparison.csv")
    write_comparison(out, rows)
    print(f"wrote {len(rows)} rows to {out}")


def build_parser():
    p = argparse.ArgumentParser(prog="icct", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-data", help="write a synthetic dataset as train/test CSV")
    s.add_argument("--spec", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("train", help="cross-entropy-only training for each seed")
    s.add_argument("--config", required=True)
    s.add_argument("--role", choices=("student", "teacher"), default="student")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("distill", help="train students against a frozen teacher checkpoint")
    s.add_argument("--config", required=True)
    s.add_argument("--teacher", required=True)
    s.set_defaults(func=cmd_distill)

    s = sub.add_parser("born-again", help="multi-generation self-distillation")
    s.add_argument("--config", required=True)
    s.set_defaults(func=cmd_born_again)

    s = sub.add_parser("gradcheck", help="finite-difference check of every analytic gradient")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--tol", type=float, default=gradcheck.DEFAULT_TOL)
    s.add_argument("--h", type=float, default=gradcheck.DEFAULT_H)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("icc-dump", help="write the batch-averaged ICC map of one batch")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--batch", type=int, required=True)
    s.add_argument("--batch-size", type=int, default=128)
    s.add_argument("--out", required=True)
    s.add_argument("--reference", help="earlier dump; prints KL(reference || this dump)")
    s.set_defaults(func=cmd_icc_dump)

    s = sub.add_parser("report", help="comparison table across run directories")
    s.add_argument("--runs", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return UsageError.exit_code if exc.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            args.func(args)
    except IcctError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return UsageError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
