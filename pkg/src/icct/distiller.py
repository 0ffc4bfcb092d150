"""Teacher-student training loops for the three capacity scenarios."""

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from icct import icc, kd
from icct.datasets import batch_indices
from icct.errors import ConfigError, RunError
from icct.mlp import (
    NetworkSpec,
    OptimizerConfig,
    Optimizer,
    backward,
    ce_loss_and_grad,
    forward,
    init,
    predict_logits,
)
from icct.numerics import make_rng

log = logging.getLogger(__name__)

NONE, ICC, KD, LT = "none", "icc", "kd", "lt"
TEACHER_LARGER, EQUAL, TEACHER_SMALLER = "teacher_larger", "equal", "teacher_smaller"

METHOD_LABELS = {NONE: "Baseline", ICC: "ICCT", KD: "KD", LT: "LT"}

# held-out-validated transfer weights reported for CIFAR-10 / CIFAR-100 and ILSVRC2012
PAPER_LAMBDAS = {
    "cifar10": {ICC: 1500.0, KD: 300.0, LT: 80.0},
    "cifar100": {ICC: 1800.0, KD: 800.0, LT: 150.0},
    "ilsvrc2012": {ICC: 2000.0, KD: 350.0, LT: 100.0},
}

REPORT_COLUMNS = ("epoch", "train_err", "test_err", "label_loss", "transfer_loss")


@dataclass(frozen=True)
class Transfer:
    kind: str = NONE
    icc_mode: icc.IccLossMode = icc.IccLossMode.PER_SAMPLE_MEAN_KL
    temperature: float = kd.CIFAR10_TEMPERATURE

    def __post_init__(self):
        if self.kind not in METHOD_LABELS:
            raise ConfigError(f"unknown transfer kind {self.kind!r}")
        object.__setattr__(self, "icc_mode", icc.IccLossMode.parse(self.icc_mode))
        if self.kind == KD:
            kd.KdConfig(self.temperature)

    @property
    def label(self):
        return METHOD_LABELS[self.kind]

    def loss_and_grad(self, student, teacher):
        if self.kind == ICC:
            return (icc.icc_loss(student, teacher, self.icc_mode),
                    icc.icc_loss_grad(student, teacher, self.icc_mode))
        if self.kind == KD:
            cfg = kd.KdConfig(self.temperature)
            return kd.kd_loss(student, teacher, cfg), kd.kd_loss_grad(student, teacher, cfg)
        if self.kind == LT:
            return kd.lt_loss(student, teacher), kd.lt_loss_grad(student, teacher)
        return 0.0, np.zeros_like(student)

    def as_dict(self):
        return {"kind": self.kind, "icc_mode": self.icc_mode.value, "temperature": self.temperature}


@dataclass(frozen=True)
class DistillConfig:
    student_spec: NetworkSpec
    teacher_spec: NetworkSpec = None
    transfer: Transfer = field(default_factory=Transfer)
    lam: float = 0.0
    scenario: str = TEACHER_LARGER
    generations: int = 1
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    teacher_optimizer: OptimizerConfig = None
    epochs: int = 20
    teacher_epochs: int = None
    batch_size: int = 128
    seed: int = 0

    def __post_init__(self):
        if not self.lam >= 0:
            raise ConfigError(f"lambda must be >= 0, got {self.lam}")
        if self.scenario not in (TEACHER_LARGER, EQUAL, TEACHER_SMALLER):
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        if self.scenario == EQUAL and self.generations < 1:
            raise ConfigError("generations must be >= 1")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")

    def as_dict(self):
        d = {
            "student_spec": list(self.student_spec.layer_sizes),
            "teacher_spec": list(self.teacher_spec.layer_sizes) if self.teacher_spec else None,
            "transfer": self.transfer.as_dict(),
            "lambda": self.lam,
            "scenario": self.scenario,
            "generations": self.generations,
            "optimizer": _opt_dict(self.optimizer),
            "teacher_optimizer": _opt_dict(self.teacher_optimizer) if self.teacher_optimizer else None,
            "epochs": self.epochs,
            "teacher_epochs": self.teacher_epochs,
            "batch_size": self.batch_size,
            "seed": self.seed,
        }
        return d


def _opt_dict(opt):
    d = asdict(opt)
    d["schedule"] = [list(x) for x in opt.schedule]
    return d


@dataclass
class EpochRecord:
    epoch: int
    train_err: float
    test_err: float
    label_loss: float
    transfer_loss: float
    total_loss: float


@dataclass
class RunReport:
    records: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    method: str = "Baseline"
    generation: str = ""
    scenario: str = ""
    seed: int = 0
    wall_time: float = 0.0
    failed: str = ""

    @property
    def final_test_error(self):
        return self.records[-1].test_err if self.records else float("nan")

    @property
    def final_train_error(self):
        return self.records[-1].train_err if self.records else float("nan")

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(REPORT_COLUMNS)
            for r in self.records:
                w.writerow([r.epoch, f"{r.train_err:.6f}", f"{r.test_err:.6f}",
                            f"{r.label_loss:.12g}", f"{r.transfer_loss:.12g}"])

    def sidecar(self):
        """JSON-ready summary. Wall time is left out so files stay byte-stable."""
        return {
            "method": self.method,
            "generation": self.generation,
            "scenario": self.scenario,
            "seed": self.seed,
            "final_test_error": self.final_test_error,
            "final_train_error": self.final_train_error,
            "failed": self.failed,
            "config": self.config,
        }

    def write(self, stem):
        self.to_csv(f"{stem}.csv")
        with open(f"{stem}.json", "w") as fh:
            json.dump(self.sidecar(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def derive_seed(seed, *tags):
    """Independent 64-bit seed for a (run seed, purpose...) combination."""
    words = [int(seed)] + [t if isinstance(t, int) else int.from_bytes(t.encode(), "little") for t in tags]
    return int(np.random.SeedSequence(words).generate_state(1, np.uint64)[0])


def evaluate(params, dataset):
    """Classification error in percent; argmax ties go to the lowest class index."""
    if len(dataset) == 0:
        return 0.0
    pred = np.argmax(predict_logits(params, dataset.features), axis=1)
    return 100.0 * float(np.count_nonzero(pred != dataset.labels)) / len(dataset)


def _initial_losses(params, train, batch_size, transfer, teacher_logits):
    """Mean batch losses over the training set in file order, before any update."""
    label_sum = transfer_sum = 0.0
    starts = range(0, len(train), batch_size)
    for start in starts:
        sl = slice(start, start + batch_size)
        z, _ = forward(params, train.features[sl])
        t_z = teacher_logits[sl] if teacher_logits is not None else None
        label, trans, _ = logit_gradient(z, train.labels[sl], t_z, transfer, 0.0)
        label_sum += label
        transfer_sum += trans
    n = max(len(starts), 1)
    return label_sum / n, transfer_sum / n


def logit_gradient(z, labels, teacher_z, transfer, lam):
    """(label loss, transfer loss, dTotal/dLogits) for one batch; total = label + lam * transfer."""
    label_loss, grad = ce_loss_and_grad(z, labels)
    if teacher_z is None or transfer.kind == NONE:
        return label_loss, 0.0, grad
    t_loss, t_grad = transfer.loss_and_grad(z, teacher_z)
    # skipped at lam == 0 so the update is bit-identical to a solo run
    if lam:
        grad = grad + lam * t_grad
    return label_loss, t_loss, grad


def _fit(params, data, optimizer_cfg, epochs, batch_size, seed, transfer=None,
         teacher_logits=None, lam=0.0):
    train, test = data
    transfer = transfer or Transfer()
    report = RunReport(seed=seed)
    shuffle_rng = make_rng(derive_seed(seed, "shuffle"))
    opt = Optimizer(optimizer_cfg, params)
    has_teacher = transfer.kind != NONE and teacher_logits is not None

    label0, trans0 = _initial_losses(params, train, batch_size, transfer, teacher_logits)
    report.records.append(EpochRecord(0, evaluate(params, train), evaluate(params, test),
                                      label0, trans0, label0 + lam * trans0))
    for epoch in range(1, epochs + 1):
        label_sum = transfer_sum = 0.0
        idxs = batch_indices(len(train), batch_size, shuffle_rng)
        for idx in idxs:
            with np.errstate(over="ignore", invalid="ignore"):
                z, cache = forward(params, train.features[idx])
                t_z = teacher_logits[idx] if has_teacher else None
                label_loss, t_loss, grad = logit_gradient(z, train.labels[idx], t_z, transfer, lam)
            label_sum += label_loss
            transfer_sum += t_loss
            if not np.isfinite(label_loss) or not np.all(np.isfinite(grad)):
                report.failed = f"non-finite loss or gradient at epoch {epoch}"
                raise RunError(report.failed, partial=(params, report))
            opt.step(params, backward(cache, grad), epoch - 1)
        label_mean = label_sum / len(idxs)
        trans_mean = transfer_sum / len(idxs)
        report.records.append(EpochRecord(
            epoch, evaluate(params, train), evaluate(params, test),
            label_mean, trans_mean, label_mean + lam * trans_mean))
        log.debug("epoch %d train %.2f%% test %.2f%%", epoch,
                  report.records[-1].train_err, report.records[-1].test_err)
    return params, report


def train_solo(spec, data, optimizer, epochs, seed, batch_size=128):
    """Cross-entropy-only training from a fresh initialization derived from ``seed``."""
    t0 = time.perf_counter()
    params = init(replace(spec, seed=derive_seed(seed, "init")))
    params, report = _fit(params, data, optimizer, epochs, batch_size, seed)
    report.wall_time = time.perf_counter() - t0
    report.config = {"layer_sizes": list(spec.layer_sizes), "optimizer": _opt_dict(optimizer),
                     "epochs": epochs, "batch_size": batch_size, "seed": seed}
    return params, report


def teacher_logits_for(teacher, dataset):
    return predict_logits(teacher, dataset.features)


def distill(teacher, cfg, data, student_seed_tag=0, student=None):
    """Train a student against a frozen teacher.

    By default the student is initialized exactly as :func:`train_solo` would
    for the same seed, so ``lam == 0`` reproduces the solo run bit for bit.
    Passing ``student`` starts from a copy of those parameters instead.
    """
    train, _ = data
    if teacher.n_classes != cfg.student_spec.n_classes:
        raise ConfigError(
            f"teacher has {teacher.n_classes} classes but student_spec has {cfg.student_spec.n_classes}"
        )
    if teacher.layer_sizes[0] != train.dim:
        raise ConfigError(f"teacher input width {teacher.layer_sizes[0]} != data dim {train.dim}")
    t0 = time.perf_counter()
    seed = cfg.seed if not student_seed_tag else derive_seed(cfg.seed, "generation", student_seed_tag)
    if student is None:
        params = init(replace(cfg.student_spec, seed=derive_seed(seed, "init")))
    else:
        params = student.copy()
    t_logits = teacher_logits_for(teacher, train)
    params, report = _fit(params, data, cfg.optimizer, cfg.epochs, cfg.batch_size, seed,
                          cfg.transfer, t_logits, cfg.lam)
    report.wall_time = time.perf_counter() - t0
    report.method = cfg.transfer.label if cfg.lam else "Baseline"
    report.seed = cfg.seed
    report.scenario = cfg.scenario
    report.config = cfg.as_dict()
    return params, report


def train_teacher(cfg, data):
    spec = cfg.teacher_spec
    if spec is None:
        raise ConfigError("teacher_spec is required")
    epochs = cfg.teacher_epochs if cfg.teacher_epochs is not None else cfg.epochs
    opt = cfg.teacher_optimizer or cfg.optimizer
    params, report = train_solo(spec, data, opt, epochs, derive_seed(cfg.seed, "teacher"), cfg.batch_size)
    report.method = "Teacher"
    return params, report


def born_again(cfg, data):
    """Generation 0 is a solo run; generation k distills from generation k-1.

    Each generation's student is freshly initialized. Returns a list of
    ``(params, report)``; if a generation fails the earlier ones are kept and
    the failure is recorded on the last report.
    """
    if cfg.generations < 1:
        raise ConfigError("generations must be >= 1")
    params, report = train_solo(cfg.student_spec, data, cfg.optimizer, cfg.epochs, cfg.seed, cfg.batch_size)
    report.generation = "Baseline"
    report.scenario = EQUAL
    out = [(params, report)]
    teacher = params
    for g in range(1, cfg.generations + 1):
        try:
            student, rep = distill(teacher, cfg, data, student_seed_tag=g)
        except RunError as exc:
            partial = exc.partial[1] if exc.partial else RunReport(failed=str(exc))
            partial.generation = f"Gen #{g}"
            out.append((None, partial))
            break
        rep.generation = f"Gen #{g}"
        out.append((student, rep))
        teacher = student
    return out


# --- held-out lambda selection ------------------------------------------------

DEFAULT_LAMBDA_GRID = (0.01, 0.03, 0.1, 0.3)


def holdout_split(train, fraction, seed):
    """Split a training set into (fit, validation) by a seeded permutation."""
    if not 0 < fraction < 1:
        raise ConfigError(f"holdout fraction must lie in (0, 1), got {fraction}")
    order = make_rng(derive_seed(seed, "holdout")).permutation(len(train))
    n_val = max(1, int(round(fraction * len(train))))
    return train.subset(np.sort(order[n_val:])), train.subset(np.sort(order[:n_val]), "validation")


def select_lambda(cfg, train, grid=DEFAULT_LAMBDA_GRID, fraction=0.2, seed=1000, teacher=None,
                  repeats=1):
    """Pick the transfer weight with the lowest mean validation error on held-out slices of ``train``.

    Each of ``repeats`` rounds uses its own seed (``seed``, ``seed + 1``, ...) for the
    split, the initializations and the shuffling. Unless a ``teacher`` is supplied,
    one is trained per round on the fit slice only (for born-again the
    generation-0 student plays that role). Diverged candidates count as
    infinitely bad; ties go to the smaller weight.
    Returns ``(best_lambda, {lambda: mean validation error})``.
    """
    if repeats < 1:
        raise ConfigError("repeats must be >= 1")
    totals = {lam: 0.0 for lam in sorted(grid)}
    for r in range(repeats):
        round_seed = seed + r
        fit, val = holdout_split(train, fraction, round_seed)
        data = (fit, val)
        sweep_cfg = replace(cfg, seed=round_seed)
        round_teacher = teacher
        if round_teacher is None:
            if cfg.scenario == EQUAL:
                round_teacher, _ = train_solo(cfg.student_spec, data, cfg.optimizer, cfg.epochs,
                                              round_seed, cfg.batch_size)
            else:
                round_teacher, _ = train_teacher(sweep_cfg, data)
        for lam in totals:
            try:
                _, rep = distill(round_teacher, replace(sweep_cfg, lam=lam), data, student_seed_tag=1)
                err = rep.final_test_error
            except RunError:
                err = float("inf")
            log.info("lambda %g round %d: validation error %.2f%%", lam, r, err)
            totals[lam] += err
    scores = {lam: total / repeats for lam, total in totals.items()}
    best = min(scores, key=lambda k: (scores[k], k))
    return best, scores
