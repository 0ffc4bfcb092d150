"""JSON experiment configuration, validated with pydantic (unknown keys are rejected)."""

import json
from typing import List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from icct import datasets
from icct.distiller import (
    DEFAULT_LAMBDA_GRID,
    EQUAL,
    TEACHER_LARGER,
    TEACHER_SMALLER,
    DistillConfig,
    Transfer,
)
from icct.errors import ConfigError
from icct.mlp import NetworkSpec, OptimizerConfig


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class SynthModel(_Strict):
    n_classes: int = Field(10, ge=2)
    dim: int = Field(32, ge=1)
    train_per_class: int = Field(500, ge=1)
    test_per_class: int = Field(200, ge=1)
    center_scale: float = 3.0
    stddev: float = Field(1.0, gt=0)
    overlap_pairs: int = Field(2, ge=0)
    pair_shrink: float = Field(0.25, ge=0, le=1)
    seed: int = Field(0, ge=0)

    def to_spec(self):
        return datasets.SynthSpec(**self.model_dump())


class DataModel(_Strict):
    synthetic: Optional[SynthModel] = None
    train_csv: Optional[str] = None
    test_csv: Optional[str] = None
    cifar10_dir: Optional[str] = None

    def load(self):
        if self.synthetic is not None:
            return datasets.gen_synthetic(self.synthetic.to_spec())
        if self.train_csv and self.test_csv:
            return (datasets.load_csv(self.train_csv, datasets.TRAIN),
                    datasets.load_csv(self.test_csv, datasets.TEST))
        if self.cifar10_dir:
            return datasets.load_cifar10(self.cifar10_dir)
        raise ConfigError("data: give 'synthetic', 'train_csv' + 'test_csv', or 'cifar10_dir'")


class OptimizerModel(_Strict):
    kind: Literal["sgd_nesterov", "adam"] = "sgd_nesterov"
    learning_rate: float = Field(0.05, gt=0)
    weight_decay: float = Field(1e-4, ge=0)
    momentum: float = Field(0.9, ge=0, lt=1)
    schedule: List[Tuple[int, float]] = []

    @field_validator("schedule")
    @classmethod
    def _positive(cls, v):
        if any(m <= 0 for _, m in v):
            raise ValueError("schedule multipliers must be > 0")
        return v

    def to_config(self):
        return OptimizerConfig(self.kind, self.learning_rate, self.weight_decay, self.momentum,
                               tuple(self.schedule))


class NetworkModel(_Strict):
    layer_sizes: List[int]
    optimizer: OptimizerModel = OptimizerModel()
    epochs: int = Field(60, ge=0)

    @field_validator("layer_sizes")
    @classmethod
    def _sizes(cls, v):
        if len(v) < 2 or v[-1] < 2 or min(v) < 1:
            raise ValueError("layer_sizes needs >= 2 positive entries and >= 2 output classes")
        return v

    def spec(self):
        return NetworkSpec(tuple(self.layer_sizes))


class TransferModel(_Strict):
    kind: Literal["none", "icc", "kd", "lt"] = "icc"
    icc_mode: Literal["per_sample", "averaged"] = "per_sample"
    temperature: float = Field(4.0, gt=0)
    # a number, or "sweep" for held-out selection over lambda_sweep.grid
    lam: Union[float, Literal["sweep"]] = Field(0.1, alias="lambda")

    @field_validator("lam")
    @classmethod
    def _nonneg(cls, v):
        if v != "sweep" and v < 0:
            raise ValueError("lambda must be >= 0")
        return v


class SweepModel(_Strict):
    grid: List[float] = list(DEFAULT_LAMBDA_GRID)
    holdout_fraction: float = Field(0.2, gt=0, lt=1)
    seed: int = Field(1000, ge=0)
    repeats: int = Field(3, ge=1)


class ExperimentConfig(_Strict):
    data: DataModel
    student: NetworkModel
    teacher: Optional[NetworkModel] = None
    transfer: TransferModel = TransferModel()
    lambda_sweep: SweepModel = SweepModel()
    scenario: Literal["teacher_larger", "equal", "teacher_smaller"] = TEACHER_LARGER
    generations: int = Field(1, ge=1)
    batch_size: int = Field(128, ge=1)
    seeds: List[int] = Field(default_factory=lambda: [0])
    output_dir: str = "runs"

    @field_validator("seeds")
    @classmethod
    def _seeds(cls, v):
        if not v or min(v) < 0:
            raise ValueError("seeds must be a non-empty list of non-negative integers")
        return v

    def distill_config(self, seed, lam=None):
        t = self.transfer
        if lam is None:
            lam = 0.0 if t.lam == "sweep" else t.lam
        return DistillConfig(
            student_spec=self.student.spec(),
            teacher_spec=self.teacher.spec() if self.teacher else None,
            transfer=Transfer(t.kind, t.icc_mode, t.temperature),
            lam=float(lam),
            scenario=self.scenario,
            generations=self.generations,
            optimizer=self.student.optimizer.to_config(),
            teacher_optimizer=self.teacher.optimizer.to_config() if self.teacher else None,
            epochs=self.student.epochs,
            teacher_epochs=self.teacher.epochs if self.teacher else None,
            batch_size=self.batch_size,
            seed=seed,
        )


def _format_errors(exc):
    parts = []
    for err in exc.errors():
        loc = ".".join(str(x) for x in err["loc"]) or "<root>"
        parts.append(f"{loc}: {err['msg']}")
    return "; ".join(parts)


def parse_config(obj, model=ExperimentConfig):
    try:
        return model.model_validate(obj)
    except ValidationError as exc:
        raise ConfigError(f"invalid config: {_format_errors(exc)}") from None


def load_config(path, model=ExperimentConfig):
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    return parse_config(obj, model)


SMALL_NET = [32, 32, 10]
LARGE_NET = [32, 256, 256, 10]
# strongly regularized, shorter protocol for trained-from-scratch teachers
TEACHER_PROTOCOL = {"epochs": 30, "optimizer": {"learning_rate": 0.05, "weight_decay": 5e-3,
                                                "schedule": [[18, 0.2]]}}
STUDENT_PROTOCOL = {"epochs": 60, "optimizer": {"learning_rate": 0.05, "weight_decay": 1e-4,
                                                "schedule": [[36, 0.2]]}}


def reference_config(scenario=TEACHER_LARGER, seeds=(0, 1, 2, 3, 4), output_dir="runs"):
    """Desk-scale experiment on the reference synthetic task (10 classes, 32 dims, two confusable pairs).

    ``teacher_larger``: large teacher, small student. ``equal``: born-again with the
    small net for two generations. ``teacher_smaller``: small teacher, large student.
    """
    cfg = {
        "data": {"synthetic": {}},
        "transfer": {"kind": "icc", "lambda": "sweep"},
        "scenario": scenario,
        "seeds": list(seeds),
        "output_dir": output_dir,
    }
    if scenario == TEACHER_LARGER:
        cfg["teacher"] = dict(TEACHER_PROTOCOL, layer_sizes=LARGE_NET)
        cfg["student"] = dict(STUDENT_PROTOCOL, layer_sizes=SMALL_NET)
    elif scenario == TEACHER_SMALLER:
        cfg["teacher"] = dict(TEACHER_PROTOCOL, layer_sizes=SMALL_NET)
        cfg["student"] = dict(STUDENT_PROTOCOL, layer_sizes=LARGE_NET)
    elif scenario == EQUAL:
        cfg["student"] = dict(STUDENT_PROTOCOL, layer_sizes=SMALL_NET)
        cfg["generations"] = 2
    else:
        raise ConfigError(f"unknown scenario {scenario!r}")
    return parse_config(cfg)
