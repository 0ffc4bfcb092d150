"""Output-layer baselines: temperature-softened distillation (KD) and logit regression (LT)."""

from dataclasses import dataclass

import numpy as np

from icct.errors import ConfigError
from icct.numerics import DTYPE, log_softmax, stable_softmax

CIFAR10_TEMPERATURE = 4.0
CIFAR100_TEMPERATURE = 10.0


@dataclass(frozen=True)
class KdConfig:
    temperature: float = CIFAR10_TEMPERATURE

    def __post_init__(self):
        t = self.temperature
        if not np.isfinite(t) or t <= 0:
            raise ConfigError(f"KD temperature must be finite and > 0, got {t}")


def _pair(student, teacher):
    zs = np.atleast_2d(np.asarray(student, dtype=DTYPE))
    zt = np.atleast_2d(np.asarray(teacher, dtype=DTYPE))
    if zs.shape != zt.shape:
        raise ConfigError(f"student/teacher shape mismatch: {zs.shape} vs {zt.shape}")
    return zs, zt


def soften(logits, cfg):
    z = np.asarray(logits, dtype=DTYPE)
    if z.shape[-1] < 2:
        raise ConfigError("soften needs at least 2 classes")
    return stable_softmax(z / cfg.temperature, axis=-1)


def kd_loss(student, teacher, cfg):
    """Mean over the batch of KL(q_T || q_S), both softened at the same temperature.

    No M^2 rescaling is applied.
    """
    zs, zt = _pair(student, teacher)
    log_s = log_softmax(zs / cfg.temperature, axis=-1)
    log_t = log_softmax(zt / cfg.temperature, axis=-1)
    kl = (np.exp(log_t) * (log_t - log_s)).sum(axis=1)
    return max(float(kl.mean()), 0.0)


def kd_loss_grad(student, teacher, cfg):
    zs, zt = _pair(student, teacher)
    b = zs.shape[0]
    return (soften(zs, cfg) - soften(zt, cfg)) / (b * cfg.temperature)


def lt_loss(student, teacher):
    zs, zt = _pair(student, teacher)
    d = zs - zt
    return float((d * d).sum() / (2 * zs.shape[0]))


def lt_loss_grad(student, teacher):
    zs, zt = _pair(student, teacher)
    return (zs - zt) / zs.shape[0]
