"""Inter-class correlation (ICC) maps and the transfer loss built on them.

For one sample with logits ``z`` the map is the softmax, taken jointly over all
N*N entries, of the outer product ``z z^T``. A mini-batch map is the mean of the
per-sample maps. The transfer loss is KL(teacher || student); teacher logits are
constants and never receive a gradient.
"""

import csv
import enum

import numpy as np

from icct.errors import ConfigError, DataError
from icct.numerics import DTYPE, log_softmax


class IccLossMode(enum.Enum):
    # mean over samples of KL between per-sample maps
    PER_SAMPLE_MEAN_KL = "per_sample"
    # KL between the two batch-averaged maps
    AVERAGED_MAP_KL = "averaged"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        for mode in cls:
            if value in (mode.value, mode.name):
                return mode
        raise ConfigError(f"unknown ICC loss mode {value!r}")


def _check_batch(logits, name="logits"):
    z = np.asarray(logits, dtype=DTYPE)
    if z.ndim == 1:
        z = z[None, :]
    if z.ndim != 2:
        raise ConfigError(f"{name} must be a b x N matrix, got shape {z.shape}")
    if z.shape[0] < 1:
        raise ConfigError(f"{name}: empty batch")
    if z.shape[1] < 2:
        raise ConfigError(f"{name}: need at least 2 classes for an ICC map, got {z.shape[1]}")
    return z


def _check_pair(student, teacher):
    zs = _check_batch(student, "student")
    zt = _check_batch(teacher, "teacher")
    if zs.shape != zt.shape:
        raise ConfigError(f"student/teacher shape mismatch: {zs.shape} vs {zt.shape}")
    return zs, zt


def _log_maps(z):
    """Log of the per-sample maps, shape (b, N, N)."""
    b, n = z.shape
    outer = z[:, :, None] * z[:, None, :]
    return log_softmax(outer.reshape(b, n * n), axis=-1).reshape(b, n, n)


def _log_mean_map(log_maps):
    """Log of the batch-averaged map, computed in log space so saturated maps stay finite."""
    m = log_maps.max(axis=0)
    return m + np.log(np.exp(log_maps - m).mean(axis=0))


def icc_map_per_sample(logits):
    z = np.asarray(logits, dtype=DTYPE)
    if z.ndim != 1:
        raise ConfigError(f"expected a logit vector, got shape {z.shape}")
    return np.exp(_log_maps(_check_batch(z))[0])


def icc_map_batch(logit_batch):
    z = _check_batch(logit_batch)
    maps = np.exp(_log_maps(z))
    # fixed left-to-right accumulation over samples
    total = np.zeros(maps.shape[1:], dtype=DTYPE)
    for m in maps:
        total += m
    return total / z.shape[0]


def icc_loss(student, teacher, mode=IccLossMode.PER_SAMPLE_MEAN_KL):
    mode = IccLossMode.parse(mode)
    zs, zt = _check_pair(student, teacher)
    log_s = _log_maps(zs)
    log_t = _log_maps(zt)
    if mode is IccLossMode.PER_SAMPLE_MEAN_KL:
        kl = (np.exp(log_t) * (log_t - log_s)).sum(axis=(1, 2))
        return max(float(kl.mean()), 0.0)
    log_ps = _log_mean_map(log_s)
    log_pt = _log_mean_map(log_t)
    return max(float((np.exp(log_pt) * (log_pt - log_ps)).sum()), 0.0)


def icc_loss_grad(student, teacher, mode=IccLossMode.PER_SAMPLE_MEAN_KL):
    """Gradient of :func:`icc_loss` with respect to the student logits (b x N)."""
    mode = IccLossMode.parse(mode)
    zs, zt = _check_pair(student, teacher)
    b = zs.shape[0]
    log_s = _log_maps(zs)
    if mode is IccLossMode.PER_SAMPLE_MEAN_KL:
        gap = np.exp(log_s) - np.exp(_log_maps(zt))
        # dL/dz_k = (2/b) sum_i z_i (a_ik,S - a_ik,T)
        return (2.0 / b) * np.einsum("si,sik->sk", zs, gap)
    # Averaged map: L = -sum P log Q + const, Q = mean_s q^s.
    # dL/dz^s_k = -(2/b) [ (d z)_k - c (q^s z)_k ],  d = (P/Q - 1) * q^s,  c = sum(d)
    # (the "- 1" uses sum(q^s) = 1 and makes the gradient exactly zero when P == Q)
    log_p = _log_mean_map(_log_maps(zt))
    log_q = _log_mean_map(log_s)
    q = np.exp(log_s)
    d = np.expm1(log_p - log_q)[None] * q
    c = d.sum(axis=(1, 2))
    dz = np.einsum("sik,si->sk", d, zs)
    qz = np.einsum("sik,si->sk", q, zs)
    return -(2.0 / b) * (dz - c[:, None] * qz)


def belief_weight_report(student, teacher):
    """Per-sample addends of the per-sample ICC gradient.

    Returns an array ``r`` of shape (b, N, N) with
    ``r[s, k, i] = z_i,S^s * (a_ik,S^s - a_ik,T^s)``: how much class ``i``'s
    gap contributes to the update of logit ``k``, weighted by the student's own
    logit for ``i``. ``(2 / b) * r.sum(axis=2)`` equals the per-sample-mode gradient.
    """
    zs, zt = _check_pair(student, teacher)
    gap = np.exp(_log_maps(zs)) - np.exp(_log_maps(zt))
    return np.einsum("si,sik->ski", zs, gap)


def belief_weight_rows(student, teacher):
    """Flatten :func:`belief_weight_report` into (sample, class_k, class_i, addend) rows."""
    r = belief_weight_report(student, teacher)
    b, n, _ = r.shape
    return [(s, k, i, float(r[s, k, i])) for s in range(b) for k in range(n) for i in range(n)]


def kl_divergence(p, q):
    """KL(p || q) over all entries of two strictly positive probability arrays."""
    p = np.asarray(p, dtype=DTYPE)
    q = np.asarray(q, dtype=DTYPE)
    if p.shape != q.shape:
        raise ConfigError(f"shape mismatch: {p.shape} vs {q.shape}")
    return float(np.sum(p * (np.log(p) - np.log(q))))


def write_icc_csv(path, icc_map):
    icc_map = np.asarray(icc_map, dtype=DTYPE)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["class_i", "class_j", "value"])
        for i in range(icc_map.shape[0]):
            for j in range(icc_map.shape[1]):
                w.writerow([i, j, f"{icc_map[i, j]:.9g}"])


def read_icc_csv(path):
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            rows.append((int(row["class_i"]), int(row["class_j"]), float(row["value"])))
    if not rows:
        raise DataError(f"{path}: no ICC entries")
    n = max(max(i, j) for i, j, _ in rows) + 1
    out = np.zeros((n, n), dtype=DTYPE)
    for i, j, v in rows:
        out[i, j] = v
    return out
