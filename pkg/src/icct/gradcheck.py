"""Finite-difference oracle for every analytic gradient in the package.

The oracle only ever evaluates loss values; analytic gradients are computed
separately and compared coordinate by coordinate.
"""

from dataclasses import dataclass

import numpy as np

from icct import icc, kd
from icct.errors import NumericError
from icct.mlp import NetworkSpec, backward, ce_loss_and_grad, forward, init
from icct.numerics import DTYPE, make_rng

DEFAULT_H = 1e-5
DEFAULT_TOL = 1e-5
BATCH_SIZES = (1, 4, 8)
CLASS_COUNTS = (2, 5, 16)
NET_LAMBDA = 0.5

# hand-derived: teacher logits (0, 0), student logits (1, 0), per-sample ICC gradient
FIXTURE_STUDENT = np.array([[1.0, 0.0]])
FIXTURE_TEACHER = np.array([[0.0, 0.0]])
FIXTURE_ICC_GRAD = np.array([[0.450734, -0.150244]])


@dataclass
class GradReport:
    target: str
    max_rel_err: float
    max_abs_err: float
    worst_coord: int
    tolerance: float

    @property
    def passed(self):
        return self.max_rel_err < self.tolerance

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} {self.target:<40s} max_rel={self.max_rel_err:.3e} "
                f"max_abs={self.max_abs_err:.3e} worst={self.worst_coord}")


def central_diff(f, x, h=DEFAULT_H):
    if not h > 0:
        raise ValueError("step h must be > 0")
    x = np.array(x, dtype=DTYPE)
    shape = x.shape
    flat = x.ravel()
    grad = np.empty_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(flat.reshape(shape))
        flat[i] = orig - h
        fm = f(flat.reshape(shape))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"non-finite function value while probing coordinate {i}")
        grad[i] = (fp - fm) / (2 * h)
    return grad.reshape(shape)


def compare(target, analytic, numeric, tolerance=DEFAULT_TOL):
    a = np.ravel(np.asarray(analytic, dtype=DTYPE))
    n = np.ravel(np.asarray(numeric, dtype=DTYPE))
    if a.shape != n.shape:
        raise ValueError(f"{target}: analytic {a.shape} vs numeric {n.shape}")
    abs_err = np.abs(a - n)
    rel_err = abs_err / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-12)
    worst = int(np.argmax(rel_err)) if rel_err.size else 0
    return GradReport(target, float(rel_err.max(initial=0.0)), float(abs_err.max(initial=0.0)),
                      worst, tolerance)


def check(target, f, x, analytic, h=DEFAULT_H, tolerance=DEFAULT_TOL):
    return compare(target, analytic, central_diff(f, x, h), tolerance)


# --- battery -----------------------------------------------------------------

def _logit_targets(zs, zt, labels, temperature):
    """name -> (loss of student logits, analytic gradient function)."""
    kcfg = kd.KdConfig(temperature)
    per, avg = icc.IccLossMode.PER_SAMPLE_MEAN_KL, icc.IccLossMode.AVERAGED_MAP_KL
    return {
        "icc_per_sample": (lambda z: icc.icc_loss(z, zt, per), lambda z: icc.icc_loss_grad(z, zt, per)),
        "icc_averaged": (lambda z: icc.icc_loss(z, zt, avg), lambda z: icc.icc_loss_grad(z, zt, avg)),
        "kd": (lambda z: kd.kd_loss(z, zt, kcfg), lambda z: kd.kd_loss_grad(z, zt, kcfg)),
        "lt": (lambda z: kd.lt_loss(z, zt), lambda z: kd.lt_loss_grad(z, zt)),
        "ce": (lambda z: ce_loss_and_grad(z, labels)[0], lambda z: ce_loss_and_grad(z, labels)[1]),
    }


def _network_objective(params, x, labels, transfer_loss, transfer_grad, lam):
    """(loss of a flat parameter vector, analytic flat gradient) for CE + lam * transfer."""
    probe = params.copy()

    def loss(theta):
        probe.set_flat(theta)
        z, _ = forward(probe, x)
        value = ce_loss_and_grad(z, labels)[0]
        if transfer_loss is not None:
            value += lam * transfer_loss(z)
        return value

    z, cache = forward(params, x)
    g = ce_loss_and_grad(z, labels)[1]
    if transfer_grad is not None:
        g = g + lam * transfer_grad(z)
    return loss, backward(cache, g).flat()


def battery(seed=0, batch_sizes=BATCH_SIZES, class_counts=CLASS_COUNTS, temperature=4.0):
    """Yield (target, loss_fn, point, analytic_fn) for every check in the default battery."""
    rng = make_rng(seed)
    yield ("icc_fixture[b=1,N=2]", lambda z: icc.icc_loss(z, FIXTURE_TEACHER),
           FIXTURE_STUDENT, lambda z: FIXTURE_ICC_GRAD)
    for b in batch_sizes:
        for n in class_counts:
            tag = f"[b={b},N={n}]"
            zs = rng.standard_normal((b, n))
            zt = rng.standard_normal((b, n))
            labels = rng.integers(0, n, size=b)
            targets = _logit_targets(zs, zt, labels, temperature)
            for name, (f, g) in targets.items():
                yield name + tag, f, zs, g

            d_in = 6
            hidden = tuple(int(h) for h in rng.integers(4, 17, size=2))
            spec = NetworkSpec((d_in,) + hidden + (n,), seed=int(rng.integers(0, 2**32)))
            params = init(spec)
            for bias in params.biases:
                bias[...] = 0.1 * rng.standard_normal(bias.shape)
            x = rng.standard_normal((b, d_in))
            net_targets = {"net_ce": (None, None)}
            for name in ("icc_per_sample", "icc_averaged", "kd", "lt"):
                net_targets[f"net_ce+{name}"] = targets[name]
            for name, (tf, tg) in net_targets.items():
                loss, grad = _network_objective(params, x, labels, tf, tg, NET_LAMBDA)
                yield name + tag, loss, params.flat(), (lambda _theta, grad=grad: grad)


def check_all(seed=0, tolerance=DEFAULT_TOL, h=DEFAULT_H, overrides=None):
    """Run the battery. ``overrides`` maps a target prefix to a replacement analytic gradient."""
    overrides = overrides or {}
    reports = []
    for target, f, x, g in battery(seed):
        base = target.split("[")[0]
        if base in overrides:
            g = overrides[base]
        reports.append(check(target, f, x, g(x), h=h, tolerance=tolerance))
    return reports


def worst(reports):
    return max(reports, key=lambda r: r.max_rel_err)


# --- second-order contrast ---------------------------------------------------

def mixed_partial(f, x, k, i, h=1e-3):
    """d^2 f / dx_k dx_i by nested central differences with one Richardson step."""
    x = np.array(x, dtype=DTYPE)
    flat_shape = x.shape

    def stencil(step):
        def at(dk, di):
            y = x.ravel().copy()
            y[k] += dk
            y[i] += di
            return f(y.reshape(flat_shape))
        return (at(step, step) - at(step, -step) - at(-step, step) + at(-step, -step)) / (4 * step * step)

    return (4 * stencil(h / 2) - stencil(h)) / 3


@dataclass
class ContrastReport:
    k: int
    i: int
    icc_cross: float      # numeric d2 L_ICC / dz_k dz_i
    icc_map_path: float   # part flowing through the maps, belief weights held fixed
    icc_residual: float   # icc_cross - icc_map_path; should equal 2 (a_ik,S - a_ik,T)
    icc_expected: float
    kd_cross: float       # numeric d2 L_KD / dz_k dz_i
    kd_denominator: float  # -q_k q_i / M^2, the softmax-denominator path
    kd_residual: float


def cross_term_contrast(zs, zt, k, i, temperature=1.0, h=1e-3):
    """Separate the explicit belief-weight term of the ICC Hessian from its map path,
    and the KD Hessian from its softmax-denominator path, for one sample (b = 1).

    Everything here is computed from loss and map values only.
    """
    zs = np.asarray(zs, dtype=DTYPE).ravel()
    zt = np.asarray(zt, dtype=DTYPE).ravel()
    if k == i:
        raise ValueError("need two distinct classes")
    l_icc = lambda z: icc.icc_loss(z[None], zt[None])
    icc_cross = mixed_partial(l_icc, zs, k, i, h)

    # d a_jk / dz_i for every j, by central differences on the map itself
    def col(z):
        return icc.icc_map_per_sample(z)[:, k]
    dcol = np.zeros(len(zs))
    for step, w in ((h / 2, 4.0 / 3), (h, -1.0 / 3)):
        up, dn = zs.copy(), zs.copy()
        up[i] += step
        dn[i] -= step
        dcol += w * (col(up) - col(dn)) / (2 * step)
    map_path = 2.0 * float(zs @ dcol)
    gap = float(icc.icc_map_per_sample(zs)[i, k] - icc.icc_map_per_sample(zt)[i, k])

    cfg = kd.KdConfig(temperature)
    l_kd = lambda z: kd.kd_loss(z[None], zt[None], cfg)
    kd_cross = mixed_partial(l_kd, zs, k, i, h)
    q = kd.soften(zs, cfg)
    denom = float(-q[k] * q[i] / temperature**2)
    return ContrastReport(k, i, icc_cross, map_path, icc_cross - map_path, 2.0 * gap,
                          kd_cross, denom, kd_cross - denom)
