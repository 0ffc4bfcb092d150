"""Fully connected ReLU networks with hand-written backprop and optimizers.

Checkpoint layout (all little-endian)::

    b"ICCT"            magic, 4 bytes
    u32                format version (1)
    u32                layer count L
    L times:
      u32 rows, u32 cols
      f64[rows*cols]   weight, row-major (out x in)
      f64[rows]        bias
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from icct.errors import ConfigError, DataError, UsageError
from icct.numerics import DTYPE, log_softmax, make_rng, stable_softmax

CHECKPOINT_MAGIC = b"ICCT"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NetworkSpec:
    layer_sizes: tuple
    seed: int = 0

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2:
            raise ConfigError(f"layer_sizes needs input and output sizes, got {sizes}")
        if any(s < 1 for s in sizes):
            raise ConfigError(f"layer sizes must be positive, got {sizes}")
        if sizes[-1] < 2:
            raise ConfigError(f"need at least 2 output classes, got {sizes[-1]}")

    @property
    def n_classes(self):
        return self.layer_sizes[-1]

    @property
    def n_params(self):
        s = self.layer_sizes
        return sum(s[i + 1] * (s[i] + 1) for i in range(len(s) - 1))


class NetworkParams:
    """Weights (out x in) and biases per layer.

    Parameters are updated in place by optimizers; ``version`` increments on
    every update so forward caches can detect that they went stale.
    """

    def __init__(self, weights, biases):
        if len(weights) != len(biases) or not weights:
            raise ConfigError("weights and biases must be non-empty lists of equal length")
        self.weights = [np.ascontiguousarray(w, dtype=DTYPE) for w in weights]
        self.biases = [np.ascontiguousarray(b, dtype=DTYPE) for b in biases]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ConfigError(f"layer {i}: weight {w.shape} and bias {b.shape} do not fit")
            if i and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ConfigError(f"layer {i}: input width {w.shape[1]} != previous output width")
        self.version = 0

    @property
    def layer_sizes(self):
        return (self.weights[0].shape[1],) + tuple(w.shape[0] for w in self.weights)

    @property
    def n_classes(self):
        return self.weights[-1].shape[0]

    def copy(self):
        return NetworkParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def arrays(self):
        """Parameter arrays in a fixed order: w0, b0, w1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def flat(self):
        return np.concatenate([a.ravel() for a in self.arrays()])

    def set_flat(self, vec):
        vec = np.asarray(vec, dtype=DTYPE)
        pos = 0
        for a in self.arrays():
            a[...] = vec[pos:pos + a.size].reshape(a.shape)
            pos += a.size
        self.version += 1

    def equal(self, other):
        """Bit-exact equality."""
        return len(self.weights) == len(other.weights) and all(
            x.shape == y.shape and x.tobytes() == y.tobytes()
            for x, y in zip(self.arrays(), other.arrays())
        )


@dataclass
class Gradients:
    weights: list
    biases: list

    def arrays(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def flat(self):
        return np.concatenate([a.ravel() for a in self.arrays()])


@dataclass
class ForwardCache:
    params: NetworkParams
    version: int
    activations: list  # input followed by each hidden post-ReLU activation
    pre_activations: list = field(default_factory=list)


def init(spec):
    """He-normal weights, zero biases, drawn in layer order from the spec's seed."""
    rng = make_rng(spec.seed)
    weights, biases = [], []
    sizes = spec.layer_sizes
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        std = np.sqrt(2.0 / fan_in)
        weights.append(std * rng.standard_normal((fan_out, fan_in)))
        biases.append(np.zeros(fan_out, dtype=DTYPE))
    return NetworkParams(weights, biases)


def relu(x):
    return np.maximum(x, 0.0)


def forward(params, inputs):
    """Return ``(logits, cache)``. No softmax is applied."""
    x = np.atleast_2d(np.asarray(inputs, dtype=DTYPE))
    if x.shape[1] != params.weights[0].shape[1]:
        raise ConfigError(
            f"input width {x.shape[1]} does not match network input {params.weights[0].shape[1]}"
        )
    acts, pres = [x], []
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w.T + b
        if i == last:
            return z, ForwardCache(params, params.version, acts, pres)
        pres.append(z)
        h = relu(z)
        acts.append(h)


def predict_logits(params, inputs, chunk=4096):
    x = np.atleast_2d(np.asarray(inputs, dtype=DTYPE))
    parts = [forward(params, x[i:i + chunk])[0] for i in range(0, len(x), chunk)]
    if not parts:
        return np.zeros((0, params.n_classes), dtype=DTYPE)
    return np.concatenate(parts)


def backward(cache, dlogits):
    """Exact parameter gradients given dLoss/dLogits (b x N)."""
    params = cache.params
    if params.version != cache.version:
        raise UsageError("forward cache is stale: parameters changed since the forward pass")
    g = np.asarray(dlogits, dtype=DTYPE)
    n_layers = len(params.weights)
    if g.shape != (cache.activations[0].shape[0], params.n_classes):
        raise ConfigError(f"upstream gradient has shape {g.shape}")
    dws = [None] * n_layers
    dbs = [None] * n_layers
    for i in range(n_layers - 1, -1, -1):
        dws[i] = g.T @ cache.activations[i]
        dbs[i] = g.sum(axis=0)
        if i:
            g = (g @ params.weights[i]) * (cache.pre_activations[i - 1] > 0)
    return Gradients(dws, dbs)


def ce_loss_and_grad(logits, labels):
    """Mean cross-entropy and its gradient (softmax(z) - onehot) / b."""
    z = np.atleast_2d(np.asarray(logits, dtype=DTYPE))
    y = np.asarray(labels)
    b, n = z.shape
    if y.shape != (b,):
        raise DataError(f"expected {b} labels, got shape {y.shape}")
    if b and (y.min() < 0 or y.max() >= n):
        raise DataError(f"label out of range [0, {n})")
    y = y.astype(np.intp)
    rows = np.arange(b)
    loss = -float(log_softmax(z, axis=1)[rows, y].mean())
    grad = stable_softmax(z, axis=1)
    grad[rows, y] -= 1.0
    return loss, grad / b


def predict(params, inputs):
    """Argmax class; ties go to the lowest index."""
    return np.argmax(predict_logits(params, inputs), axis=1)


# --- optimizers --------------------------------------------------------------

SGD_NESTEROV = "sgd_nesterov"
ADAM = "adam"


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = SGD_NESTEROV
    learning_rate: float = 0.1
    weight_decay: float = 1e-4
    momentum: float = 0.9
    schedule: tuple = ()  # (epoch, multiplier) milestones, applied cumulatively
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.kind not in (SGD_NESTEROV, ADAM):
            raise ConfigError(f"unknown optimizer kind {self.kind!r}")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        sched = tuple((int(e), float(m)) for e, m in self.schedule)
        if any(m <= 0 for _, m in sched):
            raise ConfigError("schedule multipliers must be > 0")
        object.__setattr__(self, "schedule", tuple(sorted(sched)))

    def lr_at(self, epoch):
        lr = self.learning_rate
        for milestone, mult in self.schedule:
            if epoch >= milestone:
                lr *= mult
        return lr

    @classmethod
    def residual_protocol(cls):
        """SGD + Nesterov 0.9, wd 1e-4, lr 0.1 decayed x0.2 at 60/120/160 (200 epochs)."""
        return cls(SGD_NESTEROV, 0.1, 1e-4, 0.9, ((60, 0.2), (120, 0.2), (160, 0.2)))

    @classmethod
    def cnn5_protocol(cls):
        """Adam, lr 1e-3 decayed x0.2 at 40/80/120 (140 epochs)."""
        return cls(ADAM, 1e-3, 0.0, 0.9, ((40, 0.2), (80, 0.2), (120, 0.2)))


class Optimizer:
    """Holds per-parameter state (momentum buffers or Adam moments)."""

    def __init__(self, cfg, params):
        self.cfg = cfg
        self.t = 0
        shapes = [a.shape for a in params.arrays()]
        self.m = [np.zeros(s, dtype=DTYPE) for s in shapes]
        self.v = [np.zeros(s, dtype=DTYPE) for s in shapes] if cfg.kind == ADAM else None

    def step(self, params, grads, epoch):
        cfg = self.cfg
        lr = cfg.lr_at(epoch)
        self.t += 1
        for i, (p, g) in enumerate(zip(params.arrays(), grads.arrays())):
            if p.shape != g.shape:
                raise ConfigError(f"gradient shape {g.shape} != parameter shape {p.shape}")
            if cfg.weight_decay:
                g = g + cfg.weight_decay * p
            if cfg.kind == SGD_NESTEROV:
                buf = self.m[i]
                buf *= cfg.momentum
                buf += g
                p -= lr * (g + cfg.momentum * buf)
            else:
                m, v = self.m[i], self.v[i]
                m *= cfg.momentum
                m += (1 - cfg.momentum) * g
                v *= cfg.beta2
                v += (1 - cfg.beta2) * g * g
                m_hat = m / (1 - cfg.momentum**self.t)
                v_hat = v / (1 - cfg.beta2**self.t)
                p -= lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
        params.version += 1
        return params


def step(params, grads, opt, epoch):
    """Apply one update; ``opt`` is an :class:`Optimizer` holding the running state."""
    return opt.step(params, grads, epoch)


# --- checkpoints -------------------------------------------------------------

def save_checkpoint(path, params):
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(params.weights)))
        for w, b in zip(params.weights, params.biases):
            fh.write(struct.pack("<II", *w.shape))
            fh.write(w.astype("<f8").tobytes())
            fh.write(b.astype("<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != CHECKPOINT_MAGIC:
        raise DataError(f"{path}: not an ICCT checkpoint")
    try:
        version, n_layers = struct.unpack_from("<II", data, 4)
        if version != CHECKPOINT_VERSION:
            raise DataError(f"{path}: unsupported checkpoint version {version}")
        pos = 12
        weights, biases = [], []
        for _ in range(n_layers):
            rows, cols = struct.unpack_from("<II", data, pos)
            pos += 8
            w = np.frombuffer(data, "<f8", rows * cols, pos).reshape(rows, cols)
            pos += 8 * rows * cols
            b = np.frombuffer(data, "<f8", rows, pos)
            pos += 8 * rows
            weights.append(w.astype(DTYPE))
            biases.append(b.astype(DTYPE))
    except (struct.error, ValueError) as exc:
        raise DataError(f"{path}: truncated checkpoint") from exc
    if pos != len(data):
        raise DataError(f"{path}: {len(data) - pos} trailing bytes")
    return NetworkParams(weights, biases)
