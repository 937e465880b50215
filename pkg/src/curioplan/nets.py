"""Dense feed-forward networks with hand-written backprop and Adam.

Kept deliberately minimal: dense layers, a linear head, and the three
activations the rest of the package needs. Gradients flow to parameters
and to the network input (the latter is what lets a policy ascend a critic).
"""

from __future__ import annotations

import struct

import numpy as np

_MAGIC = b"GCNN"
_VERSION = 1
_ACTIVATION_IDS = {"relu": 0, "silu": 1, "tanh": 2}
_ACTIVATION_NAMES = {v: k for k, v in _ACTIVATION_IDS.items()}


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _activate(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "silu":
        return z * _sigmoid(z)
    if name == "tanh":
        return np.tanh(z)
    raise ValueError(f"unknown activation {name!r}")


def _activate_grad(name, z):
    if name == "relu":
        return (z > 0).astype(z.dtype)
    if name == "silu":
        s = _sigmoid(z)
        return s * (1.0 + z * (1.0 - s))
    if name == "tanh":
        t = np.tanh(z)
        return 1.0 - t * t
    raise ValueError(f"unknown activation {name!r}")


class Mlp:
    """Fully connected network; hidden activations plus a linear head."""

    def __init__(self, layer_sizes, activation="relu", rng=None, dtype=np.float64):
        if len(layer_sizes) < 2:
            raise ValueError("need at least input and output sizes")
        if activation not in _ACTIVATION_IDS:
            raise ValueError(f"unknown activation {activation!r}")
        self.layer_sizes = [int(n) for n in layer_sizes]
        self.activation = activation
        self.dtype = np.dtype(dtype)
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            if rng is None:
                w = np.zeros((fan_in, fan_out), dtype=self.dtype)
                b = np.zeros(fan_out, dtype=self.dtype)
            else:
                bound = 1.0 / np.sqrt(fan_in)
                w = rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(self.dtype)
                b = rng.uniform(-bound, bound, size=fan_out).astype(self.dtype)
            self.weights.append(w)
            self.biases.append(b)

    @property
    def in_dim(self):
        return self.layer_sizes[0]

    @property
    def out_dim(self):
        return self.layer_sizes[-1]

    def parameters(self):
        """Flat list [W0, b0, W1, b1, ...]; arrays are the live storage."""
        params = []
        for w, b in zip(self.weights, self.biases):
            params.append(w)
            params.append(b)
        return params

    def copy(self) -> "Mlp":
        dup = Mlp(self.layer_sizes, self.activation, rng=None, dtype=self.dtype)
        dup.weights = [w.copy() for w in self.weights]
        dup.biases = [b.copy() for b in self.biases]
        return dup

    def forward(self, x: np.ndarray) -> np.ndarray:
        y, _ = self.forward_cached(x, need_cache=False)
        return y

    def forward_cached(self, x: np.ndarray, need_cache: bool = True):
        single = np.ndim(x) == 1
        h = np.atleast_2d(np.asarray(x, dtype=self.dtype))
        if h.shape[1] != self.in_dim:
            raise ValueError(f"input size {h.shape[1]} != expected {self.in_dim}")
        inputs, preacts = [], []
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if need_cache:
                inputs.append(h)
            z = h @ w + b
            if i < last:
                if need_cache:
                    preacts.append(z)
                h = _activate(self.activation, z)
            else:
                h = z
        y = h[0] if single else h
        cache = (inputs, preacts) if need_cache else None
        return y, cache

    def backward(self, cache, grad_out: np.ndarray):
        """Backprop a gradient of shape [N, out] through a cached forward.

        Returns (parameter gradients in ``parameters()`` order, gradient with
        respect to the input batch).
        """
        inputs, preacts = cache
        delta = np.atleast_2d(np.asarray(grad_out, dtype=self.dtype))
        w_grads = [None] * len(self.weights)
        b_grads = [None] * len(self.biases)
        for i in range(len(self.weights) - 1, -1, -1):
            w_grads[i] = inputs[i].T @ delta
            b_grads[i] = delta.sum(axis=0)
            delta = delta @ self.weights[i].T
            if i > 0:
                delta = delta * _activate_grad(self.activation, preacts[i - 1])
        grads = []
        for wg, bg in zip(w_grads, b_grads):
            grads.append(wg)
            grads.append(bg)
        return grads, delta


class AdamState:
    """Adam moments for a parameter list; L2 weight decay folded into grads."""

    def __init__(self, params, lr, weight_decay=0.0, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = float(lr)
        self.weight_decay = float(weight_decay)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params, grads) -> None:
        if self.lr == 0.0:
            return
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1**self.t
        bias2 = 1.0 - b2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            if self.weight_decay:
                g = g + self.weight_decay * p
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)


def polyak_update(target: Mlp, online: Mlp, coef: float) -> None:
    """target <- coef * target + (1 - coef) * online, in place."""
    for tp, op in zip(target.parameters(), online.parameters()):
        tp *= coef
        tp += (1.0 - coef) * op


def mse_loss(pred: np.ndarray, target: np.ndarray):
    diff = pred - target
    n = diff.size
    loss = float(np.mean(diff * diff))
    return loss, 2.0 * diff / n


def gaussian_nll_loss(pred: np.ndarray, target: np.ndarray, bounds=(-10.0, 4.0)):
    """Diagonal Gaussian negative log-likelihood (constants dropped).

    ``pred`` stacks [mean | log-variance]; the log-variance is clamped to
    ``bounds`` for stability, with zero gradient outside the clamp.
    """
    d = target.shape[-1]
    if pred.shape[-1] != 2 * d:
        raise ValueError("prediction must hold mean and log-variance per output")
    mu, logvar_raw = pred[..., :d], pred[..., d:]
    logvar = np.clip(logvar_raw, bounds[0], bounds[1])
    inv_var = np.exp(-logvar)
    diff = target - mu
    n = diff.size
    loss = float(np.mean(0.5 * (logvar + diff * diff * inv_var)))
    grad = np.empty_like(pred)
    grad[..., :d] = -diff * inv_var / n
    inside = (logvar_raw > bounds[0]) & (logvar_raw < bounds[1])
    grad[..., d:] = np.where(inside, 0.5 * (1.0 - diff * diff * inv_var) / n, 0.0)
    return loss, grad


_LOSSES = {"mse": mse_loss, "gaussian-nll": gaussian_nll_loss}


def train_step_regression(net: Mlp, adam: AdamState, x, targets, loss="mse") -> float:
    """One Adam step on the mean batch loss; returns the pre-update loss."""
    x = np.atleast_2d(np.asarray(x, dtype=net.dtype))
    targets = np.atleast_2d(np.asarray(targets, dtype=net.dtype))
    if len(x) == 0:
        raise ValueError("empty batch")
    loss_fn = _LOSSES[loss]
    pred, cache = net.forward_cached(x)
    value, grad_pred = loss_fn(pred, targets)
    if not np.isfinite(value):
        raise FloatingPointError(f"non-finite {loss} loss: {value}")
    grads, _ = net.backward(cache, grad_pred)
    adam.step(net.parameters(), grads)
    return value


def mlp_forward(net: Mlp, x: np.ndarray) -> np.ndarray:
    return net.forward(x)


def save_net(net: Mlp, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        dtype_id = 1 if net.dtype == np.float64 else 0
        fh.write(
            struct.pack(
                "<IBBI",
                _VERSION,
                dtype_id,
                _ACTIVATION_IDS[net.activation],
                len(net.layer_sizes),
            )
        )
        fh.write(struct.pack(f"<{len(net.layer_sizes)}I", *net.layer_sizes))
        suffix = "<f8" if dtype_id else "<f4"
        for w, b in zip(net.weights, net.biases):
            fh.write(w.astype(suffix).tobytes())
            fh.write(b.astype(suffix).tobytes())


def load_net(path) -> Mlp:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != _MAGIC:
        raise ValueError(f"{path}: bad magic, not a network checkpoint")
    try:
        version, dtype_id, act_id, n_sizes = struct.unpack_from("<IBBI", data, 4)
        pos = 4 + struct.calcsize("<IBBI")
        sizes = struct.unpack_from(f"<{n_sizes}I", data, pos)
        pos += 4 * n_sizes
    except struct.error as exc:
        raise ValueError(f"{path}: truncated header") from exc
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    if act_id not in _ACTIVATION_NAMES:
        raise ValueError(f"{path}: unknown activation id {act_id}")
    dtype = np.float64 if dtype_id else np.float32
    suffix = "<f8" if dtype_id else "<f4"
    itemsize = 8 if dtype_id else 4
    net = Mlp(sizes, _ACTIVATION_NAMES[act_id], rng=None, dtype=dtype)
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        count = fan_in * fan_out
        if pos + (count + fan_out) * itemsize > len(data):
            raise ValueError(f"{path}: truncated parameter data")
        net.weights[i] = (
            np.frombuffer(data, dtype=suffix, count=count, offset=pos)
            .reshape(fan_in, fan_out)
            .astype(dtype)
        )
        pos += count * itemsize
        net.biases[i] = np.frombuffer(
            data, dtype=suffix, count=fan_out, offset=pos
        ).astype(dtype)
        pos += fan_out * itemsize
    if pos != len(data):
        raise ValueError(f"{path}: trailing bytes after parameters")
    return net
