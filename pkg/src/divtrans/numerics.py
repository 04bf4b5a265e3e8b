"""Dense numerics with hand-written gradients.

Everything here works on plain numpy arrays and preserves the input dtype,
so the same code runs in float32 for training/decoding and in float64 for
gradient verification.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import InvalidArgumentError

LAYER_NORM_EPS = 1e-6


def softmax(v: np.ndarray, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax along ``axis``."""
    v = np.asarray(v)
    if v.size == 0 or v.shape[axis] == 0:
        raise InvalidArgumentError("softmax of an empty vector")
    z = v - v.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(v: np.ndarray, axis: int = -1) -> np.ndarray:
    v = np.asarray(v)
    if v.size == 0 or v.shape[axis] == 0:
        raise InvalidArgumentError("log_softmax of an empty vector")
    z = v - v.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def softmax_backward(y: np.ndarray, dy: np.ndarray, axis: int = -1) -> np.ndarray:
    """Gradient w.r.t. softmax inputs given output ``y`` and upstream ``dy``."""
    return y * (dy - (dy * y).sum(axis=axis, keepdims=True))


def layer_norm_forward(x, gain, bias, eps: float = LAYER_NORM_EPS):
    """Layer norm over the last axis. Returns ``(out, cache)``."""
    x = np.asarray(x)
    if x.shape[-1] < 2 or np.shape(gain) != x.shape[-1:] or np.shape(bias) != x.shape[-1:]:
        raise InvalidArgumentError(
            f"layer_norm length mismatch: x{x.shape}, gain{np.shape(gain)}, bias{np.shape(bias)}"
        )
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    return xhat * gain + bias, (xhat, rstd, gain)


def layer_norm(x, gain, bias, eps: float = LAYER_NORM_EPS) -> np.ndarray:
    return layer_norm_forward(x, gain, bias, eps)[0]


def layer_norm_backward(dout, cache):
    """Returns ``(dx, dgain, dbias)``; parameter grads are summed over leading axes."""
    xhat, rstd, gain = cache
    n = xhat.shape[-1]
    lead = tuple(range(dout.ndim - 1))
    dgain = (dout * xhat).sum(axis=lead)
    dbias = dout.sum(axis=lead)
    dxhat = dout * gain
    dx = (rstd / n) * (
        n * dxhat
        - dxhat.sum(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
    )
    return dx, dgain, dbias


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(x: np.ndarray, dout: np.ndarray) -> np.ndarray:
    return dout * (x > 0)


def label_smoothed_loss(logits, target: int, smoothing: float):
    """Cross-entropy against a label-smoothed one-hot target.

    The target index receives ``1 - smoothing`` of the mass and every other
    index receives ``smoothing / (V - 1)``. Returns ``(loss, dlogits)``.
    """
    logits = np.asarray(logits)
    if logits.ndim != 1:
        raise InvalidArgumentError("label_smoothed_loss expects a single logits vector")
    loss, grad = label_smoothed_loss_batch(
        logits[None, :], np.array([target]), smoothing
    )
    return loss, grad[0]


def smoothed_targets(targets: np.ndarray, vocab: int, smoothing: float, dtype) -> np.ndarray:
    if vocab < 2:
        off = 0.0
    else:
        off = smoothing / (vocab - 1)
    q = np.full((len(targets), vocab), off, dtype=dtype)
    q[np.arange(len(targets)), targets] = 1.0 - smoothing
    return q


def label_smoothed_loss_batch(logits, targets, smoothing: float, weights=None):
    """Weighted mean label-smoothed cross-entropy over rows of ``logits``.

    ``weights`` (default all ones) masks padding rows; the mean is taken over
    the weight total. Returns ``(loss, dlogits)``.
    """
    logits = np.asarray(logits)
    targets = np.asarray(targets)
    n, vocab = logits.shape
    if not 0.0 <= smoothing < 1.0:
        raise InvalidArgumentError(f"smoothing must be in [0, 1), got {smoothing}")
    if targets.shape != (n,) or np.any(targets < 0) or np.any(targets >= vocab):
        raise InvalidArgumentError("target index out of range")
    if weights is None:
        weights = np.ones(n, dtype=logits.dtype)
    weights = np.asarray(weights, dtype=logits.dtype)
    total = weights.sum()
    if total <= 0:
        raise InvalidArgumentError("no non-padding positions in loss")
    logp = log_softmax(logits)
    q = smoothed_targets(targets, vocab, smoothing, logits.dtype)
    per_row = -(q * logp).sum(axis=-1)
    loss = float((per_row * weights).sum() / total)
    grad = (np.exp(logp) - q) * (weights / total)[:, None]
    return loss, grad.astype(logits.dtype, copy=False)


@dataclass(frozen=True)
class OptimizerConfig:
    beta1: float = 0.9
    beta2: float = 0.98
    epsilon: float = 1e-9
    warmup_steps: int = 8000
    d_model: int = 512
    label_smoothing: float = 0.1
    # multiplier on the inverse-sqrt schedule; 1.0 is the plain formula
    lr_scale: float = 1.0

    def __post_init__(self):
        if not 0 < self.beta1 < 1 or not 0 < self.beta2 < 1:
            raise InvalidArgumentError("betas must lie in (0, 1)")
        if self.epsilon <= 0:
            raise InvalidArgumentError("epsilon must be positive")
        if self.warmup_steps < 1 or self.d_model < 1:
            raise InvalidArgumentError("warmup_steps and d_model must be positive")
        if not 0 <= self.label_smoothing < 1:
            raise InvalidArgumentError("label_smoothing must be in [0, 1)")


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params, grads, state: AdamState, step: int, lr: float, cfg: OptimizerConfig):
    """One bias-corrected Adam update.

    Returns new ``(params, state)``; inputs are not modified. Missing moment
    entries in ``state`` are treated as zeros.
    """
    if step < 1:
        raise InvalidArgumentError("adam step index starts at 1")
    if set(params) != set(grads):
        raise InvalidArgumentError("params and grads have different keys")
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1**step
    c2 = 1.0 - b2**step
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise InvalidArgumentError(f"grad shape {g.shape} != param shape {p.shape} for {name}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        elif m.shape != p.shape or v.shape != p.shape:
            raise InvalidArgumentError(f"optimizer state shape mismatch for {name}")
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * (g * g)
        mhat = m / c1
        vhat = v / c2
        new_params[name] = (p - lr * mhat / (np.sqrt(vhat) + cfg.epsilon)).astype(p.dtype, copy=False)
        new_m[name] = m.astype(p.dtype, copy=False)
        new_v[name] = v.astype(p.dtype, copy=False)
    return new_params, AdamState(new_m, new_v)


def lr_at(step: int, cfg: OptimizerConfig) -> float:
    """Inverse square-root schedule with linear warmup."""
    if step < 1:
        raise InvalidArgumentError("learning-rate step starts at 1")
    return cfg.lr_scale * cfg.d_model**-0.5 * min(step**-0.5, step * cfg.warmup_steps**-1.5)


def numerical_gradient(f: Callable[[np.ndarray], float], x: np.ndarray, eps: float = 1e-6, indices=None):
    """Central finite-difference gradient of scalar ``f`` at ``x``.

    ``x`` is perturbed in place and restored. With ``indices`` only those
    flat positions are evaluated; the rest of the result stays zero.
    """
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    idx = range(flat.size) if indices is None else indices
    for i in idx:
        old = flat[i]
        flat[i] = old + eps
        fp = f(x)
        flat[i] = old - eps
        fm = f(x)
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * eps)
    return grad


def relative_error(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.linalg.norm(a) + np.linalg.norm(b)
    if denom == 0:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)
