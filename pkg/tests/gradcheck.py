"""Finite-difference checks for every differentiable block, in float64."""

from __future__ import annotations

import numpy as np

from divtrans import model as mdl
from divtrans import numerics as nx
from divtrans.model import ModelConfig, Transformer

EPS = 1e-6


def _check(f, x, analytic, indices=None):
    num = nx.numerical_gradient(f, x, EPS, indices)
    if indices is not None:
        sel = np.zeros(x.size, dtype=bool)
        sel[list(indices)] = True
        return nx.relative_error(analytic.reshape(-1)[sel], num.reshape(-1)[sel])
    return nx.relative_error(analytic, num)


def softmax_error(rng) -> float:
    x = rng.normal(size=(3, 7))
    w = rng.normal(size=(3, 7))
    y = nx.softmax(x)
    return _check(lambda z: float((w * nx.softmax(z)).sum()), x, nx.softmax_backward(y, w))


def log_softmax_error(rng) -> float:
    x = rng.normal(size=(3, 7))
    w = rng.normal(size=(3, 7))
    # d/dx sum(w * log_softmax(x)) = w - softmax(x) * sum(w)
    analytic = w - nx.softmax(x) * w.sum(axis=-1, keepdims=True)
    return _check(lambda z: float((w * nx.log_softmax(z)).sum()), x, analytic)


def layer_norm_errors(rng) -> dict[str, float]:
    x = rng.normal(size=(2, 3, 8))
    g = rng.normal(size=8)
    b = rng.normal(size=8)
    w = rng.normal(size=(2, 3, 8))
    _, cache = nx.layer_norm_forward(x, g, b)
    dx, dg, db = nx.layer_norm_backward(w, cache)
    return {
        "layer_norm.x": _check(lambda z: float((w * nx.layer_norm(z, g, b)).sum()), x, dx),
        "layer_norm.gain": _check(lambda z: float((w * nx.layer_norm(x, z, b)).sum()), g, dg),
        "layer_norm.bias": _check(lambda z: float((w * nx.layer_norm(x, g, z)).sum()), b, db),
    }


def relu_error(rng) -> float:
    x = rng.normal(size=(4, 5))
    x[np.abs(x) < 0.05] = 0.5  # keep away from the kink
    w = rng.normal(size=(4, 5))
    return _check(lambda z: float((w * nx.relu(z)).sum()), x, nx.relu_backward(x, w))


def label_smoothing_errors(rng) -> dict[str, float]:
    logits = rng.normal(size=9)
    _, grad = nx.label_smoothed_loss(logits, 4, 0.1)
    single = _check(lambda z: nx.label_smoothed_loss(z, 4, 0.1)[0], logits, grad)
    batch = rng.normal(size=(5, 9))
    targets = np.array([0, 3, 8, 2, 2])
    weights = np.array([1.0, 1.0, 0.0, 1.0, 1.0])
    _, bgrad = nx.label_smoothed_loss_batch(batch, targets, 0.1, weights)
    multi = _check(lambda z: nx.label_smoothed_loss_batch(z, targets, 0.1, weights)[0], batch, bgrad)
    return {"label_smoothed_loss": single, "label_smoothed_loss_batch": multi}


def attention_errors(rng) -> dict[str, float]:
    d, h = 8, 2
    p = {f"a.{k}": rng.normal(scale=0.5, size=(d, d)) for k in ("wq", "wk", "wv", "wo")}
    xq = rng.normal(size=(2, 3, d))
    xkv = rng.normal(size=(2, 4, d))
    mask = np.ones((2, 1, 1, 4), dtype=bool)
    mask[1, ..., 3] = False
    w = rng.normal(size=(2, 3, d))

    def loss(params=p, q=xq, kv=xkv):
        out, _ = mdl._mha_fwd(params, "a", q, kv, mask, h)
        return float((w * out).sum())

    _, cache = mdl._mha_fwd(p, "a", xq, xkv, mask, h)
    g = {k: np.zeros_like(v) for k, v in p.items()}
    dq, dkv = mdl._mha_bwd(p, g, "a", cache, w)
    errs = {
        "attention.query_input": _check(lambda z: loss(q=z), xq, dq),
        "attention.memory_input": _check(lambda z: loss(kv=z), xkv, dkv),
    }
    for k in p:
        errs[f"attention.{k[2:]}"] = _check(lambda z, k=k: loss(params={**p, k: z}), p[k], g[k])
    return errs


def ffn_errors(rng) -> dict[str, float]:
    d, f = 6, 10
    p = {"f.w1": rng.normal(size=(d, f)), "f.b1": rng.normal(size=f),
         "f.w2": rng.normal(size=(f, d)), "f.b2": rng.normal(size=d)}
    x = rng.normal(size=(2, 3, d))
    w = rng.normal(size=(2, 3, d))

    def loss(params=p, z=x):
        out, _ = mdl._ffn_fwd(params, "f", z)
        return float((w * out).sum())

    _, cache = mdl._ffn_fwd(p, "f", x)
    g = {k: np.zeros_like(v) for k, v in p.items()}
    dx = mdl._ffn_bwd(p, g, "f", cache, w)
    errs = {"ffn.input": _check(lambda z: loss(z=z), x, dx)}
    for k in p:
        errs[f"ffn.{k[2:]}"] = _check(lambda z, k=k: loss(params={**p, k: z}), p[k], g[k])
    return errs


def full_model_errors(rng, samples_per_param: int = 6) -> dict[str, float]:
    """Relative error of every parameter gradient of a 2-layer, d_model=16 model."""
    cfg = ModelConfig(vocab_src=10, vocab_tgt=12, d_model=16, n_heads=4, n_enc_layers=2, n_dec_layers=2,
                      d_ffn=32, max_len=16)
    model = Transformer(cfg, seed=3, dtype=np.float64)
    srcs = [[4, 5, 6, 7], [8, 9, 4]]
    tgts = [[5, 6, 7], [8, 9, 10, 11, 4]]
    _, grads = model.forward_loss(srcs, tgts, 0.1)
    errs = {}
    for name, value in model.params.items():
        idx = rng.choice(value.size, size=min(samples_per_param, value.size), replace=False)

        def f(z, name=name):
            return model.with_params({**model.params, name: z}).forward_loss(srcs, tgts, 0.1, with_grads=False)[0]

        errs[name] = _check(f, value.copy(), grads[name], list(idx))
    return errs


def per_op_errors(rng) -> dict[str, float]:
    errs = {"softmax": softmax_error(rng), "log_softmax": log_softmax_error(rng), "relu": relu_error(rng)}
    errs.update(layer_norm_errors(rng))
    errs.update(label_smoothing_errors(rng))
    errs.update(attention_errors(rng))
    errs.update(ffn_errors(rng))
    return errs
