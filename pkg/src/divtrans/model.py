"""Post-norm encoder-decoder Transformer in numpy with manual backprop.

The decoder's encoder-decoder (cross) attention exposes its per-head weights
at every step and accepts a :class:`HeadOverride` that replaces the
post-softmax weight rows before the context vectors are formed. Each head
still applies its own value projection to the (shared) replacement weights.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import numerics as nx
from .datagen import BOS, EOS, PAD, Vocab
from .artifact import HEADER_PREFIX, artifact_header
from .errors import InvalidArgumentError, InvalidStateError

ROW_SUM_TOL = 1e-5


@dataclass(frozen=True)
class ModelConfig:
    vocab_src: int
    vocab_tgt: int
    d_model: int = 512
    n_heads: int = 8
    n_enc_layers: int = 6
    n_dec_layers: int = 2
    d_ffn: int = 2048
    max_len: int = 128
    tied_output: bool = True

    def __post_init__(self):
        dims = (self.vocab_src, self.vocab_tgt, self.d_model, self.n_heads, self.n_enc_layers,
                self.n_dec_layers, self.d_ffn, self.max_len)
        if min(dims) < 1:
            raise InvalidArgumentError("all model dimensions must be positive")
        if self.d_model % self.n_heads:
            raise InvalidArgumentError("d_model must be divisible by n_heads")

    @property
    def d_k(self) -> int:
        return self.d_model // self.n_heads


@dataclass
class AttentionRecord:
    """Weights of one head in one layer: rows are target steps, columns source positions."""

    layer: int
    head: int
    weights: np.ndarray


@dataclass
class HeadOverride:
    """Replacement cross-attention rows for a batch of decoding hypotheses.

    ``weights`` has shape ``[N, H, T]``; ``active`` (default: all) selects the
    hypotheses whose rows are replaced. ``layer`` indexes decoder layers and
    defaults to the final one.
    """

    weights: np.ndarray
    active: np.ndarray | None = None
    layer: int = -1


def copy_head(weights: np.ndarray, heads: np.ndarray, active: np.ndarray | None = None,
              layer: int = -1) -> HeadOverride:
    """Override that copies head ``heads[n]`` of hypothesis ``n`` to all its heads."""
    n, h, _ = weights.shape
    rows = weights[np.arange(n), np.asarray(heads)]
    return HeadOverride(np.repeat(rows[:, None, :], h, axis=1), active, layer)


def sinusoidal_positions(n: int, d: int, dtype=np.float32) -> np.ndarray:
    pos = np.arange(n, dtype=np.float64)[:, None]
    i = np.arange(0, d, 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, i / d)
    pe = np.zeros((n, d))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : d // 2])
    return pe.astype(dtype)


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, f = cfg.d_model, cfg.d_ffn
    shapes: dict[str, tuple[int, ...]] = {
        "src_emb": (cfg.vocab_src, d),
        "tgt_emb": (cfg.vocab_tgt, d),
    }
    if not cfg.tied_output:
        shapes["out_proj"] = (d, cfg.vocab_tgt)

    def attn(prefix):
        for w in ("wq", "wk", "wv", "wo"):
            shapes[f"{prefix}.{w}"] = (d, d)

    def ln(prefix):
        shapes[f"{prefix}.g"] = (d,)
        shapes[f"{prefix}.b"] = (d,)

    def ffn(prefix):
        shapes[f"{prefix}.w1"] = (d, f)
        shapes[f"{prefix}.b1"] = (f,)
        shapes[f"{prefix}.w2"] = (f, d)
        shapes[f"{prefix}.b2"] = (d,)

    for l in range(cfg.n_enc_layers):
        attn(f"enc.{l}.self")
        ln(f"enc.{l}.ln1")
        ffn(f"enc.{l}.ffn")
        ln(f"enc.{l}.ln2")
    for l in range(cfg.n_dec_layers):
        attn(f"dec.{l}.self")
        ln(f"dec.{l}.ln1")
        attn(f"dec.{l}.cross")
        ln(f"dec.{l}.ln2")
        ffn(f"dec.{l}.ffn")
        ln(f"dec.{l}.ln3")
    return shapes


def init_params(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> dict[str, np.ndarray]:
    gen = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 7])))
    params = {}
    for name, shape in param_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[-1]
        if name in ("src_emb", "tgt_emb"):
            # tied output logits start with variance ~0.25, keeping the initial loss near log V
            p = gen.normal(0.0, 0.5 * cfg.d_model**-0.5, size=shape)
        elif leaf == "g":
            p = np.ones(shape)
        elif leaf in ("b", "b1", "b2"):
            p = np.zeros(shape)
        else:
            limit = math.sqrt(6.0 / (shape[0] + shape[1]))
            p = gen.uniform(-limit, limit, size=shape)
        params[name] = p.astype(dtype)
    return params


# ---------------------------------------------------------------------------
# Attention primitives
# ---------------------------------------------------------------------------


def _split(x: np.ndarray, h: int) -> np.ndarray:
    b, t, d = x.shape
    return x.reshape(b, t, h, d // h).transpose(0, 2, 1, 3)


def _merge(x: np.ndarray) -> np.ndarray:
    b, h, t, dk = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, h * dk)


def _check_override_rows(rows: np.ndarray, mask_rows: np.ndarray | None) -> None:
    if np.any(~np.isfinite(rows)) or np.any(rows < 0):
        raise InvalidArgumentError("override rows must be non-negative and finite")
    if np.any(np.abs(rows.sum(axis=-1) - 1.0) > ROW_SUM_TOL):
        raise InvalidArgumentError("override rows must sum to 1")
    if mask_rows is not None and np.any(rows[~np.broadcast_to(mask_rows, rows.shape)] != 0):
        raise InvalidArgumentError("override puts weight on masked positions")


def _attend(qh, kh, vh, mask, scale):
    """Scaled dot-product attention over split heads; returns ``(weights, scores)``."""
    s = (qh @ kh.transpose(0, 1, 3, 2)) * scale
    if mask is not None:
        s = np.where(mask, s, -np.inf)
    return nx.softmax(s), s


def _apply_override(a: np.ndarray, override: HeadOverride, mask) -> np.ndarray:
    """Replace the last-query rows of ``a`` ([N,H,Tq,Tk]) for active hypotheses."""
    w = np.asarray(override.weights)
    n, h, _, tk = a.shape
    if w.shape != (n, h, tk):
        raise InvalidArgumentError(f"override weights shape {w.shape} != {(n, h, tk)}")
    active = np.ones(n, dtype=bool) if override.active is None else np.asarray(override.active, dtype=bool)
    if active.shape != (n,):
        raise InvalidArgumentError("override active mask has wrong length")
    if not active.any():
        return a
    m = None
    if mask is not None:
        m = np.broadcast_to(mask, (n, 1, a.shape[2], tk))[:, :, -1, :][active]
    _check_override_rows(w[active], m)
    a = a.copy()
    a[active, :, -1, :] = w[active].astype(a.dtype, copy=False)
    return a


def multi_head_attention(queries, keys, values, wq, wk, wv, wo, n_heads: int,
                         mask=None, override: HeadOverride | None = None):
    """Batched multi-head attention.

    ``queries`` is ``[B, Tq, d]``, ``keys``/``values`` are ``[B, Tk, d]`` and
    ``mask`` (broadcastable to ``[B, 1, Tq, Tk]``) is True at valid positions.
    An override replaces the weights of the last query row. Returns
    ``(context [B, Tq, d], weights [B, H, Tq, Tk])``.
    """
    queries, keys, values = (np.asarray(x) for x in (queries, keys, values))
    if queries.ndim != 3 or keys.shape != values.shape or keys.shape[0] != queries.shape[0]:
        raise InvalidArgumentError("attention inputs must be [B,T,d] with matching batch and key/value shapes")
    d = queries.shape[-1]
    if d % n_heads or keys.shape[-1] != d or wq.shape != (d, d) or wo.shape != (d, d):
        raise InvalidArgumentError("attention dimension mismatch")
    qh, kh, vh = _split(queries @ wq, n_heads), _split(keys @ wk, n_heads), _split(values @ wv, n_heads)
    a, _ = _attend(qh, kh, vh, mask, 1.0 / math.sqrt(d // n_heads))
    if override is not None:
        a = _apply_override(a, override, mask)
    ctx = _merge(a @ vh)
    return ctx @ wo, a


# ---------------------------------------------------------------------------
# Batched forward/backward blocks (training and full-sequence scoring)
# ---------------------------------------------------------------------------


def _mha_fwd(p, pre, xq, xkv, mask, h):
    wq, wk, wv, wo = p[pre + ".wq"], p[pre + ".wk"], p[pre + ".wv"], p[pre + ".wo"]
    dk = xq.shape[-1] // h
    scale = 1.0 / math.sqrt(dk)
    qh, kh, vh = _split(xq @ wq, h), _split(xkv @ wk, h), _split(xkv @ wv, h)
    a, _ = _attend(qh, kh, vh, mask, scale)
    ctx = _merge(a @ vh)
    return ctx @ wo, (xq, xkv, qh, kh, vh, a, ctx, scale)


def _flat(x):
    return x.reshape(-1, x.shape[-1])


def _mha_bwd(p, g, pre, cache, dout):
    xq, xkv, qh, kh, vh, a, ctx, scale = cache
    h = qh.shape[1]
    wq, wk, wv, wo = p[pre + ".wq"], p[pre + ".wk"], p[pre + ".wv"], p[pre + ".wo"]
    g[pre + ".wo"] += _flat(ctx).T @ _flat(dout)
    dctx = _split(dout @ wo.T, h)
    da = dctx @ vh.transpose(0, 1, 3, 2)
    dvh = a.transpose(0, 1, 3, 2) @ dctx
    ds = nx.softmax_backward(a, da) * scale
    dqh = ds @ kh
    dkh = ds.transpose(0, 1, 3, 2) @ qh
    dq, dk, dv = _merge(dqh), _merge(dkh), _merge(dvh)
    g[pre + ".wq"] += _flat(xq).T @ _flat(dq)
    g[pre + ".wk"] += _flat(xkv).T @ _flat(dk)
    g[pre + ".wv"] += _flat(xkv).T @ _flat(dv)
    return dq @ wq.T, dk @ wk.T + dv @ wv.T


def _ln_fwd(p, pre, x):
    return nx.layer_norm_forward(x, p[pre + ".g"], p[pre + ".b"])


def _ln_bwd(g, pre, cache, dout):
    dx, dg, db = nx.layer_norm_backward(dout, cache)
    g[pre + ".g"] += dg
    g[pre + ".b"] += db
    return dx


def _ffn_fwd(p, pre, x):
    hdn = x @ p[pre + ".w1"] + p[pre + ".b1"]
    r = nx.relu(hdn)
    return r @ p[pre + ".w2"] + p[pre + ".b2"], (x, hdn, r)


def _ffn_bwd(p, g, pre, cache, dout):
    x, hdn, r = cache
    g[pre + ".w2"] += _flat(r).T @ _flat(dout)
    g[pre + ".b2"] += _flat(dout).sum(axis=0)
    dh = nx.relu_backward(hdn, dout @ p[pre + ".w2"].T)
    g[pre + ".w1"] += _flat(x).T @ _flat(dh)
    g[pre + ".b1"] += _flat(dh).sum(axis=0)
    return dh @ p[pre + ".w1"].T


def pad_batch(seqs: Sequence[Sequence[int]], dtype=np.int64) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad id sequences with PAD; returns ``(ids [B, T], valid [B, T])``."""
    if not seqs:
        raise InvalidArgumentError("empty batch")
    t = max(len(s) for s in seqs)
    ids = np.full((len(seqs), t), PAD, dtype=dtype)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = s
    return ids, ids != PAD


@dataclass
class DecoderState:
    """Incremental decoding state for ``N`` hypotheses.

    ``mem_k``/``mem_v`` hold per-layer cross-attention key/value projections of
    the encoder memory (leading axis 1 when shared by all hypotheses), and
    ``self_k``/``self_v`` the self-attention history. ``step`` equals the
    number of tokens already fed.
    """

    mem_k: list[np.ndarray]
    mem_v: list[np.ndarray]
    src_mask: np.ndarray
    self_k: list[np.ndarray]
    self_v: list[np.ndarray]
    step: int = 0
    hidden: np.ndarray | None = None

    @property
    def size(self) -> int:
        return self.self_k[0].shape[0]

    def select(self, index) -> "DecoderState":
        """Reorder/duplicate hypotheses, e.g. after beam pruning."""
        index = np.asarray(index, dtype=np.int64)
        shared = self.mem_k[0].shape[0] == 1
        mk = self.mem_k if shared else [m[index] for m in self.mem_k]
        mv = self.mem_v if shared else [m[index] for m in self.mem_v]
        mask = self.src_mask if shared else self.src_mask[index]
        hidden = None if self.hidden is None else self.hidden[index]
        return DecoderState(mk, mv, mask, [k[index] for k in self.self_k],
                            [v[index] for v in self.self_v], self.step, hidden)


@dataclass
class StepOutput:
    logits: np.ndarray  # [N, V]
    cross_attention: np.ndarray  # [L, N, H, S]
    state: DecoderState


AttentionHook = Callable[[np.ndarray], "HeadOverride | None"]


class Transformer:
    """Parameter container plus the forward/backward/decoding routines."""

    def __init__(self, config: ModelConfig, params: dict[str, np.ndarray] | None = None,
                 seed: int = 0, dtype=np.float32, trained_steps: int = 0):
        self.config = config
        self.trained_steps = trained_steps
        if params is None:
            params = init_params(config, seed, dtype)
        shapes = param_shapes(config)
        if set(params) != set(shapes):
            missing = set(shapes) ^ set(params)
            raise InvalidArgumentError(f"parameter set mismatch: {sorted(missing)[:5]}")
        for name, shape in shapes.items():
            if params[name].shape != shape:
                raise InvalidArgumentError(f"{name}: shape {params[name].shape} != {shape}")
        self.params = params
        self.dtype = params["src_emb"].dtype
        self._pe = sinusoidal_positions(config.max_len + 2, config.d_model, self.dtype)

    def astype(self, dtype) -> "Transformer":
        return Transformer(self.config, {k: v.astype(dtype) for k, v in self.params.items()},
                           trained_steps=self.trained_steps)

    def with_params(self, params: dict[str, np.ndarray], trained_steps: int | None = None) -> "Transformer":
        steps = self.trained_steps if trained_steps is None else trained_steps
        return Transformer(self.config, params, trained_steps=steps)

    @property
    def output_matrix(self) -> np.ndarray:
        """``[d, V]`` projection from decoder states to logits."""
        p = self.params
        return p["tgt_emb"].T if self.config.tied_output else p["out_proj"]

    # -- embeddings -------------------------------------------------------

    def _embed(self, table: str, ids: np.ndarray, offset: int = 0) -> np.ndarray:
        t = ids.shape[1]
        if offset + t > self._pe.shape[0]:
            raise InvalidArgumentError("sequence longer than max_len")
        scale = self.dtype.type(math.sqrt(self.config.d_model))
        return self.params[table][ids] * scale + self._pe[offset : offset + t]

    def _check_src(self, src_ids: np.ndarray):
        if src_ids.shape[1] < 1 or src_ids.shape[1] > self.config.max_len:
            raise InvalidArgumentError(f"source length must be in [1, {self.config.max_len}]")
        if np.any(src_ids < 0) or np.any(src_ids >= self.config.vocab_src):
            raise InvalidArgumentError("source token outside vocabulary")

    # -- encoder ----------------------------------------------------------

    def _encode_fwd(self, src_ids, src_valid, keep_cache=False):
        p, h = self.params, self.config.n_heads
        x = self._embed("src_emb", src_ids)
        mask = src_valid[:, None, None, :]
        caches = []
        for l in range(self.config.n_enc_layers):
            pre = f"enc.{l}"
            a, ca = _mha_fwd(p, pre + ".self", x, x, mask, h)
            x1, cl1 = _ln_fwd(p, pre + ".ln1", x + a)
            f, cf = _ffn_fwd(p, pre + ".ffn", x1)
            x, cl2 = _ln_fwd(p, pre + ".ln2", x1 + f)
            if keep_cache:
                caches.append((ca, cl1, cf, cl2))
        return x, caches

    def encode(self, src: Sequence[int]) -> np.ndarray:
        """Encoder memory ``[T, d_model]`` for one source id sequence."""
        ids = np.asarray(src, dtype=np.int64)[None, :]
        self._check_src(ids)
        mem, _ = self._encode_fwd(ids, np.ones_like(ids, dtype=bool))
        return mem[0]

    def encode_batch(self, srcs: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
        ids, valid = pad_batch(srcs)
        self._check_src(ids)
        if np.any(valid.sum(axis=1) == 0):
            raise InvalidArgumentError("empty source sentence")
        mem, _ = self._encode_fwd(ids, valid)
        return mem, valid

    # -- full-sequence decoder ------------------------------------------

    def _decode_fwd(self, tgt_in, mem, src_valid, keep_cache=False):
        p, h, cfg = self.params, self.config.n_heads, self.config
        y = self._embed("tgt_emb", tgt_in)
        t = tgt_in.shape[1]
        causal = np.tril(np.ones((t, t), dtype=bool))[None, None]
        self_mask = causal
        cross_mask = src_valid[:, None, None, :]
        caches, attn = [], []
        for l in range(cfg.n_dec_layers):
            pre = f"dec.{l}"
            a, ca = _mha_fwd(p, pre + ".self", y, y, self_mask, h)
            y1, cl1 = _ln_fwd(p, pre + ".ln1", y + a)
            c, cc = _mha_fwd(p, pre + ".cross", y1, mem, cross_mask, h)
            y2, cl2 = _ln_fwd(p, pre + ".ln2", y1 + c)
            f, cf = _ffn_fwd(p, pre + ".ffn", y2)
            y, cl3 = _ln_fwd(p, pre + ".ln3", y2 + f)
            attn.append(cc[5])
            if keep_cache:
                caches.append((ca, cl1, cc, cl2, cf, cl3))
        return y, caches, attn

    def score(self, srcs: Sequence[Sequence[int]], tgt_in: Sequence[Sequence[int]]):
        """Non-incremental teacher-forced pass.

        Returns ``(logits [B, T, V], cross_attention [L, B, H, T, S])``; padded
        target positions carry unspecified logits.
        """
        mem, valid = self.encode_batch(srcs)
        ids, _ = pad_batch(tgt_in)
        y, _, attn = self._decode_fwd(ids, mem, valid)
        return y @ self.output_matrix, np.stack(attn)

    # -- training -----------------------------------------------------------

    def forward_loss(self, srcs, tgts, smoothing: float = 0.1, with_grads: bool = True):
        """Mean label-smoothed loss over non-pad target positions.

        ``srcs``/``tgts`` are id sequences without BOS/EOS; targets are shifted
        internally. Returns ``(loss, grads)`` (grads None when not requested).
        """
        if len(srcs) == 0 or len(srcs) != len(tgts):
            raise InvalidArgumentError("batch must be non-empty with matching sources and targets")
        p, cfg = self.params, self.config
        src_ids, src_valid = pad_batch(srcs)
        self._check_src(src_ids)
        tgt_in, _ = pad_batch([[BOS] + list(t) for t in tgts])
        tgt_out, out_valid = pad_batch([list(t) + [EOS] for t in tgts])
        mem, enc_caches = self._encode_fwd(src_ids, src_valid, keep_cache=with_grads)
        y, dec_caches, _ = self._decode_fwd(tgt_in, mem, src_valid, keep_cache=with_grads)
        w_out = self.output_matrix
        logits = y @ w_out
        v = logits.shape[-1]
        loss, dlogits = nx.label_smoothed_loss_batch(
            logits.reshape(-1, v), tgt_out.reshape(-1), smoothing, out_valid.reshape(-1).astype(self.dtype)
        )
        if not with_grads:
            return loss, None
        g = {k: np.zeros_like(val) for k, val in p.items()}
        dlogits = dlogits.reshape(logits.shape)
        dw_out = _flat(y).T @ _flat(dlogits)
        if cfg.tied_output:
            g["tgt_emb"] += dw_out.T
        else:
            g["out_proj"] += dw_out
        dy = dlogits @ w_out.T
        dmem = np.zeros_like(mem)
        for l in reversed(range(cfg.n_dec_layers)):
            pre = f"dec.{l}"
            ca, cl1, cc, cl2, cf, cl3 = dec_caches[l]
            d_res3 = _ln_bwd(g, pre + ".ln3", cl3, dy)
            dy2 = d_res3 + _ffn_bwd(p, g, pre + ".ffn", cf, d_res3)
            d_res2 = _ln_bwd(g, pre + ".ln2", cl2, dy2)
            dq, dkv = _mha_bwd(p, g, pre + ".cross", cc, d_res2)
            dmem += dkv
            dy1 = d_res2 + dq
            d_res1 = _ln_bwd(g, pre + ".ln1", cl1, dy1)
            dq, dkv = _mha_bwd(p, g, pre + ".self", ca, d_res1)
            dy = d_res1 + dq + dkv
        scale = self.dtype.type(math.sqrt(cfg.d_model))
        np.add.at(g["tgt_emb"], tgt_in, dy * scale)
        dx = dmem
        for l in reversed(range(cfg.n_enc_layers)):
            pre = f"enc.{l}"
            ca, cl1, cf, cl2 = enc_caches[l]
            d_res2 = _ln_bwd(g, pre + ".ln2", cl2, dx)
            dx1 = d_res2 + _ffn_bwd(p, g, pre + ".ffn", cf, d_res2)
            d_res1 = _ln_bwd(g, pre + ".ln1", cl1, dx1)
            dq, dkv = _mha_bwd(p, g, pre + ".self", ca, d_res1)
            dx = d_res1 + dq + dkv
        np.add.at(g["src_emb"], src_ids, dx * scale)
        return loss, g

    # -- incremental decoding -------------------------------------------

    def start(self, memory: np.ndarray, src_valid: np.ndarray | None = None, n: int = 1) -> DecoderState:
        """Decoder state for ``n`` hypotheses over one memory ``[S, d]`` or a batch ``[B, S, d]``."""
        p, cfg = self.params, self.config
        memory = np.asarray(memory, dtype=self.dtype)
        if memory.ndim == 2:
            memory = memory[None]
        if memory.shape[-1] != cfg.d_model:
            raise InvalidArgumentError("memory width does not match d_model")
        if src_valid is None:
            src_valid = np.ones(memory.shape[:2], dtype=bool)
        mk = [_split(memory @ p[f"dec.{l}.cross.wk"], cfg.n_heads) for l in range(cfg.n_dec_layers)]
        mv = [_split(memory @ p[f"dec.{l}.cross.wv"], cfg.n_heads) for l in range(cfg.n_dec_layers)]
        count = memory.shape[0] if memory.shape[0] > 1 else n
        empty = np.zeros((count, cfg.n_heads, 0, cfg.d_k), dtype=self.dtype)
        return DecoderState(mk, mv, np.asarray(src_valid, dtype=bool), [empty] * cfg.n_dec_layers,
                            [empty] * cfg.n_dec_layers, 0, None)

    def decode_step(self, state: DecoderState, prev_tokens, override: HeadOverride | None = None,
                    hook: AttentionHook | None = None, hook_layer: int = -1) -> StepOutput:
        """Feed one token per hypothesis and return next-token logits.

        ``override`` replaces cross-attention rows in ``override.layer``.
        ``hook`` is called with the computed ``[N, H, S]`` cross-attention
        weights of ``hook_layer`` and may return an override for that layer;
        both apply before the context is computed, so they change the logits.
        """
        p, cfg = self.params, self.config
        h, n_layers = cfg.n_heads, cfg.n_dec_layers
        tokens = np.asarray(prev_tokens, dtype=np.int64).reshape(-1)
        n = tokens.shape[0]
        if state.size != n or len(state.self_k) != n_layers:
            raise InvalidStateError("decoder state does not match the token batch")
        if any(k.shape[2] != state.step for k in state.self_k):
            raise InvalidStateError("decoder cache length differs from step index")
        if state.mem_k[0].shape[0] not in (1, n):
            raise InvalidStateError("memory batch does not match hypotheses")
        if np.any(tokens < 0) or np.any(tokens >= cfg.vocab_tgt):
            raise InvalidArgumentError("target token outside vocabulary")
        if state.step >= cfg.max_len + 1:
            raise InvalidStateError("decoding past max_len")
        ov_layer = None if override is None else override.layer % n_layers
        hook_layer = hook_layer % n_layers
        scale = 1.0 / math.sqrt(cfg.d_k)
        x = self._embed("tgt_emb", tokens[:, None], offset=state.step)
        mask = state.src_mask[:, None, None, :]
        new_k, new_v, attn = [], [], []
        for l in range(n_layers):
            pre = f"dec.{l}"
            qh = _split(x @ p[pre + ".self.wq"], h)
            kh = np.concatenate([state.self_k[l], _split(x @ p[pre + ".self.wk"], h)], axis=2)
            vh = np.concatenate([state.self_v[l], _split(x @ p[pre + ".self.wv"], h)], axis=2)
            new_k.append(kh)
            new_v.append(vh)
            a, _ = _attend(qh, kh, vh, None, scale)
            x1 = nx.layer_norm(x + _merge(a @ vh) @ p[pre + ".self.wo"], p[pre + ".ln1.g"], p[pre + ".ln1.b"])
            qc = _split(x1 @ p[pre + ".cross.wq"], h)
            ac, _ = _attend(qc, state.mem_k[l], state.mem_v[l], mask, scale)
            if ov_layer == l:
                ac = _apply_override(ac, override, mask)
            if hook is not None and hook_layer == l:
                hooked = hook(ac[:, :, 0, :])
                if hooked is not None:
                    ac = _apply_override(ac, hooked, mask)
            attn.append(ac[:, :, 0, :])
            c = _merge(ac @ state.mem_v[l]) @ p[pre + ".cross.wo"]
            x2 = nx.layer_norm(x1 + c, p[pre + ".ln2.g"], p[pre + ".ln2.b"])
            f, _ = _ffn_fwd(p, pre + ".ffn", x2)
            x = nx.layer_norm(x2 + f, p[pre + ".ln3.g"], p[pre + ".ln3.b"])
        hidden = x[:, 0, :]
        logits = hidden @ self.output_matrix
        new_state = DecoderState(state.mem_k, state.mem_v, state.src_mask, new_k, new_v, state.step + 1, hidden)
        return StepOutput(logits, np.stack(attn), new_state)


def attention_records(steps: Sequence[np.ndarray], hyp: int = 0) -> list[AttentionRecord]:
    """Regroup per-step ``[L, N, H, S]`` arrays into one record per (layer, head)."""
    if not steps:
        return []
    stacked = np.stack([s[:, hyp] for s in steps], axis=2)  # [L, H, steps, S]
    return [AttentionRecord(l, h, stacked[l, h]) for l in range(stacked.shape[0]) for h in range(stacked.shape[1])]


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"DIVTRANS-CHECKPOINT\n"
CHECKPOINT_VERSION = 1


@dataclass
class Checkpoint:
    model: Transformer
    src_vocab: Vocab
    tgt_vocab: Vocab
    meta: dict = field(default_factory=dict)


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    cfg = ckpt.model.config
    manifest, blobs, offset = [], [], 0
    for name in param_shapes(cfg):
        arr = np.ascontiguousarray(ckpt.model.params[name], dtype="<f4")
        raw = arr.tobytes()
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = {
        "format_version": CHECKPOINT_VERSION,
        "config": asdict(cfg),
        "src_vocab": ckpt.src_vocab.itos,
        "tgt_vocab": ckpt.tgt_vocab.itos,
        "manifest": manifest,
        "meta": ckpt.meta,
    }
    text = json.dumps(header, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    first = artifact_header(ckpt.meta.get("config_digest", ""), ckpt.meta.get("seed", 0)).encode("utf-8")
    return first + b"\n" + CHECKPOINT_MAGIC + text.encode("utf-8") + b"\n" + b"".join(blobs)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(ckpt))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        data = fh.read()
    if data.startswith(HEADER_PREFIX.encode("utf-8")):
        data = data[data.index(b"\n") + 1 :]
    if not data.startswith(CHECKPOINT_MAGIC):
        raise InvalidArgumentError(f"{path}: not a checkpoint file")
    rest = data[len(CHECKPOINT_MAGIC):]
    nl = rest.index(b"\n")
    header = json.loads(rest[:nl].decode("utf-8"))
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise InvalidArgumentError(f"{path}: unsupported checkpoint version {header.get('format_version')}")
    body = rest[nl + 1 :]
    cfg = ModelConfig(**header["config"])
    params = {}
    for entry in header["manifest"]:
        raw = body[entry["offset"] : entry["offset"] + entry["nbytes"]]
        if len(raw) != entry["nbytes"]:
            raise InvalidArgumentError(f"{path}: truncated parameter {entry['name']}")
        params[entry["name"]] = np.frombuffer(raw, dtype="<f4").reshape(entry["shape"]).astype(np.float32)
    meta = header.get("meta", {})
    model = Transformer(cfg, params, trained_steps=int(meta.get("train_steps", 0)))
    return Checkpoint(model, Vocab(header["src_vocab"]), Vocab(header["tgt_vocab"]), meta)
