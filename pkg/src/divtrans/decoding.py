"""Beam search and diversity-oriented decoders.

Head sampling: at each step every hypothesis looks at the final-layer
cross-attention of all H heads, lets each head vote for its argmax source
position, and when no position collects more than K votes (the *confusing*
condition) one head is drawn uniformly and its weight row is copied to every
head before the attention context is formed. K=0 never fires; K=H fires at
every step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from . import numerics as nx
from . import rng as rngmod
from .datagen import BOS, EOS, PAD, UNK
from .errors import InvalidArgumentError, InvalidStateError
from .model import HeadOverride, Transformer, copy_head

MODES = ("beam", "multinomial", "head_sample", "sibling_penalty", "hamming_penalty")
BEAM_MODES = ("beam", "head_sample", "sibling_penalty", "hamming_penalty")


@dataclass(frozen=True)
class DecodePolicy:
    mode: str = "beam"
    beam_size: int = 5
    K: int = 0
    M: int = 5
    penalty_strength: float = 0.0
    max_len: int = 50
    seed: int = 0
    alpha: float = 0.6
    # beam-type modes: take the top-M of one search instead of M top-1 decodes
    nbest: bool = False
    # head_sample: one head draw per step shared by all confusing hypotheses
    shared_sample: bool = False
    override_layer: int = -1

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidArgumentError(f"unknown decoding mode {self.mode!r}")
        if self.beam_size < 1 or self.M < 1 or self.max_len < 1:
            raise InvalidArgumentError("beam_size, M and max_len must be >= 1")
        if self.K < 0:
            raise InvalidArgumentError("K must be >= 0")
        if self.penalty_strength < 0:
            raise InvalidArgumentError("penalty_strength must be >= 0")
        if self.nbest and self.beam_size < self.M:
            raise InvalidArgumentError("n-best output needs beam_size >= M")

    def check_model(self, model: Transformer) -> None:
        if self.K > model.config.n_heads:
            raise InvalidArgumentError(f"K={self.K} exceeds the number of heads {model.config.n_heads}")

    def describe(self) -> str:
        parts = [f"mode={self.mode}", f"M={self.M}", f"seed={self.seed}"]
        if self.mode != "multinomial":
            parts += [f"beam={self.beam_size}", f"alpha={self.alpha}"]
        if self.mode == "head_sample":
            parts.append(f"K={self.K}")
            if self.shared_sample:
                parts.append("shared_sample")
        if self.mode in ("sibling_penalty", "hamming_penalty"):
            parts.append(f"strength={self.penalty_strength}")
        if self.nbest:
            parts.append("nbest")
        return ",".join(parts)


@dataclass
class CandidateHistogram:
    """Per-head argmax source positions and their vote counts."""

    counts: np.ndarray  # [T], sums to H
    candidates: np.ndarray  # [H]


@dataclass
class BeamHypothesis:
    tokens: tuple[int, ...]
    score: float
    finished: bool = False
    rng: np.random.Generator | None = None
    attention: np.ndarray | None = None  # [steps, L, H, S] when recorded
    overrides: int = 0

    def normalized(self, alpha: float) -> float:
        return length_normalized(self.score, len(self.tokens), alpha)


@dataclass
class HypothesisGroup:
    sentence_id: int
    outputs: list[tuple[tuple[int, ...], float]]
    policy: str
    attention: list[np.ndarray | None] = field(default_factory=list)


def length_normalized(score: float, length: int, alpha: float) -> float:
    return score / max(length, 1) ** alpha


def _check_rows(rows: np.ndarray) -> None:
    if rows.ndim != 2 or rows.shape[1] < 1:
        raise InvalidArgumentError("attention rows must be a non-empty [H, T] matrix")
    if np.any(rows < 0) or np.any(np.abs(rows.sum(axis=1) - 1.0) > 1e-5):
        raise InvalidArgumentError("attention rows must be probability vectors")


def candidate_histogram(rows: np.ndarray) -> CandidateHistogram:
    """Vote counts of each source position over per-head argmaxes (ties -> lowest index)."""
    rows = np.asarray(rows)
    _check_rows(rows)
    cands = np.argmax(rows, axis=1)
    return CandidateHistogram(np.bincount(cands, minlength=rows.shape[1]), cands)


def is_confusing(hist: CandidateHistogram, K: int) -> bool:
    return int(hist.counts.max()) <= K


def sample_head(hist: CandidateHistogram, K: int, gen: np.random.Generator) -> int | None:
    """Uniform head index under the confusing condition, else None (no draw)."""
    if not is_confusing(hist, K):
        return None
    return int(gen.integers(len(hist.candidates)))


def head_sample_policy(hist: CandidateHistogram, rows: np.ndarray, K: int,
                       gen: np.random.Generator, layer: int = -1) -> HeadOverride | None:
    """Override copying one uniformly drawn head's row to all heads, or None.

    The generator is advanced exactly once when the condition holds and not
    at all otherwise.
    """
    head = sample_head(hist, K, gen)
    if head is None:
        return None
    return copy_head(np.asarray(rows)[None], np.array([head]), layer=layer)


def sibling_penalty_rerank(scores: np.ndarray, strength: float) -> np.ndarray:
    """Subtract ``strength * r`` from the r-th best expansion (r from 0) of each parent row."""
    scores = np.asarray(scores, dtype=np.float64)
    if strength == 0:
        return scores.copy()
    order = np.argsort(-scores, axis=-1, kind="stable")
    ranks = np.argsort(order, axis=-1, kind="stable")
    return scores - strength * ranks


def hamming_penalty(logits: np.ndarray, emitted_by_groups: Iterable[Iterable[int]], strength: float) -> np.ndarray:
    """Lower each token's score by ``strength`` per earlier group that emitted it this step."""
    out = np.array(logits, dtype=np.float64, copy=True)
    if strength == 0:
        return out
    counts = np.zeros(out.shape[-1])
    for group in emitted_by_groups:
        toks = np.unique(np.fromiter(group, dtype=np.int64))
        counts[toks] += 1
    return out - strength * counts


def noise_perturb(sentence: Sequence[str], p: float, gen: np.random.Generator, unk: str = "<unk>") -> list[str]:
    """With prob. ``p`` replace one word by ``unk``; independently with prob. ``p`` swap two words."""
    if not 0 <= p <= 1:
        raise InvalidArgumentError("p must lie in [0, 1]")
    out = list(sentence)
    if out and gen.random() < p:
        out[int(gen.integers(len(out)))] = unk
    if len(out) >= 2 and gen.random() < p:
        i, j = gen.choice(len(out), size=2, replace=False)
        out[i], out[j] = out[j], out[i]
    return out


# ---------------------------------------------------------------------------
# Search
# ---------------------------------------------------------------------------


def _step_logprobs(logits: np.ndarray, force_eos: bool) -> np.ndarray:
    logp = nx.log_softmax(logits.astype(np.float64))
    logp[:, PAD] = -np.inf
    logp[:, BOS] = -np.inf
    if force_eos:
        eos = logp[:, EOS].copy()
        logp[:] = -np.inf
        logp[:, EOS] = eos
    return logp


def _effective_max_len(model: Transformer, policy: DecodePolicy) -> int:
    return min(policy.max_len, model.config.max_len)


def _encode(model: Transformer, src: Sequence[int]):
    if len(src) == 0:
        raise InvalidArgumentError("empty source sentence")
    return model.encode(src)


def greedy_decode(model: Transformer, src: Sequence[int], max_len: int = 50) -> tuple[int, ...]:
    """Argmax decoding; the returned tokens end with EOS."""
    state = model.start(_encode(model, src))
    max_len = min(max_len, model.config.max_len)
    out: list[int] = []
    prev = BOS
    for t in range(max_len + 1):
        step = model.decode_step(state, [prev])
        state = step.state
        logp = _step_logprobs(step.logits, t == max_len)
        prev = int(np.argmax(logp[0]))
        out.append(prev)
        if prev == EOS:
            break
    return tuple(out)


class _HeadSampler:
    """Attention hook implementing the sampling policy for a batch of hypotheses."""

    def __init__(self, K: int, gens: list[np.random.Generator] | None, shared: np.random.Generator | None,
                 layer: int, trace: list | None):
        self.K = K
        self.gens = gens
        self.shared = shared
        self.layer = layer
        self.trace = trace
        self.fired = None

    def __call__(self, weights: np.ndarray) -> HeadOverride | None:
        n, h, _ = weights.shape
        hists = [candidate_histogram(weights[i]) for i in range(n)]
        active = np.array([is_confusing(hist, self.K) for hist in hists])
        heads = np.full(n, -1, dtype=np.int64)
        if active.any():
            if self.shared is not None:
                heads[active] = int(self.shared.integers(h))
            else:
                for i in np.flatnonzero(active):
                    heads[i] = sample_head(hists[i], self.K, self.gens[i])
        self.fired = active
        if self.trace is not None:
            self.trace.append({"histograms": hists, "heads": heads.copy()})
        if not active.any():
            return None
        return copy_head(weights, np.where(active, heads, 0), active, self.layer)


def beam_search(model: Transformer, src: Sequence[int], policy: DecodePolicy,
                gen: np.random.Generator | None = None, trace: list | None = None,
                record_attention: bool = False) -> list[BeamHypothesis]:
    """Length-normalised beam search; returns hypotheses best-first.

    ``gen`` seeds the per-hypothesis head-sampling streams (head_sample mode).
    ``trace`` receives one dict per decoder step with the candidate histograms
    and the sampled head (-1 if none) of every live hypothesis.
    """
    if policy.mode not in BEAM_MODES:
        raise InvalidArgumentError(f"beam_search does not run mode {policy.mode!r}")
    policy.check_model(model)
    if policy.mode == "hamming_penalty":
        groups = _diverse_beam(model, src, policy, record_attention)
        return sorted((g[0] for g in groups if g), key=lambda hyp: -hyp.normalized(policy.alpha))
    B = policy.beam_size
    max_len = _effective_max_len(model, policy)
    state = model.start(_encode(model, src))
    sampling = policy.mode == "head_sample"
    if sampling and gen is None:
        gen = rngmod.stream(policy.seed)
    alive = [BeamHypothesis((), 0.0, rng=rngmod.clone(gen) if sampling and not policy.shared_sample else None)]
    shared = gen if sampling and policy.shared_sample else None
    finished: list[BeamHypothesis] = []
    for t in range(max_len + 1):
        hook = None
        if sampling:
            hook = _HeadSampler(policy.K, [h.rng for h in alive], shared, policy.override_layer, trace)
        prev = [h.tokens[-1] if h.tokens else BOS for h in alive]
        step = model.decode_step(state, prev, hook=hook, hook_layer=policy.override_layer)
        logp = _step_logprobs(step.logits, t == max_len)
        cand = np.array([h.score for h in alive])[:, None] + logp
        rank_scores = cand
        if policy.mode == "sibling_penalty":
            rank_scores = sibling_penalty_rerank(cand, policy.penalty_strength)
        flat = rank_scores.reshape(-1)
        order = np.argsort(-flat, kind="stable")[: 2 * B]
        v = logp.shape[1]
        keep: list[int] = []
        next_alive: list[BeamHypothesis] = []
        for rank, idx in enumerate(order):
            if not np.isfinite(flat[idx]):
                break
            parent, tok = divmod(int(idx), v)
            ph = alive[parent]
            attn = None
            if record_attention:
                cur = step.cross_attention[:, parent][None]
                attn = cur if ph.attention is None else np.concatenate([ph.attention, cur])
            fired = int(hook is not None and hook.fired[parent])
            child = BeamHypothesis(ph.tokens + (tok,), float(cand[parent, tok]), tok == EOS,
                                   None, attn, ph.overrides + fired)
            if tok == EOS:
                if rank < B:
                    finished.append(child)
            elif len(next_alive) < B:
                if ph.rng is not None:
                    child.rng = rngmod.clone(ph.rng)
                next_alive.append(child)
                keep.append(parent)
        if len(finished) >= B or not next_alive:
            break
        alive = next_alive
        state = step.state.select(keep)
    if not finished:
        raise InvalidStateError("beam search produced no finished hypothesis")
    return sorted(finished, key=lambda hyp: -hyp.normalized(policy.alpha))


def _diverse_beam(model: Transformer, src, policy: DecodePolicy, record_attention: bool):
    """Group-wise beam search with a Hamming diversity penalty between groups.

    Groups are expanded in order at every step; a group's candidates are
    penalised for tokens chosen at the same step by the groups before it.
    """
    G = policy.M
    Bg = max(1, policy.beam_size // G)
    max_len = _effective_max_len(model, policy)
    state = model.start(_encode(model, src))
    alive = [[BeamHypothesis((), 0.0)] for _ in range(G)]
    done: list[list[BeamHypothesis]] = [[] for _ in range(G)]
    rows_of = [[0] for _ in range(G)]
    for t in range(max_len + 1):
        flat_rows = [r for g in range(G) for r in rows_of[g]]
        if not flat_rows:
            break
        state = state.select(flat_rows)
        flat_hyps = [h for g in range(G) for h in alive[g]]
        step = model.decode_step(state, [h.tokens[-1] if h.tokens else BOS for h in flat_hyps])
        logp = _step_logprobs(step.logits, t == max_len)
        v = logp.shape[1]
        emitted: list[set[int]] = []
        offset = 0
        for g in range(G):
            rows = list(range(offset, offset + len(alive[g])))
            offset += len(rows)
            nxt, parents, chosen = [], [], set()
            if rows:
                base = np.array([h.score for h in alive[g]])[:, None] + logp[rows]
                adj = hamming_penalty(base, emitted, policy.penalty_strength)
                flat = adj.reshape(-1)
                for rank, idx in enumerate(np.argsort(-flat, kind="stable")[: 2 * Bg]):
                    if not np.isfinite(flat[idx]):
                        break
                    parent, tok = divmod(int(idx), v)
                    ph = alive[g][parent]
                    attn = None
                    if record_attention:
                        cur = step.cross_attention[:, rows[parent]][None]
                        attn = cur if ph.attention is None else np.concatenate([ph.attention, cur])
                    child = BeamHypothesis(ph.tokens + (tok,), float(base[parent, tok]), tok == EOS, None, attn)
                    if tok == EOS:
                        if rank < Bg:
                            done[g].append(child)
                            chosen.add(tok)
                    elif len(nxt) < Bg:
                        nxt.append(child)
                        parents.append(rows[parent])
                        chosen.add(tok)
            emitted.append(chosen)
            if len(done[g]) >= Bg:
                nxt, parents = [], []
            alive[g] = nxt
            rows_of[g] = parents
        state = step.state
    return [sorted(d, key=lambda hyp: -hyp.normalized(policy.alpha)) for d in done]


def multinomial_decode(model: Transformer, src: Sequence[int], M: int, seed: int, sentence_id: int = 0,
                       max_len: int = 50) -> HypothesisGroup:
    """``M`` ancestral samples from the full next-token distribution."""
    if M < 1:
        raise InvalidArgumentError("M must be >= 1")
    max_len = min(max_len, model.config.max_len)
    gens = [rngmod.stream(seed, sentence_id, m) for m in range(M)]
    state = model.start(_encode(model, src), n=M)
    tokens: list[list[int]] = [[] for _ in range(M)]
    scores = np.zeros(M)
    alive = list(range(M))
    for t in range(max_len + 1):
        prev = [tokens[i][-1] if tokens[i] else BOS for i in alive]
        step = model.decode_step(state, prev)
        logp = _step_logprobs(step.logits, t == max_len)
        probs = np.exp(logp)
        still, keep = [], []
        for row, i in enumerate(alive):
            cdf = np.cumsum(probs[row])
            tok = int(np.searchsorted(cdf, gens[i].random() * cdf[-1], side="right"))
            tok = min(tok, len(cdf) - 1)
            tokens[i].append(tok)
            scores[i] += logp[row, tok]
            if tok != EOS:
                still.append(i)
                keep.append(row)
        if not still:
            break
        alive = still
        state = step.state.select(keep)
    outputs = [(tuple(tokens[i]), length_normalized(scores[i], len(tokens[i]), 0.0)) for i in range(M)]
    policy = DecodePolicy(mode="multinomial", M=M, seed=seed, max_len=max_len)
    return HypothesisGroup(sentence_id, outputs, policy.describe())


def diverse_decode(model: Transformer, src: Sequence[int], policy: DecodePolicy, sentence_id: int = 0,
                   record_attention: bool = False, trace: list | None = None) -> HypothesisGroup:
    """M outputs for one source sentence under ``policy``.

    head_sample runs M full decodes on streams keyed by
    ``(seed, sentence_id, decode_index)`` and keeps each top-of-beam output;
    hamming_penalty keeps the best output of each of M groups; ``nbest``
    takes the top-M of a single search. Duplicates are kept.
    """
    policy.check_model(model)
    if policy.mode == "multinomial":
        return multinomial_decode(model, src, policy.M, policy.seed, sentence_id, policy.max_len)
    picks: list[BeamHypothesis] = []
    if policy.mode == "hamming_penalty":
        for g in _diverse_beam(model, src, policy, record_attention):
            picks.append(g[0])
    elif policy.nbest:
        hyps = beam_search(model, src, policy, rngmod.stream(policy.seed, sentence_id, 0), trace, record_attention)
        if len(hyps) < policy.M:
            raise InvalidStateError(f"beam returned {len(hyps)} hypotheses, need {policy.M}")
        picks = hyps[: policy.M]
    elif policy.mode == "head_sample" and policy.K > 0:
        for m in range(policy.M):
            gen = rngmod.stream(policy.seed, sentence_id, m)
            picks.append(beam_search(model, src, policy, gen, trace, record_attention)[0])
    else:
        # deterministic search: every repetition yields the same top hypothesis
        top = beam_search(model, src, policy, rngmod.stream(policy.seed, sentence_id, 0), trace, record_attention)[0]
        picks = [top] * policy.M
    outputs = [(h.tokens, h.normalized(policy.alpha)) for h in picks]
    return HypothesisGroup(sentence_id, outputs, policy.describe(), [h.attention for h in picks])


def strip_eos(tokens: Sequence[int]) -> tuple[int, ...]:
    return tuple(t for t in tokens if t not in (EOS, PAD, BOS))


# ---------------------------------------------------------------------------
# Corpus-level decoding with optional worker processes
# ---------------------------------------------------------------------------

_WORKER_MODEL: Transformer | None = None


def _init_worker(model):
    global _WORKER_MODEL
    _WORKER_MODEL = model


def _decode_one(args):
    sid, src, policy, record = args
    return diverse_decode(_WORKER_MODEL, src, policy, sid, record)


def decode_corpus(model: Transformer, sources: Sequence[Sequence[int]], policy: DecodePolicy,
                  workers: int = 1, record_attention: bool = False, first_id: int = 0) -> list[HypothesisGroup]:
    """Decode every source; results are independent of ``workers``."""
    tasks = [(first_id + i, list(s), policy, record_attention) for i, s in enumerate(sources)]
    if workers <= 1:
        _init_worker(model)
        try:
            return [_decode_one(t) for t in tasks]
        finally:
            _init_worker(None)
    import multiprocessing as mp

    ctx = mp.get_context("fork")
    with ctx.Pool(workers, initializer=_init_worker, initargs=(model,)) as pool:
        return pool.map(_decode_one, tasks, chunksize=max(1, len(tasks) // (4 * workers)))
