"""Head-alignment statistics over a model's own greedy trajectories.

For each decoding step every head "refers" to the source word it attends to
most. That word is translated in isolation by a baseline model, and the
resulting *referred target word* is located in the step's next-token
distribution (rank and negative log-likelihood).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import spearmanr

from . import numerics as nx
from .datagen import BOS, EOS
from .decoding import _check_rows, greedy_decode
from .errors import InvalidArgumentError, InvalidStateError
from .metrics import pairwise_bleu
from .model import Transformer

TOP_RANKS = 100
TABLE_RANKS = (1, 3, 5, 6, 10, 50, 100, 1000)


def referred_source_words(rows: np.ndarray) -> list[int]:
    """Per-head argmax source position (lowest index on ties); heads may coincide."""
    rows = np.asarray(rows)
    _check_rows(rows)
    return [int(i) for i in np.argmax(rows, axis=1)]


def referred_target_words(source_words: Sequence[int], baseline: Transformer, max_len: int = 10,
                          cache: dict[int, int] | None = None) -> list[int]:
    """First greedy output token of the baseline for each word used as a one-token source."""
    if baseline.trained_steps <= 0:
        raise InvalidStateError("referred target words need a trained baseline model")
    cache = {} if cache is None else cache
    out = []
    for w in source_words:
        w = int(w)
        if w not in cache:
            cache[w] = greedy_decode(baseline, [w], max_len)[0]
        out.append(cache[w])
    return out


@dataclass
class HeadAlignmentStats:
    """Additive accumulators; merge partial results with ``+``."""

    n_heads: int
    rank_histogram: np.ndarray = None  # ranks 1..100 then one overflow bucket
    head_nll_sum: np.ndarray = None
    rank_nll_sum: np.ndarray = None
    n_steps: int = 0

    def __post_init__(self):
        if self.rank_histogram is None:
            self.rank_histogram = np.zeros(TOP_RANKS + 1, dtype=np.int64)
        if self.head_nll_sum is None:
            self.head_nll_sum = np.zeros(self.n_heads)

    def __add__(self, other: "HeadAlignmentStats") -> "HeadAlignmentStats":
        if self.n_heads != other.n_heads:
            raise InvalidArgumentError("cannot merge stats over different head counts")
        if self.rank_nll_sum is None:
            rank_sum = other.rank_nll_sum
        elif other.rank_nll_sum is None:
            rank_sum = self.rank_nll_sum
        else:
            rank_sum = self.rank_nll_sum + other.rank_nll_sum
        return HeadAlignmentStats(self.n_heads, self.rank_histogram + other.rank_histogram,
                                  self.head_nll_sum + other.head_nll_sum, rank_sum,
                                  self.n_steps + other.n_steps)

    @property
    def per_head_nll(self) -> np.ndarray:
        return self.head_nll_sum / max(self.n_steps, 1)

    @property
    def head_average_nll(self) -> float:
        return float(self.per_head_nll.mean())

    @property
    def per_rank_nll(self) -> dict[int, float]:
        if self.rank_nll_sum is None:
            return {}
        return {r + 1: float(v / max(self.n_steps, 1)) for r, v in enumerate(self.rank_nll_sum)}

    def fraction_within(self, k: int) -> float:
        total = self.rank_histogram.sum()
        return float(self.rank_histogram[:k].sum() / total) if total else 0.0


def sentence_alignment_stats(src: Sequence[int], model: Transformer, baseline: Transformer,
                             max_len: int = 50, cache: dict | None = None,
                             layer: int = -1) -> HeadAlignmentStats:
    """Statistics along the model's greedy translation of one source sentence."""
    cache = {} if cache is None else cache
    h = model.config.n_heads
    stats = HeadAlignmentStats(h)
    state = model.start(model.encode(src))
    max_len = min(max_len, model.config.max_len)
    prev = BOS
    vocab = model.config.vocab_tgt
    n_ranks = min(vocab, max(TABLE_RANKS))
    rank_sum = np.zeros(n_ranks)
    for t in range(max_len + 1):
        step = model.decode_step(state, [prev])
        state = step.state
        logp = nx.log_softmax(step.logits[0].astype(np.float64))
        order = np.argsort(-logp, kind="stable")
        rank_of = np.empty(vocab, dtype=np.int64)
        rank_of[order] = np.arange(1, vocab + 1)
        rank_sum += -logp[order[:n_ranks]]
        positions = referred_source_words(step.cross_attention[layer, 0])
        words = referred_target_words([src[i] for i in positions], baseline, cache=cache)
        for head, w in enumerate(words):
            r = rank_of[w]
            stats.rank_histogram[min(r, TOP_RANKS + 1) - 1] += 1
            stats.head_nll_sum[head] += -logp[w]
        stats.n_steps += 1
        forced = t == max_len
        prev = EOS if forced else int(order[0]) if order[0] > BOS else _best_generatable(logp)
        if prev == EOS:
            break
    stats.rank_nll_sum = rank_sum
    return stats


def _best_generatable(logp: np.ndarray) -> int:
    masked = logp.copy()
    masked[:BOS + 1] = -np.inf
    return int(np.argmax(masked))


def alignment_stats(sources: Sequence[Sequence[int]], model: Transformer, baseline: Transformer,
                    max_len: int = 50, layer: int = -1) -> HeadAlignmentStats:
    if not sources:
        raise InvalidArgumentError("no sentences to analyse")
    cache: dict[int, int] = {}
    total = HeadAlignmentStats(model.config.n_heads)
    for src in sources:
        total = total + sentence_alignment_stats(src, model, baseline, max_len, cache, layer)
    return total


def length_diversity_curve(groups, source_lengths: Sequence[int], bucket_width: int = 1,
                           min_support: int = 5) -> list[dict]:
    """Pair-wise BLEU per source-length bucket, shortest bucket first."""
    if bucket_width < 1:
        raise InvalidArgumentError("bucket_width must be >= 1")
    groups = list(groups)
    if len(groups) != len(source_lengths):
        raise InvalidArgumentError("one source length per group required")
    buckets: dict[int, list] = {}
    for g, n in zip(groups, source_lengths):
        buckets.setdefault((n - 1) // bucket_width, []).append(g)
    rows = []
    for b in sorted(buckets):
        members = buckets[b]
        rows.append({
            "length_lo": b * bucket_width + 1,
            "length_hi": (b + 1) * bucket_width,
            "n_sentences": len(members),
            "pwb": pairwise_bleu(members),
            "low_support": len(members) < min_support,
        })
    return rows


def length_trend(rows: Sequence[dict]) -> float:
    """Spearman correlation between bucket length and pair-wise BLEU (supported buckets)."""
    rows = [r for r in rows if not r["low_support"]]
    if len(rows) < 3:
        return float("nan")
    return float(spearmanr([r["length_lo"] for r in rows], [r["pwb"] for r in rows]).statistic)


# ---------------------------------------------------------------------------
# CSV emitters
# ---------------------------------------------------------------------------


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def histogram_csv(stats: HeadAlignmentStats) -> str:
    rows = [(str(r + 1), int(c)) for r, c in enumerate(stats.rank_histogram[:TOP_RANKS])]
    rows.append((f">{TOP_RANKS}", int(stats.rank_histogram[TOP_RANKS])))
    return _csv(("rank", "count"), rows)


def nll_table_csv(stats: HeadAlignmentStats, ranks: Sequence[int] = TABLE_RANKS) -> str:
    per_rank = stats.per_rank_nll
    rows = [(f"rank {r}", f"{per_rank[r]:.4f}") for r in ranks if r in per_rank]
    rows += [(f"head {h}", f"{v:.4f}") for h, v in enumerate(stats.per_head_nll)]
    rows.append(("head-average", f"{stats.head_average_nll:.4f}"))
    return _csv(("row", "nll"), rows)


def length_curve_csv(rows: Sequence[dict]) -> str:
    return _csv(("length_lo", "length_hi", "n_sentences", "pwb", "low_support"),
                [(r["length_lo"], r["length_hi"], r["n_sentences"], f"{r['pwb']:.4f}", int(r["low_support"]))
                 for r in rows])
