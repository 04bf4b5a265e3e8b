"""Corpus BLEU, pair-wise BLEU, reference-BLEU protocols and DEQ.

BLEU here is case-sensitive, whitespace-tokenised, 4-gram, corpus-level and
unsmoothed: clipped n-gram matches and hypothesis n-gram totals are summed
over the corpus before the geometric mean is taken; the brevity penalty uses
the closest reference length (shorter one on ties).
"""

from __future__ import annotations

import csv
import io
import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Sequence

from .errors import InvalidArgumentError, UndefinedDEQError

MAX_N = 4


@dataclass
class BleuScore:
    value: float
    precisions: list[float]
    brevity_penalty: float
    hyp_len: int
    ref_len: int
    matches: list[int] = field(default_factory=list)
    totals: list[int] = field(default_factory=list)


def _tokens(x) -> tuple:
    return tuple(x.split()) if isinstance(x, str) else tuple(x)


def _ngram_counts(tokens: tuple, n: int) -> Counter:
    return Counter(tokens[i : i + n] for i in range(len(tokens) - n + 1))


def _closest_ref_len(hyp_len: int, ref_lens: Sequence[int]) -> int:
    return min(ref_lens, key=lambda r: (abs(r - hyp_len), r))


def _sentence_stats(hyp: tuple, refs: list[tuple], max_n: int):
    matches, totals = [], []
    for n in range(1, max_n + 1):
        h = _ngram_counts(hyp, n)
        max_ref: Counter = Counter()
        for r in refs:
            for g, c in _ngram_counts(r, n).items():
                if c > max_ref[g]:
                    max_ref[g] = c
        matches.append(sum(min(c, max_ref[g]) for g, c in h.items()))
        totals.append(max(len(hyp) - n + 1, 0))
    return matches, totals, len(hyp), _closest_ref_len(len(hyp), [len(r) for r in refs])


def _combine(matches, totals, hyp_len, ref_len, smooth: bool = False) -> BleuScore:
    precisions = []
    for n, (m, t) in enumerate(zip(matches, totals), start=1):
        if smooth and n > 1:
            precisions.append((m + 1) / (t + 1))
        else:
            precisions.append(m / t if t > 0 else 0.0)
    if hyp_len == 0:
        bp = 0.0
    elif hyp_len > ref_len:
        bp = 1.0
    else:
        bp = math.exp(1.0 - ref_len / hyp_len)
    if min(precisions) <= 0.0:
        value = 0.0
    else:
        value = 100.0 * bp * math.exp(sum(math.log(p) for p in precisions) / len(precisions))
    return BleuScore(value, precisions, bp, hyp_len, ref_len, list(matches), list(totals))


def _check_refs(refs) -> list[tuple]:
    refs = [_tokens(r) for r in refs]
    if not refs:
        raise InvalidArgumentError("each hypothesis needs at least one reference")
    return refs


def corpus_bleu(hypotheses: Sequence, references: Sequence[Sequence], max_n: int = MAX_N) -> BleuScore:
    """Corpus BLEU; ``references[i]`` is the list of references for ``hypotheses[i]``."""
    if len(hypotheses) != len(references):
        raise InvalidArgumentError(f"{len(hypotheses)} hypotheses vs {len(references)} reference sets")
    if not hypotheses:
        raise InvalidArgumentError("empty corpus")
    M = [0] * max_n
    T = [0] * max_n
    hl = rl = 0
    for hyp, refs in zip(hypotheses, references):
        m, t, h, r = _sentence_stats(_tokens(hyp), _check_refs(refs), max_n)
        M = [a + b for a, b in zip(M, m)]
        T = [a + b for a, b in zip(T, t)]
        hl += h
        rl += r
    return _combine(M, T, hl, rl)


def sentence_bleu(hypothesis, references: Sequence, max_n: int = MAX_N) -> float:
    """Add-one smoothed (n >= 2) sentence BLEU, used only to pick n-best entries."""
    m, t, h, r = _sentence_stats(_tokens(hypothesis), _check_refs(references), max_n)
    return _combine(m, t, h, r, smooth=True).value


def _outputs(group) -> list[tuple]:
    if hasattr(group, "outputs"):
        return [_tokens(tokens) for tokens, _ in group.outputs]
    return [_tokens(o) for o in group]


def _slots(groups) -> list[list[tuple]]:
    """Transpose per-sentence output lists into per-slot corpora."""
    per_sentence = [_outputs(g) for g in groups]
    if not per_sentence:
        raise InvalidArgumentError("no groups")
    M = len(per_sentence[0])
    if any(len(o) != M for o in per_sentence):
        raise InvalidArgumentError("all groups must have the same number of outputs")
    return [[o[m] for o in per_sentence] for m in range(M)]


def pairwise_bleu(groups) -> float:
    """Mean corpus BLEU over all ordered slot pairs (a, b), a != b.

    ``groups`` holds, per sentence, M outputs (token sequences, strings, or
    objects with an ``outputs`` list of ``(tokens, score)``).
    """
    slots = _slots(groups)
    M = len(slots)
    if M < 2:
        raise InvalidArgumentError("pair-wise BLEU needs M >= 2")
    total = 0.0
    for a in range(M):
        for b in range(M):
            if a != b:
                total += corpus_bleu(slots[a], [[r] for r in slots[b]]).value
    return total / (M * (M - 1))


def reference_bleu(groups, references: Sequence[Sequence], mode: str = "average_of_M") -> float:
    """Reference BLEU of a set of M-output groups.

    ``baseline_top`` picks, per sentence, the output with the best smoothed
    sentence BLEU against the references and scores the selection;
    ``average_of_M`` averages the corpus BLEU of each output slot.
    """
    slots = _slots(groups)
    if len(references) != len(slots[0]):
        raise InvalidArgumentError("references are not aligned with groups")
    if mode == "average_of_M":
        return sum(corpus_bleu(s, references).value for s in slots) / len(slots)
    if mode == "baseline_top":
        picks = []
        for i, refs in enumerate(references):
            cands = [s[i] for s in slots]
            scores = [sentence_bleu(c, refs) for c in cands]
            picks.append(cands[scores.index(max(scores))])
        return corpus_bleu(picks, references).value
    raise InvalidArgumentError(f"unknown reference-BLEU mode {mode!r}")


def deq(rfb_star: float, pwb_star: float, rfb: float, pwb: float) -> float:
    """Diversity enhancement per quality: (pwb* - pwb) / (rfb* - rfb)."""
    if rfb_star == rfb:
        raise UndefinedDEQError("DEQ undefined: system and baseline have equal reference BLEU")
    return (pwb_star - pwb) / (rfb_star - rfb)


@dataclass
class MetricsReport:
    rfb: float
    pwb: float | None
    deq: float | None = None
    rfb_star: float | None = None
    pwb_star: float | None = None
    deq_status: str = "no-baseline"
    meta: dict = field(default_factory=dict)

    @classmethod
    def build(cls, rfb, pwb, rfb_star=None, pwb_star=None, meta=None) -> "MetricsReport":
        report = cls(rfb, pwb, None, rfb_star, pwb_star, "no-baseline", dict(meta or {}))
        if rfb_star is not None and pwb_star is not None and pwb is not None:
            try:
                report.deq = deq(rfb_star, pwb_star, rfb, pwb)
                report.deq_status = "ok"
            except UndefinedDEQError:
                report.deq_status = "undefined"
        return report

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "MetricsReport":
        return cls(**json.loads(line))

    def to_table(self) -> str:
        def fmt(x):
            return "-" if x is None else f"{x:.2f}"

        deq_text = fmt(self.deq) if self.deq_status == "ok" else self.deq_status
        rows = [("rfb", fmt(self.rfb)), ("pwb", fmt(self.pwb)), ("rfb*", fmt(self.rfb_star)),
                ("pwb*", fmt(self.pwb_star)), ("DEQ", deq_text)]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)


def sweep_csv(rows: Sequence[dict], columns: Sequence[str] = ("K", "rfb", "pwb", "deq")) -> str:
    """CSV text for a K-sweep (one row per setting)."""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(columns), extrasaction="ignore", lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: (f"{v:.4f}" if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()
