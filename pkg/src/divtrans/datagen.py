"""Synthetic parallel corpora with enumerable translation ambiguity.

Source words ``s<i>`` translate word-by-word into target words. A seeded
subset of source words is *ambiguous* and has several interchangeable target
synonyms ``t<i>_<j>``; unambiguous words have the single translation
``t<i>``. Optionally a sentence carries a block marker ``|`` splitting it into
two clauses, and the target may present the clauses in either order.

Because every valid target can be enumerated, decoder outputs can be scored
for validity exactly.
"""

from __future__ import annotations

import itertools
import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import rng as rngmod
from .errors import InvalidArgumentError

PAD, BOS, EOS, UNK = 0, 1, 2, 3
SPECIALS = ("<pad>", "<s>", "</s>", "<unk>")
MARKER = "|"
MAX_LOADER_WORDS = 100

Sentence = tuple[str, ...]


class Vocab:
    """Token/id mapping with the special tokens at ids 0-3."""

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tuple(tokens[:4]) != SPECIALS:
            raise InvalidArgumentError("vocabulary must start with the special tokens")
        if len(set(tokens)) != len(tokens):
            raise InvalidArgumentError("duplicate tokens in vocabulary")
        self.itos = tokens
        self.stoi = {t: i for i, t in enumerate(tokens)}

    def __len__(self) -> int:
        return len(self.itos)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.itos == other.itos

    def __repr__(self) -> str:
        return f"Vocab({len(self)} tokens)"

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.stoi.get(t, UNK) for t in tokens]

    def decode(self, ids: Iterable[int], strip: bool = True) -> list[str]:
        out = []
        for i in ids:
            i = int(i)
            if strip and i == EOS:
                break
            if strip and i in (PAD, BOS):
                continue
            out.append(self.itos[i])
        return out


def build_vocab(sentences: Iterable[Sequence[str]]) -> Vocab:
    """Frequency-sorted vocabulary (ties broken by token text)."""
    counts = Counter()
    n = 0
    for s in sentences:
        counts.update(s)
        n += 1
    if n == 0:
        raise InvalidArgumentError("cannot build a vocabulary from an empty corpus")
    for sp in SPECIALS:
        counts.pop(sp, None)
    words = sorted(counts, key=lambda w: (-counts[w], w))
    return Vocab(list(SPECIALS) + words)


def build_vocabs(corpus: "ParallelCorpus") -> tuple[Vocab, Vocab]:
    if not corpus.pairs:
        raise InvalidArgumentError("cannot build vocabularies from an empty corpus")
    return build_vocab(p[0] for p in corpus.pairs), build_vocab(p[1] for p in corpus.pairs)


@dataclass(frozen=True)
class ToyTaskSpec:
    n_words: int = 60
    synonyms: int = 1
    ambiguous_fraction: float = 0.0
    # fraction of sentences that carry a clause marker and may be reordered
    reorder_fraction: float = 0.0
    min_len: int = 1
    max_len: int = 8
    n_train: int = 2000
    n_dev: int = 100
    n_test: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.n_words < 1 or self.synonyms < 1:
            raise InvalidArgumentError("n_words and synonyms must be positive")
        if not 0 <= self.ambiguous_fraction <= 1 or not 0 <= self.reorder_fraction <= 1:
            raise InvalidArgumentError("fractions must lie in [0, 1]")
        if not 1 <= self.min_len <= self.max_len:
            raise InvalidArgumentError("need 1 <= min_len <= max_len")
        if self.reorder_fraction > 0 and self.max_len < 2:
            raise InvalidArgumentError("reordering needs max_len >= 2")
        if min(self.n_train, self.n_dev, self.n_test) < 0:
            raise InvalidArgumentError("split sizes must be non-negative")
        n_sources = sum(self.n_words**k for k in range(self.min_len, self.max_len + 1))
        if self.n_train + self.n_dev + self.n_test > n_sources:
            raise InvalidArgumentError("requested more distinct sentences than the grammar has")

    @property
    def lexicon(self) -> dict[str, list[str]]:
        return _lexicon(self)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ToyTaskSpec":
        return cls(**json.loads(text))


_LEXICON_CACHE: dict[ToyTaskSpec, dict[str, list[str]]] = {}


def _lexicon(spec: ToyTaskSpec) -> dict[str, list[str]]:
    lex = _LEXICON_CACHE.get(spec)
    if lex is None:
        gen = rngmod.stream(spec.seed, 0)
        n_amb = int(round(spec.ambiguous_fraction * spec.n_words)) if spec.synonyms > 1 else 0
        ambiguous = set(gen.choice(spec.n_words, size=n_amb, replace=False).tolist())
        lex = {}
        for i in range(spec.n_words):
            if i in ambiguous:
                lex[f"s{i}"] = [f"t{i}_{j}" for j in range(spec.synonyms)]
            else:
                lex[f"s{i}"] = [f"t{i}"]
        _LEXICON_CACHE[spec] = lex
    return lex


@dataclass
class ParallelCorpus:
    pairs: list[tuple[Sentence, Sentence]] = field(default_factory=list)
    splits: list[str] = field(default_factory=list)

    def split(self, name: str) -> list[tuple[Sentence, Sentence]]:
        return [p for p, s in zip(self.pairs, self.splits) if s == name]

    def __len__(self) -> int:
        return len(self.pairs)


def _blocks(source: Sentence) -> tuple[Sentence, Sentence] | None:
    if MARKER not in source:
        return None
    k = source.index(MARKER)
    return source[:k], source[k + 1 :]


def _sample_source(spec: ToyTaskSpec, gen: np.random.Generator) -> Sentence:
    words = [f"s{i}" for i in range(spec.n_words)]
    marked = spec.reorder_fraction > 0 and gen.random() < spec.reorder_fraction
    lo = max(spec.min_len, 2) if marked else spec.min_len
    length = int(gen.integers(lo, spec.max_len + 1))
    toks = [words[int(i)] for i in gen.integers(0, spec.n_words, size=length)]
    if marked:
        cut = int(gen.integers(1, length))
        toks = toks[:cut] + [MARKER] + toks[cut:]
    return tuple(toks)


def _translate_words(words: Sentence, lex, gen: np.random.Generator) -> list[str]:
    out = []
    for w in words:
        options = lex[w]
        out.append(options[int(gen.integers(len(options)))] if len(options) > 1 else options[0])
    return out


def sample_translation(source: Sentence, spec: ToyTaskSpec, gen: np.random.Generator) -> Sentence:
    """One uniformly chosen valid translation of ``source``."""
    lex = spec.lexicon
    blocks = _blocks(source)
    if blocks is None:
        return tuple(_translate_words(source, lex, gen))
    a = _translate_words(blocks[0], lex, gen)
    b = _translate_words(blocks[1], lex, gen)
    if gen.random() < 0.5:
        a, b = b, a
    return tuple(a + [MARKER] + b)


def gen_corpus(spec: ToyTaskSpec) -> ParallelCorpus:
    """Draw train/dev/test splits with pairwise-disjoint source sentences."""
    gen = rngmod.stream(spec.seed, 1)
    seen: set[Sentence] = set()
    corpus = ParallelCorpus()
    for split, n in (("train", spec.n_train), ("dev", spec.n_dev), ("test", spec.n_test)):
        made = 0
        while made < n:
            src = _sample_source(spec, gen)
            if src in seen:
                continue
            seen.add(src)
            corpus.pairs.append((src, sample_translation(src, spec, gen)))
            corpus.splits.append(split)
            made += 1
    return corpus


@dataclass(frozen=True)
class TranslationSet:
    """Valid translations of one source; ``members`` is None past the cap."""

    count: int
    members: frozenset[Sentence] | None

    def __contains__(self, target) -> bool:
        if self.members is None:
            raise InvalidArgumentError("translation set too large to enumerate; use is_valid_translation")
        return tuple(target) in self.members


def _check_source(source: Sentence, lex) -> None:
    for w in source:
        if w != MARKER and w not in lex:
            raise InvalidArgumentError(f"word {w!r} is not in the task vocabulary")
    if source.count(MARKER) > 1:
        raise InvalidArgumentError("at most one clause marker per sentence")


def valid_translations(source: Sequence[str], spec: ToyTaskSpec, cap: int = 100_000) -> TranslationSet:
    source = tuple(source)
    lex = spec.lexicon
    _check_source(source, lex)
    blocks = _blocks(source)
    words = [w for w in source if w != MARKER]
    n_word_choices = math.prod(len(lex[w]) for w in words)
    orders = 1
    if blocks is not None:
        orders = 1 if blocks[0] == blocks[1] else 2
    count = n_word_choices * orders
    if count > cap:
        return TranslationSet(count, None)
    members = set()
    if blocks is None:
        for combo in itertools.product(*(lex[w] for w in source)):
            members.add(combo)
    else:
        left = list(itertools.product(*(lex[w] for w in blocks[0])))
        right = list(itertools.product(*(lex[w] for w in blocks[1])))
        for a in left:
            for b in right:
                members.add(a + (MARKER,) + b)
                members.add(b + (MARKER,) + a)
    return TranslationSet(len(members), frozenset(members))


def is_valid_translation(source: Sequence[str], target: Sequence[str], spec: ToyTaskSpec) -> bool:
    """Membership test without enumerating the translation set."""
    source, target = tuple(source), tuple(target)
    lex = spec.lexicon
    _check_source(source, lex)

    def matches(src_words, tgt_words):
        return len(src_words) == len(tgt_words) and all(t in lex[s] for s, t in zip(src_words, tgt_words))

    blocks = _blocks(source)
    if blocks is None:
        return matches(source, target)
    if target.count(MARKER) != 1:
        return False
    k = target.index(MARKER)
    ta, tb = target[:k], target[k + 1 :]
    return (matches(blocks[0], ta) and matches(blocks[1], tb)) or (
        matches(blocks[1], ta) and matches(blocks[0], tb)
    )


def reverse_corpus(corpus: ParallelCorpus) -> ParallelCorpus:
    return ParallelCorpus([(t, s) for s, t in corpus.pairs], list(corpus.splits))


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------


def write_pairs(path, pairs, header: str | None = None, origins: Sequence[str] | None = None) -> None:
    """Tab-separated ``source<TAB>target[<TAB>origin]`` lines, UTF-8."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if header:
            fh.write(header.rstrip("\n") + "\n")
        for i, (s, t) in enumerate(pairs):
            cols = [" ".join(s), " ".join(t)]
            if origins is not None:
                cols.append(origins[i])
            fh.write("\t".join(cols) + "\n")


def read_pairs(path, max_words: int = MAX_LOADER_WORDS, with_origin: bool = False):
    """Read a corpus file, skipping ``#`` header lines and overlong pairs."""
    pairs, origins = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            cols = line.split("\t")
            if len(cols) < 2:
                raise InvalidArgumentError(f"{path}:{lineno}: expected source<TAB>target")
            s, t = tuple(cols[0].split()), tuple(cols[1].split())
            if not s or not t:
                raise InvalidArgumentError(f"{path}:{lineno}: empty sentence")
            if len(s) > max_words or len(t) > max_words:
                continue
            pairs.append((s, t))
            origins.append(cols[2] if len(cols) > 2 else "original")
    if with_origin:
        return pairs, origins
    return pairs


def read_sentences(path) -> list[Sentence]:
    """One whitespace-tokenized sentence per line; for parallel files, the source column."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            out.append(tuple(line.split("\t")[0].split()))
    return out
