"""Back-translation augmentation.

A reverse (target -> source) model produces M synthetic sources for every
target sentence; the synthetic pairs are mixed into the original corpus and
a fresh forward model is trained on the mixture.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

from . import rng as rngmod
from .datagen import SPECIALS, UNK, ParallelCorpus, Sentence, build_vocab, write_pairs
from .decoding import DecodePolicy, decode_corpus, greedy_decode, strip_eos
from .errors import InvalidArgumentError
from .metrics import corpus_bleu, pairwise_bleu
from .model import Checkpoint, load_checkpoint
from .training import TrainConfig, fit_corpus

log = logging.getLogger(__name__)

ORIGIN_ORIGINAL = "original"
ORIGIN_SYNTHETIC = "synthetic"


@dataclass(frozen=True)
class AugmentationPlan:
    reverse_checkpoint: str | None = None
    policy: DecodePolicy = field(default_factory=DecodePolicy)
    targets: tuple[Sentence, ...] | None = None
    reuse_training_targets: bool = False
    ratio: float = 1.0
    output: str | None = None
    workers: int = 1

    def __post_init__(self):
        if not 0.0 <= self.ratio <= 1.0:
            raise InvalidArgumentError("mixing ratio must lie in [0, 1]")
        if self.targets is None and not self.reuse_training_targets:
            raise InvalidArgumentError("plan needs monolingual targets or reuse_training_targets")

    def to_json(self) -> str:
        d = asdict(self)
        d["targets"] = None if self.targets is None else [" ".join(t) for t in self.targets]
        return json.dumps(d, sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "AugmentationPlan":
        d = json.loads(text)
        d["policy"] = DecodePolicy(**d.get("policy", {}))
        if d.get("targets") is not None:
            d["targets"] = tuple(tuple(t.split()) for t in d["targets"])
        return cls(**d)


def _generation_policy(policy: DecodePolicy) -> DecodePolicy:
    # plain beam keeps the top-M of one search rather than M copies of its best
    if policy.mode == "beam" and not policy.nbest:
        return replace(policy, nbest=True, beam_size=max(policy.beam_size, policy.M))
    return policy


def synthesize_pairs(plan: AugmentationPlan, reverse: Checkpoint | None = None,
                     training_targets: Sequence[Sentence] | None = None) -> ParallelCorpus:
    """``M`` synthetic sources per target, paired with the untouched target."""
    if reverse is None:
        if plan.reverse_checkpoint is None:
            raise InvalidArgumentError("no reverse model given")
        reverse = load_checkpoint(plan.reverse_checkpoint)
    targets = list(plan.targets) if plan.targets is not None else list(training_targets or [])
    if not targets:
        raise InvalidArgumentError("empty target set")
    policy = _generation_policy(plan.policy)
    ids = [reverse.src_vocab.encode(t) for t in targets]
    groups = decode_corpus(reverse.model, ids, policy, workers=plan.workers)
    pairs = []
    for target, group in zip(targets, groups):
        for tokens, _ in group.outputs:
            # an immediate end-of-sentence would leave an empty source line
            src = tuple(reverse.tgt_vocab.decode(strip_eos(tokens))) or (SPECIALS[UNK],)
            pairs.append((src, target))
    corpus = ParallelCorpus(pairs, [ORIGIN_SYNTHETIC] * len(pairs))
    if plan.output:
        write_pairs(plan.output, pairs, origins=corpus.splits)
    return corpus


def synthetic_pwb(corpus: ParallelCorpus, M: int) -> float:
    """Pair-wise BLEU of the M synthetic sources generated for each target."""
    srcs = [s for s, _ in corpus.pairs]
    if len(srcs) % M:
        raise InvalidArgumentError("synthetic corpus size is not a multiple of M")
    return pairwise_bleu([srcs[i : i + M] for i in range(0, len(srcs), M)])


def mix_corpora(original: Sequence, synthetic: Sequence, ratio: float, seed: int = 0):
    """Original pairs plus a ``ratio`` share of the synthetic ones, shuffled together.

    Returns ``(pairs, origins)``; ``ratio == 0`` returns the original corpus unchanged.
    """
    if not 0.0 <= ratio <= 1.0:
        raise InvalidArgumentError("mixing ratio must lie in [0, 1]")
    original, synthetic = list(original), list(synthetic)
    n_syn = int(round(ratio * len(synthetic)))
    if n_syn == 0:
        return original, [ORIGIN_ORIGINAL] * len(original)
    pick = rngmod.stream(seed, 3, 0).permutation(len(synthetic))[:n_syn]
    chosen = [synthetic[i] for i in sorted(pick)]
    merged = original + chosen
    origins = [ORIGIN_ORIGINAL] * len(original) + [ORIGIN_SYNTHETIC] * n_syn
    order = rngmod.stream(seed, 3, 1).permutation(len(merged))
    return [merged[i] for i in order], [origins[i] for i in order]


def _check_compatible(original: Sequence, synthetic: Sequence) -> None:
    for side in (0, 1):
        known = set(build_vocab(p[side] for p in original).stoi)
        unknown = {w for p in synthetic for w in p[side]} - known
        if unknown:
            raise InvalidArgumentError(f"synthetic data has {len(unknown)} words outside the original "
                                       f"vocabulary, e.g. {sorted(unknown)[:3]}")


def evaluate_bleu(ckpt: Checkpoint, test_pairs: Sequence, max_len: int = 50) -> float:
    """Corpus BLEU of greedy translations against the single test reference."""
    hyps = []
    for s, _ in test_pairs:
        out = greedy_decode(ckpt.model, ckpt.src_vocab.encode(s), max_len)
        hyps.append(ckpt.tgt_vocab.decode(out))
    return corpus_bleu(hyps, [[t] for _, t in test_pairs]).value


def mix_and_train(original: Sequence, synthetic: Sequence, ratio: float, model_kwargs: dict,
                  train_cfg: TrainConfig, test_pairs: Sequence | None = None,
                  seed: int = 0) -> tuple[Checkpoint, dict]:
    """Train a fresh forward model on the mixture; report its held-out BLEU."""
    _check_compatible(original, synthetic)
    pairs, origins = mix_corpora(original, synthetic, ratio, seed)
    ckpt, losses = fit_corpus(pairs, model_kwargs, train_cfg, seed=seed)
    report = {
        "n_original": len(original),
        "n_synthetic": origins.count(ORIGIN_SYNTHETIC),
        "n_train": len(pairs),
        "ratio": ratio,
        "final_loss": losses[-1][1],
    }
    if test_pairs:
        report["test_bleu"] = evaluate_bleu(ckpt, test_pairs)
    return ckpt, report


def self_backtranslation(corpus: ParallelCorpus, model_kwargs: dict, train_cfg: TrainConfig,
                         policies: dict[str, DecodePolicy], seed: int = 0, workers: int = 1) -> dict:
    """Full self back-translation experiment on a corpus with train/test splits.

    Trains a reverse model and an unaugmented baseline, then one augmented
    forward model per named generation policy.
    """
    train, test = corpus.split("train"), corpus.split("test")
    if not train or not test:
        raise InvalidArgumentError("corpus needs train and test splits")
    reverse, _ = fit_corpus([(t, s) for s, t in train], model_kwargs, train_cfg, seed=seed)
    _, base = mix_and_train(train, [], 0.0, model_kwargs, train_cfg, test, seed)
    report = {"baseline": base, "systems": {}}
    targets = [t for _, t in train]
    for name, policy in policies.items():
        plan = AugmentationPlan(policy=policy, reuse_training_targets=True, workers=workers)
        syn = synthesize_pairs(plan, reverse, targets)
        _, rep = mix_and_train(train, syn.pairs, 1.0, model_kwargs, train_cfg, test, seed)
        rep["synthetic_pwb"] = synthetic_pwb(syn, policy.M)
        rep["policy"] = _generation_policy(policy).describe()
        report["systems"][name] = rep
        log.info("%s: test BLEU %.2f (baseline %.2f)", name, rep["test_bleu"], base["test_bleu"])
    return report
