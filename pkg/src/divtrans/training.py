"""Teacher-forced training loop (Adam + inverse-sqrt warmup schedule)."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import rng as rngmod
from .datagen import Vocab, build_vocab
from .errors import InvalidArgumentError
from .model import Checkpoint, ModelConfig, Transformer
from .numerics import AdamState, OptimizerConfig, adam_step, lr_at

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 3000
    batch_size: int = 64
    seed: int = 0
    log_every: int = 100
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1:
            raise InvalidArgumentError("steps and batch_size must be positive")


@dataclass
class TrainResult:
    model: Transformer
    losses: list[tuple[int, float, float]]  # (step, loss, lr)


def _batches(n: int, batch_size: int, seed: int):
    epoch = 0
    while True:
        order = rngmod.stream(seed, 2, epoch).permutation(n)
        for i in range(0, n, batch_size):
            yield order[i : i + batch_size]
        epoch += 1


def train(model: Transformer, pairs: Sequence[tuple[Sequence[int], Sequence[int]]], cfg: TrainConfig,
          on_step: Callable[[int, float, Transformer], None] | None = None) -> TrainResult:
    """Train ``model`` on id-encoded ``(source, target)`` pairs."""
    if not pairs:
        raise InvalidArgumentError("empty training corpus")
    params = model.params
    state = AdamState()
    losses = []
    batches = _batches(len(pairs), cfg.batch_size, cfg.seed)
    current = model
    for step in range(1, cfg.steps + 1):
        idx = next(batches)
        srcs = [pairs[i][0] for i in idx]
        tgts = [pairs[i][1] for i in idx]
        loss, grads = current.forward_loss(srcs, tgts, cfg.optimizer.label_smoothing)
        lr = lr_at(step, cfg.optimizer)
        params, state = adam_step(params, grads, state, step, lr, cfg.optimizer)
        current = current.with_params(params, trained_steps=model.trained_steps + step)
        losses.append((step, loss, lr))
        if cfg.log_every and step % cfg.log_every == 0:
            log.info("step %d loss %.4f lr %.2e", step, loss, lr)
        if on_step is not None:
            on_step(step, loss, current)
    return TrainResult(current, losses)


def fit_corpus(pairs, model_cfg_kwargs: dict, train_cfg: TrainConfig, vocabs: tuple[Vocab, Vocab] | None = None,
               seed: int = 0, on_step=None) -> tuple[Checkpoint, list]:
    """Build vocabularies (unless given), initialise a model and train it on token pairs."""
    if vocabs is None:
        vocabs = (build_vocab(p[0] for p in pairs), build_vocab(p[1] for p in pairs))
    src_vocab, tgt_vocab = vocabs
    cfg = ModelConfig(vocab_src=len(src_vocab), vocab_tgt=len(tgt_vocab), **model_cfg_kwargs)
    model = Transformer(cfg, seed=seed)
    ids = [(src_vocab.encode(s), tgt_vocab.encode(t)) for s, t in pairs]
    result = train(model, ids, train_cfg, on_step)
    ckpt = Checkpoint(result.model, src_vocab, tgt_vocab, {"seed": seed, "train_steps": train_cfg.steps})
    return ckpt, result.losses
