"""Shared fixtures: toy corpora and models trained once per test session."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace

import numpy as np
import pytest

from divtrans.backtrans import self_backtranslation
from divtrans.datagen import ToyTaskSpec, gen_corpus, reverse_corpus
from divtrans.decoding import DecodePolicy
from divtrans.model import Checkpoint, ModelConfig, Transformer
from divtrans.numerics import OptimizerConfig
from divtrans.training import TrainConfig, fit_corpus

LEXICON_SPEC = ToyTaskSpec(n_words=60, n_train=2000, n_dev=100, n_test=100, seed=0)
LEXICON_MODEL = dict(d_model=64, n_heads=4, n_enc_layers=2, n_dec_layers=1, d_ffn=256, max_len=32)
LEXICON_STEPS = 2000

AMBIGUOUS_SPEC = ToyTaskSpec(n_words=60, synonyms=3, ambiguous_fraction=0.3, reorder_fraction=0.5,
                             n_train=3000, n_dev=100, n_test=100, seed=0)
AMBIGUOUS_MODEL = dict(d_model=64, n_heads=8, n_enc_layers=2, n_dec_layers=2, d_ffn=256, max_len=32)
AMBIGUOUS_STEPS = 3000


def toy_train_config(steps: int, d_model: int = 64, seed: int = 0, batch_size: int = 32) -> TrainConfig:
    return TrainConfig(steps=steps, batch_size=batch_size, seed=seed, log_every=0,
                       optimizer=OptimizerConfig(d_model=d_model, warmup_steps=400, lr_scale=1.0))


@dataclass
class Trained:
    spec: ToyTaskSpec
    corpus: object
    ckpt: Checkpoint
    losses: list
    seconds: float

    @property
    def model(self) -> Transformer:
        return self.ckpt.model


def _train(spec, model_kwargs, steps) -> Trained:
    corpus = gen_corpus(spec)
    t0 = time.perf_counter()
    ckpt, losses = fit_corpus(corpus.split("train"), model_kwargs, toy_train_config(steps))
    return Trained(spec, corpus, ckpt, losses, time.perf_counter() - t0)


@pytest.fixture(scope="session")
def lexicon():
    """Unambiguous 60-word lexicon task and its trained model."""
    return _train(LEXICON_SPEC, LEXICON_MODEL, LEXICON_STEPS)


@pytest.fixture(scope="session")
def ambiguous():
    """Three synonyms on 30% of words plus clause reordering; eight heads."""
    return _train(AMBIGUOUS_SPEC, AMBIGUOUS_MODEL, AMBIGUOUS_STEPS)


@pytest.fixture(scope="session")
def tiny():
    """Four-word lexicon task: vocabularies of 8 tokens including specials."""
    spec = ToyTaskSpec(n_words=4, min_len=1, max_len=4, n_train=200, n_dev=20, n_test=20, seed=3)
    return _train(spec, dict(d_model=16, n_heads=2, n_enc_layers=1, n_dec_layers=1, d_ffn=32, max_len=8), 400)


# the reverse model needs about 3000 pairs before its synthetic sources stop hurting the forward model
BT_TRAIN_PAIRS = 3000
BT_STEPS = 3000


@pytest.fixture(scope="session")
def bt_report():
    """Self back-translation run; the forward task maps synonym-rich, reordered text to canonical text."""
    corpus = reverse_corpus(gen_corpus(replace(AMBIGUOUS_SPEC, n_train=BT_TRAIN_PAIRS)))
    K = math.ceil(AMBIGUOUS_MODEL["n_heads"] / 2)
    policies = {
        "head_sample": DecodePolicy(mode="head_sample", K=K, M=5, beam_size=5, max_len=20, seed=11),
        "beam5": DecodePolicy(mode="beam", M=5, beam_size=5, max_len=20, nbest=True),
    }
    report = self_backtranslation(corpus, AMBIGUOUS_MODEL, toy_train_config(BT_STEPS), policies, seed=0)
    return report, BT_TRAIN_PAIRS


@pytest.fixture
def small_model():
    """Untrained float64 model small enough for exhaustive checks."""
    cfg = ModelConfig(vocab_src=11, vocab_tgt=13, d_model=16, n_heads=4, n_enc_layers=2, n_dec_layers=2,
                      d_ffn=24, max_len=16)
    return Transformer(cfg, seed=7, dtype=np.float64)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# ---------------------------------------------------------------------------
# one summary line per acceptance criterion
# ---------------------------------------------------------------------------

_CRITERIA: dict[int, list[str]] = {}


def pytest_runtest_logreport(report):
    name = report.nodeid.split("::")[-1]
    if not name.startswith("test_criterion_"):
        return
    number = int(name.split("_")[2])
    if report.when == "call" or report.outcome != "passed":
        _CRITERIA.setdefault(number, []).append(report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        ok = all(o == "passed" for o in _CRITERIA[number])
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}")
