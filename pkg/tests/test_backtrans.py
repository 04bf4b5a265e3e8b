"""Synthetic pair generation, corpus mixing and the self back-translation pipeline."""

import pytest

from divtrans.backtrans import (AugmentationPlan, mix_and_train, mix_corpora, synthesize_pairs, synthetic_pwb)
from divtrans.datagen import read_pairs
from divtrans.decoding import DecodePolicy
from divtrans.errors import InvalidArgumentError
from conftest import toy_train_config

HS = DecodePolicy(mode="head_sample", K=1, M=5, beam_size=5, max_len=8, seed=4)
BEAM = DecodePolicy(mode="beam", M=5, beam_size=5, max_len=8)


def _sources(tiny, n=None):
    """The tiny model plays the reverse model, so its source sentences serve as targets."""
    return [s for s, _ in tiny.corpus.split("train")[:n]]


class TestSynthesize:
    def test_size_contract(self, tiny):
        targets = _sources(tiny, 100)
        syn = synthesize_pairs(AugmentationPlan(policy=HS, targets=targets), tiny.ckpt)
        assert len(syn) == 500
        assert set(syn.splits) == {"synthetic"}

    def test_targets_untouched(self, tiny):
        targets = _sources(tiny, 20)
        syn = synthesize_pairs(AugmentationPlan(policy=HS, targets=targets), tiny.ckpt)
        assert [t for _, t in syn.pairs] == [t for t in targets for _ in range(5)]

    def test_beam_uses_one_search(self, tiny):
        targets = _sources(tiny, 10)
        syn = synthesize_pairs(AugmentationPlan(policy=BEAM, targets=targets), tiny.ckpt)
        for i in range(0, len(syn), 5):
            # top-5 of a single beam are distinct hypotheses
            assert len({s for s, _ in syn.pairs[i : i + 5]}) == 5

    def test_deterministic(self, tiny):
        plan = AugmentationPlan(policy=HS, targets=_sources(tiny, 20))
        assert synthesize_pairs(plan, tiny.ckpt).pairs == synthesize_pairs(plan, tiny.ckpt).pairs

    def test_reuse_training_targets(self, tiny, tmp_path):
        out = tmp_path / "syn.tsv"
        plan = AugmentationPlan(policy=HS, reuse_training_targets=True, output=str(out))
        syn = synthesize_pairs(plan, tiny.ckpt, _sources(tiny, 4))
        pairs, origins = read_pairs(out, with_origin=True)
        assert pairs == syn.pairs and set(origins) == {"synthetic"}

    def test_empty_targets(self, tiny):
        with pytest.raises(InvalidArgumentError):
            synthesize_pairs(AugmentationPlan(policy=HS, targets=[]), tiny.ckpt)

    def test_plan_round_trip(self):
        plan = AugmentationPlan(policy=HS, reverse_checkpoint="r.bin", reuse_training_targets=True, ratio=0.5)
        assert AugmentationPlan.from_json(plan.to_json()) == plan

    def test_synthetic_pwb_needs_whole_groups(self, tiny):
        syn = synthesize_pairs(AugmentationPlan(policy=HS, targets=_sources(tiny, 3)), tiny.ckpt)
        with pytest.raises(InvalidArgumentError):
            synthetic_pwb(syn, 4)


class TestMixing:
    original = [(("a",), ("x",)), (("b",), ("y",)), (("c",), ("z",))]
    synthetic = [(("b",), ("x",)), (("a",), ("z",))]

    def test_ratio_zero_is_original(self):
        pairs, origins = mix_corpora(self.original, self.synthetic, 0.0)
        assert pairs == self.original and set(origins) == {"original"}

    def test_ratio_one_adds_everything(self):
        pairs, origins = mix_corpora(self.original, self.synthetic, 1.0, seed=2)
        assert len(pairs) == 5 and origins.count("synthetic") == 2
        assert sorted(pairs) == sorted(self.original + self.synthetic)

    def test_half_ratio(self):
        _, origins = mix_corpora(self.original, self.synthetic, 0.5)
        assert origins.count("synthetic") == 1

    def test_invalid_ratio(self):
        with pytest.raises(InvalidArgumentError):
            mix_corpora(self.original, self.synthetic, 1.5)

    def test_vocabulary_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            mix_and_train(self.original, [(("q",), ("x",))], 1.0, dict(d_model=8, n_heads=2, n_enc_layers=1,
                          n_dec_layers=1, d_ffn=8, max_len=4), toy_train_config(1, d_model=8))

    def test_report_sizes(self, tiny):
        pairs = tiny.corpus.split("train")[:20]
        syn = [(s, t) for s, t in pairs[:10]]
        _, rep = mix_and_train(pairs, syn, 1.0, dict(d_model=8, n_heads=2, n_enc_layers=1, n_dec_layers=1,
                               d_ffn=8, max_len=8), toy_train_config(2, d_model=8), tiny.corpus.split("test"))
        assert (rep["n_original"], rep["n_synthetic"], rep["n_train"]) == (20, 10, 30)
        assert 0.0 <= rep["test_bleu"] <= 100.0


class TestSelfBackTranslation:
    def test_head_sampling_gives_more_diverse_sources(self, bt_report):
        rep, _ = bt_report
        assert rep["systems"]["head_sample"]["synthetic_pwb"] < rep["systems"]["beam5"]["synthetic_pwb"]

    def test_training_set_sizes(self, bt_report):
        rep, n = bt_report
        assert rep["baseline"]["n_train"] == n
        for system in rep["systems"].values():
            assert system["n_train"] == 6 * n
