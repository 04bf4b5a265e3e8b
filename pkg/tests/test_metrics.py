"""BLEU, pair-wise BLEU, reference-BLEU protocols and DEQ."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from divtrans.errors import InvalidArgumentError, UndefinedDEQError
from divtrans.metrics import (MetricsReport, corpus_bleu, deq, pairwise_bleu, reference_bleu, sentence_bleu,
                              sweep_csv)

WORDS = st.sampled_from(["a", "b", "c", "d"])
SENT = st.lists(WORDS, min_size=1, max_size=9)


class TestCorpusBleu:
    def test_perfect_match(self):
        hyps = ["the cat sat on the mat", "a b c d e"]
        assert corpus_bleu(hyps, [[h] for h in hyps]).value == pytest.approx(100.0)

    def test_no_four_gram_overlap(self):
        assert corpus_bleu(["a b c d"], [["a b c e"]]).value == 0.0

    def test_brevity_penalty_uses_closest_reference(self):
        score = corpus_bleu(["a b c d e"], [["a b c d e f g", "a b c d e f"]])
        assert score.ref_len == 6
        assert score.brevity_penalty == pytest.approx(math.exp(1 - 6 / 5))

    def test_closest_reference_tie_prefers_shorter(self):
        assert corpus_bleu(["a b c d e"], [["a b c d", "a b c d e f"]]).ref_len == 4

    def test_clipping(self):
        score = corpus_bleu(["the the the the"], [["the cat"]])
        assert score.matches[0] == 1

    def test_case_sensitive(self):
        assert corpus_bleu(["A b c d"], [["a b c d"]]).matches[0] == 3

    def test_length_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            corpus_bleu(["a"], [])

    def test_empty_corpus(self):
        with pytest.raises(InvalidArgumentError):
            corpus_bleu([], [])

    @settings(max_examples=80, deadline=None)
    @given(st.lists(st.tuples(SENT, SENT), min_size=1, max_size=5), st.randoms())
    def test_bounded_and_permutation_invariant(self, pairs, rnd):
        hyps = [h for h, _ in pairs]
        refs = [[r] for _, r in pairs]
        value = corpus_bleu(hyps, refs).value
        assert 0.0 <= value <= 100.0
        order = list(range(len(pairs)))
        rnd.shuffle(order)
        assert corpus_bleu([hyps[i] for i in order], [refs[i] for i in order]).value == pytest.approx(value, abs=1e-9)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.tuples(SENT, SENT), min_size=1, max_size=4), SENT)
    def test_adding_perfect_pair_keeps_numerators(self, pairs, extra):
        hyps = [h for h, _ in pairs]
        refs = [[r] for _, r in pairs]
        before = corpus_bleu(hyps, refs).matches
        after = corpus_bleu(hyps + [extra], refs + [[extra]]).matches
        assert all(a >= b for a, b in zip(after, before))

    def test_smoothed_sentence_bleu_positive_without_four_grams(self):
        assert sentence_bleu("a b c", ["a b c"]) > 0


class TestPairwiseBleu:
    def test_identical_outputs(self):
        groups = [["x y z w"] * 3, ["p q r s t"] * 3]
        assert pairwise_bleu(groups) == pytest.approx(100.0)

    def test_disjoint_outputs(self):
        assert pairwise_bleu([["a b c d", "e f g h"]]) == 0.0

    def test_hand_computed_oracle(self):
        groups = [["a b c d e", "a b c d f"], ["x y z w", "x y z w"], ["p q r s", "p q r t"]]
        # slot 0 vs slot 1, both directions have equal statistics here
        m = [4 + 4 + 3, 3 + 3 + 2, 2 + 2 + 1, 1 + 1 + 0]
        t = [13, 10, 7, 4]
        want = 100 * math.exp(sum(math.log(a / b) for a, b in zip(m, t)) / 4)
        assert pairwise_bleu(groups) == pytest.approx(want, abs=1e-9)

    def test_slot_relabelling_invariance(self, rng):
        words = "a b c d e".split()
        groups = [[" ".join(rng.choice(words, size=6)) for _ in range(4)] for _ in range(5)]
        perm = [2, 0, 3, 1]
        assert pairwise_bleu([[g[i] for i in perm] for g in groups]) == pytest.approx(pairwise_bleu(groups), abs=1e-9)

    def test_needs_two_outputs(self):
        with pytest.raises(InvalidArgumentError):
            pairwise_bleu([["a b"]])

    def test_unequal_group_sizes(self):
        with pytest.raises(InvalidArgumentError):
            pairwise_bleu([["a", "b"], ["a", "b", "c"]])


class TestReferenceBleu:
    def test_single_output_modes_agree(self):
        groups = [["a b c d e"], ["a b x d e f"]]
        refs = [["a b c d e"], ["a b c d e f"]]
        plain = corpus_bleu([g[0] for g in groups], refs).value
        assert reference_bleu(groups, refs, "baseline_top") == pytest.approx(plain)
        assert reference_bleu(groups, refs, "average_of_M") == pytest.approx(plain)

    def test_baseline_top_picks_matching_slot(self):
        refs = [["a b c d e"], ["f g h i j"]]
        groups = [["a b c d e", "z z z", "y y"], ["f g h i j", "q q q q", "w"]]
        assert reference_bleu(groups, refs, "baseline_top") == pytest.approx(100.0)

    def test_average_is_mean_of_slot_scores(self, rng):
        words = "a b c d".split()
        groups = [[" ".join(rng.choice(words, size=7)) for _ in range(3)] for _ in range(6)]
        refs = [[" ".join(rng.choice(words, size=7))] for _ in range(6)]
        want = np.mean([corpus_bleu([g[m] for g in groups], refs).value for m in range(3)])
        assert reference_bleu(groups, refs, "average_of_M") == pytest.approx(want, abs=1e-12)

    def test_unknown_mode(self):
        with pytest.raises(InvalidArgumentError):
            reference_bleu([["a"]], [["a"]], "best")

    def test_misaligned(self):
        with pytest.raises(InvalidArgumentError):
            reference_bleu([["a"], ["b"]], [["a"]])


class TestDeq:
    @pytest.mark.parametrize("args, want", [
        ((44.32, 83.95, 42.66, 66.18), 10.70),
        ((26.31, 80.41, 24.26, 62.04), 8.96),
        ((31.76, 81.29, 31.33, 82.41), -2.60),
    ])
    def test_published_rows(self, args, want):
        assert deq(*args) == pytest.approx(want, abs=0.01)

    def test_equal_reference_bleu_is_undefined(self):
        with pytest.raises(UndefinedDEQError):
            deq(40.0, 80.0, 40.0, 60.0)

    def test_report_records_undefined(self):
        rep = MetricsReport.build(40.0, 60.0, 40.0, 80.0)
        assert rep.deq is None and rep.deq_status == "undefined"
        assert "undefined" in rep.to_table()

    def test_report_round_trip(self):
        rep = MetricsReport.build(39.8, 51.66, 44.32, 83.95, {"M": 5})
        assert rep.deq == pytest.approx(7.14, abs=0.01)
        assert MetricsReport.from_json(rep.to_json()) == rep

    def test_report_without_baseline(self):
        rep = MetricsReport.build(30.0, 50.0)
        assert rep.deq is None and rep.deq_status == "no-baseline"

    def test_sweep_csv(self):
        text = sweep_csv([{"K": 0, "rfb": 40.0, "pwb": 100.0, "deq": None}])
        assert text.splitlines() == ["K,rfb,pwb,deq", "0,40.0000,100.0000,"]
