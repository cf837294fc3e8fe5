import itertools
import math
import random
from functools import lru_cache

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geoqa.metrics import (
    bleu_4,
    bleu_4_breakdown,
    clipped_precision,
    exact_match,
    lcs_length,
    rouge_l,
    score_pair,
    tokenize,
)

from conftest import FLAGSHIP_ANSWER, FLAGSHIP_CALL_TEXT


# -- independent oracles ------------------------------------------------------


def is_subsequence(candidate, sequence):
    it = iter(sequence)
    return all(token in it for token in candidate)


def exhaustive_lcs(a, b):
    """Try every subsequence of the shorter side, longest first."""
    small, big = (a, b) if len(a) <= len(b) else (b, a)
    for size in range(len(small), 0, -1):
        for indices in itertools.combinations(range(len(small)), size):
            if is_subsequence([small[i] for i in indices], big):
                return size
    return 0


def recursive_lcs(a, b):
    """Memoized recursion: independent of the iterative DP under test."""

    @lru_cache(maxsize=None)
    def solve(i, j):
        if i == len(a) or j == len(b):
            return 0
        if a[i] == b[j]:
            return 1 + solve(i + 1, j + 1)
        return max(solve(i + 1, j), solve(i, j + 1))

    return solve(0, 0)


def oracle_rouge(reference, generated):
    if not reference and not generated:
        return 1.0
    if not reference or not generated:
        return 0.0
    lcs = recursive_lcs(tuple(reference), tuple(generated))
    return 2.0 * lcs / (len(reference) + len(generated))


def oracle_bleu(reference, generated):
    """Direct clipped n-gram counting with list.count, no shared code."""
    if not generated:
        return 0.0
    precisions = []
    for order in range(1, 5):
        candidate = [
            tuple(generated[i : i + order])
            for i in range(len(generated) - order + 1)
        ]
        refs = [
            tuple(reference[i : i + order])
            for i in range(len(reference) - order + 1)
        ]
        if not candidate:
            precisions.append(0.0)
            continue
        matched = 0
        for gram in set(candidate):
            matched += min(candidate.count(gram), refs.count(gram))
        precisions.append(matched / len(candidate))
    if any(p == 0.0 for p in precisions):
        return 0.0
    brevity = 1.0 if len(generated) >= len(reference) else math.exp(
        1.0 - len(reference) / len(generated)
    )
    return brevity * math.exp(sum(math.log(p) / 4.0 for p in precisions))


VOCAB = ["a", "b", "c", "d", "e", "f"]


def random_tokens(rng, max_len=12):
    return [rng.choice(VOCAB) for _ in range(rng.randint(0, max_len))]


# -- LCS ----------------------------------------------------------------------


class TestLcs:
    def test_documented_example(self):
        assert lcs_length(list("abcde"), list("ace")) == 3
        assert exhaustive_lcs(list("abcde"), list("ace")) == 3

    def test_self(self):
        tokens = list("hello world tokens".split())
        assert lcs_length(tokens, tokens) == len(tokens)

    def test_empty(self):
        assert lcs_length(list("abc"), []) == 0
        assert lcs_length([], []) == 0

    def test_against_exhaustive_oracle(self):
        rng = random.Random(17)
        for _ in range(60):
            a = random_tokens(rng, max_len=7)
            b = random_tokens(rng, max_len=7)
            assert lcs_length(a, b) == exhaustive_lcs(a, b)


# -- ROUGE-L --------------------------------------------------------------------


class TestRouge:
    def test_identical(self):
        assert rouge_l(["x", "y"], ["x", "y"]) == 1.0

    def test_documented_point_value(self):
        reference = ["what", "is", "the", "nearest", "hospital"]
        generated = ["the", "nearest", "hospital"]
        assert lcs_length(reference, generated) == 3
        assert rouge_l(reference, generated) == pytest.approx(0.75, abs=0)

    def test_disjoint(self):
        assert rouge_l(["a", "b"], ["c", "d"]) == 0.0

    def test_empty_conventions(self):
        assert rouge_l([], []) == 1.0
        assert rouge_l(["a"], []) == 0.0
        assert rouge_l([], ["a"]) == 0.0

    def test_symmetry(self):
        rng = random.Random(23)
        for _ in range(100):
            a, b = random_tokens(rng), random_tokens(rng)
            assert rouge_l(a, b) == rouge_l(b, a)


# -- BLEU-4 ----------------------------------------------------------------------


class TestBleu:
    def test_identical_is_one(self):
        tokens = ["the", "nearest", "hospital", "is", "close"]
        assert bleu_4(tokens, tokens) == 1.0

    def test_single_token_swap_zeroes_the_score(self):
        reference = ["a", "b", "c", "d", "e"]
        generated = ["a", "b", "c", "x", "e"]
        breakdown = bleu_4_breakdown(reference, generated)
        assert breakdown.precisions[3] == 0.0
        assert breakdown.score == 0.0

    def test_clipping(self):
        reference = ["a", "a", "b", "c"]
        generated = ["a", "a", "a", "b"]
        assert clipped_precision(reference, generated, 1) == pytest.approx(3 / 4)
        got = bleu_4(reference, generated)
        assert got == pytest.approx(oracle_bleu(reference, generated), abs=1e-12)

    def test_brevity_penalty(self):
        reference = ["a", "b", "c", "d", "e", "f"]
        generated = ["a", "b", "c", "d"]
        breakdown = bleu_4_breakdown(reference, generated)
        assert breakdown.brevity_penalty == pytest.approx(math.exp(1 - 6 / 4))

    def test_short_generation_zero(self):
        # fewer than four tokens: no 4-grams, hence zero without smoothing
        assert bleu_4(["a", "b", "c"], ["a", "b", "c"]) == 0.0

    def test_empty_generation_zero(self):
        assert bleu_4(["a"], []) == 0.0

    def test_against_oracle(self):
        rng = random.Random(31)
        for _ in range(100):
            reference, generated = random_tokens(rng), random_tokens(rng)
            assert bleu_4(reference, generated) == pytest.approx(
                oracle_bleu(reference, generated), abs=1e-9
            )

    @given(
        st.lists(st.sampled_from(VOCAB), max_size=15),
        st.lists(st.sampled_from(VOCAB), max_size=15),
    )
    @settings(max_examples=200, deadline=None)
    def test_bounds(self, reference, generated):
        score = bleu_4(reference, generated)
        assert 0.0 <= score <= 1.0
        assert 0.0 <= rouge_l(reference, generated) <= 1.0


# -- exact match -------------------------------------------------------------------


class TestExactMatch:
    def test_byte_identical_call(self):
        assert exact_match(FLAGSHIP_ANSWER, FLAGSHIP_ANSWER) is True

    def test_result_payload_excluded(self):
        other_result = FLAGSHIP_ANSWER.replace("0.402, ", "9.999, ")
        assert exact_match(FLAGSHIP_ANSWER, other_result) is True

    def test_swapped_parameter_order_misses(self):
        swapped = FLAGSHIP_ANSWER.replace(
            'category="hospital", mode="drive"',
            'mode="drive", category="hospital"',
        )
        assert exact_match(FLAGSHIP_ANSWER, swapped) is False

    def test_misspelled_location_misses(self):
        wrong = FLAGSHIP_ANSWER.replace("Abadiño, Durango", "Durnago")
        assert exact_match(FLAGSHIP_ANSWER, wrong) is False

    def test_no_parsable_call_misses(self):
        assert exact_match(FLAGSHIP_ANSWER, "I do not know.") is False
        assert exact_match(FLAGSHIP_ANSWER, "<API>broken(") is False

    def test_case_sensitive(self):
        upper = FLAGSHIP_ANSWER.replace('location="Abadiño', 'location="ABADIÑO')
        assert exact_match(FLAGSHIP_ANSWER, upper) is False

    def test_surrounding_prose_ignored(self):
        assert exact_match(FLAGSHIP_ANSWER, "Sure! " + FLAGSHIP_CALL_TEXT + " etc") is True


class TestTokenize:
    def test_call_canonicalization_stabilizes_tokens(self):
        assert tokenize(FLAGSHIP_ANSWER) == tokenize(
            "The closest hospital you can find is "
            + FLAGSHIP_CALL_TEXT
            + " 0.402km away."
        )

    def test_unparsable_markup_scored_raw(self):
        assert tokenize("x <API>oops( y") == ["x", "<API>oops(", "y"]


class TestScorePair:
    def test_identical_pair(self):
        scores = score_pair(FLAGSHIP_ANSWER, FLAGSHIP_ANSWER)
        assert scores.rouge_l == 1.0
        assert scores.bleu_4 == 1.0
        assert scores.exact_match is True
        assert scores.lcs == len(tokenize(FLAGSHIP_ANSWER))

    def test_exact_match_implies_full_rouge_on_call_span(self):
        scores = score_pair(FLAGSHIP_CALL_TEXT, FLAGSHIP_CALL_TEXT)
        assert scores.exact_match is True and scores.rouge_l == 1.0
