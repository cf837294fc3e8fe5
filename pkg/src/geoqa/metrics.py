"""Text-similarity metrics for scoring generated answers against references.

Three metrics: LCS-based ROUGE-L (2*LCS / (|R| + |G|)), BLEU-4 as the
geometric mean of clipped 1..4-gram precisions with equal weights and a
brevity penalty, and call-level exact match. BLEU is deliberately
unsmoothed: any zero n-gram precision zeroes the score, unlike most toolkit
defaults.

Tokenization splits on whitespace after rewriting embedded call spans into
canonical form, so formatting noise inside calls never moves BLEU or ROUGE.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

from .protocol import extract_first_call, parse_annotated, serialize_call

BLEU_MAX_ORDER = 4
BLEU_WEIGHT = 1.0 / BLEU_MAX_ORDER


def tokenize(text: str) -> List[str]:
    """Whitespace tokens over text with call spans canonicalized.

    Unparsable call markup is scored as the raw text it is.
    """
    try:
        canonical = parse_annotated(text).render()
    except Exception:
        canonical = text
    return canonical.split()


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    """Longest common subsequence length, O(len(a) * len(b)) DP, linear memory."""
    if not a or not b:
        return 0
    previous = [0] * (len(b) + 1)
    for token_a in a:
        current = [0]
        for j, token_b in enumerate(b, start=1):
            if token_a == token_b:
                current.append(previous[j - 1] + 1)
            else:
                current.append(max(previous[j], current[j - 1]))
        previous = current
    return previous[-1]


def rouge_l(reference: Sequence[str], generated: Sequence[str]) -> float:
    """2 * LCS / (|R| + |G|); 1.0 when both sides are empty, 0.0 when one is."""
    if not reference and not generated:
        return 1.0
    if not reference or not generated:
        return 0.0
    return 2.0 * lcs_length(reference, generated) / (len(reference) + len(generated))


def _ngram_counts(tokens: Sequence[str], order: int) -> Counter:
    return Counter(
        tuple(tokens[i : i + order]) for i in range(len(tokens) - order + 1)
    )


def clipped_precision(
    reference: Sequence[str], generated: Sequence[str], order: int
) -> float:
    """Modified n-gram precision: candidate counts clipped by reference counts."""
    candidate = _ngram_counts(generated, order)
    total = sum(candidate.values())
    if total == 0:
        return 0.0
    ref_counts = _ngram_counts(reference, order)
    clipped = sum(min(count, ref_counts[gram]) for gram, count in candidate.items())
    return clipped / total


def brevity_penalty(reference_len: int, generated_len: int) -> float:
    if generated_len == 0:
        return 0.0
    if generated_len >= reference_len:
        return 1.0
    return math.exp(1.0 - reference_len / generated_len)


@dataclass(frozen=True)
class BleuBreakdown:
    score: float
    precisions: Tuple[float, float, float, float]
    brevity_penalty: float


def bleu_4_breakdown(
    reference: Sequence[str], generated: Sequence[str]
) -> BleuBreakdown:
    precisions = tuple(
        clipped_precision(reference, generated, n)
        for n in range(1, BLEU_MAX_ORDER + 1)
    )
    bp = brevity_penalty(len(reference), len(generated))
    if not generated or any(p == 0.0 for p in precisions):
        return BleuBreakdown(score=0.0, precisions=precisions, brevity_penalty=bp)
    log_mean = sum(BLEU_WEIGHT * math.log(p) for p in precisions)
    return BleuBreakdown(
        score=bp * math.exp(log_mean), precisions=precisions, brevity_penalty=bp
    )


def bleu_4(reference: Sequence[str], generated: Sequence[str]) -> float:
    return bleu_4_breakdown(reference, generated).score


def reference_call_text(text: str) -> Optional[str]:
    """Canonical serialization of the first call in text, result excluded."""
    parsed = extract_first_call(text)
    if parsed is None:
        return None
    return serialize_call(parsed[0])


def exact_match(reference_text: str, generated_text: str) -> bool:
    """True iff both first calls parse and agree on function, argument names,
    values and order; the injected result payload never takes part."""
    reference = reference_call_text(reference_text)
    generated = reference_call_text(generated_text)
    if reference is None or generated is None:
        return False
    return reference == generated


@dataclass(frozen=True)
class MetricScores:
    """Per-example scores plus the intermediate quantities behind them."""

    rouge_l: float
    bleu_4: float
    exact_match: bool
    precisions: Tuple[float, float, float, float]
    brevity_penalty: float
    lcs: int

    def __post_init__(self):
        assert 0.0 <= self.rouge_l <= 1.0
        assert 0.0 <= self.bleu_4 <= 1.0


def score_pair(reference_text: str, generated_text: str) -> MetricScores:
    """ROUGE/BLEU over full answer tokens, exact match over the call span."""
    reference = tokenize(reference_text)
    generated = tokenize(generated_text)
    breakdown = bleu_4_breakdown(reference, generated)
    return MetricScores(
        rouge_l=rouge_l(reference, generated),
        bleu_4=breakdown.score,
        exact_match=exact_match(reference_text, generated_text),
        precisions=breakdown.precisions,
        brevity_penalty=breakdown.brevity_penalty,
        lcs=lcs_length(reference, generated),
    )
