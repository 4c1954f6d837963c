"""Corpus BLEU with a deterministic, script-agnostic tokenizer."""

import logging
import math
import unicodedata
from collections import Counter
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from src.corpus import Direction
from src.dedup_split import SplitBundle


logger = logging.getLogger(__name__)

MAX_ORDER = 4


class BleuError(Exception):
    """Raised when BLEU inputs are invalid."""
    pass


def eval_tokenize(text: str) -> List[str]:
    """Split text into tokens, isolating every punctuation character.

    No lowercasing is applied.
    """
    text = unicodedata.normalize("NFC", text)
    spaced = []
    for ch in text:
        if unicodedata.category(ch).startswith("P"):
            spaced.append(f" {ch} ")
        else:
            spaced.append(ch)
    return "".join(spaced).split()


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


@dataclass(frozen=True)
class BleuReport:
    """Corpus BLEU with its components."""

    score: float
    precisions: Tuple[float, ...]
    brevity_penalty: float
    hyp_length: int
    ref_length: int
    matches: Tuple[int, ...] = ()
    totals: Tuple[int, ...] = ()
    smoothed: bool = False

    @property
    def ratio(self) -> float:
        return self.hyp_length / self.ref_length if self.ref_length else 0.0

    def format(self) -> str:
        """Human-readable one-line summary."""
        precisions = "/".join(f"{100 * p:.1f}" for p in self.precisions)
        name = "BLEU+smooth" if self.smoothed else "BLEU"
        return (
            f"{name} = {self.score:.2f} {precisions} (BP = {self.brevity_penalty:.3f} "
            f"ratio = {self.ratio:.3f} hyp_len = {self.hyp_length} ref_len = {self.ref_length})"
        )

    def to_key_values(self) -> str:
        """Machine-readable ``key=value`` lines."""
        lines = [
            f"bleu={self.score!r}",
            f"brevity_penalty={self.brevity_penalty!r}",
            f"hyp_length={self.hyp_length}",
            f"ref_length={self.ref_length}",
            f"smoothed={str(self.smoothed).lower()}",
        ]
        for n, precision in enumerate(self.precisions, start=1):
            lines.append(f"precision_{n}={precision!r}")
        return "\n".join(lines) + "\n"


def bleu_corpus(hypotheses: Sequence[str], references: Sequence[str],
                smooth: bool = False) -> BleuReport:
    """Score hypotheses against single references with corpus BLEU.

    Clipped n-gram matches and totals are summed over the corpus before
    dividing. With ``smooth``, orders with zero matches use (0 + 1) / (total + 1);
    orders with matches are untouched.

    Raises:
        BleuError: If the lists differ in length or are empty
    """
    if len(hypotheses) != len(references):
        raise BleuError(
            f"Hypothesis/reference count mismatch: {len(hypotheses)} vs {len(references)}"
        )
    if not hypotheses:
        raise BleuError("Cannot score an empty corpus")

    matches = [0] * MAX_ORDER
    totals = [0] * MAX_ORDER
    hyp_length = 0
    ref_length = 0
    for hypothesis, reference in zip(hypotheses, references):
        hyp_tokens = eval_tokenize(hypothesis)
        ref_tokens = eval_tokenize(reference)
        hyp_length += len(hyp_tokens)
        ref_length += len(ref_tokens)
        for n in range(1, MAX_ORDER + 1):
            hyp_ngrams = _ngrams(hyp_tokens, n)
            ref_ngrams = _ngrams(ref_tokens, n)
            matches[n - 1] += sum(min(count, ref_ngrams[gram]) for gram, count in hyp_ngrams.items())
            totals[n - 1] += max(len(hyp_tokens) - n + 1, 0)

    precisions = []
    for match, total in zip(matches, totals):
        if match > 0:
            precisions.append(match / total)
        elif smooth and hyp_length > 0:
            precisions.append(1.0 / (total + 1))
        else:
            precisions.append(0.0)

    if hyp_length >= ref_length:
        brevity_penalty = 1.0
    else:
        # An empty hypothesis side counts as one token so BP stays in (0, 1].
        brevity_penalty = math.exp(1.0 - ref_length / max(hyp_length, 1))

    if min(precisions) <= 0.0:
        score = 0.0
    else:
        log_mean = math.fsum(math.log(p) for p in precisions) / MAX_ORDER
        score = 100.0 * brevity_penalty * math.exp(log_mean)

    report = BleuReport(
        score=score,
        precisions=tuple(precisions),
        brevity_penalty=brevity_penalty,
        hyp_length=hyp_length,
        ref_length=ref_length,
        matches=tuple(matches),
        totals=tuple(totals),
        smoothed=smooth,
    )
    logger.debug(report.format())
    return report


def bleu_by_direction(bundle: SplitBundle, hypotheses: Mapping[Direction, Sequence[str]],
                      smooth: bool = False) -> Dict[Direction, BleuReport]:
    """Score each direction of a multilingual bundle against its own test targets.

    Raises:
        BleuError: If a direction has no hypotheses, or a count mismatch
    """
    directions = bundle.directions()
    missing = [str(d) for d in directions if d not in hypotheses]
    if missing:
        raise BleuError(f"Missing hypotheses for directions: {', '.join(missing)}")

    reports = {}
    for direction in directions:
        references = bundle.test.for_direction(direction).targets
        reports[direction] = bleu_corpus(hypotheses[direction], references, smooth=smooth)
        logger.info(f"{direction}: {reports[direction].format()}")
    return reports


def compare_reports(bilingual: Mapping[Direction, BleuReport],
                    multilingual: Mapping[Direction, BleuReport]) -> str:
    """Tab-separated per-direction comparison of two systems."""
    lines = ["Direction\tBilingual\tMultilingual\tDelta"]
    for direction in sorted(set(bilingual) | set(multilingual)):
        left: Optional[BleuReport] = bilingual.get(direction)
        right: Optional[BleuReport] = multilingual.get(direction)
        delta = f"{right.score - left.score:+.2f}" if left and right else "-"
        lines.append("\t".join([
            str(direction),
            f"{left.score:.2f}" if left else "-",
            f"{right.score:.2f}" if right else "-",
            delta,
        ]))
    return "\n".join(lines) + "\n"
