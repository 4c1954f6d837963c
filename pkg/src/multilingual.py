"""Target-language tagging and multilingual corpus assembly."""

import logging
import re
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

from src.corpus import Corpus, LanguageTag, SentencePair
from src.dedup_split import SPLIT_NAMES, OverlapMode, SplitBundle, SplitRatios, SplitReport


logger = logging.getLogger(__name__)

_TAG_PATTERN = re.compile(r"^<2([a-z0-9]+)> ")


class AssemblyError(Exception):
    """Raised when bundles cannot be combined into a multilingual corpus."""
    pass


@dataclass(frozen=True)
class TargetTag:
    """Artificial source-side token naming the target language, e.g. ``<2gez>``."""

    language: LanguageTag

    @property
    def tag(self) -> str:
        return f"<2{self.language.code}>"

    def __str__(self) -> str:
        return self.tag


def target_tag(code: str) -> TargetTag:
    return TargetTag(LanguageTag(code))


def tag_source(pair: SentencePair) -> SentencePair:
    """Prefix the source with its target-language tag.

    A source that already starts with the same tag is returned unchanged.
    """
    prefix = f"{target_tag(pair.direction.target.code).tag} "
    if pair.source_text.startswith(prefix):
        return pair
    return pair.with_source(prefix + pair.source_text)


def strip_tag(text: str) -> Tuple[Optional[TargetTag], str]:
    """Split a leading well-formed tag and its space off a sentence.

    Returns:
        (tag, remainder), or (None, text) when no well-formed tag leads the text
    """
    match = _TAG_PATTERN.match(text)
    if not match:
        return None, text
    return target_tag(match.group(1)), text[match.end():]


def tag_specials(codes: Sequence[str]) -> List[str]:
    """Tag tokens for BPE special registration, sorted and unique."""
    return sorted({target_tag(code).tag for code in codes})


def _tag_corpus(corpus: Corpus) -> List[SentencePair]:
    return [tag_source(pair) for pair in corpus]


def assemble_multilingual(bundles: Sequence[SplitBundle]) -> SplitBundle:
    """Tag and concatenate per-direction bundles into one multilingual bundle.

    Bundles are ordered by direction; pairs keep their own direction so each
    direction's slice can be recovered with ``SplitBundle.for_direction``.

    Args:
        bundles: One split bundle per direction

    Returns:
        Combined bundle whose corpora have no single direction

    Raises:
        AssemblyError: If a direction is supplied twice or a bundle has no direction
    """
    seen = set()
    for bundle in bundles:
        if bundle.direction is None:
            raise AssemblyError("Cannot assemble a bundle without a direction")
        if bundle.direction in seen:
            raise AssemblyError(f"Direction supplied twice: {bundle.direction}")
        seen.add(bundle.direction)

    ordered = sorted(bundles, key=lambda bundle: bundle.direction)
    combined = {}
    for name in SPLIT_NAMES:
        pairs: List[SentencePair] = []
        for bundle in ordered:
            pairs.extend(_tag_corpus(bundle.split(name)))
        combined[name] = Corpus(tuple(pairs), None)

    domains = {}
    warnings: List[str] = []
    for bundle in ordered:
        for domain, counts in bundle.report.domains.items():
            domains[f"{bundle.direction}/{domain}"] = counts
        warnings.extend(bundle.report.warnings)

    first = ordered[0].report if ordered else None
    report = SplitReport(
        direction=None,
        ratios=first.ratios if first else SplitRatios(),
        seed=first.seed if first else 0,
        overlap_mode=first.overlap_mode if first else OverlapMode.STRICT,
        tolerance=first.tolerance if first else 0.02,
        domains=domains,
        warnings=warnings,
    )
    logger.info(
        f"Assembled {len(ordered)} directions: train={len(combined['train'])} "
        f"test={len(combined['test'])} validation={len(combined['validation'])}"
    )
    return SplitBundle(combined["train"], combined["test"], combined["validation"], report)
