"""Pair deduplication, overlap-safe stratified splitting, and split reports.

Duplicates and overlaps are detected on normalization keys: a sentence
lowercased with every punctuation mark (Latin and Ethiopic) and every
whitespace character removed.
"""

import hashlib
import logging
import unicodedata
from collections import Counter
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

import numpy as np

from src.corpus import Corpus, Direction, SentencePair


logger = logging.getLogger(__name__)

PUNCTUATION_CATEGORIES = frozenset({"Pc", "Pd", "Pe", "Pf", "Pi", "Po", "Ps"})

SPLIT_NAMES = ("train", "test", "validation")

# Ratio rules are only enforced on slices at least this large.
RATIO_CHECK_MIN_PAIRS = 1000


class SplitError(Exception):
    """Raised when split parameters are invalid."""
    pass


class OverlapMode(str, Enum):
    """Which key collisions count as a train/eval overlap."""

    STRICT = "strict"
    SOURCE_SOURCE = "source-source"


def _simple_lower(ch: str) -> str:
    lowered = ch.lower()
    # Full lowercasing can expand (U+0130); keep one code point per input.
    return lowered[0] if lowered else ch


def normalize_key(text: str) -> str:
    """Compute the normalization key of a sentence.

    Args:
        text: Any string

    Returns:
        The lowercased text with punctuation and whitespace removed
    """
    out = []
    for ch in text:
        if ch.isspace():
            continue
        low = _simple_lower(ch)
        if low.isspace() or unicodedata.category(low) in PUNCTUATION_CATEGORIES:
            continue
        out.append(low)
    return "".join(out)


@dataclass(frozen=True)
class SplitRatios:
    """Train/test/validation fractions summing to one."""

    train: float = 0.7
    test: float = 0.2
    validation: float = 0.1

    def __post_init__(self):
        for name in SPLIT_NAMES:
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise SplitError(f"Ratio {name} must be in [0, 1]: {value}")
        total = self.train + self.test + self.validation
        if abs(total - 1.0) > 1e-9:
            raise SplitError(f"Ratios must sum to 1, got {total}")

    @classmethod
    def from_dict(cls, values: Mapping[str, float]) -> "SplitRatios":
        return cls(float(values["train"]), float(values["test"]), float(values["validation"]))

    def as_dict(self) -> Dict[str, float]:
        return {"train": self.train, "test": self.test, "validation": self.validation}


@dataclass
class DomainCounts:
    """Pair counts for one domain at each stage of the split."""

    original: int = 0
    deduplicated: int = 0
    reassigned: int = 0
    pruned: int = 0
    rebalanced: int = 0
    train: int = 0
    test: int = 0
    validation: int = 0

    @property
    def duplicates(self) -> int:
        return self.original - self.deduplicated

    @property
    def final(self) -> int:
        """Pairs kept after removing duplicates and overlaps."""
        return self.train + self.test + self.validation

    def fraction(self, split: str) -> float:
        return getattr(self, split) / self.final if self.final else 0.0

    def add(self, other: "DomainCounts") -> None:
        for name in self.__dataclass_fields__:
            setattr(self, name, getattr(self, name) + getattr(other, name))


@dataclass
class SplitReport:
    """How a split was produced and the per-domain counts."""

    direction: Optional[str]
    ratios: SplitRatios
    seed: int
    overlap_mode: OverlapMode = OverlapMode.STRICT
    tolerance: float = 0.02
    domains: Dict[str, DomainCounts] = field(default_factory=dict)
    warnings: List[str] = field(default_factory=list)
    dedup_applied: bool = False

    @property
    def total(self) -> DomainCounts:
        total = DomainCounts()
        for counts in self.domains.values():
            total.add(counts)
        return total

    def to_dict(self) -> Dict[str, object]:
        return {
            "direction": self.direction,
            "ratios": self.ratios.as_dict(),
            "seed": self.seed,
            "overlap_mode": self.overlap_mode.value,
            "tolerance": self.tolerance,
            "domains": {name: asdict(counts) for name, counts in self.domains.items()},
            "warnings": list(self.warnings),
            "dedup_applied": self.dedup_applied,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, object]) -> "SplitReport":
        return cls(
            direction=data.get("direction"),
            ratios=SplitRatios.from_dict(data["ratios"]),
            seed=int(data["seed"]),
            overlap_mode=OverlapMode(data.get("overlap_mode", "strict")),
            tolerance=float(data.get("tolerance", 0.02)),
            domains={
                name: DomainCounts(**counts) for name, counts in data.get("domains", {}).items()
            },
            warnings=list(data.get("warnings", [])),
            dedup_applied=bool(data.get("dedup_applied", False)),
        )


@dataclass(frozen=True)
class SplitBundle:
    """A corpus partitioned into train, test and validation sets."""

    train: Corpus
    test: Corpus
    validation: Corpus
    report: SplitReport

    @property
    def direction(self) -> Optional[Direction]:
        return self.train.direction

    def split(self, name: str) -> Corpus:
        if name not in SPLIT_NAMES:
            raise SplitError(f"Unknown split: {name}")
        return getattr(self, name)

    def directions(self) -> List[Direction]:
        """Directions present in the bundle, sorted."""
        found: Set[Direction] = set()
        for name in SPLIT_NAMES:
            found.update(pair.direction for pair in self.split(name))
        return sorted(found)

    def for_direction(self, direction: Direction) -> "SplitBundle":
        """The slice of a multilingual bundle belonging to one direction."""
        return SplitBundle(
            train=self.train.for_direction(direction),
            test=self.test.for_direction(direction),
            validation=self.validation.for_direction(direction),
            report=self.report,
        )


@dataclass(frozen=True)
class Violation:
    """One broken split rule."""

    rule: str
    message: str
    origins: Tuple[str, ...]
    key: str

    def __str__(self) -> str:
        return f"rule {self.rule}: {self.message} [{', '.join(self.origins)}] key={self.key!r}"


def pair_keys(pair: SentencePair) -> Tuple[str, str]:
    return normalize_key(pair.source_text), normalize_key(pair.target_text)


def _overlap_keys(keys: Tuple[str, str], mode: OverlapMode) -> Tuple[str, ...]:
    if mode is OverlapMode.SOURCE_SOURCE:
        return (keys[0],)
    if keys[0] == keys[1]:
        return (keys[0],)
    return keys


def dedup_pairs(corpus: Corpus) -> Tuple[Corpus, int]:
    """Remove later pairs whose (source key, target key) was already seen.

    Args:
        corpus: Input corpus

    Returns:
        Tuple of (deduplicated corpus in original order, number of pairs removed)
    """
    seen: Set[Tuple[str, str]] = set()
    kept: List[SentencePair] = []
    for pair in corpus:
        keys = pair_keys(pair)
        if keys in seen:
            continue
        seen.add(keys)
        kept.append(pair)
    removed = len(corpus) - len(kept)
    logger.info(f"Removed {removed} duplicate pairs, kept {len(kept)}")
    return corpus.with_pairs(kept), removed


def _round_half_up(value: float) -> int:
    return int(np.floor(value + 0.5))


def _domain_rng(seed: int, domain: str) -> np.random.Generator:
    digest = hashlib.sha256(f"{seed}:{domain}".encode("utf-8")).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "big"))


def sample_indices(count: int, size: int, seed: int, label: str) -> List[int]:
    """Seeded sample of positions without replacement, returned in ascending order.

    Uses the same per-label generator as the split, so a run seed fixes the sample.

    Raises:
        SplitError: If size is not positive
    """
    if size < 1:
        raise SplitError(f"Sample size must be positive, got {size}")
    if size >= count:
        return list(range(count))
    chosen = _domain_rng(seed, label).choice(count, size=size, replace=False)
    return sorted(int(i) for i in chosen)


def _cut_sizes(n: int, ratios: SplitRatios) -> Tuple[int, int, int]:
    n_test = min(n, _round_half_up(n * ratios.test))
    n_validation = min(n - n_test, _round_half_up(n * ratios.validation))
    return n - n_test - n_validation, n_test, n_validation


@dataclass
class _Item:
    index: int
    rank: int
    pair: SentencePair
    keys: Tuple[str, ...]


class _Splitter:
    """Mutable working state of one split_stratified call."""

    def __init__(self, ratios: SplitRatios, seed: int, mode: OverlapMode,
                 tolerance: float, min_domain_size: int):
        self.ratios = ratios
        self.seed = seed
        self.mode = mode
        self.tolerance = tolerance
        self.min_domain_size = min_domain_size
        self.sets: Dict[str, Dict[str, List[_Item]]] = {}
        self.counts: Dict[str, DomainCounts] = {}
        self.warnings: List[str] = []

    def cut(self, domain: str, items: List[_Item]) -> None:
        """Shuffle one domain and cut it, evaluation sets first."""
        counts = self.counts[domain]
        sets = {name: [] for name in SPLIT_NAMES}
        n = len(items)
        if n < self.min_domain_size:
            message = f"Domain {domain} has {n} pairs; placed wholly in train"
            logger.warning(message)
            self.warnings.append(message)
            sets["train"] = list(items)
        else:
            order = _domain_rng(self.seed, domain).permutation(n)
            for rank, position in enumerate(order):
                items[position].rank = rank
            _, n_test, n_validation = _cut_sizes(n, self.ratios)
            shuffled = [items[position] for position in order]
            sets["test"] = shuffled[:n_test]
            sets["validation"] = shuffled[n_test:n_test + n_validation]
            sets["train"] = shuffled[n_test + n_validation:]
        self.sets[domain] = sets
        logger.debug(
            f"Cut {domain}: train={len(sets['train'])} test={len(sets['test'])} "
            f"validation={len(sets['validation'])}"
        )
        counts.deduplicated = n

    def reconcile_eval(self) -> None:
        """Move validation pairs that collide with test pairs into test."""
        test_keys: Set[str] = set()
        for sets in self.sets.values():
            for item in sets["test"]:
                test_keys.update(item.keys)
        changed = True
        while changed:
            changed = False
            for domain, sets in self.sets.items():
                staying = []
                for item in sets["validation"]:
                    if test_keys.intersection(item.keys):
                        sets["test"].append(item)
                        test_keys.update(item.keys)
                        self.counts[domain].reassigned += 1
                        changed = True
                    else:
                        staying.append(item)
                sets["validation"] = staying

    def prune_train(self) -> None:
        """Drop train pairs whose keys collide with any evaluation key."""
        eval_keys: Set[str] = set()
        for sets in self.sets.values():
            for name in ("test", "validation"):
                for item in sets[name]:
                    eval_keys.update(item.keys)
        for domain, sets in self.sets.items():
            kept = [item for item in sets["train"] if not eval_keys.intersection(item.keys)]
            self.counts[domain].pruned += len(sets["train"]) - len(kept)
            sets["train"] = kept

    def rebalance(self) -> None:
        """Move surplus evaluation pairs back to train where no overlap results."""
        eval_counts: Counter = Counter()
        for sets in self.sets.values():
            for name in ("test", "validation"):
                for item in sets[name]:
                    eval_counts.update(item.keys)

        threshold = self.ratios.train - self.tolerance
        for domain, sets in self.sets.items():
            n = sum(len(sets[name]) for name in SPLIT_NAMES)
            if n < self.min_domain_size or len(sets["train"]) / n >= threshold:
                continue
            target_train, target_test, target_validation = _cut_sizes(n, self.ratios)
            targets = {"test": target_test, "validation": target_validation}
            while len(sets["train"]) < target_train:
                surplus = {name: len(sets[name]) - targets[name] for name in targets}
                candidates = sorted(
                    (name for name in targets if surplus[name] > 0),
                    key=lambda name: (-surplus[name], name),
                )
                moved = False
                for name in candidates:
                    pool = sorted(sets[name], key=lambda item: -item.rank)
                    for item in pool:
                        if all(eval_counts[key] == 1 for key in item.keys):
                            sets[name].remove(item)
                            sets["train"].append(item)
                            eval_counts.subtract(item.keys)
                            self.counts[domain].rebalanced += 1
                            moved = True
                            break
                    if moved:
                        break
                if not moved:
                    message = (
                        f"Domain {domain}: rebalancing stopped at "
                        f"{len(sets['train'])}/{target_train} train pairs"
                    )
                    logger.warning(message)
                    self.warnings.append(message)
                    break

    def corpus(self, name: str, direction: Optional[Direction]) -> Corpus:
        items: List[_Item] = []
        for sets in self.sets.values():
            items.extend(sorted(sets[name], key=lambda item: item.index))
        return Corpus(tuple(item.pair for item in items), direction)


def split_stratified(corpus: Corpus, ratios: SplitRatios, seed: int,
                     overlap_mode: OverlapMode = OverlapMode.STRICT,
                     tolerance: float = 0.02, min_domain_size: int = 3) -> SplitBundle:
    """Split a corpus per domain into train/test/validation without overlaps.

    Each domain is shuffled with a generator seeded by (seed, domain) and cut
    test first, then validation, then train. Train pairs colliding with any
    evaluation key are dropped, and domains whose train share fell below
    ``ratios.train - tolerance`` get surplus evaluation pairs moved back.

    Args:
        corpus: Corpus of one direction; deduplicated here if it is not already
        ratios: Requested split fractions
        seed: Shuffle seed
        overlap_mode: Which key collisions count as overlap
        tolerance: Allowed deviation from the requested train fraction
        min_domain_size: Domains smaller than this go wholly to train

    Returns:
        SplitBundle with a per-domain report
    """
    overlap_mode = OverlapMode(overlap_mode)
    original = Counter(pair.domain for pair in corpus)
    deduped, removed = dedup_pairs(corpus)

    splitter = _Splitter(ratios, seed, overlap_mode, tolerance, min_domain_size)
    grouped: Dict[str, List[_Item]] = {}
    for index, pair in enumerate(deduped):
        keys = _overlap_keys(pair_keys(pair), overlap_mode)
        grouped.setdefault(pair.domain, []).append(_Item(index, index, pair, keys))

    for domain in original:
        counts = DomainCounts(original=original[domain])
        splitter.counts[domain] = counts
        splitter.cut(domain, grouped.get(domain, []))

    splitter.reconcile_eval()
    splitter.prune_train()
    splitter.rebalance()

    for domain, sets in splitter.sets.items():
        counts = splitter.counts[domain]
        counts.train = len(sets["train"])
        counts.test = len(sets["test"])
        counts.validation = len(sets["validation"])

    report = SplitReport(
        direction=str(corpus.direction) if corpus.direction else None,
        ratios=ratios,
        seed=seed,
        overlap_mode=overlap_mode,
        tolerance=tolerance,
        domains=splitter.counts,
        warnings=splitter.warnings,
        dedup_applied=removed > 0,
    )
    total = report.total
    logger.info(
        f"Split {report.direction}: train={total.train} test={total.test} "
        f"validation={total.validation} pruned={total.pruned} rebalanced={total.rebalanced}"
    )
    return SplitBundle(
        train=splitter.corpus("train", corpus.direction),
        test=splitter.corpus("test", corpus.direction),
        validation=splitter.corpus("validation", corpus.direction),
        report=report,
    )


def _duplicate_violations(corpus: Corpus, rule: str, label: str) -> List[Violation]:
    first: Dict[Tuple[str, str], SentencePair] = {}
    violations = []
    for pair in corpus:
        keys = pair_keys(pair)
        if keys in first:
            violations.append(Violation(
                rule=rule,
                message=f"duplicate pair in {label}",
                origins=(first[keys].origin, pair.origin),
                key=f"{keys[0]}|{keys[1]}",
            ))
        else:
            first[keys] = pair
    return violations


def _collision_violations(checked: Corpus, against: Iterable[SentencePair], mode: OverlapMode,
                          rule: str, label: str) -> List[Violation]:
    index: Dict[str, SentencePair] = {}
    for pair in against:
        for key in _overlap_keys(pair_keys(pair), mode):
            index.setdefault(key, pair)
    violations = []
    for pair in checked:
        for key in _overlap_keys(pair_keys(pair), mode):
            if key in index:
                violations.append(Violation(
                    rule=rule,
                    message=f"{label} overlap",
                    origins=(pair.origin, index[key].origin),
                    key=key,
                ))
                break
    return violations


def _ratio_violations(name: str, counts: DomainCounts, ratios: SplitRatios,
                      tolerance: float, rule: str) -> List[Violation]:
    if counts.final < RATIO_CHECK_MIN_PAIRS:
        return []
    violations = []
    for split in SPLIT_NAMES:
        observed = counts.fraction(split)
        requested = getattr(ratios, split)
        if abs(observed - requested) > tolerance + 1e-12:
            violations.append(Violation(
                rule=rule,
                message=f"{name} {split} fraction {observed:.4f} vs requested {requested}",
                origins=(),
                key="",
            ))
    return violations


def verify_bundle(bundle: SplitBundle,
                  overlap_mode: Optional[OverlapMode] = None) -> List[Violation]:
    """Check a bundle against the split rules.

    Rules: (i) no duplicate pair in train; (ii) no train key collides with an
    evaluation key; "eval" test and validation are deduplicated and disjoint;
    (iii)/(iv) per-domain and total fractions within tolerance.

    Returns:
        List of violations, empty when every rule holds
    """
    mode = OverlapMode(overlap_mode or bundle.report.overlap_mode)
    violations: List[Violation] = []

    violations.extend(_duplicate_violations(bundle.train, "i", "train"))
    violations.extend(_duplicate_violations(bundle.test, "eval", "test"))
    violations.extend(_duplicate_violations(bundle.validation, "eval", "validation"))

    violations.extend(_collision_violations(
        bundle.validation, bundle.test, mode, "eval", "validation/test"))
    violations.extend(_collision_violations(
        bundle.train, list(bundle.test) + list(bundle.validation), mode, "ii", "train/eval"))

    per_domain: Dict[str, DomainCounts] = {}
    for split in SPLIT_NAMES:
        for pair in bundle.split(split):
            counts = per_domain.setdefault(pair.domain, DomainCounts())
            setattr(counts, split, getattr(counts, split) + 1)
    total = DomainCounts()
    for domain, counts in per_domain.items():
        total.add(counts)
        violations.extend(_ratio_violations(
            f"domain {domain}", counts, bundle.report.ratios, bundle.report.tolerance, "iii"))
    violations.extend(_ratio_violations(
        "total", total, bundle.report.ratios, bundle.report.tolerance, "iv"))

    for violation in violations:
        logger.debug(str(violation))
    return violations


@dataclass(frozen=True)
class StatsRow:
    """One row of the parallel-corpus table."""

    direction: str
    domain: str
    original: int
    after_dedup: int
    train: int
    test: int
    validation: int

    @property
    def consistent(self) -> bool:
        """train+test+validation equals the kept count, which cannot exceed the original."""
        return (self.after_dedup <= self.original
                and self.train + self.test + self.validation == self.after_dedup)


@dataclass
class StatsTable:
    """Per-direction, per-domain corpus statistics."""

    rows: List[StatsRow] = field(default_factory=list)

    COLUMNS = ("Direction", "Domain", "Original", "Duplicates-removed",
               "train", "test", "validation", "Total", "Consistency")

    def direction_totals(self) -> Dict[str, int]:
        totals: Dict[str, int] = {}
        for row in self.rows:
            totals[row.direction] = totals.get(row.direction, 0) + row.train + row.test + row.validation
        return totals

    def _cells(self, repeat_direction: bool) -> List[List[str]]:
        totals = self.direction_totals()
        cells = []
        previous = None
        for row in self.rows:
            first = row.direction != previous
            previous = row.direction
            cells.append([
                row.direction if (first or repeat_direction) else "",
                row.domain,
                str(row.original),
                str(row.after_dedup),
                str(row.train),
                str(row.test),
                str(row.validation),
                str(totals[row.direction]) if first else "",
                "OK" if row.consistent else "FAIL",
            ])
        return cells

    def to_tsv(self) -> str:
        lines = ["\t".join(self.COLUMNS)]
        lines.extend("\t".join(cells) for cells in self._cells(repeat_direction=True))
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        cells = [list(self.COLUMNS)] + self._cells(repeat_direction=False)
        widths = [max(len(row[i]) for row in cells) for i in range(len(self.COLUMNS))]
        lines = ["  ".join(cell.ljust(width) for cell, width in zip(row, widths)).rstrip()
                 for row in cells]
        return "\n".join(lines) + "\n"


def stats_report(bundles: Sequence[SplitBundle]) -> StatsTable:
    """Build the corpus statistics table from split bundles.

    Rows follow bundle order, then domain order within each bundle.
    """
    rows = []
    for bundle in bundles:
        direction = bundle.report.direction or "multi"
        for domain, counts in bundle.report.domains.items():
            rows.append(StatsRow(
                direction=direction,
                domain=domain,
                original=counts.original,
                after_dedup=counts.final,
                train=counts.train,
                test=counts.test,
                validation=counts.validation,
            ))
    table = StatsTable(rows)
    failing = [f"{row.direction}/{row.domain}" for row in rows if not row.consistent]
    if failing:
        logger.warning(f"Inconsistent rows: {', '.join(failing)}")
    return table
