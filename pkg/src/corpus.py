"""Parallel corpus types, Unicode handling, and line-aligned file I/O."""

import logging
import re
import unicodedata
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union


logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

_LANGUAGE_CODE = re.compile(r"^[a-z0-9]+$")

LANGUAGE_NAMES = {
    "en": "English",
    "gez": "Ge'ez",
    "amh": "Amharic",
    "tir": "Tigrinya",
}


class CorpusError(Exception):
    """Base exception for corpus errors."""
    pass


class AlignmentError(CorpusError):
    """Raised when the two sides of a parallel corpus have different line counts."""

    def __init__(self, source_path: PathLike, target_path: PathLike,
                 source_lines: int, target_lines: int):
        self.source_lines = source_lines
        self.target_lines = target_lines
        super().__init__(
            f"Line count mismatch: {source_path} has {source_lines} lines, "
            f"{target_path} has {target_lines} lines ({source_lines}, {target_lines})"
        )


class CorpusDecodeError(CorpusError):
    """Raised when a corpus file is not valid UTF-8."""

    def __init__(self, path: PathLike, offset: int, reason: str):
        self.path = str(path)
        self.offset = offset
        super().__init__(f"Invalid UTF-8 in {path} at byte offset {offset}: {reason}")


def normalize_text(text: str) -> str:
    """NFC-normalize and trim a sentence."""
    return unicodedata.normalize("NFC", text).strip()


@dataclass(frozen=True, order=True)
class LanguageTag:
    """Short lowercase language identifier such as ``gez`` or ``en``."""

    code: str

    def __post_init__(self):
        if not isinstance(self.code, str) or not _LANGUAGE_CODE.match(self.code):
            raise CorpusError(f"Invalid language code: {self.code!r}")

    def __str__(self) -> str:
        return self.code

    @property
    def name(self) -> str:
        """Display name, falling back to the code for unlisted languages."""
        return LANGUAGE_NAMES.get(self.code, self.code)


@dataclass(frozen=True, order=True)
class Direction:
    """A translation direction, e.g. en -> gez."""

    source: LanguageTag
    target: LanguageTag

    def __post_init__(self):
        if self.source == self.target:
            raise CorpusError(f"Direction source and target are both {self.source}")

    @classmethod
    def of(cls, source: str, target: str) -> "Direction":
        return cls(LanguageTag(source), LanguageTag(target))

    @classmethod
    def parse(cls, text: str) -> "Direction":
        """Parse ``"en-gez"`` into a Direction."""
        parts = text.strip().split("-")
        if len(parts) != 2:
            raise CorpusError(f"Invalid direction: {text!r}. Expected '<src>-<tgt>'")
        return cls.of(parts[0], parts[1])

    def __str__(self) -> str:
        return f"{self.source}-{self.target}"


@dataclass(frozen=True)
class SentencePair:
    """One aligned sentence pair with its direction, domain and provenance."""

    source_text: str
    target_text: str
    direction: Direction
    domain: str
    origin: str = ""

    def __post_init__(self):
        for side, text in (("source", self.source_text), ("target", self.target_text)):
            if not text.strip():
                raise CorpusError(f"Empty {side} text in pair from {self.origin or 'unknown'}")
            if "\n" in text or "\r" in text:
                raise CorpusError(
                    f"Newline in {side} text in pair from {self.origin or 'unknown'}"
                )

    def with_source(self, source_text: str) -> "SentencePair":
        return replace(self, source_text=source_text)


@dataclass(frozen=True)
class Corpus:
    """An ordered, immutable sequence of sentence pairs.

    ``direction`` is None only for multilingual mixtures, where each pair
    keeps its own direction.
    """

    pairs: Tuple[SentencePair, ...]
    direction: Optional[Direction]
    dropped: int = field(default=0, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "pairs", tuple(self.pairs))
        if self.direction is not None:
            for pair in self.pairs:
                if pair.direction != self.direction:
                    raise CorpusError(
                        f"Pair from {pair.origin} has direction {pair.direction}, "
                        f"corpus direction is {self.direction}"
                    )

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self) -> Iterator[SentencePair]:
        return iter(self.pairs)

    @property
    def sources(self) -> List[str]:
        return [pair.source_text for pair in self.pairs]

    @property
    def targets(self) -> List[str]:
        return [pair.target_text for pair in self.pairs]

    def with_pairs(self, pairs: Sequence[SentencePair]) -> "Corpus":
        return Corpus(tuple(pairs), self.direction)

    def domains(self) -> List[str]:
        """Domains in first-appearance order."""
        return list(dict.fromkeys(pair.domain for pair in self.pairs))

    def by_domain(self) -> Dict[str, "Corpus"]:
        grouped: Dict[str, List[SentencePair]] = {}
        for pair in self.pairs:
            grouped.setdefault(pair.domain, []).append(pair)
        return {domain: self.with_pairs(pairs) for domain, pairs in grouped.items()}

    def for_direction(self, direction: Direction) -> "Corpus":
        return Corpus(tuple(p for p in self.pairs if p.direction == direction), direction)

    @classmethod
    def concat(cls, corpora: Sequence["Corpus"],
               direction: Optional[Direction] = None) -> "Corpus":
        pairs: List[SentencePair] = []
        for corpus in corpora:
            pairs.extend(corpus.pairs)
        return cls(tuple(pairs), direction)


def corpus_paths(data_dir: PathLike, stem: str, direction: Direction) -> Tuple[Path, Path]:
    """File pair ``<stem>.<src>`` / ``<stem>.<tgt>`` for a direction."""
    base = Path(data_dir)
    return base / f"{stem}.{direction.source}", base / f"{stem}.{direction.target}"


def read_lines(path: PathLike) -> List[str]:
    """Read a UTF-8 file strictly and split it on Unix newlines."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise CorpusError(f"Failed to read {path}: {e}")

    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as e:
        raise CorpusDecodeError(path, e.start, e.reason)

    if not text:
        return []
    lines = text.split("\n")
    if lines[-1] == "":
        lines.pop()
    return lines


def _clean_line(line: str) -> str:
    # Stray carriage returns inside a line would break alignment on write.
    return normalize_text(line).replace("\r", " ")


def ingest_parallel(source_path: PathLike, target_path: PathLike,
                    direction: Direction, domain: str) -> Corpus:
    """Read two line-aligned files into a Corpus.

    Args:
        source_path: Source-side file, one sentence per line
        target_path: Target-side file, aligned with the source file
        direction: Translation direction of the pair of files
        domain: Domain label recorded on every pair

    Returns:
        Corpus in file order; ``dropped`` counts lines where either side was blank

    Raises:
        AlignmentError: If the line counts differ
        CorpusDecodeError: If either file is not valid UTF-8
    """
    source_path = Path(source_path)
    target_path = Path(target_path)
    source_lines = read_lines(source_path)
    target_lines = read_lines(target_path)

    if len(source_lines) != len(target_lines):
        logger.error(
            f"Alignment check failed - Type: AlignmentError, "
            f"Message: {len(source_lines)} vs {len(target_lines)} lines, "
            f"Filename: {source_path.name}"
        )
        raise AlignmentError(source_path, target_path, len(source_lines), len(target_lines))

    pairs: List[SentencePair] = []
    dropped = 0
    for number, (raw_source, raw_target) in enumerate(zip(source_lines, target_lines), start=1):
        source_text = _clean_line(raw_source)
        target_text = _clean_line(raw_target)
        if not source_text or not target_text:
            dropped += 1
            continue
        pairs.append(SentencePair(
            source_text=source_text,
            target_text=target_text,
            direction=direction,
            domain=domain,
            origin=f"{source_path.name}:{number}",
        ))

    if dropped:
        logger.warning(f"Dropped {dropped} blank lines from {source_path.name}")
    logger.info(
        f"Ingested {len(pairs)} pairs from {source_path.name} / {target_path.name} "
        f"({direction}, {domain})"
    )
    return Corpus(tuple(pairs), direction, dropped=dropped)


def ingest_many(jobs: Sequence[Tuple[PathLike, PathLike, Direction, str]],
                max_workers: int = 4) -> List[Corpus]:
    """Ingest independent file pairs concurrently, returning results in job order."""
    if not jobs:
        return []
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(lambda job: ingest_parallel(*job), jobs))


def write_lines(path: PathLike, lines: Sequence[str]) -> None:
    """Write newline-terminated UTF-8 lines, creating parent directories."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for line in lines:
                f.write(line)
                f.write("\n")
    except OSError as e:
        logger.error(
            f"Write failed - Type: {type(e).__name__}, Message: {e}, Filename: {path}"
        )
        raise CorpusError(f"Failed to write {path}: {e}")


def write_parallel(corpus: Corpus, source_path: PathLike, target_path: PathLike) -> None:
    """Write a corpus as two line-aligned UTF-8 files.

    Raises:
        CorpusError: If either file cannot be written (message names the path)
    """
    write_lines(source_path, corpus.sources)
    write_lines(target_path, corpus.targets)
    logger.debug(f"Wrote {len(corpus)} pairs to {Path(source_path).name}")
