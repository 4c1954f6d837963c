"""Byte-pair-encoding subword model: training, encoding, decoding, and model files."""

import heapq
import logging
from collections import Counter, defaultdict
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple, Union


logger = logging.getLogger(__name__)

WORD_END = "</w>"
UNK = "<unk>"
PAD = "<pad>"

MODEL_FORMAT = "bpe-model"
MODEL_VERSION = "v1"

TokenSequence = List[str]
Merge = Tuple[str, str]


class BpeError(Exception):
    """Base exception for BPE errors."""
    pass


class BpeTrainingError(BpeError):
    """Raised when training parameters cannot produce a model."""
    pass


class BpeDecodeError(BpeError):
    """Raised when a token sequence contains a token outside the vocabulary."""
    pass


class BpeModelFormatError(BpeError):
    """Raised when a model file is malformed."""

    def __init__(self, path: Union[str, Path], line_number: int, reason: str):
        self.line_number = line_number
        super().__init__(f"Malformed model file {path} at line {line_number}: {reason}")


def _default_specials(specials: Iterable[str]) -> List[str]:
    ordered = [UNK, PAD]
    for token in specials:
        if token not in ordered:
            ordered.append(token)
    for token in ordered:
        if not token or any(ch.isspace() for ch in token):
            raise BpeTrainingError(f"Special token must be nonempty without whitespace: {token!r}")
    return ordered


class BpeModel:
    """Ordered merge rules plus a dense vocabulary.

    Words are split into characters followed by the word-end marker, then
    merges are applied in priority order. Special tokens are matched as whole
    words and never merged.
    """

    def __init__(self, merges: Sequence[Merge], vocabulary: Dict[str, int],
                 specials: Sequence[str], word_end_marker: str = WORD_END):
        self.merges: List[Merge] = [tuple(m) for m in merges]
        self.vocabulary: Dict[str, int] = dict(vocabulary)
        self.specials: List[str] = list(specials)
        self.word_end_marker = word_end_marker
        self._validate()

        self._ranks: Dict[Merge, int] = {}
        for rank, merge in enumerate(self.merges):
            self._ranks.setdefault(merge, rank)
        self._special_set: Set[str] = set(self.specials)
        self._id_to_token = {idx: token for token, idx in self.vocabulary.items()}
        self._cache: Dict[str, Tuple[str, ...]] = {}

    def _validate(self) -> None:
        if not self.specials:
            raise BpeError("Model needs at least the unknown marker as a special token")
        ids = sorted(self.vocabulary.values())
        if ids != list(range(len(ids))):
            raise BpeError("Vocabulary ids must be dense 0..n-1")
        for token in self.specials + [self.word_end_marker]:
            if token not in self.vocabulary:
                raise BpeError(f"Reserved token missing from vocabulary: {token}")
        specials = set(self.specials)
        for left, right in self.merges:
            if left in specials or right in specials:
                raise BpeError(f"Special token used in merge ({left}, {right})")
            if left + right not in self.vocabulary:
                raise BpeError(f"Merge result missing from vocabulary: {left + right}")

    @property
    def unk(self) -> str:
        return self.specials[0]

    def __len__(self) -> int:
        return len(self.vocabulary)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BpeModel):
            return NotImplemented
        return (self.merges == other.merges and self.vocabulary == other.vocabulary
                and self.specials == other.specials
                and self.word_end_marker == other.word_end_marker)

    def _encode_word(self, word: str) -> Tuple[str, ...]:
        cached = self._cache.get(word)
        if cached is not None:
            return cached

        if word in self._special_set:
            result: Tuple[str, ...] = (word, self.word_end_marker)
        else:
            symbols = [ch if ch in self.vocabulary else self.unk for ch in word]
            symbols.append(self.word_end_marker)
            while len(symbols) > 1:
                best_rank = None
                best_pair = None
                for pair in zip(symbols, symbols[1:]):
                    rank = self._ranks.get(pair)
                    if rank is not None and (best_rank is None or rank < best_rank):
                        best_rank, best_pair = rank, pair
                if best_pair is None:
                    break
                symbols = _merge_symbols(symbols, best_pair)
            result = tuple(symbols)

        self._cache[word] = result
        return result

    def encode(self, text: str) -> TokenSequence:
        """Segment text into subword tokens.

        Args:
            text: Input sentence; words are separated by any whitespace

        Returns:
            Token strings; characters outside the vocabulary become the unknown marker
        """
        tokens: TokenSequence = []
        for word in text.split():
            tokens.extend(self._encode_word(word))
        return tokens

    def encode_ids(self, text: str) -> List[int]:
        return [self.vocabulary[token] for token in self.encode(text)]

    def decode(self, tokens: Sequence[Union[str, int]]) -> str:
        """Join tokens back into text, turning word-end markers into spaces.

        Raises:
            BpeDecodeError: If a token or id is not in the vocabulary
        """
        marker = self.word_end_marker
        parts = []
        for token in tokens:
            if isinstance(token, int):
                if token not in self._id_to_token:
                    raise BpeDecodeError(f"Unknown token id: {token}")
                token = self._id_to_token[token]
            elif token not in self.vocabulary:
                raise BpeDecodeError(f"Unknown token: {token!r}")
            if token.endswith(marker):
                parts.append(token[:-len(marker)])
                parts.append(" ")
            else:
                parts.append(token)
        text = "".join(parts)
        return text[:-1] if text.endswith(" ") else text

    def save(self, path: Union[str, Path]) -> None:
        """Write the model in the line-oriented text format."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        lines = [f"{MODEL_FORMAT} {MODEL_VERSION} {len(self.vocabulary)}", "[specials]"]
        lines.extend(self.specials)
        lines.append("[merges]")
        lines.extend(f"{left}\t{right}" for left, right in self.merges)
        lines.append("[vocab]")
        for token, idx in sorted(self.vocabulary.items(), key=lambda item: item[1]):
            lines.append(f"{token}\t{idx}")
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write("\n".join(lines) + "\n")
        logger.info(f"Saved BPE model with {len(self.vocabulary)} tokens to {path}")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "BpeModel":
        """Read a model written by ``save``.

        Raises:
            BpeModelFormatError: On version mismatch or a malformed line
        """
        path = Path(path)
        try:
            with open(path, "r", encoding="utf-8") as f:
                lines = f.read().split("\n")
        except (OSError, UnicodeDecodeError) as e:
            raise BpeError(f"Failed to read model file {path}: {e}")
        if lines and lines[-1] == "":
            lines.pop()
        if not lines:
            raise BpeModelFormatError(path, 1, "empty file")

        header = lines[0].split(" ")
        if len(header) != 3 or header[0] != MODEL_FORMAT:
            raise BpeModelFormatError(path, 1, f"bad header {lines[0]!r}")
        if header[1] != MODEL_VERSION:
            raise BpeModelFormatError(path, 1, f"unsupported version {header[1]}")
        try:
            declared_size = int(header[2])
        except ValueError:
            raise BpeModelFormatError(path, 1, f"bad vocabulary size {header[2]!r}")

        specials: List[str] = []
        merges: List[Merge] = []
        vocabulary: Dict[str, int] = {}
        section = None
        for number, line in enumerate(lines[1:], start=2):
            if line in ("[specials]", "[merges]", "[vocab]"):
                section = line
                continue
            if section == "[specials]":
                if not line:
                    raise BpeModelFormatError(path, number, "empty special token")
                specials.append(line)
            elif section == "[merges]":
                parts = line.split("\t")
                if len(parts) != 2 or not parts[0] or not parts[1]:
                    raise BpeModelFormatError(path, number, "merge must be left<TAB>right")
                merges.append((parts[0], parts[1]))
            elif section == "[vocab]":
                parts = line.split("\t")
                if len(parts) != 2 or not parts[0]:
                    raise BpeModelFormatError(path, number, "vocab entry must be token<TAB>id")
                token, raw_id = parts
                try:
                    idx = int(raw_id)
                except ValueError:
                    raise BpeModelFormatError(path, number, f"bad id {raw_id!r}")
                if token in vocabulary:
                    raise BpeModelFormatError(path, number, f"duplicate vocabulary entry {token!r}")
                vocabulary[token] = idx
            else:
                raise BpeModelFormatError(path, number, "content outside a section")

        if len(vocabulary) != declared_size:
            raise BpeModelFormatError(
                path, 1, f"header declares {declared_size} tokens, found {len(vocabulary)}"
            )
        try:
            return cls(merges, vocabulary, specials)
        except BpeError as e:
            raise BpeModelFormatError(path, len(lines), str(e))


def _merge_symbols(symbols: List[str], pair: Merge) -> List[str]:
    """Replace every non-overlapping occurrence of pair, left to right."""
    left, right = pair
    merged = []
    i = 0
    while i < len(symbols):
        if i < len(symbols) - 1 and symbols[i] == left and symbols[i + 1] == right:
            merged.append(left + right)
            i += 2
        else:
            merged.append(symbols[i])
            i += 1
    return merged


class BpeTrainer:
    """Learns merges from pooled word frequencies.

    Pair counts are kept incrementally; the best pair comes off a heap keyed
    by (-count, left, right), so ties go to the lexicographically smallest pair.
    """

    def __init__(self, vocab_size: int, specials: Sequence[str] = (),
                 min_frequency: int = 1, word_end_marker: str = WORD_END):
        self.vocab_size = vocab_size
        self.specials = _default_specials(specials)
        self.min_frequency = min_frequency
        self.word_end_marker = word_end_marker

    def count_words(self, sentences: Iterable[str]) -> Counter:
        words: Counter = Counter()
        for sentence in sentences:
            words.update(sentence.split())
        for special in self.specials:
            words.pop(special, None)
        return words

    def train(self, sides: Sequence[Iterable[str]]) -> BpeModel:
        """Train on every provided corpus side pooled together.

        Args:
            sides: Sentence streams; pooling them yields the shared vocabulary

        Returns:
            Trained BpeModel

        Raises:
            BpeTrainingError: If vocab_size is below the character vocabulary size
        """
        word_counts: Counter = Counter()
        for side in sides:
            word_counts.update(self.count_words(side))

        char_counts: Counter = Counter()
        for word, freq in word_counts.items():
            for ch in word:
                char_counts[ch] += freq
        alphabet = sorted(ch for ch, freq in char_counts.items() if freq >= self.min_frequency)

        vocabulary: Dict[str, int] = {}
        for token in self.specials + [self.word_end_marker] + alphabet:
            vocabulary.setdefault(token, len(vocabulary))

        minimum = len(vocabulary)
        if self.vocab_size < minimum:
            raise BpeTrainingError(
                f"vocab_size {self.vocab_size} is too small; minimum is {minimum} "
                f"({len(alphabet)} characters + word-end marker + {len(self.specials)} specials)"
            )

        known = set(alphabet)
        unk = self.specials[0]
        words: List[List[str]] = []
        freqs: List[int] = []
        for word in sorted(word_counts):
            symbols = [ch if ch in known else unk for ch in word]
            symbols.append(self.word_end_marker)
            words.append(symbols)
            freqs.append(word_counts[word])

        merges = self._learn_merges(words, freqs, vocabulary, unk)
        logger.info(
            f"Learned {len(merges)} merges; vocabulary size {len(vocabulary)} "
            f"(requested {self.vocab_size}, base {minimum})"
        )
        return BpeModel(merges, vocabulary, self.specials, self.word_end_marker)

    def _learn_merges(self, words: List[List[str]], freqs: List[int],
                      vocabulary: Dict[str, int], unk: str) -> List[Merge]:
        pair_counts: Dict[Merge, int] = defaultdict(int)
        where: Dict[Merge, Set[int]] = defaultdict(set)

        def pairs_of(symbols: List[str]) -> List[Merge]:
            return [p for p in zip(symbols, symbols[1:]) if unk not in p]

        for idx, symbols in enumerate(words):
            for pair in pairs_of(symbols):
                pair_counts[pair] += freqs[idx]
                where[pair].add(idx)

        heap = [(-count, pair[0], pair[1]) for pair, count in pair_counts.items()]
        heapq.heapify(heap)

        merges: List[Merge] = []
        while len(vocabulary) < self.vocab_size and heap:
            neg_count, left, right = heapq.heappop(heap)
            best = (left, right)
            count = pair_counts.get(best, 0)
            if count <= 0 or -neg_count != count:
                continue

            merges.append(best)
            vocabulary.setdefault(left + right, len(vocabulary))

            touched: Set[Merge] = set()
            for idx in sorted(where.pop(best, ())):
                symbols = words[idx]
                old_pairs = pairs_of(symbols)
                if best not in old_pairs:
                    continue
                new_symbols = _merge_symbols(symbols, best)
                freq = freqs[idx]
                for pair in old_pairs:
                    pair_counts[pair] -= freq
                    touched.add(pair)
                for pair in pairs_of(new_symbols):
                    pair_counts[pair] += freq
                    where[pair].add(idx)
                    touched.add(pair)
                words[idx] = new_symbols

            pair_counts.pop(best, None)
            for pair in touched:
                current = pair_counts.get(pair, 0)
                if current > 0:
                    heapq.heappush(heap, (-current, pair[0], pair[1]))
                else:
                    pair_counts.pop(pair, None)
        return merges


def bpe_train(corpora: Sequence[Iterable[str]], vocab_size: int,
              specials: Sequence[str] = (), min_frequency: int = 1) -> BpeModel:
    """Train a (shared) BPE model on pooled corpus sides."""
    return BpeTrainer(vocab_size, specials, min_frequency).train(corpora)


def bpe_encode(model: BpeModel, text: str) -> TokenSequence:
    return model.encode(text)


def bpe_decode(model: BpeModel, tokens: Sequence[Union[str, int]]) -> str:
    return model.decode(tokens)
