"""Embedding-similarity retrieval of fuzzy matches over a parallel corpus."""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import requests
from scipy import sparse
from sklearn.feature_extraction.text import HashingVectorizer, TfidfTransformer
from sklearn.metrics.pairwise import cosine_similarity
from sklearn.preprocessing import normalize

from src.corpus import Corpus


logger = logging.getLogger(__name__)

INDEX_FORMAT = "fuzzy-index"
INDEX_VERSION = "v1"

MAX_MATCHES = 10
SIMILARITY_DECIMALS = 12


class RetrievalError(Exception):
    """Base exception for retrieval errors."""
    pass


class IndexFormatError(RetrievalError):
    """Raised when a persisted index cannot be parsed."""

    def __init__(self, path: Union[str, Path], line_number: int, reason: str):
        self.line_number = line_number
        super().__init__(f"{path}:{line_number}: {reason}")


class EmbedderMismatchError(RetrievalError):
    """Raised when an index is loaded with a different embedder than it was built with."""
    pass


class Embedder:
    """Named, versioned text-to-vector function.

    ``embed`` returns one L2-normalized row per text as a CSR matrix; rows for
    texts with no features are all zero.
    """

    name = "embedder"
    version = "0"

    @property
    def identity(self) -> str:
        return f"{self.name}/{self.version}"

    @property
    def dimension(self) -> int:
        raise NotImplementedError

    def fit(self, texts: Sequence[str]) -> "Embedder":
        """Return an embedder ready to embed texts drawn from ``texts``."""
        return self

    def embed(self, texts: Sequence[str]) -> sparse.csr_matrix:
        raise NotImplementedError

    def state(self) -> Dict[str, Any]:
        """JSON-serializable fitted state."""
        return {}

    def from_state(self, state: Dict[str, Any]) -> "Embedder":
        return self


class CharNgramTfidfEmbedder(Embedder):
    """Character 2-4 gram counts hashed into 4096 buckets, IDF-weighted, unit length.

    A nonempty text too short for a 2-gram falls back to its character unigrams.
    """

    name = "char-ngram-tfidf"
    version = "2"

    def __init__(self, n_features: int = 4096, ngram_range: Tuple[int, int] = (2, 4),
                 idf: Optional[np.ndarray] = None):
        self.n_features = n_features
        self.ngram_range = tuple(ngram_range)
        self.idf = np.ones(n_features) if idf is None else np.asarray(idf, dtype=np.float64)
        if self.idf.shape != (n_features,):
            raise RetrievalError(
                f"IDF vector has shape {self.idf.shape}, expected ({n_features},)"
            )
        self._hasher = HashingVectorizer(
            analyzer="char",
            ngram_range=self.ngram_range,
            n_features=n_features,
            alternate_sign=False,
            norm=None,
            lowercase=False,
        )
        self._unigram_hasher = HashingVectorizer(
            analyzer="char",
            ngram_range=(1, 1),
            n_features=n_features,
            alternate_sign=False,
            norm=None,
            lowercase=False,
        )

    @property
    def dimension(self) -> int:
        return self.n_features

    def _counts(self, texts: Sequence[str]) -> sparse.csr_matrix:
        if not texts:
            return sparse.csr_matrix((0, self.n_features), dtype=np.float64)
        counts = self._hasher.transform(list(texts)).tocsr()
        row_sizes = np.diff(counts.indptr)
        empty_rows = [i for i, text in enumerate(texts) if text and row_sizes[i] == 0]
        if not empty_rows:
            return counts
        unigrams = self._unigram_hasher.transform([texts[i] for i in empty_rows])
        # Scatter the fallback rows into their empty slots.
        placement = sparse.csr_matrix(
            (np.ones(len(empty_rows)), (empty_rows, np.arange(len(empty_rows)))),
            shape=(len(texts), len(empty_rows)),
        )
        return (counts + placement @ unigrams).tocsr()

    def fit(self, texts: Sequence[str]) -> "CharNgramTfidfEmbedder":
        if not texts:
            return CharNgramTfidfEmbedder(self.n_features, self.ngram_range)
        transformer = TfidfTransformer(smooth_idf=True).fit(self._counts(texts))
        return CharNgramTfidfEmbedder(self.n_features, self.ngram_range, transformer.idf_)

    def embed(self, texts: Sequence[str]) -> sparse.csr_matrix:
        weighted = self._counts(texts) @ sparse.diags(self.idf)
        return normalize(sparse.csr_matrix(weighted), norm="l2")

    def state(self) -> Dict[str, Any]:
        return {
            "n_features": self.n_features,
            "ngram_range": list(self.ngram_range),
            "idf": [float(value) for value in self.idf],
        }

    def from_state(self, state: Dict[str, Any]) -> "CharNgramTfidfEmbedder":
        try:
            return CharNgramTfidfEmbedder(
                int(state["n_features"]), tuple(state["ngram_range"]), state["idf"]
            )
        except (KeyError, TypeError, ValueError) as e:
            raise RetrievalError(f"Invalid embedder state: {e}")


class HttpEmbedder(Embedder):
    """Adapter for an external embedding service.

    POSTs ``{"model": ..., "input": [...]}`` and reads ``data[i].embedding``.
    """

    version = "1"

    def __init__(self, endpoint: str, model: str, api_key: Optional[str] = None,
                 timeout: float = 30, session: Optional[requests.Session] = None):
        self.endpoint = endpoint
        self.model = model
        self.api_key = api_key
        self.timeout = timeout
        self.session = session or requests.Session()
        self._dimension: Optional[int] = None

    @property
    def name(self) -> str:
        return f"http:{self.model}"

    @property
    def identity(self) -> str:
        return self.name

    @property
    def dimension(self) -> int:
        return self._dimension or 0

    def embed(self, texts: Sequence[str]) -> sparse.csr_matrix:
        if not texts:
            return sparse.csr_matrix((0, self.dimension), dtype=np.float64)

        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            response = self.session.post(
                self.endpoint,
                json={"model": self.model, "input": list(texts)},
                headers=headers,
                timeout=self.timeout,
            )
            response.raise_for_status()
            rows = [item["embedding"] for item in response.json()["data"]]
        except requests.RequestException as e:
            raise RetrievalError(f"Embedding request failed: {e}")
        except (KeyError, TypeError, ValueError) as e:
            raise RetrievalError(f"Malformed embedding response: {e}")

        if len(rows) != len(texts):
            raise RetrievalError(f"Embedding service returned {len(rows)} vectors for {len(texts)} texts")
        matrix = np.asarray(rows, dtype=np.float64)
        self._dimension = matrix.shape[1]
        return normalize(sparse.csr_matrix(matrix), norm="l2")


@dataclass(frozen=True)
class IndexEntry:
    source_text: str
    target_text: str


@dataclass(frozen=True)
class RetrievalMatch:
    source_text: str
    target_text: str
    similarity: float


class RetrievalIndex:
    """Brute-force cosine index over the source side of a corpus. Immutable."""

    def __init__(self, entries: Sequence[IndexEntry], vectors: sparse.csr_matrix,
                 embedder: Embedder):
        if vectors.shape[0] != len(entries):
            raise RetrievalError(
                f"Index has {len(entries)} entries but {vectors.shape[0]} vectors"
            )
        self._entries = tuple(entries)
        self._vectors = sparse.csr_matrix(vectors, copy=True)
        self._vectors.sort_indices()
        self._vectors.data.setflags(write=False)
        self.embedder = embedder

    @property
    def entries(self) -> Tuple[IndexEntry, ...]:
        return self._entries

    @property
    def vectors(self) -> sparse.csr_matrix:
        return self._vectors

    @property
    def embedder_identity(self) -> str:
        return self.embedder.identity

    def __len__(self) -> int:
        return len(self._entries)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RetrievalIndex):
            return NotImplemented
        return (
            self._entries == other._entries
            and self.embedder_identity == other.embedder_identity
            and self._vectors.shape == other._vectors.shape
            and (self._vectors != other._vectors).nnz == 0
        )


def build_index(corpus: Corpus, embedder: Embedder) -> RetrievalIndex:
    """Embed every source sentence of a corpus.

    The embedder is fitted on the corpus sources first; the fitted embedder is
    kept on the index so queries are embedded the same way.
    """
    sources = corpus.sources
    fitted = embedder.fit(sources)
    vectors = fitted.embed(sources)
    entries = [IndexEntry(pair.source_text, pair.target_text) for pair in corpus]
    logger.info(f"Built retrieval index of {len(entries)} entries with {fitted.identity}")
    return RetrievalIndex(entries, vectors, fitted)


def similarities(index: RetrievalIndex, query: str) -> np.ndarray:
    """Cosine similarity of a query against every entry, clipped to [0, 1]."""
    if len(index) == 0:
        return np.zeros(0)
    query_vector = index.embedder.embed([query])
    if query_vector.shape[1] != index.vectors.shape[1]:
        raise RetrievalError(
            f"Query vector has dimension {query_vector.shape[1]}, "
            f"index has {index.vectors.shape[1]}"
        )
    scores = cosine_similarity(query_vector, index.vectors)[0]
    return np.clip(scores, 0.0, 1.0)


def retrieve(index: RetrievalIndex, query: str, k: int = MAX_MATCHES) -> List[RetrievalMatch]:
    """Top-k entries by cosine similarity, most similar first.

    Ties keep index order. Returns fewer than k results only when the index
    holds fewer than k entries.

    Raises:
        RetrievalError: If k is negative or above the match limit
    """
    if k < 0 or k > MAX_MATCHES:
        raise RetrievalError(f"k must be between 0 and {MAX_MATCHES}, got {k}")
    if k == 0 or len(index) == 0:
        return []

    # Rounded so float noise cannot reorder mathematically tied entries.
    scores = np.round(similarities(index, query), SIMILARITY_DECIMALS)
    order = np.argsort(-scores, kind="stable")[:k]
    matches = [
        RetrievalMatch(index.entries[i].source_text, index.entries[i].target_text, float(scores[i]))
        for i in order
    ]
    logger.debug(f"Retrieved {len(matches)} matches, best similarity {matches[0].similarity:.4f}")
    return matches


def save_index(index: RetrievalIndex, path: Union[str, Path]) -> None:
    """Write an index as JSON lines: a header, then one sparse row per entry."""
    path = Path(path)
    header = {
        "format": INDEX_FORMAT,
        "version": INDEX_VERSION,
        "embedder": index.embedder_identity,
        "dimension": int(index.vectors.shape[1]),
        "entries": len(index),
        "state": index.embedder.state(),
    }
    vectors = index.vectors
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(json.dumps(header, ensure_ascii=False, sort_keys=True))
            f.write("\n")
            for row, entry in enumerate(index.entries):
                start, end = vectors.indptr[row], vectors.indptr[row + 1]
                line = {
                    "source": entry.source_text,
                    "target": entry.target_text,
                    "indices": [int(i) for i in vectors.indices[start:end]],
                    "values": [float(v) for v in vectors.data[start:end]],
                }
                f.write(json.dumps(line, ensure_ascii=False, sort_keys=True))
                f.write("\n")
    except OSError as e:
        logger.error(f"Index write failed - Type: {type(e).__name__}, Message: {e}, Filename: {path}")
        raise RetrievalError(f"Failed to write index {path}: {e}")
    logger.info(f"Saved retrieval index ({len(index)} entries) to {path}")


def load_index(path: Union[str, Path], embedder: Embedder) -> RetrievalIndex:
    """Read an index written by ``save_index``.

    Raises:
        EmbedderMismatchError: If the index was built with a different embedder
        IndexFormatError: If the file is malformed
    """
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").split("\n")
    except (OSError, UnicodeDecodeError) as e:
        raise RetrievalError(f"Failed to read index {path}: {e}")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise IndexFormatError(path, 1, "empty file")

    try:
        header = json.loads(lines[0])
        if header.get("format") != INDEX_FORMAT or header.get("version") != INDEX_VERSION:
            raise IndexFormatError(
                path, 1, f"unsupported format {header.get('format')} {header.get('version')}"
            )
        identity = header["embedder"]
        dimension = int(header["dimension"])
        expected = int(header["entries"])
        state = header.get("state", {})
    except (ValueError, KeyError, TypeError, AttributeError) as e:
        raise IndexFormatError(path, 1, f"bad header: {e}")

    if identity != embedder.identity:
        raise EmbedderMismatchError(
            f"Index {path} was built with {identity}, cannot query it with {embedder.identity}"
        )
    fitted = embedder.from_state(state)

    entries: List[IndexEntry] = []
    indptr = [0]
    indices: List[int] = []
    values: List[float] = []
    for number, line in enumerate(lines[1:], start=2):
        try:
            row = json.loads(line)
            entry = IndexEntry(row["source"], row["target"])
            row_indices = [int(i) for i in row["indices"]]
            row_values = [float(v) for v in row["values"]]
        except (ValueError, KeyError, TypeError) as e:
            raise IndexFormatError(path, number, f"bad entry: {e}")
        if len(row_indices) != len(row_values):
            raise IndexFormatError(path, number, "indices and values differ in length")
        if any(i < 0 or i >= dimension for i in row_indices):
            raise IndexFormatError(path, number, "vector index out of range")
        entries.append(entry)
        indices.extend(row_indices)
        values.extend(row_values)
        indptr.append(len(indices))

    if len(entries) != expected:
        raise IndexFormatError(path, len(lines), f"expected {expected} entries, found {len(entries)}")

    vectors = sparse.csr_matrix(
        (np.asarray(values, dtype=np.float64), np.asarray(indices, dtype=np.int32), np.asarray(indptr)),
        shape=(len(entries), dimension),
    )
    logger.info(f"Loaded retrieval index ({len(entries)} entries) from {path}")
    return RetrievalIndex(entries, vectors, fitted)
