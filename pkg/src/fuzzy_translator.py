"""Few-shot translation: retrieve fuzzy matches, build the prompt, ask the backend."""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Sequence, Tuple

from src.completion_service import BackendParams, CompletionService, first_line
from src.corpus import Direction
from src.prompting import PromptSpec, build_prompt
from src.retrieval import MAX_MATCHES, RetrievalIndex, RetrievalMatch, retrieve


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TranslationResult:
    source_text: str
    translation: str
    prompt: str
    matches: Tuple[RetrievalMatch, ...]


def translate_few_shot(index: RetrievalIndex, backend: CompletionService, query: str,
                       params: BackendParams, k: int, direction: Direction) -> Tuple[str, str]:
    """Translate one sentence with up to k fuzzy matches as in-context examples.

    ``k = 0`` gives a zero-shot prompt.

    Returns:
        (translation, prompt_used); the translation is the first completion line, trimmed

    Raises:
        CompletionRetriableError: If the backend keeps timing out or failing transiently
        EmptyCompletionError: If the backend returns no text
    """
    result = _translate(index, backend, query, params, k, direction)
    return result.translation, result.prompt


def _translate(index: RetrievalIndex, backend: CompletionService, query: str,
               params: BackendParams, k: int, direction: Direction) -> TranslationResult:
    matches = retrieve(index, query, k)
    spec = PromptSpec.from_matches(matches, query, direction.source, direction.target)
    prompt = build_prompt(spec)
    logger.debug(f"Prompt for {query!r}:\n{prompt}")
    request = backend.make_request(prompt, query, params)
    translation = first_line(backend.complete(request))
    return TranslationResult(query, translation, prompt, tuple(matches))


class FewShotTranslator:
    """Translates batches of sentences with bounded backend parallelism."""

    def __init__(self, index: RetrievalIndex, backend: CompletionService, direction: Direction,
                 params: BackendParams = BackendParams(), k: int = MAX_MATCHES,
                 concurrency: int = 2):
        """Initialize the translator.

        Args:
            index: Retrieval index over the example pool
            backend: Completion service used for every query
            direction: Direction of the queries
            params: Sampling parameters
            k: Fuzzy matches per prompt (0 for zero-shot)
            concurrency: Maximum simultaneous backend calls
        """
        self.index = index
        self.backend = backend
        self.direction = direction
        self.params = params
        self.k = k
        self.concurrency = max(1, concurrency)

    def translate(self, query: str) -> TranslationResult:
        return _translate(self.index, self.backend, query, self.params, self.k, self.direction)

    def translate_all(self, queries: Sequence[str]) -> List[TranslationResult]:
        """Translate every query, returning results in input order.

        The first failure is raised once all submitted calls have finished.
        """
        if not queries:
            return []
        with ThreadPoolExecutor(max_workers=self.concurrency) as pool:
            results = list(pool.map(self.translate, queries))
        logger.info(f"Translated {len(results)} sentences ({self.direction}, k={self.k})")
        return results
