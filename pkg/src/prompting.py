"""Few-shot prompt assembly from retrieved fuzzy matches."""

import logging
from dataclasses import dataclass
from typing import List, Sequence, Tuple

from src.corpus import LanguageTag
from src.retrieval import MAX_MATCHES, RetrievalMatch


logger = logging.getLogger(__name__)

TEMPLATE_ID = "fuzzy-fewshot v1"


class PromptError(Exception):
    """Raised when a prompt cannot be built or parsed."""
    pass


@dataclass(frozen=True)
class PromptSpec:
    """Examples ordered most similar first, plus the sentence to translate."""

    examples: Tuple[Tuple[str, str], ...]
    query_source: str
    source_lang: LanguageTag
    target_lang: LanguageTag
    template: str = TEMPLATE_ID

    def __post_init__(self):
        object.__setattr__(self, "examples", tuple(tuple(pair) for pair in self.examples))
        if len(self.examples) > MAX_MATCHES:
            raise PromptError(f"At most {MAX_MATCHES} examples allowed, got {len(self.examples)}")
        if self.template != TEMPLATE_ID:
            raise PromptError(f"Unsupported prompt template: {self.template}")
        texts = [self.query_source] + [text for pair in self.examples for text in pair]
        for text in texts:
            if "\n" in text or "\r" in text:
                raise PromptError(f"Prompt text contains a newline: {text!r}")

    @classmethod
    def from_matches(cls, matches: Sequence[RetrievalMatch], query_source: str,
                     source_lang: LanguageTag, target_lang: LanguageTag) -> "PromptSpec":
        examples = tuple((m.source_text, m.target_text) for m in matches)
        return cls(examples, query_source, source_lang, target_lang)


def build_prompt(spec: PromptSpec) -> str:
    """Render a prompt.

    Each example is a source line followed by a target line, most similar
    example last. The query line and a bare target-language cue close the
    prompt; there is no trailing newline.
    """
    source_name = spec.source_lang.name
    target_name = spec.target_lang.name
    lines: List[str] = []
    for source_text, target_text in reversed(spec.examples):
        lines.append(f"{source_name}: {source_text}")
        lines.append(f"{target_name}: {target_text}")
    lines.append(f"{source_name}: {spec.query_source}")
    lines.append(f"{target_name}:")
    return "\n".join(lines)


def parse_prompt(prompt: str) -> Tuple[List[Tuple[str, str]], str]:
    """Recover (examples in prompt order, query) from a rendered prompt.

    Raises:
        PromptError: If the text does not follow the template
    """
    lines = prompt.split("\n")
    if len(lines) < 2 or len(lines) % 2 != 0 or not lines[-1].endswith(":"):
        raise PromptError("Prompt does not follow the few-shot template")

    def text_of(line: str) -> str:
        name, separator, text = line.partition(": ")
        if not separator:
            raise PromptError(f"Malformed prompt line: {line!r}")
        return text

    body = [text_of(line) for line in lines[:-1]]
    examples = [(body[i], body[i + 1]) for i in range(0, len(body) - 1, 2)]
    return examples, body[-1]
