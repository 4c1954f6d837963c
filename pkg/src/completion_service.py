"""Completion backends for few-shot translation."""

import json
import logging
import math
import time
from dataclasses import dataclass
from typing import Any, Dict, Optional

import requests

from src.prompting import PromptError, parse_prompt


logger = logging.getLogger(__name__)

RETRIABLE_STATUS = frozenset({429, 500, 502, 503, 504})


class CompletionServiceError(Exception):
    """Raised when the completion backend fails."""
    pass


class CompletionRetriableError(CompletionServiceError):
    """Raised when a transient failure persists after all retries.

    ``status`` is the last HTTP status, or None for timeouts and connection errors.
    """

    def __init__(self, message: str, status: Optional[int] = None):
        self.status = status
        super().__init__(message)


class EmptyCompletionError(CompletionServiceError):
    """Raised when the backend returns no usable text."""
    pass


@dataclass(frozen=True)
class BackendParams:
    """Sampling parameters sent with every completion request."""

    top_p: float = 1.0
    temperature: float = 0.3
    length_multiplier: float = 5.0

    def max_output_tokens(self, query_source: str) -> int:
        """Output token limit as a multiple of the query's whitespace token count."""
        return max(1, math.ceil(self.length_multiplier * len(query_source.split())))


@dataclass(frozen=True)
class CompletionRequest:
    model: str
    prompt: str
    temperature: float
    top_p: float
    max_tokens: int

    def to_payload(self) -> Dict[str, Any]:
        return {
            "model": self.model,
            "prompt": self.prompt,
            "temperature": self.temperature,
            "top_p": self.top_p,
            "max_tokens": self.max_tokens,
        }


class CompletionService:
    """Sends prompts to a completion backend.

    Supports three modes:
    - simulated: Offline; answers with the target side of the most similar example
    - http: JSON POST to a completion endpoint (requests)
    - bedrock: Amazon Bedrock ``invoke_model`` (requires boto3 and AWS credentials)
    """

    def __init__(
        self,
        mode: str = "simulated",
        endpoint: Optional[str] = None,
        model: str = "default",
        region: Optional[str] = None,
        api_key: Optional[str] = None,
        timeout: float = 30,
        retry_attempts: int = 3,
        retry_delay: float = 2,
        session: Optional[requests.Session] = None,
        bedrock_client: Any = None,
    ):
        """Initialize the completion service.

        Args:
            mode: Operating mode ("simulated", "http" or "bedrock")
            endpoint: Completion URL (required for http mode)
            model: Model identifier sent with each request
            region: AWS region (bedrock mode)
            api_key: Bearer credential for http mode
            timeout: Per-request timeout in seconds
            retry_attempts: Attempts before a transient failure is raised
            retry_delay: Base delay in seconds; doubles after every failed attempt
            session: Optional requests session (http mode)
            bedrock_client: Optional pre-built bedrock-runtime client

        Raises:
            CompletionServiceError: If the mode is unknown or its settings are incomplete
        """
        if mode not in ("simulated", "http", "bedrock"):
            raise CompletionServiceError(f"Invalid backend mode: {mode}")
        if mode == "http" and not endpoint:
            raise CompletionServiceError("http mode requires an endpoint")

        self.mode = mode
        self.endpoint = endpoint
        self.model = model
        self.region = region
        self.api_key = api_key
        self.timeout = timeout
        self.retry_attempts = max(1, retry_attempts)
        self.retry_delay = retry_delay
        self._session = session
        self._bedrock_client = bedrock_client

        if self.mode == "bedrock" and self._bedrock_client is None:
            self._initialize_bedrock()

    def _initialize_bedrock(self) -> None:
        """Create the Bedrock client; missing credentials are an error, not a fallback."""
        try:
            import boto3
            from botocore.exceptions import BotoCoreError, NoCredentialsError
        except ImportError:
            raise CompletionServiceError("boto3 is not installed; bedrock mode is unavailable")

        try:
            self._bedrock_client = boto3.client(
                service_name="bedrock-runtime",
                region_name=self.region,
            )
            logger.info(f"Bedrock client initialized for region {self.region}")
        except (NoCredentialsError, BotoCoreError) as e:
            raise CompletionServiceError(f"Failed to initialize Bedrock client: {e}")

    @property
    def session(self) -> requests.Session:
        if self._session is None:
            self._session = requests.Session()
        return self._session

    def make_request(self, prompt: str, query_source: str, params: BackendParams) -> CompletionRequest:
        return CompletionRequest(
            model=self.model,
            prompt=prompt,
            temperature=params.temperature,
            top_p=params.top_p,
            max_tokens=params.max_output_tokens(query_source),
        )

    def complete(self, request: CompletionRequest) -> str:
        """Return the raw completion text for a request.

        Raises:
            CompletionRetriableError: If a transient failure outlasts the retries
            CompletionServiceError: For any other backend failure
        """
        if self.mode == "simulated":
            return self._simulate(request)
        if self.mode == "http":
            return self._http_complete(request)
        return self._bedrock_complete(request)

    def _simulate(self, request: CompletionRequest) -> str:
        try:
            examples, query = parse_prompt(request.prompt)
        except PromptError as e:
            raise CompletionServiceError(f"Simulated backend cannot read prompt: {e}")
        # The most similar example sits last; zero-shot prompts echo the query.
        return examples[-1][1] if examples else query

    def _http_complete(self, request: CompletionRequest) -> str:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"

        for attempt in range(self.retry_attempts):
            status: Optional[int] = None
            try:
                response = self.session.post(
                    self.endpoint,
                    json=request.to_payload(),
                    headers=headers,
                    timeout=self.timeout,
                )
                status = response.status_code
                if status not in RETRIABLE_STATUS:
                    if status >= 400:
                        logger.error(
                            f"Completion request rejected - Type: HTTPError, "
                            f"Message: status {status}, Endpoint: {self.endpoint}"
                        )
                        raise CompletionServiceError(
                            f"Completion request rejected with status {status}: {response.text[:200]}"
                        )
                    return self._extract_text(response.json())
                reason = f"status {status}"
            except (requests.Timeout, requests.ConnectionError) as e:
                reason = f"{type(e).__name__}: {e}"
            except ValueError as e:
                raise CompletionServiceError(f"Completion response is not JSON: {e}")

            if attempt < self.retry_attempts - 1:
                delay = self.retry_delay * (2 ** attempt)
                logger.warning(
                    f"Completion attempt {attempt + 1}/{self.retry_attempts} failed ({reason}), "
                    f"retrying in {delay}s..."
                )
                time.sleep(delay)
            else:
                logger.error(
                    f"Completion failed after {self.retry_attempts} attempts - "
                    f"Type: CompletionRetriableError, Message: {reason}, Endpoint: {self.endpoint}"
                )
                raise CompletionRetriableError(
                    f"Completion failed after {self.retry_attempts} attempts: {reason}", status
                )
        raise CompletionRetriableError("Completion failed without an attempt")

    @staticmethod
    def _extract_text(body: Any) -> str:
        """Completion text from ``completion`` or ``choices[0].text``."""
        if isinstance(body, dict):
            if isinstance(body.get("completion"), str):
                return body["completion"]
            choices = body.get("choices")
            if isinstance(choices, list) and choices and isinstance(choices[0], dict):
                text = choices[0].get("text")
                if isinstance(text, str):
                    return text
        raise CompletionServiceError("Completion response carries no text")

    def _bedrock_complete(self, request: CompletionRequest) -> str:
        body = json.dumps({
            "prompt": request.prompt,
            "max_tokens": request.max_tokens,
            "temperature": request.temperature,
            "top_p": request.top_p,
        })
        try:
            response = self._bedrock_client.invoke_model(modelId=self.model, body=body)
            response_body = json.loads(response["body"].read())
        except Exception as e:
            logger.error(f"Bedrock API error - Type: {type(e).__name__}, Message: {e}, Model: {self.model}")
            raise CompletionServiceError(f"Bedrock completion failed: {e}")

        if isinstance(response_body, dict) and isinstance(response_body.get("generation"), str):
            return response_body["generation"]
        if isinstance(response_body, dict) and isinstance(response_body.get("outputs"), list):
            outputs = response_body["outputs"]
            if outputs and isinstance(outputs[0], dict) and isinstance(outputs[0].get("text"), str):
                return outputs[0]["text"]
        return self._extract_text(response_body)


def first_line(completion: str) -> str:
    """The first non-empty line of a completion, trimmed.

    Raises:
        EmptyCompletionError: If the completion holds no text
    """
    text = completion.lstrip()
    line = text.split("\n", 1)[0].strip() if text else ""
    if not line:
        raise EmptyCompletionError("Backend returned an empty completion")
    return line
