"""Unit tests for the completion backends."""

import io
import json
import logging
from unittest.mock import Mock, patch

import pytest
import requests

from src.completion_service import (
    BackendParams,
    CompletionRetriableError,
    CompletionService,
    CompletionServiceError,
    EmptyCompletionError,
    first_line,
)


PROMPT = "English: God said\nGe'ez: ወይቤ፡ እግዚአብሔር\nEnglish: And God said\nGe'ez:"
ENDPOINT = "http://localhost:8080/v1/completions"


def http_response(status, body=None):
    response = Mock()
    response.status_code = status
    response.json.return_value = body
    response.text = json.dumps(body)
    return response


def http_service(session, **kwargs):
    return CompletionService(mode="http", endpoint=ENDPOINT, model="test-model",
                             session=session, **kwargs)


def request_for(service, prompt=PROMPT, query="And God said"):
    return service.make_request(prompt, query, BackendParams())


class TestBackendParams:
    """Tests for sampling parameters."""

    def test_defaults(self):
        params = BackendParams()
        assert (params.top_p, params.temperature, params.length_multiplier) == (1.0, 0.3, 5.0)

    def test_output_limit_is_five_times_query_tokens(self):
        query = " ".join(f"w{i}" for i in range(12))
        assert BackendParams().max_output_tokens(query) == 60

    def test_output_limit_rounds_up_and_is_positive(self):
        assert BackendParams(length_multiplier=1.5).max_output_tokens("a b c") == 5
        assert BackendParams().max_output_tokens("") == 1

    def test_request_payload(self):
        service = CompletionService()
        payload = request_for(service).to_payload()
        assert payload == {
            "model": "default",
            "prompt": PROMPT,
            "temperature": 0.3,
            "top_p": 1.0,
            "max_tokens": 15,
        }


class TestSimulatedMode:
    """Tests for the offline backend."""

    def test_answers_with_last_example_target(self):
        service = CompletionService()
        assert service.complete(request_for(service)) == "ወይቤ፡ እግዚአብሔር"

    def test_zero_shot_echoes_query(self):
        service = CompletionService()
        request = request_for(service, prompt="English: And God said\nGe'ez:")
        assert service.complete(request) == "And God said"

    def test_unreadable_prompt_raises_error(self):
        service = CompletionService()
        with pytest.raises(CompletionServiceError, match="cannot read prompt"):
            service.complete(request_for(service, prompt="not a prompt"))


class TestConfiguration:
    """Tests for constructor validation."""

    def test_invalid_mode_raises_error(self):
        with pytest.raises(CompletionServiceError, match="Invalid backend mode"):
            CompletionService(mode="magic")

    def test_http_mode_needs_endpoint(self):
        with pytest.raises(CompletionServiceError, match="requires an endpoint"):
            CompletionService(mode="http")

    def test_bedrock_credential_failure_is_an_error(self):
        from botocore.exceptions import NoCredentialsError

        with patch("boto3.client", side_effect=NoCredentialsError()):
            with pytest.raises(CompletionServiceError, match="Failed to initialize Bedrock client"):
                CompletionService(mode="bedrock", region="us-east-1")


class TestHttpMode:
    """Tests for the HTTP completion client."""

    def test_posts_payload_and_reads_completion(self):
        session = Mock()
        session.post.return_value = http_response(200, {"completion": " ወይቤ\nmore"})
        service = http_service(session, api_key="secret")

        text = service.complete(request_for(service))

        assert text == " ወይቤ\nmore"
        args, kwargs = session.post.call_args
        assert args[0] == ENDPOINT
        assert kwargs["json"]["model"] == "test-model"
        assert kwargs["json"]["max_tokens"] == 15
        assert kwargs["headers"]["Authorization"] == "Bearer secret"
        assert kwargs["timeout"] == 30

    def test_reads_choices_text(self):
        session = Mock()
        session.post.return_value = http_response(200, {"choices": [{"text": "ሰላም"}]})
        service = http_service(session)
        assert service.complete(request_for(service)) == "ሰላም"

    def test_response_without_text_raises_error(self):
        session = Mock()
        session.post.return_value = http_response(200, {"choices": []})
        service = http_service(session)
        with pytest.raises(CompletionServiceError, match="carries no text"):
            service.complete(request_for(service))

    @patch("src.completion_service.time.sleep")
    def test_retries_transient_status_with_backoff(self, mock_sleep, caplog):
        session = Mock()
        session.post.side_effect = [
            http_response(503, {"error": "busy"}),
            http_response(429, {"error": "slow down"}),
            http_response(200, {"completion": "ሰላም"}),
        ]
        service = http_service(session, retry_attempts=3, retry_delay=2)

        with caplog.at_level(logging.WARNING, logger="src.completion_service"):
            text = service.complete(request_for(service))

        assert text == "ሰላም"
        assert session.post.call_count == 3
        assert [c.args[0] for c in mock_sleep.call_args_list] == [2, 4]
        assert "Completion attempt 1/3 failed (status 503)" in caplog.text

    @patch("src.completion_service.time.sleep")
    def test_persistent_timeout_raises_retriable_error(self, mock_sleep, caplog):
        session = Mock()
        session.post.side_effect = requests.Timeout("read timed out")
        service = http_service(session, retry_attempts=3, retry_delay=1)

        with caplog.at_level(logging.ERROR, logger="src.completion_service"):
            with pytest.raises(CompletionRetriableError) as exc_info:
                service.complete(request_for(service))

        assert exc_info.value.status is None
        assert session.post.call_count == 3
        assert mock_sleep.call_count == 2
        assert "Type: CompletionRetriableError" in caplog.text

    @patch("src.completion_service.time.sleep")
    def test_persistent_server_error_keeps_status(self, mock_sleep):
        session = Mock()
        session.post.return_value = http_response(502, {"error": "bad gateway"})
        service = http_service(session, retry_attempts=2)

        with pytest.raises(CompletionRetriableError) as exc_info:
            service.complete(request_for(service))

        assert exc_info.value.status == 502

    @patch("src.completion_service.time.sleep")
    def test_client_error_is_not_retried(self, mock_sleep):
        session = Mock()
        session.post.return_value = http_response(401, {"error": "unauthorized"})
        service = http_service(session)

        with pytest.raises(CompletionServiceError, match="rejected with status 401"):
            service.complete(request_for(service))

        assert session.post.call_count == 1
        mock_sleep.assert_not_called()

    def test_non_json_body_raises_error(self):
        session = Mock()
        response = http_response(200)
        response.json.side_effect = ValueError("Expecting value")
        session.post.return_value = response
        service = http_service(session)

        with pytest.raises(CompletionServiceError, match="not JSON"):
            service.complete(request_for(service))


class TestBedrockMode:
    """Tests for the Bedrock backend with an injected client."""

    def _client(self, body):
        client = Mock()
        client.invoke_model.return_value = {"body": io.BytesIO(json.dumps(body).encode("utf-8"))}
        return client

    def test_reads_generation(self):
        client = self._client({"generation": "ሰላም"})
        service = CompletionService(mode="bedrock", model="meta.llama", bedrock_client=client)

        assert service.complete(request_for(service)) == "ሰላም"
        kwargs = client.invoke_model.call_args.kwargs
        assert kwargs["modelId"] == "meta.llama"
        assert json.loads(kwargs["body"])["top_p"] == 1.0

    def test_reads_outputs_text(self):
        client = self._client({"outputs": [{"text": "ሰላም ለከ"}]})
        service = CompletionService(mode="bedrock", bedrock_client=client)
        assert service.complete(request_for(service)) == "ሰላም ለከ"

    def test_client_failure_raises_error(self, caplog):
        client = Mock()
        client.invoke_model.side_effect = RuntimeError("throttled")
        service = CompletionService(mode="bedrock", bedrock_client=client)

        with caplog.at_level(logging.ERROR, logger="src.completion_service"):
            with pytest.raises(CompletionServiceError, match="Bedrock completion failed"):
                service.complete(request_for(service))
        assert "Type: RuntimeError" in caplog.text


class TestFirstLine:
    """Tests for completion post-processing."""

    @pytest.mark.parametrize("completion,expected", [
        ("ሰላም", "ሰላም"),
        ("  ሰላም ለከ  \nEnglish: next", "ሰላም ለከ"),
        ("\n\n ወይቤ\n", "ወይቤ"),
    ])
    def test_takes_first_nonempty_line(self, completion, expected):
        assert first_line(completion) == expected

    @pytest.mark.parametrize("completion", ["", "   ", "\n\n"])
    def test_empty_completion_raises_error(self, completion):
        with pytest.raises(EmptyCompletionError):
            first_line(completion)
