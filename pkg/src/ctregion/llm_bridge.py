"""HTTP client for the text-generation endpoint.

The endpoint contract is a single POST: the request body carries the
rendered prompt and a completion length cap, the response body is JSON
with a "text" field. Server errors and transport failures are retried
with exponential backoff; client errors (4xx) are not, since resending
the same bad request cannot help.

The API key is read from the environment on every request and is never
accepted as an argument, written to disk, or logged.
"""

from __future__ import annotations

import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import requests

from .errors import EmptyCompletion, EndpointError, EndpointTimeout, HttpError

API_KEY_ENV = "CTREGION_API_KEY"

log = logging.getLogger("ctregion.llm")


@dataclass
class EndpointConfig:
    url: str
    timeout: float = 30.0
    retries: int = 3  # total attempts, not re-tries after the first
    backoff_base: float = 1.0  # seconds; 0 disables sleeping (tests)
    max_new_tokens: int = 512
    concurrency: int = 1

    def validate(self) -> None:
        if self.retries < 1:
            raise ValueError("retries must be at least 1")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.concurrency < 1:
            raise ValueError("concurrency must be at least 1")


def _redact(message: str) -> str:
    key = os.environ.get(API_KEY_ENV)
    if key:
        message = message.replace(key, "***")
    return message


def _headers() -> dict[str, str]:
    headers = {"Content-Type": "application/json"}
    key = os.environ.get(API_KEY_ENV)
    if key:
        headers["Authorization"] = f"Bearer {key}"
    return headers


def _extract_text(resp) -> str:
    try:
        obj = resp.json()
    except (ValueError, json.JSONDecodeError) as exc:
        raise EndpointError(f"endpoint returned non-JSON body: {exc}") from exc
    if not isinstance(obj, dict) or not isinstance(obj.get("text"), str):
        raise EndpointError("endpoint response lacks a string 'text' field")
    text = obj["text"].strip()
    if not text:
        raise EmptyCompletion("endpoint returned an empty completion")
    return text


def generate_region_report(prompt: str, config: EndpointConfig) -> str:
    """POST the prompt, return the completion text.

    Retries transport failures and 5xx responses up to config.retries
    attempts, sleeping backoff_base * 2^(attempt-1) seconds in between.
    """
    config.validate()
    payload = {"prompt": prompt, "max_new_tokens": config.max_new_tokens}
    last_exc: EndpointError | None = None
    for attempt in range(1, config.retries + 1):
        try:
            resp = requests.post(
                config.url, json=payload, headers=_headers(), timeout=config.timeout
            )
        except requests.Timeout as exc:
            last_exc = EndpointTimeout(_redact(f"timeout after {config.timeout}s: {exc}"))
            log.warning("attempt %d/%d timed out", attempt, config.retries)
        except requests.RequestException as exc:
            last_exc = EndpointError(_redact(f"request failed: {exc}"))
            log.warning("attempt %d/%d failed: %s", attempt, config.retries, _redact(str(exc)))
        else:
            status = resp.status_code
            if status >= 500:
                last_exc = HttpError(status, attempt)
                log.warning("attempt %d/%d got HTTP %d", attempt, config.retries, status)
            elif status >= 400:
                raise HttpError(status, attempt)
            else:
                return _extract_text(resp)
        if attempt < config.retries and config.backoff_base > 0:
            time.sleep(config.backoff_base * (2 ** (attempt - 1)))
    assert last_exc is not None
    raise last_exc


def generate_all(prompts: list[str], config: EndpointConfig) -> list[str]:
    """Generate completions for several prompts, order preserved.

    With concurrency > 1 requests run on a thread pool; failures propagate
    as soon as results are collected.
    """
    config.validate()
    if config.concurrency == 1 or len(prompts) <= 1:
        return [generate_region_report(p, config) for p in prompts]
    with ThreadPoolExecutor(max_workers=config.concurrency) as pool:
        futures = [pool.submit(generate_region_report, p, config) for p in prompts]
        return [f.result() for f in futures]
