"""Chat-completions client shared by the generation, teacher and judge endpoints."""
from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence, TypeVar

import requests

from ..bridge import AssembledPrompt

log = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


class EndpointError(RuntimeError):
    """Base class for endpoint failures; ``attempts`` counts HTTP calls made."""

    exit_code = 3

    def __init__(self, message: str, attempts: int = 0):
        super().__init__(message)
        self.attempts = attempts


class EndpointTimeout(EndpointError):
    pass


class EndpointAuthError(EndpointError):
    pass


class TransportError(EndpointError):
    pass


class RetryExhausted(EndpointError):
    pass


class MalformedResponse(EndpointError):
    pass


class RequestRejected(EndpointError):
    """Non-retryable 4xx other than authentication."""


@dataclass(frozen=True)
class GenerationConfig:
    endpoint_url: str
    model_id: str
    temperature: float = 0.2
    max_tokens: int = 1024
    seed: int | None = None
    timeout_s: float = 60.0
    max_retries: int = 3
    max_in_flight: int = 4
    api_key_env: str = "PIPELINE_API_KEY"
    backoff_s: float = 0.5

    def __post_init__(self):
        if not self.endpoint_url:
            raise ValueError("endpoint_url is required")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")
        if self.timeout_s <= 0:
            raise ValueError("timeout_s must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "GenerationConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown endpoint settings: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ChatResponse:
    text: str
    attempts: int
    request_sha256: str
    response_sha256: str

    @property
    def retries(self) -> int:
        return self.attempts - 1


class CallLog:
    """Append-only JSON-lines record of every request/response pair."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def write(self, entry: dict) -> None:
        line = json.dumps(entry, ensure_ascii=False, sort_keys=True)
        with self._lock, self.path.open("a", encoding="utf-8") as fh:
            fh.write(line + "\n")


def _sha256(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


Messages = list[dict]


def to_messages(prompt: AssembledPrompt | str | Messages) -> Messages:
    if isinstance(prompt, AssembledPrompt):
        return [
            {"role": "system", "content": prompt.system_preamble},
            {"role": "user", "content": prompt.body},
        ]
    if isinstance(prompt, str):
        return [{"role": "user", "content": prompt}]
    return list(prompt)


def build_payload(messages: Messages, cfg: GenerationConfig) -> dict:
    payload = {
        "model": cfg.model_id,
        "messages": messages,
        "temperature": cfg.temperature,
        "max_tokens": cfg.max_tokens,
    }
    if cfg.seed is not None:
        payload["seed"] = cfg.seed
    return payload


def _content(data) -> str:
    try:
        content = data["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError):
        raise MalformedResponse(f"response lacks choices[0].message.content: {str(data)[:300]}") from None
    if not isinstance(content, str):
        raise MalformedResponse("message content is not a string")
    return content


def complete(
    prompt: AssembledPrompt | str | Messages,
    cfg: GenerationConfig,
    call_log: CallLog | None = None,
    session: requests.Session | None = None,
    sleep: Callable[[float], None] = time.sleep,
) -> ChatResponse:
    """POST one chat request, retrying transport failures, timeouts, 429 and 5xx."""
    payload = build_payload(to_messages(prompt), cfg)
    body = json.dumps(payload, ensure_ascii=False, sort_keys=True)
    request_hash = _sha256(body)
    headers = {"Content-Type": "application/json"}
    key = os.environ.get(cfg.api_key_env)
    if key:
        headers["Authorization"] = f"Bearer {key}"
    post = session.post if session is not None else requests.post

    last: EndpointError | None = None
    for attempt in range(1, cfg.max_retries + 2):
        if attempt > 1:
            sleep(cfg.backoff_s * 2 ** (attempt - 2))
        try:
            resp = post(cfg.endpoint_url, data=body.encode("utf-8"), headers=headers, timeout=cfg.timeout_s)
        except requests.Timeout as exc:
            last = EndpointTimeout(f"{cfg.endpoint_url} timed out after {cfg.timeout_s}s: {exc}", attempt)
            continue
        except requests.RequestException as exc:
            last = TransportError(f"cannot reach {cfg.endpoint_url}: {exc}", attempt)
            continue

        if resp.status_code in (401, 403):
            raise EndpointAuthError(f"HTTP {resp.status_code} from {cfg.endpoint_url}: {resp.text[:300]}", attempt)
        if resp.status_code == 429 or resp.status_code >= 500:
            last = RetryExhausted(f"HTTP {resp.status_code} from {cfg.endpoint_url}: {resp.text[:300]}", attempt)
            log.warning("attempt %d: HTTP %d from %s", attempt, resp.status_code, cfg.endpoint_url)
            continue
        if resp.status_code >= 400:
            raise RequestRejected(f"HTTP {resp.status_code} from {cfg.endpoint_url}: {resp.text[:300]}", attempt)
        try:
            data = resp.json()
        except ValueError:
            raise MalformedResponse(f"non-JSON body from {cfg.endpoint_url}: {resp.text[:300]}", attempt) from None
        try:
            text = _content(data)
        except MalformedResponse as exc:
            exc.attempts = attempt
            raise

        out = ChatResponse(text, attempt, request_hash, _sha256(text))
        log.info("chat %s model=%s attempts=%d request=%s response=%s", cfg.endpoint_url, cfg.model_id,
                 attempt, request_hash[:12], out.response_sha256[:12])
        if call_log is not None:
            call_log.write({
                "endpoint": cfg.endpoint_url,
                "model": cfg.model_id,
                "attempts": attempt,
                "request_sha256": request_hash,
                "response_sha256": out.response_sha256,
                "request": payload,
                "response": text,
            })
        return out

    assert last is not None
    last.attempts = cfg.max_retries + 1
    if isinstance(last, RetryExhausted):
        last.args = (f"{last.args[0]} (gave up after {last.attempts} attempts)",)
    raise last


def chat_complete(prompt: AssembledPrompt | str | Messages, cfg: GenerationConfig, **kwargs) -> str:
    return complete(prompt, cfg, **kwargs).text


def map_bounded(fn: Callable[[T], R], items: Sequence[T] | Iterable[T], max_in_flight: int) -> list[R]:
    """Apply ``fn`` with at most ``max_in_flight`` concurrent calls; results keep input order."""
    items = list(items)
    if max_in_flight <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
        return list(pool.map(fn, items))
