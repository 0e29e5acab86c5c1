"""Single doorway to language models.

Every completion goes through Gateway.complete so retries, backoff and
audit logging live in one place. Requests are fingerprinted (SHA-256 over
system text, user text and attachment digests) and the mock backend
replays scripted responses keyed by that fingerprint, which is what makes
whole pipeline runs reproducible byte for byte without a network.
"""
from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from typing import Any, Callable


class GatewayError(Exception):
    pass


class Timeout(GatewayError):
    """Transport timed out; retryable."""


class RateLimited(GatewayError):
    """Backend asked us to slow down; retryable."""


class AuthFailure(GatewayError):
    """Credentials rejected; retrying would not help."""


class ProfileUnknown(GatewayError):
    """No backend is registered under the requested profile name."""


class MockScriptMiss(GatewayError):
    """The mock backend has no scripted response for a fingerprint."""


class StructureInvalidAfterRepair(GatewayError):
    """Structured output stayed invalid after the allowed repair rounds."""

    def __init__(self, last_error: Exception, raw_text: str):
        self.last_error = last_error
        self.raw_text = raw_text
        super().__init__(f"structured output invalid after repair: {last_error}")


@dataclass(frozen=True)
class Attachment:
    """Non-text prompt material: kind is one of image_uri, figure_json,
    table_text; payload is the JSON-serializable content."""

    kind: str
    payload: Any

    def digest(self) -> str:
        body = json.dumps(
            {"kind": self.kind, "payload": self.payload},
            sort_keys=True,
            separators=(",", ":"),
            ensure_ascii=False,
        )
        return hashlib.sha256(body.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class PromptRequest:
    model_profile: str
    system: str
    user: str
    attachments: tuple[Attachment, ...] = ()
    temperature: float = 0.0
    max_output_tokens: int = 2048


@dataclass(frozen=True)
class CompletionResponse:
    text: str
    model_profile: str
    usage: dict
    latency_ms: float


def request_fingerprint(request: PromptRequest) -> str:
    """Stable hex id of what the model will actually see: system text,
    user text and attachment digests. Profile and sampling knobs are
    excluded so one script drives any profile."""
    body = json.dumps(
        {
            "system": request.system,
            "user": request.user,
            "attachments": [a.digest() for a in request.attachments],
        },
        sort_keys=True,
        separators=(",", ":"),
        ensure_ascii=False,
    )
    return hashlib.sha256(body.encode("utf-8")).hexdigest()


def extract_json_payload(text: str) -> Any:
    """Parse a model reply as JSON, tolerating markdown code fences."""
    cleaned = text.strip()
    if cleaned.startswith("```"):
        first_newline = cleaned.find("\n")
        if first_newline != -1:
            cleaned = cleaned[first_newline + 1 :]
        if cleaned.rstrip().endswith("```"):
            cleaned = cleaned.rstrip()[:-3]
    return json.loads(cleaned)


_MOCK_ERRORS: dict[str, type[GatewayError]] = {
    "timeout": Timeout,
    "rate_limited": RateLimited,
    "auth": AuthFailure,
}


class MockBackend:
    """Scripted backend. The script maps request fingerprints to one
    response or to an ordered outcome sequence (for retry paths); the
    last outcome of a sequence repeats once consumed. Any unscripted
    fingerprint raises MockScriptMiss with enough context to fix the
    script."""

    def __init__(self, script: list[dict] | None = None):
        self._outcomes: dict[str, list[dict]] = {}
        self._cursor: dict[str, int] = {}
        for entry in script or []:
            self.add_entry(entry)

    def add_entry(self, entry: dict) -> None:
        fingerprint = entry.get("fingerprint")
        if not isinstance(fingerprint, str) or not fingerprint:
            raise ValueError("script entry missing fingerprint")
        if "response_text" in entry:
            outcomes = [{"text": entry["response_text"]}]
        elif "responses" in entry:
            outcomes = list(entry["responses"])
            if not outcomes:
                raise ValueError(f"script entry {fingerprint[:12]} has empty responses")
        else:
            raise ValueError(f"script entry {fingerprint[:12]} has no response_text or responses")
        for outcome in outcomes:
            if "text" not in outcome and outcome.get("error") not in _MOCK_ERRORS:
                raise ValueError(f"script entry {fingerprint[:12]} has a malformed outcome")
        if fingerprint in self._outcomes:
            raise ValueError(f"duplicate script entry for fingerprint {fingerprint[:12]}")
        self._outcomes[fingerprint] = outcomes
        self._cursor[fingerprint] = 0

    @classmethod
    def from_file(cls, path: str) -> "MockBackend":
        with open(path, "r", encoding="utf-8") as fh:
            script = json.load(fh)
        if not isinstance(script, list):
            raise ValueError("mock script must be a JSON list")
        return cls(script)

    def complete_raw(self, request: PromptRequest) -> str:
        fingerprint = request_fingerprint(request)
        outcomes = self._outcomes.get(fingerprint)
        if outcomes is None:
            preview = request.user[:200].replace("\n", "\\n")
            raise MockScriptMiss(
                f"no scripted response for fingerprint {fingerprint} "
                f"(system {request.system[:60]!r}, user starts {preview!r})"
            )
        cursor = self._cursor[fingerprint]
        outcome = outcomes[min(cursor, len(outcomes) - 1)]
        self._cursor[fingerprint] = cursor + 1
        if "error" in outcome:
            raise _MOCK_ERRORS[outcome["error"]](f"scripted {outcome['error']}")
        return outcome["text"]


class HttpBackend:
    """Minimal JSON-over-HTTP backend. POSTs the request fields, expects
    ``{"text": ...}`` back. Status codes map to typed errors so the
    gateway's retry policy can distinguish transient from fatal."""

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key: str | None = None,
        session: Any | None = None,
        timeout: float = 120.0,
    ):
        import requests

        self.endpoint = endpoint
        self.model = model
        self.api_key = api_key
        self.session = session if session is not None else requests.Session()
        self.timeout = timeout

    def complete_raw(self, request: PromptRequest) -> str:
        import requests

        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        body = {
            "model": self.model,
            "system": request.system,
            "user": request.user,
            "temperature": request.temperature,
            "max_output_tokens": request.max_output_tokens,
            "attachments": [
                {"kind": a.kind, "payload": a.payload} for a in request.attachments
            ],
        }
        try:
            resp = self.session.post(
                self.endpoint, json=body, headers=headers, timeout=self.timeout
            )
        except requests.Timeout as exc:
            raise Timeout(str(exc)) from exc
        except requests.RequestException as exc:
            raise Timeout(f"transport failure: {exc}") from exc
        if resp.status_code == 429:
            raise RateLimited("backend returned 429")
        if resp.status_code in (401, 403):
            raise AuthFailure(f"backend returned {resp.status_code}")
        if resp.status_code >= 500:
            raise Timeout(f"backend returned {resp.status_code}")
        if resp.status_code != 200:
            raise GatewayError(f"backend returned {resp.status_code}: {resp.text[:200]}")
        payload = resp.json()
        if "text" not in payload:
            raise GatewayError("backend reply missing text")
        return str(payload["text"])


_RETRYABLE = (Timeout, RateLimited)


@dataclass
class AuditLog:
    """Append-only record of every gateway call."""

    entries: list[dict] = field(default_factory=list)

    def record(self, entry: dict) -> None:
        self.entries.append(entry)

    def write_jsonl(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for entry in self.entries:
                fh.write(json.dumps(entry, sort_keys=True, separators=(",", ":")))
                fh.write("\n")


@dataclass(frozen=True)
class StructuredResult:
    value: Any
    raw_text: str
    repairs: int


class Gateway:
    """Routes requests to named backend profiles with uniform retry,
    backoff and audit behavior."""

    def __init__(
        self,
        profiles: dict[str, Any],
        retries: int = 2,
        backoff_base: float = 0.1,
        sleep_fn: Callable[[float], None] = time.sleep,
        audit: AuditLog | None = None,
        clock: Callable[[], float] = time.monotonic,
    ):
        self.profiles = dict(profiles)
        self.retries = retries
        self.backoff_base = backoff_base
        self.sleep_fn = sleep_fn
        self.audit = audit if audit is not None else AuditLog()
        self.clock = clock

    def complete(self, request: PromptRequest) -> CompletionResponse:
        """Run one completion with retry on transient failures. Backoff
        delays are backoff_base * 2^attempt, so they never decrease."""
        backend = self.profiles.get(request.model_profile)
        if backend is None:
            raise ProfileUnknown(
                f"profile {request.model_profile!r}; known: {sorted(self.profiles)}"
            )
        fingerprint = request_fingerprint(request)
        started = self.clock()
        attempts = 0
        while True:
            try:
                text = backend.complete_raw(request)
                break
            except _RETRYABLE as exc:
                attempts += 1
                if attempts > self.retries:
                    self.audit.record(
                        {
                            "profile": request.model_profile,
                            "fingerprint": fingerprint,
                            "retries": attempts - 1,
                            "outcome": type(exc).__name__,
                        }
                    )
                    raise
                self.sleep_fn(self.backoff_base * (2 ** (attempts - 1)))
        latency_ms = (self.clock() - started) * 1000.0
        self.audit.record(
            {
                "profile": request.model_profile,
                "fingerprint": fingerprint,
                "retries": attempts,
                "outcome": "ok",
                "response_digest": hashlib.sha256(text.encode("utf-8")).hexdigest(),
            }
        )
        return CompletionResponse(
            text=text,
            model_profile=request.model_profile,
            usage={"attempts": attempts + 1},
            latency_ms=latency_ms,
        )

    def complete_structured(
        self, request: PromptRequest, target, max_repairs: int = 2
    ) -> StructuredResult:
        """Completion that must parse as JSON and satisfy ``target.validate``.

        On parse or validation failure the model is re-asked with the error
        quoted, up to max_repairs times, then StructureInvalidAfterRepair.
        """
        current = request
        repairs = 0
        while True:
            response = self.complete(current)
            try:
                payload = extract_json_payload(response.text)
                value = target.validate(payload)
                return StructuredResult(value=value, raw_text=response.text, repairs=repairs)
            except (ValueError, KeyError, TypeError) as exc:
                if repairs >= max_repairs:
                    raise StructureInvalidAfterRepair(exc, response.text) from exc
                repairs += 1
                current = PromptRequest(
                    model_profile=request.model_profile,
                    system=request.system,
                    user=(
                        request.user
                        + "\n\nYour previous reply was rejected: "
                        + str(exc)
                        + "\nReply again with only valid JSON in the requested shape."
                    ),
                    attachments=request.attachments,
                    temperature=request.temperature,
                    max_output_tokens=request.max_output_tokens,
                )
