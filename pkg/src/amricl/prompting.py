"""Prompt construction, label normalisation and LLM clients.

A prompt is the instruction block, then each demonstration, then the test
block, joined by the template's block separator. Clients share one
interface: ``send(LlmRequest) -> LlmResponse``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import string
import sys
import threading
import time
import urllib.request
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path
from typing import Optional, Protocol, Sequence, Union

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)

DEFAULT_TEMPLATE = "default_v1.toml"
NULL_SYNONYMS = ("none", "no relation")
_TRIM = string.whitespace + string.punctuation

_FIELDS = {
    "instruction": {"labels", "null"},
    "demo": {"context", "subject", "object", "label"},
    "query": {"context", "subject", "object"},
}


class PromptError(ValueError):
    pass


def _placeholders(template: str) -> set[str]:
    return {name for _, name, _, _ in string.Formatter().parse(template) if name is not None}


@dataclass(frozen=True)
class PromptSpec:
    label_set: tuple[str, ...]
    null_token: str = "NULL"
    instruction: str = ""
    demo_template: str = ""
    query_template: str = ""
    label_separator: str = ", "
    block_separator: str = "\n"
    version: int = 1

    def __post_init__(self):
        object.__setattr__(self, "label_set", tuple(self.label_set))
        if self.null_token in self.label_set:
            raise PromptError(f"null token {self.null_token!r} must not be in the label set")
        if len(set(self.label_set)) != len(self.label_set):
            raise PromptError("duplicate labels in label set")
        for kind, tmpl in (("instruction", self.instruction), ("demo", self.demo_template),
                           ("query", self.query_template)):
            extra = _placeholders(tmpl) - _FIELDS[kind]
            if extra:
                raise PromptError(f"{kind} template has undeclared placeholder(s): {sorted(extra)}")

    @classmethod
    def from_template(cls, label_set: Sequence[str], null_token: str = "NULL",
                      template: Union[str, Path, None] = None) -> "PromptSpec":
        if template is None:
            raw = resources.files("amricl.templates").joinpath(DEFAULT_TEMPLATE).read_text("utf-8")
        else:
            raw = Path(template).read_text("utf-8")
        doc = tomllib.loads(raw)
        return cls(tuple(label_set), null_token, doc["instruction"], doc["demo"], doc["query"],
                   doc.get("label_separator", ", "), doc.get("block_separator", "\n"),
                   int(doc.get("version", 1)))

    def render_label(self, label: Optional[str]) -> str:
        return self.null_token if label is None else label


@dataclass(frozen=True)
class Demonstration:
    context: str
    subject: str
    object: str
    label: Optional[str] = None


def _fill(template: str, kind: str, **values) -> str:
    try:
        return template.format(**values)
    except (KeyError, IndexError) as exc:
        raise PromptError(f"unresolved placeholder in {kind} template: {exc}") from None


def build_prompt(spec: PromptSpec, demos: Sequence[Demonstration], test: Demonstration) -> str:
    blocks = [_fill(spec.instruction, "instruction",
                    labels=spec.label_separator.join(spec.label_set), null=spec.null_token) + "\n"]
    for d in demos:
        if d.label is not None and d.label not in spec.label_set and d.label != spec.null_token:
            raise PromptError(f"demonstration label {d.label!r} is not in the label set")
        blocks.append(_fill(spec.demo_template, "demo", context=d.context, subject=d.subject,
                            object=d.object, label=spec.render_label(d.label)))
    blocks.append(_fill(spec.query_template, "query", context=test.context, subject=test.subject,
                        object=test.object))
    return spec.block_separator.join(blocks)


def normalize_label(raw: str, spec: PromptSpec) -> tuple[str, bool]:
    """Map a completion to ``(label, unparseable)``; unmatched text becomes the null token."""
    folded = {lab.casefold(): lab for lab in spec.label_set}
    for cand in (raw.strip(), raw.strip(_TRIM)):
        c = cand.casefold()
        if c in folded:
            return folded[c], False
        if c == spec.null_token.casefold() or c in NULL_SYNONYMS:
            return spec.null_token, False
    return spec.null_token, True


def prompt_key(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


# --- clients ---------------------------------------------------------------

@dataclass(frozen=True)
class LlmRequest:
    prompt: str
    temperature: float = 0.0
    top_p: float = 1.0
    frequency_penalty: float = 0.0
    presence_penalty: float = 0.0
    best_of: int = 1

    @property
    def key(self) -> str:
        return prompt_key(self.prompt)

    def params(self) -> dict:
        d = asdict(self)
        del d["prompt"]
        return d


@dataclass(frozen=True)
class LlmResponse:
    text: str
    latency: float = 0.0
    backend: str = ""


class LlmClient(Protocol):
    def send(self, request: LlmRequest) -> LlmResponse: ...


class FixtureError(RuntimeError):
    pass


class FixtureMissing(FixtureError):
    def __init__(self, keys: Sequence[str]):
        self.keys = list(keys)
        super().__init__("fixture missing for key(s): " + ", ".join(self.keys))


class FixtureStore:
    """Content-addressed JSONL store ``{key, response, params, created_at}``.

    Later lines override earlier ones for the same key. Reads are lock-free
    once loaded; appends hold a lock.
    """

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._entries: dict[str, dict] = {}
        if self.path.exists():
            self._load()

    def _load(self) -> None:
        with open(self.path, encoding="utf-8") as fh:
            for n, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                    key, response = obj["key"], obj["response"]
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise FixtureError(f"{self.path}:{n}: corrupt store line ({exc})") from None
                if not isinstance(key, str) or not isinstance(response, str):
                    raise FixtureError(f"{self.path}:{n}: corrupt store line (key/response not strings)")
                self._entries[key] = obj

    def __contains__(self, key: str) -> bool:
        return key in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def lookup(self, key: str) -> str:
        try:
            return self._entries[key]["response"]
        except KeyError:
            raise FixtureMissing([key]) from None

    def put(self, key: str, response: str, params: Optional[dict] = None,
            created_at: Optional[str] = None) -> None:
        entry = {"key": key, "response": response, "params": params or {},
                 "created_at": created_at or datetime.now(timezone.utc).isoformat(timespec="seconds")}
        with self._lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")
            self._entries[key] = entry


class ReplayClient:
    """Answers only from a fixture store; a miss is an error, never a call-out."""

    backend = "replay"

    def __init__(self, store: FixtureStore):
        self.store = store

    def missing(self, prompts: Sequence[str]) -> list[str]:
        return sorted({prompt_key(p) for p in prompts if prompt_key(p) not in self.store})

    def send(self, request: LlmRequest) -> LlmResponse:
        return LlmResponse(self.store.lookup(request.key), 0.0, self.backend)


class EchoClient:
    backend = "echo"

    def __init__(self, text: str = "NULL"):
        self.text = text

    def send(self, request: LlmRequest) -> LlmResponse:
        return LlmResponse(self.text, 0.0, self.backend)


class HttpClient:
    """Chat-completions style backend configured from the environment.

    ``LLM_ENDPOINT`` is the full URL, ``LLM_API_KEY`` an optional bearer token
    and ``LLM_MODEL`` the model name. ``max_in_flight`` bounds concurrent
    requests across threads.
    """

    backend = "http"

    def __init__(self, endpoint: Optional[str] = None, api_key: Optional[str] = None,
                 model: Optional[str] = None, max_in_flight: int = 4, timeout: float = 60.0):
        self.endpoint = endpoint or os.environ.get("LLM_ENDPOINT")
        self.api_key = api_key if api_key is not None else os.environ.get("LLM_API_KEY")
        self.model = model or os.environ.get("LLM_MODEL")
        if not self.endpoint or not self.model:
            raise PromptError("HTTP backend needs LLM_ENDPOINT and LLM_MODEL")
        self.timeout = timeout
        self._slots = threading.BoundedSemaphore(max_in_flight)

    def payload(self, request: LlmRequest) -> dict:
        body = {"model": self.model, "messages": [{"role": "user", "content": request.prompt}],
                "temperature": request.temperature, "top_p": request.top_p,
                "frequency_penalty": request.frequency_penalty,
                "presence_penalty": request.presence_penalty}
        if request.best_of != 1:
            body["best_of"] = request.best_of
        return body

    def send(self, request: LlmRequest) -> LlmResponse:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        req = urllib.request.Request(self.endpoint, data=json.dumps(self.payload(request)).encode("utf-8"),
                                     headers=headers, method="POST")
        with self._slots:
            t0 = time.perf_counter()
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                body = json.loads(resp.read().decode("utf-8"))
            latency = time.perf_counter() - t0
        try:
            text = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError):
            raise PromptError(f"unexpected response shape from {self.endpoint}") from None
        return LlmResponse(text, latency, self.backend)


@dataclass
class RecordingClient:
    """Forwards to ``inner`` and writes every response into ``store``."""

    inner: LlmClient
    store: FixtureStore
    backend: str = field(default="record")

    def send(self, request: LlmRequest) -> LlmResponse:
        resp = self.inner.send(request)
        self.store.put(request.key, resp.text, request.params())
        return resp
