"""Model-client abstraction: one ``complete`` call per agent step, a shared
call/token tally, an offline deterministic stub and an HTTP adapter for
OpenAI-compatible chat endpoints."""

from __future__ import annotations

import abc
import json
import logging
import math
import os
import re
import threading
import time
import urllib.error
import urllib.request
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Literal

from . import prompts
from .errors import ModelUnavailable

logger = logging.getLogger(__name__)

Contract = Literal["boolean", "json_records", "keyword_list", "verdict", "rerank_list"]
CONTRACTS: tuple[str, ...] = ("boolean", "json_records", "keyword_list", "verdict", "rerank_list")


def estimate_tokens(text: str) -> int:
    return math.ceil(len(text) / 4)


class CallCounter:
    """Thread-safe tally of model calls and estimated tokens per contract."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.calls: Counter[str] = Counter()
        self.prompt_tokens = 0
        self.completion_tokens = 0
        self.failures = 0

    def add(self, contract: str, prompt: str, reply: str) -> None:
        with self._lock:
            self.calls[contract] += 1
            self.prompt_tokens += estimate_tokens(prompt)
            self.completion_tokens += estimate_tokens(reply)

    def add_failure(self) -> None:
        with self._lock:
            self.failures += 1

    @property
    def total(self) -> int:
        return sum(self.calls.values())

    @property
    def tokens(self) -> int:
        return self.prompt_tokens + self.completion_tokens

    def snapshot(self) -> dict[str, int]:
        with self._lock:
            out = {f"calls.{k}": v for k, v in sorted(self.calls.items())}
            out.update(
                calls=sum(self.calls.values()),
                prompt_tokens=self.prompt_tokens,
                completion_tokens=self.completion_tokens,
                failures=self.failures,
            )
            return out


class ModelClient(abc.ABC):
    identity: str = "abstract"

    def __init__(self) -> None:
        self.counter = CallCounter()

    def complete(self, prompt: str, contract: Contract) -> str:
        if contract not in CONTRACTS:
            raise ValueError(f"unknown response contract {contract!r}")
        try:
            reply = self._complete(prompt, contract)
        except ModelUnavailable:
            self.counter.add_failure()
            raise
        self.counter.add(contract, prompt, reply)
        return reply

    @abc.abstractmethod
    def _complete(self, prompt: str, contract: Contract) -> str: ...


# ---------------------------------------------------------------------------
# Deterministic stub

_STOPWORDS = frozenset(
    """a an and are as at be by for from in into is it its of on or that the their this
    to using use used with via we our they these those which while when where than then
    over under between across about such both each other more most some any can will""".split()
)

_MENTION_RE = re.compile(
    r"(?:^|(?<=[.!?] ))(?:[A-Z][^.!?]*?\b)?(?:we|they|authors)\s+"
    r"(?:use|used|adopt|employ|evaluate on|train on|experiment on|rely on)\s+"
    r"(?:the\s+)?(?P<name>[A-Z0-9][^.!?;]*?)\s+dataset\s+(?:for|to)\s+(?P<task>[^.!?;]+)[.!?;]",
    re.I,
)
_TRIGGER_RE = re.compile(r"\bdatasets?\b", re.I)


def stub_relevance(text: str) -> str:
    return "true" if _TRIGGER_RE.search(text) else "false"


def stub_records(text: str) -> str:
    """Pattern-based extraction of '... we use the X dataset for Y.' sentences."""
    out = []
    for m in _MENTION_RE.finditer(text):
        task = " ".join(m.group("task").split())
        out.append(
            {
                "dataset_name": " ".join(m.group("name").split()),
                "dataset_description": "",
                "task_description": task,
                "task_keywords": [],
            }
        )
    return json.dumps(out)


def stub_keywords(text: str) -> str:
    words = re.findall(r"[a-z][a-z0-9\-]+", text.lower())
    seen: list[str] = []
    for w in words:
        if len(w) >= 4 and w not in _STOPWORDS and w not in seen:
            seen.append(w)
    return json.dumps(seen[:5])


def stub_rerank(prompt: str) -> str:
    return json.dumps(prompts.parse_rerank_candidates(prompt))


_DEFAULT_HANDLERS: dict[str, Callable[[str], str]] = {
    "boolean": lambda p: stub_relevance(prompts.payload(p)),
    "json_records": lambda p: stub_records(prompts.payload(p)),
    "keyword_list": lambda p: stub_keywords(prompts.payload(p)),
    "verdict": lambda p: "False",
    "rerank_list": stub_rerank,
}


@dataclass(frozen=True)
class StubRule:
    contract: str
    pattern: re.Pattern[str]
    reply: str

    @classmethod
    def from_dict(cls, data: dict) -> "StubRule":
        reply = data["reply"]
        if not isinstance(reply, str):
            reply = json.dumps(reply)
        contract = data["contract"]
        if contract not in CONTRACTS:
            raise ValueError(f"unknown contract {contract!r} in stub rule")
        return cls(contract, re.compile(data["pattern"], re.S), reply)


class StubModelClient(ModelClient):
    """Offline model stand-in whose reply is a fixed function of the prompt.

    Resolution order per call: the first canned rule for the contract whose
    pattern matches the prompt, then a per-contract handler, then a built-in
    heuristic.
    """

    def __init__(
        self,
        rules: list[StubRule] | None = None,
        handlers: dict[str, Callable[[str], str]] | None = None,
        *,
        latency: float = 0.0,
        identity: str = "stub/deterministic-v1",
    ) -> None:
        super().__init__()
        self.rules = list(rules or [])
        self.handlers = {**_DEFAULT_HANDLERS, **(handlers or {})}
        self.latency = latency
        self.identity = identity

    @classmethod
    def from_directory(cls, path: Path | str, **kwargs) -> "StubModelClient":
        """Load rules from every ``*.json`` file (a list of rule objects) in ``path``."""
        rules: list[StubRule] = []
        for file in sorted(Path(path).glob("*.json")):
            data = json.loads(file.read_text(encoding="utf-8"))
            rules.extend(StubRule.from_dict(item) for item in data)
        return cls(rules, **kwargs)

    def _complete(self, prompt: str, contract: Contract) -> str:
        if self.latency:
            time.sleep(self.latency)
        for rule in self.rules:
            if rule.contract == contract and rule.pattern.search(prompt):
                return rule.reply
        return self.handlers[contract](prompt)


# ---------------------------------------------------------------------------
# HTTP adapter


class OpenAIChatClient(ModelClient):
    """Chat-completions client for any OpenAI-compatible endpoint."""

    def __init__(
        self,
        base_url: str,
        model: str,
        *,
        api_key_env: str = "OPENAI_API_KEY",
        timeout: float = 60.0,
        retries: int = 2,
    ) -> None:
        super().__init__()
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.retries = retries
        self.identity = f"openai-compatible/{model}"

    def _complete(self, prompt: str, contract: Contract) -> str:
        body = json.dumps(
            {
                "model": self.model,
                "temperature": 0,
                "messages": [{"role": "user", "content": prompt}],
            }
        ).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        request = urllib.request.Request(
            f"{self.base_url}/chat/completions", data=body, headers=headers, method="POST"
        )
        last: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                with urllib.request.urlopen(request, timeout=self.timeout) as resp:
                    data = json.loads(resp.read().decode("utf-8"))
                return data["choices"][0]["message"]["content"]
            except (urllib.error.URLError, TimeoutError, OSError, KeyError, IndexError, ValueError) as exc:
                last = exc
                if attempt < self.retries:
                    time.sleep(0.5 * 2**attempt)
        raise ModelUnavailable(f"{self.identity}: {last}") from last
