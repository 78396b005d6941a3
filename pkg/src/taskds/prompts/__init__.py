"""Versioned prompt templates.

Every template wraps its variable part between ``<<<DOCUMENT`` and
``DOCUMENT>>>`` markers so that offline stand-ins can recover it.
"""

from __future__ import annotations

import hashlib
import re
from functools import lru_cache
from importlib import resources

TEMPLATE_NAMES = ("filter", "analyst", "enrich", "judge", "rerank")

_PAYLOAD_RE = re.compile(r"<<<DOCUMENT\n(.*)\nDOCUMENT>>>", re.S)
_JUDGE_RE = re.compile(
    r"Dataset A name: (?P<name_a>.*)\nDataset A description: (?P<description_a>.*)\n"
    r"Dataset B name: (?P<name_b>.*)\nDataset B description: (?P<description_b>.*)"
)
_CANDIDATE_RE = re.compile(r"^\[(?P<id>[^\]]+)\] ", re.M)


@lru_cache(maxsize=None)
def template(name: str) -> str:
    return resources.files(__name__).joinpath(f"{name}.txt").read_text(encoding="utf-8")


@lru_cache(maxsize=None)
def templates_hash() -> str:
    h = hashlib.sha256()
    for name in TEMPLATE_NAMES:
        h.update(name.encode())
        h.update(b"\0")
        h.update(template(name).encode("utf-8"))
    return h.hexdigest()


def _one_line(text: str) -> str:
    return " ".join(text.split())


def render(name: str, **fields: str) -> str:
    return template(name).format(**fields)


def render_judge(name_a: str, description_a: str, name_b: str, description_b: str) -> str:
    return render(
        "judge",
        name_a=_one_line(name_a),
        description_a=_one_line(description_a),
        name_b=_one_line(name_b),
        description_b=_one_line(description_b),
    )


def render_rerank(query: str, candidates: list[tuple[str, str, str]]) -> str:
    lines = [f"[{cid}] {_one_line(name)}: {_one_line(desc)}" for cid, name, desc in candidates]
    return render("rerank", query=_one_line(query), candidates="\n".join(lines))


def payload(prompt: str) -> str:
    m = _PAYLOAD_RE.search(prompt)
    return m.group(1) if m else prompt


def parse_judge(prompt: str) -> dict[str, str] | None:
    m = _JUDGE_RE.search(payload(prompt))
    return m.groupdict() if m else None


def parse_rerank_candidates(prompt: str) -> list[str]:
    return _CANDIDATE_RE.findall(payload(prompt))
