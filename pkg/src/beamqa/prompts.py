"""The five prompt templates and the parsers that turn raw completions into
typed values (ranked question lists, confidence scores)."""

from __future__ import annotations

import re
import threading
from importlib import resources
from pathlib import Path
from typing import Sequence

# (query, evidence_text) pairs; the reasoning history a prompt is built over.
HistoryPairs = Sequence[tuple[str, str]]

TEMPLATE_NAMES = ("answer", "ask", "summarize", "genread", "score")

_template_dir: Path | None = None
_cache: dict[tuple[str | None, str], str] = {}
_cache_lock = threading.Lock()


class ScoreParseError(ValueError):
    """Raised when a completion contains no numeric confidence."""


def set_template_dir(path: str | Path | None) -> None:
    """Override where templates are read from; None restores the embedded ones."""
    global _template_dir
    with _cache_lock:
        _template_dir = Path(path) if path is not None else None
        _cache.clear()


def _template(name: str) -> str:
    key = (str(_template_dir) if _template_dir else None, name)
    with _cache_lock:
        if key in _cache:
            return _cache[key]
        if _template_dir is not None:
            raw = (_template_dir / f"{name}.txt").read_text(encoding="utf-8")
        else:
            raw = (resources.files(__package__) / "templates" / f"{name}.txt").read_text(
                encoding="utf-8"
            )
        text = raw.rstrip("\n")
        _cache[key] = text
        return text


def serialize_history(history: HistoryPairs) -> str:
    """Fixed "Query:/Evidence:" block, one pair per two lines, insertion order.

    An empty history renders as the empty string so direct-answer prompts keep
    an empty pair block.
    """
    return "\n".join(f"Query: {q}\nEvidence: {e}" for q, e in history)


def _require_text(value: str, what: str) -> str:
    if not value or not value.strip():
        raise ValueError(f"{what} must be non-empty")
    return value


def render_answer_prompt(question: str, history: HistoryPairs) -> str:
    _require_text(question, "question")
    return _template("answer").format(history=serialize_history(history), question=question)


def render_ask_prompt(question: str, history: HistoryPairs, k: int) -> str:
    _require_text(question, "question")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    return _template("ask").format(history=serialize_history(history), question=question, k=k)


def render_summarize_prompt(original_question: str, docs_text: str) -> str:
    _require_text(original_question, "question")
    _require_text(docs_text, "document block")
    return _template("summarize").format(question=original_question, document=docs_text)


def render_genread_prompt(original_question: str) -> str:
    _require_text(original_question, "question")
    return _template("genread").format(question=original_question)


def render_score_prompt(question: str, history: HistoryPairs, answer: str) -> str:
    _require_text(question, "question")
    _require_text(answer, "answer")
    return _template("score").format(
        history=serialize_history(history), question=question, answer=answer
    )


_MARKER = re.compile(r"ranked\s+questions", re.IGNORECASE)
_NUMBERED_LINE = re.compile(r"^\s*\d+\s*[.)]\s*(.*?)\s*$")


def parse_questions(text: str, k: int) -> list[str]:
    """Extract up to ``k`` questions from a numbered list, in rank order.

    Looks for lines after a "Ranked Questions" marker; a bare numbered list
    without the marker is accepted too. List numbering and one layer of
    enclosing [brackets] are stripped; empty items are dropped.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    lines = text.splitlines()
    start = 0
    for i, line in enumerate(lines):
        if _MARKER.search(line):
            start = i + 1
            break
    out: list[str] = []
    for line in lines[start:]:
        m = _NUMBERED_LINE.match(line)
        if not m:
            continue
        item = m.group(1).strip()
        if len(item) >= 2 and item.startswith("[") and item.endswith("]"):
            item = item[1:-1].strip()
        if item:
            out.append(item)
        if len(out) == k:
            break
    return out


_NUMBER = re.compile(r"[-+]?(?:\d+(?:\.\d+)?|\.\d+)")


def parse_score(text: str) -> float:
    """First decimal number in the text, clamped into [0, 1].

    The scoring prompt asks for a bare number, so the first number wins over
    any later ones a chatty completion may add.
    """
    m = _NUMBER.search(text)
    if m is None:
        raise ScoreParseError(f"no numeric score in completion: {text[:80]!r}")
    return min(1.0, max(0.0, float(m.group())))
