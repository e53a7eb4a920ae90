"""Answer extraction and correctness judging.

``grade`` is a pure function of (response_text, gold_answer, answer_kind):
no model calls, no state. Extraction failures yield an incorrect verdict
with rule "none", never an exception.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

from .core import AnswerKind, Question

# Numbers with optional sign, currency symbol, thousands separators,
# decimals, and simple fractions ("3/2").
_NUMBER_RE = re.compile(r"-?\$?\d[\d,]*(?:\.\d+)?(?:/\d+)?")

_ANSWER_MARKER_RE = re.compile(r"answer\s*(?:is|:)\s*", re.IGNORECASE)
_HASH_MARKER_RE = re.compile(r"####\s*")

_OPTION_MARKER_RE = re.compile(
    r"(?:answer|option|choice)\s*(?:is|:)?\s*\(?([A-J])\)?", re.IGNORECASE
)
# Fallback letters stay in A-F: option lists rarely go further, and this
# keeps the pronoun "I" and sentence-initial "A" from matching as answers.
_STANDALONE_LETTER_RE = re.compile(r"\b([A-F])\b")

_REL_TOL = 1e-6
_ABS_TOL = 1e-9


@dataclass(frozen=True)
class Verdict:
    """Outcome of grading one response against one question."""

    extracted: str | None
    correct: bool
    extraction_rule: str

    def __post_init__(self):
        if self.extracted is None and self.correct:
            raise ValueError("a verdict without an extracted answer cannot be correct")


def normalize_number(raw: str) -> float | None:
    """Parse a raw numeric string: strip commas and currency, reduce fractions."""
    cleaned = raw.strip().replace(",", "").replace("$", "")
    if not cleaned:
        return None
    if "/" in cleaned:
        numerator, _, denominator = cleaned.partition("/")
        try:
            den = float(denominator)
            if den == 0:
                return None
            return float(numerator) / den
        except ValueError:
            return None
    try:
        return float(cleaned)
    except ValueError:
        return None


def _extract_numeric(text: str) -> tuple[str | None, str]:
    """Prefer an explicit answer marker; otherwise the last number wins."""
    best_pos = -1
    best_rule = "none"
    for regex, rule in ((_HASH_MARKER_RE, "hash_marker"), (_ANSWER_MARKER_RE, "answer_marker")):
        last = None
        for match in regex.finditer(text):
            last = match
        if last is not None and last.end() > best_pos:
            best_pos = last.end()
            best_rule = rule
    if best_pos >= 0:
        after = _NUMBER_RE.search(text, best_pos)
        if after is not None:
            return after.group(), best_rule
    matches = _NUMBER_RE.findall(text)
    if matches:
        return matches[-1], "last_number"
    return None, "none"


def _grade_numeric(text: str, gold: str) -> Verdict:
    raw, rule = _extract_numeric(text)
    if raw is None:
        return Verdict(extracted=None, correct=False, extraction_rule="none")
    value = normalize_number(raw)
    gold_value = normalize_number(gold)
    if value is None or gold_value is None:
        return Verdict(extracted=raw, correct=False, extraction_rule=rule)
    correct = math.isclose(value, gold_value, rel_tol=_REL_TOL, abs_tol=_ABS_TOL)
    return Verdict(extracted=f"{value:.10g}", correct=correct, extraction_rule=rule)


def _grade_multiple_choice(text: str, gold: str) -> Verdict:
    letter = None
    rule = "none"
    marker_matches = _OPTION_MARKER_RE.findall(text)
    if marker_matches:
        letter, rule = marker_matches[-1].upper(), "option_marker"
    else:
        standalone = _STANDALONE_LETTER_RE.findall(text)
        if standalone:
            letter, rule = standalone[-1], "last_letter"
    if letter is None:
        return Verdict(extracted=None, correct=False, extraction_rule="none")
    return Verdict(
        extracted=letter,
        correct=letter == gold.strip().upper(),
        extraction_rule=rule,
    )


def _normalize_text(text: str) -> str:
    return " ".join(text.split()).casefold()


def _grade_free_text(text: str, gold: str) -> Verdict:
    normalized = _normalize_text(text)
    if not normalized:
        return Verdict(extracted=None, correct=False, extraction_rule="none")
    return Verdict(
        extracted=normalized,
        correct=normalized == _normalize_text(gold),
        extraction_rule="normalized_text",
    )


def grade(response_text: str, question: Question) -> Verdict:
    """Judge a model response against the question's gold answer."""
    if question.answer_kind is AnswerKind.NUMERIC:
        return _grade_numeric(response_text, question.gold_answer)
    if question.answer_kind is AnswerKind.MULTIPLE_CHOICE:
        return _grade_multiple_choice(response_text, question.gold_answer)
    return _grade_free_text(response_text, question.gold_answer)
