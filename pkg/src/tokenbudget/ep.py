"""Estimate-then-prompt pipeline.

Two backend calls per question, always: one zero-shot budget estimation,
then one budgeted answer. If the estimation response cannot be parsed, the
second call falls back to vanilla chain-of-thought and the sample is
flagged, so accuracy is preserved at the cost of tokens.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .backend import DEFAULT_SAMPLING, CompletionBackend, SamplingParams
from .core import CompletionOutcome, Question, TokenUsage, clamp_budget
from .errors import EstimationParseError, HarnessError
from .grading import Verdict, grade
from .prompting import PromptKind, PromptTemplates, build_estimation_prompt, build_prompt

_FIRST_INTEGER_RE = re.compile(r"\d+")


@dataclass(frozen=True)
class EstimatedBudget:
    """Parsed budget estimate plus the raw response kept for audit."""

    value: int
    raw_response: str
    parse_rule: str


def parse_estimate(raw_response: str) -> EstimatedBudget:
    """First integer in the response, clamped to >= 1."""
    match = _FIRST_INTEGER_RE.search(raw_response)
    if match is None:
        raise EstimationParseError(
            "estimation response contains no integer", raw_response=raw_response
        )
    return EstimatedBudget(
        value=clamp_budget(int(match.group())),
        raw_response=raw_response,
        parse_rule="first_integer",
    )


def _estimate_with_outcome(
    backend: CompletionBackend,
    question: Question,
    params: SamplingParams,
    templates: PromptTemplates | None,
) -> tuple[EstimatedBudget, CompletionOutcome]:
    prompt = build_estimation_prompt(question, templates=templates)
    outcome = backend.complete(prompt, params)
    try:
        return parse_estimate(outcome.text), outcome
    except EstimationParseError as exc:
        exc.outcome = outcome
        raise


def estimate_budget(
    backend: CompletionBackend,
    question: Question,
    params: SamplingParams = DEFAULT_SAMPLING,
    templates: PromptTemplates | None = None,
) -> EstimatedBudget:
    """Ask the model how many reasoning tokens the question needs."""
    estimate, _ = _estimate_with_outcome(backend, question, params, templates)
    return estimate


def scale_budget(estimate: EstimatedBudget, alpha: float) -> int:
    """Scale an estimate by alpha, rounding and clamping to >= 1."""
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha!r}")
    return max(1, round(alpha * estimate.value))


@dataclass(frozen=True)
class EpResult:
    """One estimate-then-prompt run with both calls' usage kept separate."""

    verdict: Verdict
    estimation_usage: TokenUsage
    answer_usage: TokenUsage
    estimate: EstimatedBudget | None
    budget_used: int | None
    used_fallback: bool
    answer_text: str

    @property
    def total_usage(self) -> TokenUsage:
        return self.estimation_usage.combined(self.answer_usage)


def run_ep(
    backend: CompletionBackend,
    question: Question,
    alpha: float = 1.0,
    params: SamplingParams = DEFAULT_SAMPLING,
    templates: PromptTemplates | None = None,
) -> EpResult:
    """Estimate a budget, answer under it, grade the answer.

    Exactly two backend calls on both the happy path and the fallback path.
    Backend errors propagate with a ``stage`` attribute ("estimation" or
    "answer") naming where they occurred.
    """
    try:
        estimate, estimation_outcome = _estimate_with_outcome(backend, question, params, templates)
    except EstimationParseError as parse_error:
        estimation_usage = parse_error.outcome.usage
        fallback_prompt = build_prompt(question, PromptKind.VANILLA_COT, templates=templates)
        try:
            answer = backend.complete(fallback_prompt, params)
        except HarnessError as exc:
            exc.stage = "answer"
            raise
        return EpResult(
            verdict=grade(answer.text, question),
            estimation_usage=estimation_usage,
            answer_usage=answer.usage,
            estimate=None,
            budget_used=None,
            used_fallback=True,
            answer_text=answer.text,
        )
    except HarnessError as exc:
        exc.stage = "estimation"
        raise

    budget = scale_budget(estimate, alpha)
    answer_prompt = build_prompt(question, PromptKind.BUDGETED_COT, budget=budget, templates=templates)
    try:
        answer = backend.complete(answer_prompt, params)
    except HarnessError as exc:
        exc.stage = "answer"
        raise
    return EpResult(
        verdict=grade(answer.text, question),
        estimation_usage=estimation_outcome.usage,
        answer_usage=answer.usage,
        estimate=estimate,
        budget_used=budget,
        used_fallback=False,
        answer_text=answer.text,
    )
