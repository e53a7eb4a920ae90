"""Byte-exact construction of every prompt variant the harness sends.

The default template texts are frozen by golden tests; the scripted backend
parses the budget suffix back out of rendered prompts, so any drift here
breaks the search loop. Overrides come from the harness config as named
strings with a ``{budget}`` placeholder.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

from .core import AnswerKind, Question, validate_budget

DEFAULT_SYSTEM = "You are a helpful assistant."

VANILLA_COT_SUFFIX = "Let's think step by step:"
BUDGETED_COT_SUFFIX = "Let's think step by step and use less than {budget} tokens:"

ESTIMATION_TASK = (
    "Task: Analyze the given question and estimate the minimum number of "
    "tokens required for reasoning."
)
ESTIMATION_CONTRACT = "Respond with a single integer."

FORMAT_INSTRUCTION = "Respond with only the letter of the correct option."


class PromptKind(Enum):
    DIRECT_ANSWER = "direct_answer"
    VANILLA_COT = "vanilla_cot"
    BUDGETED_COT = "budgeted_cot"
    BUDGET_ESTIMATION = "budget_estimation"
    FORMAT_INSTRUCTION = "format_instruction"


@dataclass(frozen=True)
class Prompt:
    system: str
    user: str


@dataclass(frozen=True)
class PromptTemplates:
    system: str = DEFAULT_SYSTEM
    vanilla_suffix: str = VANILLA_COT_SUFFIX
    budgeted_suffix: str = BUDGETED_COT_SUFFIX
    estimation_task: str = ESTIMATION_TASK
    estimation_contract: str = ESTIMATION_CONTRACT
    format_instruction: str = FORMAT_INSTRUCTION

    @classmethod
    def from_config(cls, overrides: dict | None) -> "PromptTemplates":
        if not overrides:
            return cls()
        unknown = set(overrides) - {f.name for f in cls.__dataclass_fields__.values()}
        if unknown:
            raise ValueError(f"unknown template overrides: {sorted(unknown)}")
        return replace(cls(), **overrides)


DEFAULT_TEMPLATES = PromptTemplates()


def build_prompt(
    question: Question,
    kind: PromptKind,
    budget: int | None = None,
    templates: PromptTemplates | None = None,
) -> Prompt:
    """Render the user-facing prompt for one question.

    The user text is the question followed by the kind's instruction suffix;
    multiple-choice questions additionally get the answer-format instruction.
    Rendering is deterministic and injective over (question, kind, budget).
    """
    t = templates or DEFAULT_TEMPLATES
    if kind is PromptKind.BUDGET_ESTIMATION:
        return build_estimation_prompt(question, templates=t)
    if kind is PromptKind.FORMAT_INSTRUCTION:
        # The bare formatting scaffold, question-free, so that overridden
        # templates can be inspected and pinned without ambiguity.
        return Prompt(system=t.system, user=t.format_instruction)

    parts = [question.text]
    if kind is PromptKind.VANILLA_COT:
        parts.append(t.vanilla_suffix)
    elif kind is PromptKind.BUDGETED_COT:
        if budget is None:
            raise ValueError("budgeted_cot prompts require a budget")
        validate_budget(budget)
        parts.append(t.budgeted_suffix.format(budget=budget))
    elif kind is not PromptKind.DIRECT_ANSWER:
        raise ValueError(f"unsupported prompt kind: {kind!r}")

    if question.answer_kind is AnswerKind.MULTIPLE_CHOICE:
        parts.append(t.format_instruction)
    return Prompt(system=t.system, user="\n".join(parts))


def build_estimation_prompt(
    question: Question,
    templates: PromptTemplates | None = None,
) -> Prompt:
    """Zero-shot budget-estimation prompt: task line, question, output contract."""
    t = templates or DEFAULT_TEMPLATES
    user = "\n".join([t.estimation_task, question.text, t.estimation_contract])
    return Prompt(system=t.system, user=user)
