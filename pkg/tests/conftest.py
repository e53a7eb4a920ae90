"""Shared fixtures: question factories and scripted backend builders."""

from __future__ import annotations

import json

import pytest

from tokenbudget.backend import ScriptedBackend, ScriptedBehavior, ScriptedEntry
from tokenbudget.core import AnswerKind, Question


def make_question(
    qid: str = "q1",
    text: str = "A robe takes 2 bolts of blue fiber and half that much white fiber. How many bolts in total?",
    gold: str = "3",
    kind: AnswerKind = AnswerKind.NUMERIC,
    source: str = "fixture",
) -> Question:
    return Question(id=qid, text=text, gold_answer=gold, answer_kind=kind, source=source)


def behavior_from_curve(
    vanilla_tokens: int,
    curve: dict[int, tuple[int, bool]],
    vanilla_correct: bool = True,
    estimate: str | None = None,
    default: tuple[int, bool] | None = None,
) -> ScriptedBehavior:
    """Curve maps budget -> (observed output tokens, correct flag)."""
    return ScriptedBehavior(
        vanilla=ScriptedEntry(output_tokens=vanilla_tokens, correct=vanilla_correct),
        cost_curve={
            budget: ScriptedEntry(output_tokens=tokens, correct=ok)
            for budget, (tokens, ok) in curve.items()
        },
        estimate=ScriptedEntry(output_tokens=1, correct=True, text=estimate)
        if estimate is not None
        else None,
        default=ScriptedEntry(output_tokens=default[0], correct=default[1])
        if default is not None
        else None,
    )


def scripted_backend(
    question_behaviors: dict[Question, ScriptedBehavior],
    default_entry: ScriptedEntry | None = None,
    **kwargs,
) -> ScriptedBackend:
    return ScriptedBackend(
        questions=list(question_behaviors),
        behaviors={q.id: b for q, b in question_behaviors.items()},
        default_entry=default_entry,
        **kwargs,
    )


@pytest.fixture
def rebound_question() -> Question:
    """Vanilla costs 256 tokens; halving probes show the cost rebound at 32."""
    return make_question(qid="rebound", text="What is 12 + 6 halved three times?", gold="18")


@pytest.fixture
def rebound_backend(rebound_question) -> ScriptedBackend:
    behavior = behavior_from_curve(
        vanilla_tokens=256,
        curve={256: (130, True), 128: (120, True), 64: (70, True), 32: (90, True)},
        default=(300, False),
    )
    return scripted_backend({rebound_question: behavior})


@pytest.fixture
def fig_like_question() -> Question:
    return make_question(qid="fig1", text="How many eggs does Janet have left to sell?", gold="18")


@pytest.fixture
def fig_like_backend(fig_like_question) -> ScriptedBackend:
    """Vanilla 258 tokens; budget 50 costs 86, budget 10 rebounds to 157."""
    behavior = behavior_from_curve(
        vanilla_tokens=258,
        curve={50: (86, True), 10: (157, True)},
        estimate="50",
        default=(200, True),
    )
    return scripted_backend({fig_like_question: behavior})


# ---------------------------------------------------------------------------
# End-to-end fixture files for the CLI
# ---------------------------------------------------------------------------

DEMO_SCENARIO = {
    "name": "demo",
    "default_behavior": {"output_tokens": 40, "correct": False},
    "questions": [
        {
            "id": "rebound",
            "text": "A pot holds 12 liters and loses half overnight. How many liters remain after filling twice?",
            "gold_answer": "18",
            "answer_kind": "numeric",
            "behavior": {
                "vanilla": {"output_tokens": 256, "correct": True},
                "estimate": {"output_tokens": 1, "text": "50"},
                "budgets": {
                    "256": {"output_tokens": 130, "correct": True},
                    "128": {"output_tokens": 120, "correct": True},
                    "64": {"output_tokens": 70, "correct": True},
                    "50": {"output_tokens": 86, "correct": True},
                    "32": {"output_tokens": 90, "correct": True},
                },
            },
        },
        {
            "id": "mono",
            "text": "A train covers 36 km in 20 minutes. What is its speed in km per hour?",
            "gold_answer": "108",
            "answer_kind": "numeric",
            "behavior": {
                "vanilla": {"output_tokens": 256, "correct": True},
                "estimate": {"output_tokens": 1, "text": "64"},
                "budgets": {
                    "256": {"output_tokens": 130, "correct": True},
                    "128": {"output_tokens": 120, "correct": True},
                    "64": {"output_tokens": 70, "correct": True},
                    "32": {"output_tokens": 90, "correct": False},
                    "16": {"output_tokens": 95, "correct": False},
                },
            },
        },
        {
            "id": "wrong",
            "text": "How many prime numbers are even and greater than two?",
            "gold_answer": "0",
            "answer_kind": "numeric",
            "behavior": {
                "vanilla": {"output_tokens": 80, "correct": False},
            },
        },
    ],
}

DEMO_CONFIG = {
    "backend": {"kind": "scripted", "model_id": "scripted-v1"},
    "pricing": [{"model_id": "scripted-v1", "input_price": 0.15, "output_price": 0.60}],
    "sampling": {"temperature": 0.1, "seed": 1024, "max_candidates": 1},
    "concurrency": 2,
    "seed": 1024,
}


def write_demo_files(directory) -> tuple[str, str]:
    """Write the demo scenario and config under directory; returns their paths."""
    dataset_path = directory / "demo_dataset.json"
    dataset_path.write_text(json.dumps(DEMO_SCENARIO, indent=2))
    config_path = directory / "config.json"
    config_path.write_text(json.dumps(DEMO_CONFIG, indent=2))
    return str(config_path), str(dataset_path)
