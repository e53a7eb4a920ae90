"""Training-corpus generation: budget-efficient targets and preference pairs.

Phase one of budget-awareness post-training: run the optimal-budget search
per question, keep the response produced under the optimal budget as the
target, and export supervised fine-tuning records or preference pairs
(budgeted target preferred over the longer vanilla output) as JSONL for an
external trainer. No gradient training happens here.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from datetime import datetime, timezone

from .backend import DEFAULT_SAMPLING, CompletionBackend, SamplingParams
from .core import Question
from .grading import grade
from .prompting import PromptKind, PromptTemplates, build_prompt
from .search import SearchStatus, search_optimal_budget

SFT_FORMAT = "sft"
DPO_FORMAT = "dpo"


@dataclass(frozen=True)
class SftExample:
    """One supervised fine-tuning record."""

    input: str
    target: str
    meta: dict

    def to_dict(self) -> dict:
        return {"input": self.input, "target": self.target, "meta": self.meta}

    @classmethod
    def from_dict(cls, data: dict) -> "SftExample":
        return cls(input=data["input"], target=data["target"], meta=data["meta"])


@dataclass(frozen=True)
class PreferencePair:
    """One preference record: short budgeted output over long vanilla output."""

    input: str
    positive: str
    negative: str
    meta: dict

    def to_dict(self) -> dict:
        return {
            "input": self.input,
            "chosen": self.positive,
            "rejected": self.negative,
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PreferencePair":
        return cls(
            input=data["input"],
            positive=data["chosen"],
            negative=data["rejected"],
            meta=data["meta"],
        )


@dataclass(frozen=True)
class Skip:
    """A question that produced no record, with the reason preserved."""

    question_id: str
    reason: str


@dataclass(frozen=True)
class CorpusManifest:
    """Provenance for one exported corpus."""

    dataset: str
    model_id: str
    created_at: str
    format: str
    attempted: int
    succeeded: int
    skipped: dict
    config_hash: str

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "model_id": self.model_id,
            "created_at": self.created_at,
            "format": self.format,
            "counts": {
                "attempted": self.attempted,
                "succeeded": self.succeeded,
                "skipped": self.skipped,
            },
            "config_hash": self.config_hash,
        }


def _training_input(question: Question, budget: int, input_style: str,
                    templates: PromptTemplates | None) -> str:
    """Budget-free vanilla instruction by default; budgeted via input_style."""
    if input_style == "budgeted":
        prompt = build_prompt(question, PromptKind.BUDGETED_COT, budget=budget, templates=templates)
    elif input_style == "vanilla":
        prompt = build_prompt(question, PromptKind.VANILLA_COT, templates=templates)
    else:
        raise ValueError(f"input_style must be 'vanilla' or 'budgeted', got {input_style!r}")
    return prompt.user


def generate_target(
    backend: CompletionBackend,
    question: Question,
    params: SamplingParams = DEFAULT_SAMPLING,
    baseline: str = "probe",
    input_style: str = "vanilla",
    templates: PromptTemplates | None = None,
) -> SftExample | Skip:
    """Search the optimal budget and keep its response as the training target."""
    result = search_optimal_budget(
        backend, question, params=params, baseline=baseline, templates=templates
    )
    if result.status is SearchStatus.VANILLA_INCORRECT:
        return Skip(question_id=question.id, reason="vanilla_incorrect")
    if result.status is SearchStatus.NO_FEASIBLE_BUDGET:
        return Skip(question_id=question.id, reason="no_feasible_budget")
    if not grade(result.target_output, question).correct:
        return Skip(question_id=question.id, reason="target_ungradable")
    return SftExample(
        input=_training_input(question, result.optimal_budget, input_style, templates),
        target=result.target_output,
        meta={
            "question_id": question.id,
            "optimal_budget": result.optimal_budget,
            "output_tokens": result.target_outcome.usage.output_tokens,
        },
    )


def build_preference_pair(
    backend: CompletionBackend,
    question: Question,
    params: SamplingParams = DEFAULT_SAMPLING,
    baseline: str = "probe",
    input_style: str = "vanilla",
    templates: PromptTemplates | None = None,
) -> PreferencePair | Skip:
    """Pair the budgeted target with the (cached) vanilla output as negative."""
    target = generate_target(
        backend, question, params=params, baseline=baseline,
        input_style=input_style, templates=templates,
    )
    if isinstance(target, Skip):
        return target
    # The search already issued this exact vanilla request, so a caching
    # backend serves the negative for free.
    vanilla_prompt = build_prompt(question, PromptKind.VANILLA_COT, templates=templates)
    negative = backend.complete(vanilla_prompt, params)
    positive_tokens = target.meta["output_tokens"]
    negative_tokens = negative.usage.output_tokens
    if positive_tokens >= negative_tokens:
        return Skip(question_id=question.id, reason="length_inversion")
    return PreferencePair(
        input=target.input,
        positive=target.target,
        negative=negative.text,
        meta={
            "question_id": question.id,
            "optimal_budget": target.meta["optimal_budget"],
            "positive_tokens": positive_tokens,
            "negative_tokens": negative_tokens,
        },
    )


def _validate_record(record, corpus_format: str, index: int, questions: dict[str, Question]):
    if corpus_format == SFT_FORMAT:
        if not isinstance(record, SftExample):
            raise ValueError(f"record {index} is not an SFT example")
        texts = (record.input, record.target)
    elif corpus_format == DPO_FORMAT:
        if not isinstance(record, PreferencePair):
            raise ValueError(f"record {index} is not a preference pair")
        positive_tokens = record.meta.get("positive_tokens")
        negative_tokens = record.meta.get("negative_tokens")
        if positive_tokens is None or negative_tokens is None:
            raise ValueError(f"record {index} is missing token counts in its meta")
        if positive_tokens >= negative_tokens:
            raise ValueError(f"record {index} violates positive-shorter-than-negative")
        texts = (record.input, record.positive, record.negative)
    else:
        raise ValueError(f"unknown corpus format {corpus_format!r}")
    if any(not t for t in texts):
        raise ValueError(f"record {index} has an empty field")

    question = questions.get(record.meta.get("question_id"))
    if question is not None:
        graded_text = record.target if corpus_format == SFT_FORMAT else record.positive
        if not grade(graded_text, question).correct:
            raise ValueError(f"record {index} target no longer grades correct")


def export_corpus(
    records,
    corpus_format: str,
    path: str,
    dataset_name: str = "",
    model_id: str = "",
    config_hash: str = "",
    questions: list[Question] | None = None,
) -> CorpusManifest:
    """Write a JSONL corpus plus its manifest; skips are counted, not written.

    Every exported target/positive is re-graded against its question when the
    questions are supplied; a violation aborts naming the record index.
    """
    records = list(records)
    if not records:
        raise ValueError("export_corpus needs at least one record")
    question_index = {q.id: q for q in (questions or [])}

    exported = []
    skipped: dict[str, int] = {}
    for index, record in enumerate(records):
        if isinstance(record, Skip):
            skipped[record.reason] = skipped.get(record.reason, 0) + 1
            continue
        _validate_record(record, corpus_format, index, question_index)
        exported.append(record)

    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        for record in exported:
            handle.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")

    manifest = CorpusManifest(
        dataset=dataset_name,
        model_id=model_id,
        created_at=datetime.now(timezone.utc).isoformat(),
        format=corpus_format,
        attempted=len(records),
        succeeded=len(exported),
        skipped=dict(sorted(skipped.items())),
        config_hash=config_hash,
    )
    with open(manifest_path(path), "w", encoding="utf-8") as handle:
        json.dump(manifest.to_dict(), handle, sort_keys=True, indent=2)
        handle.write("\n")
    return manifest


def manifest_path(corpus_path: str) -> str:
    root, _ = os.path.splitext(corpus_path)
    return f"{root}.manifest.json"


def load_corpus(path: str, corpus_format: str) -> list:
    """Round-trip loader for exported corpora."""
    if corpus_format == SFT_FORMAT:
        parse = SftExample.from_dict
    elif corpus_format == DPO_FORMAT:
        parse = PreferencePair.from_dict
    else:
        raise ValueError(f"unknown corpus format {corpus_format!r}")
    records = []
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line:
                records.append(parse(json.loads(line)))
    return records
