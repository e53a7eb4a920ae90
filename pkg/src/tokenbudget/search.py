"""Optimal token-budget search and its analysis operations.

The search halves the budget starting from the vanilla chain-of-thought
cost and accepts a candidate only while the answer stays correct AND the
observed output-token cost strictly drops (greedy feasibility). Reducing
the budget past a reasonable range makes real token usage rebound upward
("token elasticity"), so the first rejected candidate terminates the walk
and the last accepted one is the optimal budget.

Also here: the ideal-budget-range rolling-window minimum over a trace,
estimator-quality metrics against those ranges, and the per-question
monotonicity audit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

from .backend import DEFAULT_SAMPLING, CompletionBackend, SamplingParams
from .core import CompletionOutcome, Question, clamp_budget
from .errors import HarnessError
from .grading import grade
from .prompting import PromptKind, PromptTemplates, build_prompt


class SearchStatus(Enum):
    FOUND = "found"
    VANILLA_INCORRECT = "vanilla_incorrect"
    NO_FEASIBLE_BUDGET = "no_feasible_budget"


@dataclass(frozen=True)
class TracePoint:
    """One budgeted probe: requested budget, observed cost, verdict."""

    budget: int
    observed_cost: int
    correct: bool
    response: CompletionOutcome | None = None


@dataclass
class ElasticityTrace:
    """Ordered (budget, observed cost, correctness) points from one search."""

    points: list[TracePoint] = field(default_factory=list)

    def __post_init__(self):
        budgets = [p.budget for p in self.points]
        if any(b2 >= b1 for b1, b2 in zip(budgets, budgets[1:])):
            raise ValueError("trace budgets must be strictly decreasing")

    def correct_points(self) -> list[TracePoint]:
        return [p for p in self.points if p.correct]

    def __len__(self) -> int:
        return len(self.points)


@dataclass
class SearchResult:
    """Outcome of one budget search, with the full probe trace."""

    status: SearchStatus
    optimal_budget: int | None
    target_output: str | None
    trace: ElasticityTrace
    upper_bound: int
    target_outcome: CompletionOutcome | None = None

    @property
    def found(self) -> bool:
        return self.status is SearchStatus.FOUND


def halving_candidates(upper_bound: int) -> list[int]:
    """Strictly decreasing candidate sequence: floor halves down to 1."""
    candidates = []
    budget = upper_bound // 2
    while budget >= 1:
        candidates.append(budget)
        budget //= 2
    return candidates


def search_optimal_budget(
    backend: CompletionBackend,
    question: Question,
    params: SamplingParams = DEFAULT_SAMPLING,
    baseline: str = "probe",
    templates: PromptTemplates | None = None,
) -> SearchResult:
    """Find the smallest correctness-preserving budget with the lowest cost.

    Runs vanilla CoT first; its output-token count is the search upper bound
    and its verdict is the precondition (a wrong vanilla answer aborts the
    search). The baseline cost for the first feasibility test comes from an
    explicit probe at the upper bound (``baseline="probe"``, default) or from
    the vanilla cost itself (``baseline="vanilla"``).

    Backend errors propagate with the partial trace attached to the exception
    as ``partial_trace``; an ungradable response counts as incorrect.
    """
    if baseline not in ("probe", "vanilla"):
        raise ValueError(f"baseline must be 'probe' or 'vanilla', got {baseline!r}")

    vanilla_prompt = build_prompt(question, PromptKind.VANILLA_COT, templates=templates)
    try:
        vanilla = backend.complete(vanilla_prompt, params)
    except HarnessError as exc:
        exc.partial_trace = ElasticityTrace()
        raise
    upper_bound = vanilla.usage.output_tokens
    vanilla_verdict = grade(vanilla.text, question)

    if not vanilla_verdict.correct:
        return SearchResult(
            status=SearchStatus.VANILLA_INCORRECT,
            optimal_budget=None,
            target_output=None,
            trace=ElasticityTrace(),
            upper_bound=upper_bound,
        )
    if upper_bound < 1:
        return SearchResult(
            status=SearchStatus.NO_FEASIBLE_BUDGET,
            optimal_budget=None,
            target_output=None,
            trace=ElasticityTrace(),
            upper_bound=upper_bound,
        )

    candidates = halving_candidates(upper_bound)
    points: list[TracePoint] = []

    def probe(budget: int) -> TracePoint:
        prompt = build_prompt(question, PromptKind.BUDGETED_COT, budget=budget, templates=templates)
        try:
            outcome = backend.complete(prompt, params)
        except HarnessError as exc:
            exc.partial_trace = ElasticityTrace(list(points))
            raise
        verdict = grade(outcome.text, question)
        point = TracePoint(
            budget=budget,
            observed_cost=outcome.usage.output_tokens,
            correct=verdict.correct,
            response=outcome,
        )
        points.append(point)
        return point

    best_budget = upper_bound
    best_outcome = vanilla
    if candidates:
        if baseline == "probe":
            previous_cost = probe(upper_bound).observed_cost
        else:
            previous_cost = upper_bound
        for budget in candidates:
            point = probe(budget)
            feasible = point.correct and point.observed_cost < previous_cost
            if not feasible:
                break
            best_budget = budget
            best_outcome = point.response
            previous_cost = point.observed_cost

    return SearchResult(
        status=SearchStatus.FOUND,
        optimal_budget=best_budget,
        target_output=best_outcome.text,
        trace=ElasticityTrace(points),
        upper_bound=upper_bound,
        target_outcome=best_outcome,
    )


# ---------------------------------------------------------------------------
# Ideal budget range (rolling-window minimum over a trace)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IdealRange:
    """Contiguous window of correctness-preserving budgets with minimal cost."""

    budgets: tuple[int, ...]
    window_size: int
    total_cost: int

    @property
    def low(self) -> int:
        return min(self.budgets)

    @property
    def high(self) -> int:
        return max(self.budgets)

    def contains(self, budget: int) -> bool:
        return self.low <= budget <= self.high

    def distance(self, budget: int) -> int:
        if self.contains(budget):
            return 0
        return min(abs(budget - self.low), abs(budget - self.high))


def ideal_budget_range(trace: ElasticityTrace, k: int | str = "auto") -> IdealRange:
    """Size-k contiguous window of the trace minimizing total observed cost.

    Only correctness-preserving points participate. ``k="auto"`` picks
    max(1, N // 3); ties between equal-cost windows go to the smallest
    starting index.
    """
    points = trace.correct_points()
    n = len(points)
    if n == 0:
        raise ValueError("trace has no correctness-preserving points")
    if k == "auto":
        window = max(1, n // 3)
    else:
        window = int(k)
    if window < 1 or window > n:
        raise ValueError(f"window size {window} out of range for a {n}-point trace")

    costs = [p.observed_cost for p in points]
    current = sum(costs[:window])
    best_sum = current
    best_start = 0
    for start in range(1, n - window + 1):
        current += costs[start + window - 1] - costs[start - 1]
        if current < best_sum:
            best_sum = current
            best_start = start
    chosen = points[best_start:best_start + window]
    return IdealRange(
        budgets=tuple(p.budget for p in chosen),
        window_size=window,
        total_cost=best_sum,
    )


@dataclass(frozen=True)
class EstimatorQuality:
    """In-range accuracy and mean offset of out-of-range estimates."""

    in_range_accuracy: float
    out_of_range_distance: float | None
    sample_count: int
    out_of_range_count: int


def estimator_quality(samples: Sequence[tuple[int, IdealRange]]) -> EstimatorQuality:
    """Score estimated budgets against their ideal ranges.

    Accuracy is the fraction of estimates inside their range; the distance is
    averaged over out-of-range samples only and absent when there are none.
    """
    if not samples:
        raise ValueError("estimator_quality needs at least one sample")
    hits = 0
    misses: list[int] = []
    for estimate, window in samples:
        if window.contains(estimate):
            hits += 1
        else:
            misses.append(window.distance(estimate))
    distance = sum(misses) / len(misses) if misses else None
    return EstimatorQuality(
        in_range_accuracy=hits / len(samples),
        out_of_range_distance=distance,
        sample_count=len(samples),
        out_of_range_count=len(misses),
    )


# ---------------------------------------------------------------------------
# Monotonicity audit
# ---------------------------------------------------------------------------

DEFAULT_MULTIPLIERS = (0.25, 0.5, 1.0, 2.0, 4.0)


@dataclass(frozen=True)
class AuditCheck:
    multiplier: float
    budget: int
    correct: bool
    output_tokens: int


@dataclass(frozen=True)
class MonotonicityAudit:
    """Verdicts around the optimal budget and whether they are monotone."""

    question_id: str
    optimal_budget: int
    checks: tuple[AuditCheck, ...]
    is_monotonic: bool


def monotonicity_audit(
    backend: CompletionBackend,
    question: Question,
    optimal_budget: int,
    multipliers: Sequence[float] = DEFAULT_MULTIPLIERS,
    params: SamplingParams = DEFAULT_SAMPLING,
    templates: PromptTemplates | None = None,
) -> MonotonicityAudit:
    """Probe scaled budgets around the optimum and test the monotone pattern.

    A sample is monotonic when every verdict strictly below the optimal
    budget is incorrect and every verdict at or above it is correct. Scaled
    budgets are floored and clamped to >= 1.
    """
    checks = []
    for multiplier in multipliers:
        if multiplier <= 0:
            raise ValueError("multipliers must be positive")
        budget = clamp_budget(multiplier * optimal_budget)
        prompt = build_prompt(question, PromptKind.BUDGETED_COT, budget=budget, templates=templates)
        outcome = backend.complete(prompt, params)
        verdict = grade(outcome.text, question)
        checks.append(
            AuditCheck(
                multiplier=multiplier,
                budget=budget,
                correct=verdict.correct,
                output_tokens=outcome.usage.output_tokens,
            )
        )
    monotonic = all(
        check.correct if check.budget >= optimal_budget else not check.correct
        for check in checks
    )
    return MonotonicityAudit(
        question_id=question.id,
        optimal_budget=optimal_budget,
        checks=tuple(checks),
        is_monotonic=monotonic,
    )


def monotonic_fraction(audits: Sequence[MonotonicityAudit]) -> float:
    """Fraction of audited samples satisfying the monotone pattern."""
    if not audits:
        raise ValueError("monotonic_fraction needs at least one audit")
    return sum(1 for a in audits if a.is_monotonic) / len(audits)


# ---------------------------------------------------------------------------
# Serialization (per-question JSONL records and plot-ready CSV rows)
# ---------------------------------------------------------------------------


def search_record(question: Question, result: SearchResult) -> dict:
    """JSON-ready record of one search result."""
    return {
        "question_id": question.id,
        "status": result.status.value,
        "optimal_budget": result.optimal_budget,
        "upper_bound": result.upper_bound,
        "target_output": result.target_output,
        "trace": [
            {
                "budget": p.budget,
                "output_tokens": p.observed_cost,
                "correct": p.correct,
                "response_fingerprint": p.response.request_fingerprint if p.response else None,
            }
            for p in result.trace.points
        ],
    }


def trace_from_record(record: dict) -> ElasticityTrace:
    """Rebuild a trace from a serialized search record (responses dropped)."""
    return ElasticityTrace(
        [
            TracePoint(
                budget=row["budget"],
                observed_cost=row["output_tokens"],
                correct=row["correct"],
            )
            for row in record.get("trace", [])
        ]
    )


def elasticity_rows(question_id: str, result: SearchResult) -> list[tuple]:
    """CSV rows (question_id, iteration, budget, output_tokens, correct)."""
    return [
        (question_id, iteration, p.budget, p.observed_cost, p.correct)
        for iteration, p in enumerate(result.trace.points, start=1)
    ]
