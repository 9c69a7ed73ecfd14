"""The iterative verify -> classify -> route -> refine loop, plus trace I/O.

Routing follows the strict priority miscomprehension > concept >
computation; exactly one agent fires per iteration, the loop re-verifies
after every refinement, and it stops as soon as a verification comes back
clean or the iteration cap is hit. A stall detector (an extension beyond
the bare loop, configurable off) halts when an agent returns its input
unchanged. Under a scripted backend the whole trace is a pure function of
(question, initial solution, config, script).
"""

from __future__ import annotations

import json
import logging
import os
import threading
from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor, wait
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Optional, Sequence

from .agents import (
    AgentContext,
    CallLog,
    generate_thought,
    refine_computation,
    refine_concept,
    refine_miscomprehension,
)
from .core import (
    DEFAULT_EPSILON,
    AnswerKey,
    AnswerKind,
    ErrorKind,
    Question,
    Solution,
    SolutionOrigin,
    SolutionStep,
    VerifierReport,
    classify_scores,
    flag_to_wire,
    score_comp,
    score_concept,
    solutions_textually_equal,
)
from .retrieval import retrieve
from .verifier import MalformedVerifierOutput, VerifierConfig, verify

logger = logging.getLogger(__name__)

TRACE_FORMAT = "physrefine-trace/1"


class TerminatedBy(Enum):
    CLEAN = "clean"
    MAX_ITERATIONS = "max_iterations"
    STALL = "stall"
    VERIFIER_FAILURE = "verifier_failure"
    ABORTED = "aborted"


class StallPolicy(Enum):
    STOP = "stop"
    CONTINUE = "continue"


@dataclass
class PipelineConfig:
    verifier: VerifierConfig
    agent_ctx: AgentContext
    max_iterations: int = 3
    epsilon: float = DEFAULT_EPSILON
    stall_policy: StallPolicy = StallPolicy.STOP

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not 0 <= self.epsilon < 1:
            raise ValueError("epsilon must be in [0, 1)")


@dataclass(frozen=True)
class IterationRecord:
    """One loop turn: what the verifier said, who acted, what came out."""

    index: int
    report: Optional[VerifierReport]
    concept_score: Optional[float]
    comp_score: Optional[float]
    classification: Optional[ErrorKind]
    agent_invoked: Optional[ErrorKind]
    exchanges: tuple[str, ...]
    solution_after: Solution
    retrieval_miss: bool = False
    fallback: bool = False
    preserved_prefix: Optional[bool] = None
    solution_unchanged: bool = False
    verifier_failed: bool = False
    warnings: tuple[str, ...] = ()


@dataclass(frozen=True)
class RefinementTrace:
    question_id: str
    iterations: tuple[IterationRecord, ...]
    final_solution: Optional[Solution]
    terminated_by: TerminatedBy
    error: Optional[str] = None


def _prefix_preserved(before: Solution, after: Solution, target_step: int) -> bool:
    keep = target_step - 1
    if len(after.steps) < keep:
        return False
    return all(before.steps[i].text == after.steps[i].text for i in range(keep))


def run_pipeline(question: Question, s0: Solution, cfg: PipelineConfig) -> RefinementTrace:
    """Refine one solution until clean, stalled, or out of iterations."""
    current = s0
    records: list[IterationRecord] = []

    def finish(terminated_by: TerminatedBy) -> RefinementTrace:
        return RefinementTrace(
            question_id=question.id,
            iterations=tuple(records),
            final_solution=current,
            terminated_by=terminated_by,
        )

    for i in range(cfg.max_iterations):
        tag = f"iter{i}"
        log = CallLog()
        try:
            report = verify(
                question,
                current,
                cfg.verifier,
                sandbox=cfg.agent_ctx.sandbox,
                log=log,
                tag=tag,
            )
        except MalformedVerifierOutput as exc:
            records.append(
                IterationRecord(
                    index=i,
                    report=None,
                    concept_score=None,
                    comp_score=None,
                    classification=None,
                    agent_invoked=None,
                    exchanges=tuple(log.exchanges),
                    solution_after=current,
                    verifier_failed=True,
                    warnings=tuple(log.warnings) + (str(exc),),
                )
            )
            if i == cfg.max_iterations - 1:
                return finish(TerminatedBy.VERIFIER_FAILURE)
            continue

        concept = score_concept(report)
        comp = score_comp(report)
        kind = classify_scores(
            report.objective_aligned, report.variables_correct, concept, comp, cfg.epsilon
        )

        if kind is ErrorKind.NONE:
            records.append(
                IterationRecord(
                    index=i,
                    report=report,
                    concept_score=concept,
                    comp_score=comp,
                    classification=ErrorKind.NONE,
                    agent_invoked=None,
                    exchanges=tuple(log.exchanges),
                    solution_after=current,
                    warnings=tuple(log.warnings),
                )
            )
            return finish(TerminatedBy.CLEAN)

        refined, preserved = _dispatch(question, current, report, kind, cfg, log, tag)
        unchanged = solutions_textually_equal(current, refined)
        records.append(
            IterationRecord(
                index=i,
                report=report,
                concept_score=concept,
                comp_score=comp,
                classification=kind,
                agent_invoked=kind,
                exchanges=tuple(log.exchanges),
                solution_after=refined,
                retrieval_miss=log.retrieval_miss,
                fallback=log.fallback,
                preserved_prefix=preserved,
                solution_unchanged=unchanged,
                warnings=tuple(log.warnings),
            )
        )
        current = refined
        if unchanged and cfg.stall_policy is StallPolicy.STOP:
            logger.info("question %s stalled at iteration %d", question.id, i)
            return finish(TerminatedBy.STALL)

    return finish(TerminatedBy.MAX_ITERATIONS)


def _dispatch(
    question: Question,
    current: Solution,
    report: VerifierReport,
    kind: ErrorKind,
    cfg: PipelineConfig,
    log: CallLog,
    tag: str,
) -> tuple[Solution, Optional[bool]]:
    """Invoke exactly the one agent matching the classification."""
    ctx = cfg.agent_ctx
    if kind is ErrorKind.MISCOMPREHENSION:
        refined = refine_miscomprehension(question, current, report, ctx, log=log, tag=tag)
        return refined, None
    if kind is ErrorKind.WRONG_CONCEPT:
        if ctx.retrieval_kb is None:
            raise ValueError("concept refinement requires a knowledge base")
        thought = generate_thought(question, current, report, ctx, log=log, tag=tag)
        observation = retrieve(ctx.retrieval_kb, thought.text, config=ctx.retrieval_config)
        refined = refine_concept(question, current, thought, observation, ctx, log=log, tag=tag)
        return refined, _prefix_preserved(current, refined, thought.target_step)
    if kind is ErrorKind.COMPUTATIONAL:
        refined = refine_computation(question, current, report, ctx, log=log, tag=tag)
        assert report.comp_first_error_step is not None
        return refined, _prefix_preserved(current, refined, report.comp_first_error_step)
    raise AssertionError(f"unroutable classification {kind}")


# ---------------------------------------------------------------------------
# Batch execution


def run_batch(
    questions: Sequence[Question],
    cfg: PipelineConfig,
    concurrency: int = 1,
    *,
    make_initial: Callable[[Question], Solution],
    trace_path: Optional[str | Path] = None,
) -> list[RefinementTrace]:
    """Run pipelines over many questions with bounded concurrency.

    Results (and the trace file) keep input order regardless of completion
    order; a failed question is recorded as an aborted trace without
    cancelling the rest. Traces are flushed to disk as soon as every earlier
    slot has completed.
    """
    if concurrency < 1:
        raise ValueError("concurrency must be >= 1")

    writer = _TraceWriter(trace_path, cfg, len(questions)) if trace_path else None
    results: list[Optional[RefinementTrace]] = [None] * len(questions)

    def run_one(index: int) -> RefinementTrace:
        question = questions[index]
        try:
            s0 = make_initial(question)
            return run_pipeline(question, s0, cfg)
        except Exception as exc:  # isolation: any failure only marks this slot
            logger.warning("question %s aborted: %s", question.id, exc)
            return RefinementTrace(
                question_id=question.id,
                iterations=(),
                final_solution=None,
                terminated_by=TerminatedBy.ABORTED,
                error=f"{type(exc).__name__}: {exc}",
            )

    with ThreadPoolExecutor(max_workers=concurrency) as pool:
        pending = {pool.submit(run_one, i): i for i in range(len(questions))}
        while pending:
            done, _ = wait(pending, return_when=FIRST_COMPLETED)
            for future in done:
                index = pending.pop(future)
                results[index] = future.result()
                if writer:
                    writer.offer(index, results[index])
    if writer:
        writer.close()
    traces = [trace for trace in results if trace is not None]
    assert len(traces) == len(questions)
    return traces


class _TraceWriter:
    """Streams traces to disk in input order as slots complete."""

    def __init__(self, path: str | Path, cfg: PipelineConfig, total: int) -> None:
        self._path = Path(path)
        self._tmp = self._path.with_suffix(self._path.suffix + ".tmp")
        self._file = self._tmp.open("w", encoding="utf-8")
        self._file.write(json.dumps(trace_header(cfg), sort_keys=True) + "\n")
        self._ready: dict[int, RefinementTrace] = {}
        self._next = 0
        self._total = total
        self._lock = threading.Lock()

    def offer(self, index: int, trace: RefinementTrace) -> None:
        with self._lock:
            self._ready[index] = trace
            while self._next in self._ready:
                line = json.dumps(serialize_trace(self._ready.pop(self._next)), sort_keys=True)
                self._file.write(line + "\n")
                self._file.flush()
                self._next += 1

    def close(self) -> None:
        self._file.close()
        if self._next == self._total:
            os.replace(self._tmp, self._path)
        else:
            self._tmp.rename(self._path.with_suffix(".partial"))


# ---------------------------------------------------------------------------
# Trace serialization (JSON lines; flags use the -1/+1 wire convention)


def trace_header(cfg: PipelineConfig) -> dict:
    return {
        "format": TRACE_FORMAT,
        "config": {
            "max_iterations": cfg.max_iterations,
            "epsilon": cfg.epsilon,
            "stall_policy": cfg.stall_policy.value,
            "comp_tolerance": cfg.verifier.comp_tolerance,
            "use_code_verification": cfg.verifier.use_code_verification,
            "identifier_model": cfg.verifier.identifier.spec.model_id,
            "solver_model": cfg.agent_ctx.solver.spec.model_id,
        },
    }


def serialize_answer(answer: Optional[AnswerKey]) -> Optional[dict]:
    if answer is None:
        return None
    return {
        "kind": answer.kind.value,
        "raw": answer.raw,
        "option_label": answer.option_label,
        "numeric_value": answer.numeric_value,
        "unit": answer.unit,
    }


def serialize_solution(solution: Optional[Solution]) -> Optional[dict]:
    if solution is None:
        return None
    return {
        "steps": [step.text for step in solution.steps],
        "final_answer": serialize_answer(solution.final_answer),
        "origin": solution.origin.value,
    }


def serialize_report(report: Optional[VerifierReport]) -> Optional[dict]:
    if report is None:
        return None
    return {
        "objective": flag_to_wire(report.objective_aligned),
        "variables": flag_to_wire(report.variables_correct),
        "concept_error_step": report.concept_first_error_step,
        "comp_error_step": report.comp_first_error_step,
        "total_steps": report.total_steps,
    }


def serialize_trace(trace: RefinementTrace) -> dict:
    return {
        "question_id": trace.question_id,
        "terminated_by": trace.terminated_by.value,
        "error": trace.error,
        "final_solution": serialize_solution(trace.final_solution),
        "iterations": [
            {
                "index": record.index,
                "report": serialize_report(record.report),
                "scores": {"concept": record.concept_score, "comp": record.comp_score},
                "classification": record.classification.value if record.classification else None,
                "agent_invoked": record.agent_invoked.value if record.agent_invoked else None,
                "exchanges": list(record.exchanges),
                "solution_after": serialize_solution(record.solution_after),
                "flags": {
                    "retrieval_miss": record.retrieval_miss,
                    "fallback": record.fallback,
                    "preserved_prefix": record.preserved_prefix,
                    "solution_unchanged": record.solution_unchanged,
                    "verifier_failed": record.verifier_failed,
                },
                "warnings": list(record.warnings),
            }
            for record in trace.iterations
        ],
    }


def write_traces(path: str | Path, traces: Sequence[RefinementTrace], cfg: PipelineConfig) -> None:
    lines = [json.dumps(trace_header(cfg), sort_keys=True)]
    lines.extend(json.dumps(serialize_trace(trace), sort_keys=True) for trace in traces)
    target = Path(path)
    tmp = target.with_suffix(target.suffix + ".tmp")
    tmp.write_text("\n".join(lines) + "\n", encoding="utf-8")
    os.replace(tmp, target)


def load_traces(path: str | Path) -> tuple[dict, list[dict]]:
    """Read a trace file back as (header, trace dicts)."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ValueError(f"empty trace file {path}")
    header = json.loads(lines[0])
    if header.get("format") != TRACE_FORMAT:
        raise ValueError(f"unsupported trace format {header.get('format')!r}")
    return header, [json.loads(line) for line in lines[1:] if line.strip()]


def deserialize_solution(data: Optional[dict]) -> Optional[Solution]:
    if data is None:
        return None
    answer = None
    if data.get("final_answer"):
        raw = data["final_answer"]
        answer = AnswerKey(
            kind=AnswerKind(raw["kind"]),
            raw=raw["raw"],
            option_label=raw.get("option_label"),
            numeric_value=raw.get("numeric_value"),
            unit=raw.get("unit"),
        )
    steps = tuple(
        SolutionStep(index=i, text=text) for i, text in enumerate(data["steps"], start=1)
    )
    raw_text = "\n".join(step.text for step in steps)
    return Solution(
        steps=steps,
        raw_text=raw_text,
        final_answer=answer,
        origin=SolutionOrigin(data.get("origin", "initial")),
    )
