"""The three refinement agents: miscomprehension, concept, and computation.

Each agent maps (question, solution, verifier context) to a refined solution
using the same solver backend that produced the original solution. Prompt
text lives in versioned template files under ``prompts/``; agents only fill
placeholders and parse responses. Prefix preservation is instructed, never
spliced: the trace records whether the model actually complied.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional, Sequence

from .core import (
    Question,
    Solution,
    SolutionOrigin,
    VerifierReport,
    render_solution,
)
from .gateway import ChatGateway, ChatMessage, Role
from .retrieval import KnowledgeBase, Observation, RetrievalConfig
from .sandbox import ExecutionRequest, SandboxExecutor, parse_result_line

logger = logging.getLogger(__name__)

SOLVER_SYSTEM = (
    "You are an expert physics problem solver. Present your reasoning as numbered steps, "
    'one per line, each starting with "Step k:". End with a line "Final Answer: <answer>".'
)
THOUGHT_SYSTEM = "You are an expert physics problem solver. Reply with exactly one line."
CODE_SYSTEM = "You write small standalone Python programs. Reply with code only, no prose."

# Documented gateway-call ceilings per agent invocation, retries included.
MAX_GATEWAY_CALLS = {"miscomprehension": 2, "concept": 4, "computation": 6}

_CODE_FENCE_RE = re.compile(r"^```[\w+-]*\n(.*?)\n?```\s*$", re.DOTALL)


class RefinementError(Exception):
    """Base class for agent failures."""


class UnparseableRefinement(RefinementError):
    """The solver produced no usable refinement after one retry."""


class SandboxFailure(RefinementError):
    """The generated computation program failed twice in the sandbox."""


@dataclass
class CallLog:
    """Mutable per-iteration collector the orchestrator folds into the trace."""

    exchanges: list[str] = field(default_factory=list)
    fallback: bool = False
    retrieval_miss: bool = False
    warnings: list[str] = field(default_factory=list)


@dataclass
class AgentContext:
    """Shared handles the agents draw on.

    The concept agent requires ``retrieval_kb``; the computation agent
    requires ``sandbox``. The solver gateway is the model being refined,
    never the error identifier.
    """

    solver: ChatGateway
    retrieval_kb: Optional[KnowledgeBase] = None
    sandbox: Optional[SandboxExecutor] = None
    retrieval_config: RetrievalConfig = field(default_factory=RetrievalConfig)


@dataclass(frozen=True)
class RetrievalThought:
    """A single-sentence knowledge-base query aimed at the failure step."""

    text: str
    target_step: int

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValueError("thought text must be nonempty")
        if self.target_step < 1:
            raise ValueError("target_step must be >= 1")


@dataclass(frozen=True)
class CodeArtifact:
    source: str
    target_step: int

    def __post_init__(self) -> None:
        if not self.source.strip():
            raise ValueError("code source must be nonempty")


def render_template(name: str, **fields: object) -> str:
    template = (
        resources.files("physrefine").joinpath("prompts").joinpath(f"{name}.txt").read_text("utf-8")
    )
    return template.format(**fields).strip()


def strip_code_fences(text: str) -> str:
    match = _CODE_FENCE_RE.match(text.strip())
    return match.group(1) if match else text.strip()


def _label(kind: str, question_id: str, tag: str) -> str:
    return f"{kind}:{question_id}:{tag}" if tag else f"{kind}:{question_id}"


def _record(log: Optional[CallLog], fingerprint: str) -> None:
    if log is not None:
        log.exchanges.append(fingerprint)


def _complete_solution(
    gateway: ChatGateway,
    messages: Sequence[ChatMessage],
    label: str,
    origin: SolutionOrigin,
    log: Optional[CallLog],
) -> Solution:
    """One solver call plus one retry, parsed through step segmentation."""
    for attempt_label in (label, f"{label}:retry"):
        exchange = gateway.complete(messages, label=attempt_label)
        _record(log, exchange.fingerprint)
        text = exchange.response_text
        if text.strip():
            return _segment(text, origin)
    raise UnparseableRefinement(f"solver produced no usable solution for {label}")


def _segment(text: str, origin: SolutionOrigin) -> Solution:
    from .core import segment_solution

    return segment_solution(text, origin=origin)


def refine_miscomprehension(
    question: Question,
    solution: Solution,
    report: VerifierReport,
    ctx: AgentContext,
    *,
    log: Optional[CallLog] = None,
    tag: str = "",
) -> Solution:
    """Regenerate a solution whose objective or variable values were wrong.

    The objective variant is used whenever the objective flag failed; the
    variables variant covers the case where only the values were misread.
    """
    if report.objective_aligned and report.variables_correct:
        raise ValueError("miscomprehension agent requires a failed comprehension flag")
    template = (
        "miscomprehension_objective" if not report.objective_aligned else "miscomprehension_variables"
    )
    prompt = render_template(
        template, question=question.text, solution=render_solution(solution)
    )
    messages = (
        ChatMessage(Role.SYSTEM, SOLVER_SYSTEM),
        ChatMessage(Role.USER, prompt),
    )
    return _complete_solution(
        ctx.solver,
        messages,
        _label("miscomprehension", question.id, tag),
        SolutionOrigin.MISCOMPREHENSION_AGENT,
        log,
    )


def generate_thought(
    question: Question,
    solution: Solution,
    report: VerifierReport,
    ctx: AgentContext,
    *,
    log: Optional[CallLog] = None,
    tag: str = "",
) -> RetrievalThought:
    """Ask the solver for a one-line knowledge-base query naming the concept
    needed at the first conceptual failure step."""
    if report.concept_first_error_step is None:
        raise ValueError("thought generation requires a conceptual error step")
    target = report.concept_first_error_step
    prompt = render_template(
        "concept_thought",
        question=question.text,
        solution=render_solution(solution),
        failure_step=target,
    )
    messages = (
        ChatMessage(Role.SYSTEM, THOUGHT_SYSTEM),
        ChatMessage(Role.USER, prompt),
    )
    label = _label("thought", question.id, tag)
    for attempt_label in (label, f"{label}:retry"):
        exchange = ctx.solver.complete(messages, label=attempt_label)
        _record(log, exchange.fingerprint)
        text = exchange.response_text.strip()
        if not text or "\n\n" in text:
            continue  # empty or multi-paragraph: not a single query sentence
        return RetrievalThought(text=" ".join(text.split()), target_step=target)
    raise UnparseableRefinement(f"no single-line retrieval thought for {label}")


def refine_concept(
    question: Question,
    solution: Solution,
    thought: RetrievalThought,
    observation: Observation,
    ctx: AgentContext,
    *,
    log: Optional[CallLog] = None,
    tag: str = "",
) -> Solution:
    """Regenerate from the failure step using retrieved concept context.

    With an empty observation the agent still reprompts (the model may
    self-correct) and flags the miss for the trace.
    """
    if observation.thought != thought.text:
        raise ValueError("observation was not produced from this thought")
    if observation.empty:
        if log is not None:
            log.retrieval_miss = True
        prompt = render_template(
            "concept_refine_miss",
            question=question.text,
            solution=render_solution(solution),
            failure_step=thought.target_step,
        )
    else:
        prompt = render_template(
            "concept_refine",
            question=question.text,
            solution=render_solution(solution),
            failure_step=thought.target_step,
            observation=observation.rendered_text,
        )
    messages = (
        ChatMessage(Role.SYSTEM, SOLVER_SYSTEM),
        ChatMessage(Role.USER, prompt),
    )
    return _complete_solution(
        ctx.solver,
        messages,
        _label("concept", question.id, tag),
        SolutionOrigin.CONCEPT_AGENT,
        log,
    )


def refine_computation(
    question: Question,
    solution: Solution,
    report: VerifierReport,
    ctx: AgentContext,
    *,
    log: Optional[CallLog] = None,
    tag: str = "",
) -> Solution:
    """Two-phase arithmetic repair: generate and execute a program computing
    the failure-step quantity, then integrate the executed result.

    When the program fails twice, falls back to a no-code reprompt and marks
    the trace accordingly.
    """
    if report.comp_first_error_step is None:
        raise ValueError("computation agent requires a computational error step")
    if ctx.sandbox is None:
        raise ValueError("computation agent requires a sandbox executor")
    target = report.comp_first_error_step

    code_prompt = render_template(
        "computation_code",
        question=question.text,
        solution=render_solution(solution),
        failure_step=target,
    )
    code_messages = (
        ChatMessage(Role.SYSTEM, CODE_SYSTEM),
        ChatMessage(Role.USER, code_prompt),
    )
    code_label = _label("compcode", question.id, tag)
    code_result: Optional[float] = None
    for attempt_label in (code_label, f"{code_label}:retry"):
        exchange = ctx.solver.complete(code_messages, label=attempt_label)
        _record(log, exchange.fingerprint)
        source = strip_code_fences(exchange.response_text)
        if not source:
            continue
        execution = ctx.sandbox.execute(ExecutionRequest(code=source))
        if execution.ok:
            code_result = parse_result_line(execution.stdout)
            if code_result is not None:
                break
        logger.debug("computation program failed (%s); regenerating", execution.status.value)

    if code_result is not None:
        prompt = render_template(
            "computation_integrate",
            question=question.text,
            solution=render_solution(solution),
            failure_step=target,
            code_result=repr(code_result),
        )
        label = _label("compintegrate", question.id, tag)
    else:
        if log is not None:
            log.fallback = True
            log.warnings.append("computation program failed twice; no-code fallback used")
        prompt = render_template(
            "computation_fallback",
            question=question.text,
            solution=render_solution(solution),
            failure_step=target,
        )
        label = _label("compfallback", question.id, tag)

    messages = (
        ChatMessage(Role.SYSTEM, SOLVER_SYSTEM),
        ChatMessage(Role.USER, prompt),
    )
    return _complete_solution(
        ctx.solver, messages, label, SolutionOrigin.COMPUTATION_AGENT, log
    )
