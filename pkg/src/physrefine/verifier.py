"""Error identification: flags, first-error steps, and code-based
computation checking.

The identifier model must answer in a fixed verdict block, parsed strictly;
a single format-reminder reprompt is allowed before the iteration is given
up. Computation verification executes a checker program in the sandbox, and
its outcome always overrides whatever the identifier asserted about
arithmetic: code execution is the authority.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from typing import Optional

from .agents import CallLog, _record, render_template, strip_code_fences
from .core import Question, Solution, VerifierReport, render_solution
from .gateway import ChatGateway, ChatMessage, Role
from .sandbox import ExecutionRequest, SandboxExecutor

logger = logging.getLogger(__name__)

VERIFIER_SYSTEM = (
    "You are a meticulous physics verifier. Follow the requested output format exactly."
)

# Host-authored harness prepended to every checker program. The tolerance
# comparison lives here, not in model-generated text.
CHECKER_PREAMBLE = """\
TOLERANCE = {tolerance!r}

def check_step(k, recomputed, claimed):
    if abs(recomputed - claimed) > TOLERANCE:
        print("STEP %d FAIL recomputed=%s claimed=%s" % (k, repr(recomputed), repr(claimed)))
    else:
        print("STEP %d PASS" % k)
"""

_KEY_ORDER = ("OBJECTIVE", "VARIABLES", "CONCEPT_ERROR_STEP", "COMP_ERROR_STEP", "TOTAL_STEPS")
_REQUIRED_KEYS = ("OBJECTIVE", "VARIABLES", "CONCEPT_ERROR_STEP", "TOTAL_STEPS")
_KEY_LINE_RE = re.compile(r"^([A-Z_]+):\s*(.+?)\s*$")
_PASS_LINE_RE = re.compile(r"^STEP (\d+) PASS$")
_FAIL_LINE_RE = re.compile(r"^STEP (\d+) FAIL recomputed=(\S+) claimed=(\S+)$")


class MalformedVerifierOutput(Exception):
    """The identifier failed to produce a parseable verdict block twice."""


class CheckerCodeFailed(Exception):
    """The checker program crashed or emitted unusable verdicts twice."""


@dataclass
class VerifierConfig:
    identifier: ChatGateway
    comp_tolerance: float = 0.1
    use_code_verification: bool = True
    checker_timeout_s: float = 10.0

    def __post_init__(self) -> None:
        if self.comp_tolerance <= 0:
            raise ValueError("comp_tolerance must be > 0")


@dataclass(frozen=True)
class _VerdictBlock:
    objective_aligned: bool
    variables_correct: bool
    concept_step: Optional[int]
    comp_step: Optional[int]


def parse_verdict_block(text: str, total_steps: int) -> Optional[_VerdictBlock]:
    """Strictly parse the verdict block; None on any violation.

    Required keys must each appear exactly once and in the fixed order;
    COMP_ERROR_STEP is optional but, when present, must sit in order too.
    Step values must be NONE or an integer within 1..total_steps, and the
    reported TOTAL_STEPS must match the solution being verified. Missing or
    malformed keys never default: no silent PASS.
    """
    found: list[tuple[str, str]] = []
    for line in text.splitlines():
        match = _KEY_LINE_RE.match(line.strip())
        if match and match.group(1) in _KEY_ORDER:
            found.append((match.group(1), match.group(2)))
    keys = [k for k, _ in found]
    if len(set(keys)) != len(keys):
        return None
    if any(key not in keys for key in _REQUIRED_KEYS):
        return None
    order = [_KEY_ORDER.index(k) for k in keys]
    if order != sorted(order):
        return None

    values = dict(found)

    def flag(raw: str) -> Optional[bool]:
        return {"PASS": True, "FAIL": False}.get(raw)

    def step(raw: str) -> tuple[bool, Optional[int]]:
        if raw == "NONE":
            return True, None
        if re.fullmatch(r"\d+", raw):
            value = int(raw)
            if 1 <= value <= total_steps:
                return True, value
        return False, None

    objective = flag(values["OBJECTIVE"])
    variables = flag(values["VARIABLES"])
    if objective is None or variables is None:
        return None
    concept_ok, concept_step = step(values["CONCEPT_ERROR_STEP"])
    if not concept_ok:
        return None
    comp_step = None
    if "COMP_ERROR_STEP" in values:
        comp_ok, comp_step = step(values["COMP_ERROR_STEP"])
        if not comp_ok:
            return None
    if not re.fullmatch(r"\d+", values["TOTAL_STEPS"]) or int(values["TOTAL_STEPS"]) != total_steps:
        return None
    return _VerdictBlock(objective, variables, concept_step, comp_step)


def parse_checker_output(stdout: str, total_steps: int) -> Optional[list[tuple[int, bool]]]:
    """Parse per-step verdict lines; None unless steps 1..N appear in order.

    FAIL lines must carry both recomputed= and claimed= values.
    """
    verdicts: list[tuple[int, bool]] = []
    for line in stdout.splitlines():
        line = line.strip()
        if not line:
            continue
        passed = _PASS_LINE_RE.match(line)
        failed = _FAIL_LINE_RE.match(line)
        if passed:
            verdicts.append((int(passed.group(1)), True))
        elif failed:
            verdicts.append((int(failed.group(1)), False))
        elif line.startswith("STEP "):
            return None  # malformed verdict line
        # non-verdict chatter on stdout is ignored
    if [k for k, _ in verdicts] != list(range(1, total_steps + 1)):
        return None
    return verdicts


def verify_computation(
    question: Question,
    solution: Solution,
    config: VerifierConfig,
    sandbox: SandboxExecutor,
    *,
    log: Optional[CallLog] = None,
    tag: str = "",
) -> Optional[int]:
    """Run one generated checker program over the whole solution.

    Returns the smallest step index whose recomputed value misses the
    claimed one by more than the tolerance, or None when every step passes.
    Raises CheckerCodeFailed after a failed regeneration attempt.
    """
    total = solution.total_steps
    prompt = render_template(
        "checker_code",
        question=question.text,
        solution=render_solution(solution),
        total_steps=total,
    )
    messages = (
        ChatMessage(Role.SYSTEM, "You write small standalone Python programs. Reply with code only, no prose."),
        ChatMessage(Role.USER, prompt),
    )
    base_label = f"checker:{question.id}:{tag}" if tag else f"checker:{question.id}"
    preamble = CHECKER_PREAMBLE.format(tolerance=config.comp_tolerance)
    failure = "no attempt"
    for label in (base_label, f"{base_label}:retry"):
        exchange = config.identifier.complete(messages, label=label)
        _record(log, exchange.fingerprint)
        body = strip_code_fences(exchange.response_text)
        if not body:
            failure = "empty checker program"
            continue
        execution = sandbox.execute(
            ExecutionRequest(code=preamble + "\n" + body, timeout_s=config.checker_timeout_s)
        )
        if not execution.ok:
            failure = f"checker execution {execution.status.value}: {execution.stderr[:200]}"
            continue
        verdicts = parse_checker_output(execution.stdout, total)
        if verdicts is None:
            failure = "unparseable checker verdict lines"
            continue
        failing = [k for k, passed in verdicts if not passed]
        return min(failing) if failing else None
    raise CheckerCodeFailed(failure)


def verify(
    question: Question,
    solution: Solution,
    config: VerifierConfig,
    *,
    sandbox: Optional[SandboxExecutor] = None,
    log: Optional[CallLog] = None,
    tag: str = "",
) -> VerifierReport:
    """Produce a full VerifierReport for one solution.

    Issues the comprehension+concept verification prompt, reprompts once
    with a format reminder on a malformed reply, and (by default) replaces
    the model's computational claim with the sandboxed checker outcome.
    Never mutates the solution.
    """
    if solution.total_steps < 1:
        raise ValueError("solution must have at least one step")
    total = solution.total_steps
    prompt = render_template(
        "verifier_main",
        question=question.text,
        solution=render_solution(solution),
        total_steps=total,
    )
    messages: tuple[ChatMessage, ...] = (
        ChatMessage(Role.SYSTEM, VERIFIER_SYSTEM),
        ChatMessage(Role.USER, prompt),
    )
    base_label = f"verify:{question.id}:{tag}" if tag else f"verify:{question.id}"

    exchange = config.identifier.complete(messages, label=base_label)
    _record(log, exchange.fingerprint)
    block = parse_verdict_block(exchange.response_text, total)
    if block is None:
        reminder = render_template("verifier_reminder", total_steps=total)
        retry_messages = messages + (
            ChatMessage(Role.ASSISTANT, exchange.response_text or "(empty)"),
            ChatMessage(Role.USER, reminder),
        )
        exchange = config.identifier.complete(retry_messages, label=f"{base_label}:retry")
        _record(log, exchange.fingerprint)
        block = parse_verdict_block(exchange.response_text, total)
        if block is None:
            raise MalformedVerifierOutput(
                f"identifier verdict unparseable twice for question {question.id!r}"
            )

    comp_step = block.comp_step
    if config.use_code_verification:
        if sandbox is None:
            raise ValueError("code verification enabled but no sandbox executor supplied")
        try:
            comp_step = verify_computation(
                question, solution, config, sandbox, log=log, tag=tag
            )
        except CheckerCodeFailed as exc:
            comp_step = None
            message = f"computation unverifiable: {exc}"
            logger.warning("%s (question %s)", message, question.id)
            if log is not None:
                log.warnings.append(message)

    return VerifierReport(
        objective_aligned=block.objective_aligned,
        variables_correct=block.variables_correct,
        total_steps=total,
        concept_first_error_step=block.concept_step,
        comp_first_error_step=comp_step,
        raw_verifier_text=exchange.response_text,
    )
