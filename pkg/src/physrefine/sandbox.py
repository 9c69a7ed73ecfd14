"""Host-side manager for running model-generated programs out of process.

Each execution spawns one fresh runner subprocess, writes a single JSON
request line to its stdin, and reads back a single JSON response line:

    request:  {"code": str, "timeout_s": num, "memory_mb": int}
    response: {"status": "ok"|"error", "stdout": str, "stderr": str}

The host adds the ``timeout`` and ``protocol_violation`` statuses itself.
Model code never runs in the host process.
"""

from __future__ import annotations

import json
import logging
import os
import re
import signal
import subprocess
import sys
import threading
import time
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

logger = logging.getLogger(__name__)

STDOUT_LIMIT_BYTES = 64 * 1024
STDERR_LIMIT_BYTES = 16 * 1024

# Extra wall-clock allowance for interpreter startup before the host kills
# the runner's process group.
_KILL_GRACE_S = 1.0

_RESULT_LINE_RE = re.compile(
    r"^RESULT:\s*([+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)\s*$", re.MULTILINE
)


class ExecutionStatus(Enum):
    OK = "ok"
    ERROR = "error"
    TIMEOUT = "timeout"
    PROTOCOL_VIOLATION = "protocol_violation"


@dataclass(frozen=True)
class ExecutionRequest:
    code: str
    timeout_s: float = 10.0
    memory_mb: int = 256

    def __post_init__(self) -> None:
        if not self.code:
            raise ValueError("code must be nonempty")
        if not 0 < self.timeout_s <= 60:
            raise ValueError("timeout_s must be in (0, 60]")


@dataclass(frozen=True)
class ExecutionResult:
    status: ExecutionStatus
    stdout: str
    stderr: str
    wall_ms: int

    @property
    def ok(self) -> bool:
        return self.status is ExecutionStatus.OK


def stub_runner_command() -> list[str]:
    """Command line for the in-package stub runner."""
    return [sys.executable, "-m", "physrefine.stub_runner"]


def _truncate_bytes(text: str, limit: int) -> str:
    data = text.encode("utf-8")
    if len(data) <= limit:
        return text
    return data[:limit].decode("utf-8", errors="ignore")


def _parse_response(raw: str) -> Optional[dict]:
    lines = [line for line in raw.splitlines() if line.strip()]
    if len(lines) != 1:
        return None
    try:
        obj = json.loads(lines[0])
    except json.JSONDecodeError:
        return None
    if not isinstance(obj, dict):
        return None
    if obj.get("status") not in ("ok", "error"):
        return None
    if not isinstance(obj.get("stdout"), str) or not isinstance(obj.get("stderr"), str):
        return None
    return obj


class SandboxExecutor:
    """Runs ExecutionRequests through a runner subprocess, one per request.

    Reentrant: a semaphore caps concurrent subprocesses, and each request
    owns its own process and pipes, so protocol streams never interleave.
    """

    def __init__(
        self,
        runner_cmd: Optional[Sequence[str]] = None,
        max_concurrent: int = 4,
    ) -> None:
        self.runner_cmd = list(runner_cmd) if runner_cmd else stub_runner_command()
        self._semaphore = threading.BoundedSemaphore(max_concurrent)

    def execute(self, request: ExecutionRequest) -> ExecutionResult:
        payload = json.dumps(
            {
                "code": request.code,
                "timeout_s": request.timeout_s,
                "memory_mb": request.memory_mb,
            }
        )
        with self._semaphore:
            started = time.monotonic()
            proc = subprocess.Popen(
                self.runner_cmd,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                text=True,
                start_new_session=True,
            )
            try:
                raw_out, _raw_err = proc.communicate(
                    payload + "\n", timeout=request.timeout_s + _KILL_GRACE_S
                )
            except subprocess.TimeoutExpired:
                self._kill_group(proc)
                proc.communicate()
                wall_ms = int((time.monotonic() - started) * 1000)
                return ExecutionResult(ExecutionStatus.TIMEOUT, "", "", wall_ms)
            wall_ms = int((time.monotonic() - started) * 1000)

        response = _parse_response(raw_out)
        if response is None:
            logger.warning("runner protocol violation; raw output %r", raw_out[:200])
            return ExecutionResult(ExecutionStatus.PROTOCOL_VIOLATION, "", "", wall_ms)
        stdout = _truncate_bytes(response["stdout"], STDOUT_LIMIT_BYTES)
        stderr = _truncate_bytes(response["stderr"], STDERR_LIMIT_BYTES)
        if response["status"] == "ok":
            if proc.returncode != 0:
                # "ok" must mean a clean exit; anything else is incoherent.
                return ExecutionResult(ExecutionStatus.PROTOCOL_VIOLATION, "", "", wall_ms)
            return ExecutionResult(ExecutionStatus.OK, stdout, stderr, wall_ms)
        return ExecutionResult(ExecutionStatus.ERROR, stdout, stderr, wall_ms)

    @staticmethod
    def _kill_group(proc: subprocess.Popen) -> None:
        try:
            os.killpg(os.getpgid(proc.pid), signal.SIGKILL)
        except (ProcessLookupError, PermissionError):
            proc.kill()


def parse_result_line(stdout: str) -> Optional[float]:
    """Numeric value of the last ``RESULT: <number>`` line, if any."""
    matches = _RESULT_LINE_RE.findall(stdout)
    if not matches:
        return None
    return float(matches[-1])
