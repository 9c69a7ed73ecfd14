import threading
from pathlib import Path

import pytest

from physrefine.sandbox import (
    STDERR_LIMIT_BYTES,
    STDOUT_LIMIT_BYTES,
    ExecutionRequest,
    ExecutionStatus,
    SandboxExecutor,
    parse_result_line,
)

GOLDEN = Path(__file__).parent / "golden"


class TestExecute:
    def test_echo_path(self, sandbox):
        result = sandbox.execute(ExecutionRequest(code='print("RESULT: 4")'))
        assert result.status is ExecutionStatus.OK
        assert "RESULT: 4" in result.stdout

    def test_timeout_enforced_by_killing_group(self, sandbox):
        result = sandbox.execute(ExecutionRequest(code="while True: pass", timeout_s=1))
        assert result.status is ExecutionStatus.TIMEOUT
        assert result.wall_ms >= 1000

    def test_division_by_zero_matches_golden(self, sandbox):
        result = sandbox.execute(ExecutionRequest(code="x = 1/0"))
        assert result.status is ExecutionStatus.ERROR
        assert "ZeroDivisionError" in result.stderr
        assert result.stderr == (GOLDEN / "divzero_stderr.txt").read_text()

    def test_stdout_truncated_at_exact_byte_limit(self, sandbox):
        result = sandbox.execute(
            ExecutionRequest(code=f'import sys; sys.stdout.write("a" * {STDOUT_LIMIT_BYTES + 5000})')
        )
        assert result.status is ExecutionStatus.OK
        assert len(result.stdout.encode("utf-8")) == STDOUT_LIMIT_BYTES

    def test_stderr_truncated_at_exact_byte_limit(self, sandbox):
        result = sandbox.execute(
            ExecutionRequest(code=f'import sys; sys.stderr.write("e" * {STDERR_LIMIT_BYTES + 5000})')
        )
        assert len(result.stderr.encode("utf-8")) == STDERR_LIMIT_BYTES

    def test_protocol_violation_on_junk_runner(self):
        executor = SandboxExecutor(runner_cmd=["/bin/echo", "this is not json"])
        result = executor.execute(ExecutionRequest(code="print(1)"))
        assert result.status is ExecutionStatus.PROTOCOL_VIOLATION

    def test_canary_file_outside_workdir_unreadable(self, sandbox, tmp_path):
        canary = tmp_path / "canary.txt"
        canary.write_text("host secret")
        result = sandbox.execute(
            ExecutionRequest(code=f'print(open("{canary}").read())')
        )
        assert result.status is ExecutionStatus.ERROR
        assert "PermissionError" in result.stderr
        assert "host secret" not in result.stdout

    def test_workdir_files_are_allowed(self, sandbox):
        code = (
            'open("scratch.txt", "w").write("fine")\n'
            'print(open("scratch.txt").read())\n'
        )
        result = sandbox.execute(ExecutionRequest(code=code))
        assert result.status is ExecutionStatus.OK
        assert "fine" in result.stdout

    def test_user_stdout_never_leaks_on_protocol_stream(self, sandbox):
        # Multi-line user output must come back inside the response, proving
        # the runner wrote exactly one protocol line.
        result = sandbox.execute(
            ExecutionRequest(code='print("line1")\nprint("line2")\nprint("line3")')
        )
        assert result.status is ExecutionStatus.OK
        assert result.stdout == "line1\nline2\nline3\n"

    def test_concurrent_executions_do_not_interleave(self):
        executor = SandboxExecutor(max_concurrent=4)
        outputs: dict[int, str] = {}
        lock = threading.Lock()

        def run(i):
            result = executor.execute(ExecutionRequest(code=f'print("tag-{i}" * 3)'))
            with lock:
                outputs[i] = result.stdout

        threads = [threading.Thread(target=run, args=(i,)) for i in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        for i in range(8):
            assert outputs[i] == f"tag-{i}" * 3 + "\n"

    def test_memory_limit_reported_as_error(self, sandbox):
        result = sandbox.execute(
            ExecutionRequest(code="x = bytearray(512 * 1024 * 1024)", memory_mb=128)
        )
        assert result.status in (ExecutionStatus.ERROR, ExecutionStatus.PROTOCOL_VIOLATION)


class TestRequestValidation:
    def test_empty_code_rejected(self):
        with pytest.raises(ValueError):
            ExecutionRequest(code="")

    def test_timeout_bounds(self):
        with pytest.raises(ValueError):
            ExecutionRequest(code="x", timeout_s=0)
        with pytest.raises(ValueError):
            ExecutionRequest(code="x", timeout_s=61)


class TestParseResultLine:
    def test_basic(self):
        assert parse_result_line("warmup\nRESULT: 1.4049") == pytest.approx(1.4049)

    def test_absent(self):
        assert parse_result_line("") is None
        assert parse_result_line("no result here") is None

    def test_last_wins(self):
        assert parse_result_line("RESULT: 2\nRESULT: 3") == 3.0

    def test_scientific_notation(self):
        assert parse_result_line("RESULT: 6.02e23") == pytest.approx(6.02e23)

    def test_malformed_value_ignored(self):
        assert parse_result_line("RESULT: about five") is None
