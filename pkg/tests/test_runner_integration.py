"""Drives the external runner (when built) through the host-side executor.

The primary suite never requires these: they skip unless runner/dist exists.
"""

from pathlib import Path

import pytest

from physrefine.sandbox import ExecutionRequest, ExecutionStatus, SandboxExecutor

RUNNER_JS = Path(__file__).parent.parent / "runner" / "dist" / "runner.js"

pytestmark = pytest.mark.skipif(
    not RUNNER_JS.exists(), reason="external runner not built (npm run build in runner/)"
)


@pytest.fixture
def real_sandbox():
    return SandboxExecutor(runner_cmd=["node", str(RUNNER_JS)])


class TestRealRunnerThroughHost:
    def test_protocol_round_trip(self, real_sandbox):
        result = real_sandbox.execute(ExecutionRequest(code="print('RESULT:', 2**10)"))
        assert result.status is ExecutionStatus.OK
        assert "RESULT: 1024" in result.stdout

    def test_error_propagates_as_error_status(self, real_sandbox):
        result = real_sandbox.execute(ExecutionRequest(code="raise RuntimeError('x')"))
        assert result.status is ExecutionStatus.ERROR
        assert "RuntimeError" in result.stderr

    def test_infinite_loop_is_stopped(self, real_sandbox):
        # The runner kills the program itself (CPU limit / wall timer) and
        # reports an error before the host deadline fires.
        result = real_sandbox.execute(ExecutionRequest(code="while True: pass", timeout_s=1))
        assert result.status in (ExecutionStatus.ERROR, ExecutionStatus.TIMEOUT)
        assert result.wall_ms < 3000

    def test_canary_outside_workdir_denied(self, real_sandbox, tmp_path):
        canary = tmp_path / "canary.txt"
        canary.write_text("host secret")
        result = real_sandbox.execute(ExecutionRequest(code=f"open({str(canary)!r}).read()"))
        assert result.status is ExecutionStatus.ERROR
        assert "PermissionError" in result.stderr

    def test_checker_preamble_runs_identically(self, real_sandbox):
        from physrefine.verifier import CHECKER_PREAMBLE

        program = CHECKER_PREAMBLE.format(tolerance=0.1) + "\ncheck_step(1, 1.4049, 2.2)"
        result = real_sandbox.execute(ExecutionRequest(code=program))
        assert result.status is ExecutionStatus.OK
        assert result.stdout == "STEP 1 FAIL recomputed=1.4049 claimed=2.2\n"
