"""Protocol-compatible stub runner kept inside the host package.

Reads one JSON request line from stdin, executes the code string in a fresh
namespace with captured stdio, and writes exactly one JSON response line.
It exists so the host-side sandbox tests run without the hardened external
runner; it applies only a best-effort memory cap and an open() allowlist
(the working temp dir), leaving wall-clock enforcement to the host.
"""

from __future__ import annotations

import builtins
import io
import json
import os
import sys
import tempfile
import traceback


def _guarded_open(allowed_root: str, real_open):
    def guarded(file, mode="r", *args, **kwargs):
        if isinstance(file, int):  # existing descriptors stay usable
            return real_open(file, mode, *args, **kwargs)
        path = os.path.realpath(os.fspath(file))
        if not path.startswith(allowed_root.rstrip(os.sep) + os.sep) and path != allowed_root:
            raise PermissionError(f"open outside working dir denied: {file!r}")
        return real_open(file, mode, *args, **kwargs)

    return guarded


def _apply_memory_limit(memory_mb: int) -> None:
    try:
        import resource

        limit = memory_mb << 20
        resource.setrlimit(resource.RLIMIT_AS, (limit, limit))
    except Exception:
        pass  # best effort; not available on all platforms


def run_once(line: str, respond) -> int:
    try:
        request = json.loads(line)
        code = request["code"]
        memory_mb = int(request.get("memory_mb", 256))
        if not isinstance(code, str) or not code:
            raise ValueError("code must be a nonempty string")
    except Exception as exc:
        respond({"status": "error", "stdout": "", "stderr": f"malformed request: {exc}"})
        return 1

    workdir = tempfile.mkdtemp(prefix="physrefine-run-")
    os.chdir(workdir)
    _apply_memory_limit(memory_mb)
    builtins.open = _guarded_open(workdir, builtins.open)

    out, err = io.StringIO(), io.StringIO()
    status = "ok"
    sys.stdout, sys.stderr = out, err
    try:
        exec(code, {"__name__": "__main__"})
    except SystemExit as exc:
        if exc.code not in (0, None):
            status = "error"
            err.write(f"SystemExit: {exc.code}\n")
    except BaseException as exc:
        status = "error"
        # Drop the runner's own exec() frame; report user code only.
        tb = exc.__traceback__.tb_next if exc.__traceback__ else None
        err.write("".join(traceback.format_exception(type(exc), exc, tb)))
    finally:
        sys.stdout, sys.stderr = sys.__stdout__, sys.__stderr__

    respond({"status": status, "stdout": out.getvalue(), "stderr": err.getvalue()})
    return 0 if status == "ok" else 1


def main() -> int:
    line = sys.stdin.readline()
    protocol_out = sys.stdout

    def respond(obj: dict) -> None:
        protocol_out.write(json.dumps(obj) + "\n")
        protocol_out.flush()

    if not line.strip():
        respond({"status": "error", "stdout": "", "stderr": "empty request"})
        return 1
    return run_once(line, respond)


if __name__ == "__main__":
    sys.exit(main())
