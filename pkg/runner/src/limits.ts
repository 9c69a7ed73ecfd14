/**
 * Resource policy applied to the spawned Python process.
 *
 * CPU time and address space are enforced with ulimit before exec; the
 * open() allowlist and the network ban are enforced by a Python prelude
 * prepended to the user program. Limits are in place before any user code
 * runs. This is a best-effort accident barrier, not a security jail.
 */

export interface RunnerPolicy {
  cpuSeconds: number;
  addressSpaceMb: number;
  /** Only paths under these prefixes may be opened (the temp working dir). */
  openFileAllowlist: string[];
}

export function policyFor(timeoutS: number, memoryMb: number, workdir: string): RunnerPolicy {
  return {
    cpuSeconds: Math.max(1, Math.ceil(timeoutS)),
    addressSpaceMb: memoryMb,
    openFileAllowlist: [workdir],
  };
}

/** Python source installed ahead of the user program. Restricts open() to
 * the working directory and stubs out socket creation. */
export const PYTHON_PRELUDE = `\
import builtins as _b, os as _os, socket as _socket
_ALLOWED = _os.path.realpath(_os.getcwd())
_real_open = _b.open
def _guarded_open(file, mode="r", *args, **kwargs):
    if isinstance(file, int):
        return _real_open(file, mode, *args, **kwargs)
    _path = _os.path.realpath(_os.fspath(file))
    if _path != _ALLOWED and not _path.startswith(_ALLOWED + _os.sep):
        raise PermissionError("open outside working dir denied: %r" % (file,))
    return _real_open(file, mode, *args, **kwargs)
_b.open = _guarded_open
def _no_socket(*args, **kwargs):
    raise PermissionError("network access denied")
_socket.socket = _no_socket
_socket.create_connection = _no_socket
`;

/** Shell line that applies ulimits and execs an isolated interpreter. */
export function launchArgs(policy: RunnerPolicy, scriptPath: string): string[] {
  const kb = policy.addressSpaceMb * 1024;
  return [
    "-c",
    `ulimit -t ${policy.cpuSeconds} -v ${kb} 2>/dev/null; exec python3 -I "$0"`,
    scriptPath,
  ];
}
