/**
 * Wire types for the one-shot stdio protocol.
 *
 * Request (one JSON line on stdin):
 *   {"code": str, "timeout_s": num, "memory_mb": int}
 * Response (exactly one JSON line on stdout):
 *   {"status": "ok"|"error", "stdout": str, "stderr": str}
 *
 * The host adds timeout/protocol_violation statuses on its side; this
 * process only ever reports ok or error.
 */

export interface ExecutionRequest {
  code: string;
  timeoutS: number;
  memoryMb: number;
}

export interface ExecutionResponse {
  status: "ok" | "error";
  stdout: string;
  stderr: string;
}

export class MalformedRequest extends Error {}

export function parseRequest(line: string): ExecutionRequest {
  let raw: unknown;
  try {
    raw = JSON.parse(line);
  } catch (err) {
    throw new MalformedRequest(`invalid JSON: ${(err as Error).message}`);
  }
  if (typeof raw !== "object" || raw === null || Array.isArray(raw)) {
    throw new MalformedRequest("request must be a JSON object");
  }
  const obj = raw as Record<string, unknown>;
  if (typeof obj.code !== "string" || obj.code.length === 0) {
    throw new MalformedRequest("code must be a nonempty string");
  }
  const timeoutS = obj.timeout_s === undefined ? 10 : Number(obj.timeout_s);
  if (!Number.isFinite(timeoutS) || timeoutS <= 0 || timeoutS > 60) {
    throw new MalformedRequest("timeout_s must be in (0, 60]");
  }
  const memoryMb = obj.memory_mb === undefined ? 256 : Number(obj.memory_mb);
  if (!Number.isInteger(memoryMb) || memoryMb <= 0) {
    throw new MalformedRequest("memory_mb must be a positive integer");
  }
  return { code: obj.code, timeoutS, memoryMb };
}

export function serializeResponse(response: ExecutionResponse): string {
  return JSON.stringify({
    status: response.status,
    stdout: response.stdout,
    stderr: response.stderr,
  });
}
