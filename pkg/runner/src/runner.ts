/**
 * One-shot restricted runner: read a single request line from stdin, run the
 * Python program under resource limits in a temp working dir, and write
 * exactly one response line to stdout.
 *
 * User-code output is captured through pipes and returned inside the
 * response; nothing else is ever written to the protocol stream. Exit code
 * is 0 for ok, nonzero for error.
 */

import { spawn } from "node:child_process";
import { mkdtempSync, rmSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import * as readline from "node:readline";

import { PYTHON_PRELUDE, launchArgs, policyFor } from "./limits";
import {
  ExecutionRequest,
  ExecutionResponse,
  MalformedRequest,
  parseRequest,
  serializeResponse,
} from "./protocol";

const CAPTURE_CAP_BYTES = 1024 * 1024; // host applies its own truncation later
const WALL_GRACE_MS = 500;

let responded = false;

function respond(response: ExecutionResponse): void {
  if (responded) return;
  responded = true;
  process.stdout.write(serializeResponse(response) + "\n");
  process.exitCode = response.status === "ok" ? 0 : 1;
}

class CappedBuffer {
  private chunks: Buffer[] = [];
  private size = 0;

  append(chunk: Buffer): void {
    if (this.size >= CAPTURE_CAP_BYTES) return;
    const room = CAPTURE_CAP_BYTES - this.size;
    const piece = chunk.length > room ? chunk.subarray(0, room) : chunk;
    this.chunks.push(piece);
    this.size += piece.length;
  }

  toString(): string {
    return Buffer.concat(this.chunks).toString("utf-8");
  }
}

function runOnce(request: ExecutionRequest, done: (response: ExecutionResponse) => void): void {
  const workdir = mkdtempSync(join(tmpdir(), "sandbox-run-"));
  const scriptPath = join(workdir, "program.py");
  writeFileSync(scriptPath, PYTHON_PRELUDE + request.code, "utf-8");

  const policy = policyFor(request.timeoutS, request.memoryMb, workdir);
  const child = spawn("bash", launchArgs(policy, scriptPath), {
    cwd: workdir,
    stdio: ["ignore", "pipe", "pipe"],
    env: { PATH: process.env.PATH ?? "/usr/bin:/bin" },
  });

  const stdout = new CappedBuffer();
  const stderr = new CappedBuffer();
  child.stdout.on("data", (chunk: Buffer) => stdout.append(chunk));
  child.stderr.on("data", (chunk: Buffer) => stderr.append(chunk));

  let timedOut = false;
  const wallTimer = setTimeout(() => {
    timedOut = true;
    child.kill("SIGKILL");
  }, request.timeoutS * 1000 + WALL_GRACE_MS);

  const finish = (code: number | null, signal: NodeJS.Signals | null) => {
    clearTimeout(wallTimer);
    let err = stderr.toString();
    let status: "ok" | "error" = code === 0 ? "ok" : "error";
    if (timedOut) {
      status = "error";
      err += `\nprocess killed: wall-clock timeout after ${request.timeoutS}s\n`;
    } else if (signal) {
      status = "error";
      err += `\nprocess killed by signal ${signal} (resource limit)\n`;
    }
    try {
      rmSync(workdir, { recursive: true, force: true });
    } catch {
      // best effort cleanup
    }
    done({ status, stdout: stdout.toString(), stderr: err });
  };

  child.on("close", finish);
  child.on("error", (err) => {
    clearTimeout(wallTimer);
    done({ status: "error", stdout: "", stderr: `spawn failure: ${err.message}` });
  });
}

function main(): void {
  const reader = readline.createInterface({ input: process.stdin, terminal: false });
  let handled = false;
  reader.on("line", (line) => {
    if (handled) return; // single-request process: ignore extra lines
    handled = true;
    reader.close();
    let request: ExecutionRequest;
    try {
      request = parseRequest(line);
    } catch (err) {
      const message =
        err instanceof MalformedRequest ? err.message : `unexpected: ${(err as Error).message}`;
      respond({ status: "error", stdout: "", stderr: `malformed request: ${message}` });
      return;
    }
    runOnce(request, respond);
  });
  reader.on("close", () => {
    if (!handled) {
      respond({ status: "error", stdout: "", stderr: "empty request" });
    }
  });
}

main();
