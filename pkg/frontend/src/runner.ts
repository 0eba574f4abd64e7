/**
 * Process-level glue around the core command-line tool.  The bindings never
 * link against the core library; every operation round-trips through the
 * CLI and its file formats inside a scratch directory.
 */

import { spawnSync } from "node:child_process";
import { mkdtempSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

/** Raised when the core CLI exits nonzero or cannot be spawned. */
export class CliError extends Error {
  constructor(
    message: string,
    readonly exitCode: number | null,
    readonly stderr: string,
  ) {
    super(stderr ? `${message}\n${stderr.trimEnd()}` : message);
    this.name = "CliError";
  }
}

/** Resolve the CLI executable: explicit override, then $ORIENTMD_CLI, then PATH. */
export function cliCommand(override?: string): string {
  return override ?? process.env.ORIENTMD_CLI ?? "orientmd";
}

/** Run one CLI subcommand in `cwd`; throws CliError on failure. */
export function runCli(args: string[], cwd: string, cli?: string): string {
  const command = cliCommand(cli);
  const res = spawnSync(command, args, { cwd, encoding: "utf8" });
  if (res.error) {
    throw new CliError(
      `failed to spawn ${command}: ${res.error.message}`,
      null,
      "",
    );
  }
  if (res.status !== 0) {
    throw new CliError(
      `${command} ${args.join(" ")} exited with ${res.status}`,
      res.status,
      res.stderr ?? "",
    );
  }
  return res.stdout ?? "";
}

/** Run `fn` inside a fresh temp directory, removing it afterwards. */
export function withScratchDir<T>(fn: (dir: string) => T): T {
  const dir = mkdtempSync(join(tmpdir(), "orientmd-"));
  try {
    return fn(dir);
  } finally {
    rmSync(dir, { recursive: true, force: true });
  }
}
